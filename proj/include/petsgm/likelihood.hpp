#pragma once
// Poisson log-likelihood for emission data: L(y|x) = sum_i y_i log(ybar_i) - ybar_i
// with ybar = A x + b (the y! term is constant in x and dropped). Expected
// counts are clamped below at 1e-12 inside ratios/logs; a clamped bin with
// observed counts is an error since the model assigns it zero probability.

#include <vector>

#include "petsgm/grid.hpp"
#include "petsgm/projector.hpp"

namespace petsgm {

inline constexpr double kExpectedFloor = 1e-12;

double pll(const Measurements& y, const SystemModel& sm, const ImageGrid& x);
// Same objective given precomputed expected counts.
double pll_on_expected(const Measurements& y, const Measurements& ybar);

// A^T (y/ybar - 1).
ImageGrid pll_grad(const Measurements& y, const SystemModel& sm, const ImageGrid& x);
// Subset-restricted gradient: A_j^T (y_j/ybar_j - 1) over the subset's angles.
ImageGrid pll_grad_subset(const Measurements& y, const SystemModel& sm, const ImageGrid& x,
                          const std::vector<int>& subset_angles);

// sum_j ybar_j log(ybar_j/y_j) - ybar_j + y_j, with the bin conventions
// term = ybar_j when y_j = 0 and term = y_j when ybar_j = 0.
double poisson_kldiv(const Measurements& ybar, const Measurements& y);

void validate_counts(const Measurements& y);

} // namespace petsgm
