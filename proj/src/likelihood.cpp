#include "petsgm/likelihood.hpp"

#include <cmath>
#include <stdexcept>

namespace petsgm {

void validate_counts(const Measurements& y) {
    if (y.kind != Measurements::Kind::counts)
        throw std::invalid_argument("measurements must be of kind 'counts'");
    for (double b : y.bins) {
        if (!std::isfinite(b) || b < 0.0 || b != std::floor(b))
            throw std::invalid_argument("counts must be finite non-negative integers");
    }
}

double pll_on_expected(const Measurements& y, const Measurements& ybar) {
    if (!y.same_layout(ybar)) throw std::invalid_argument("pll: layout mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < y.bins.size(); ++i) {
        double e = ybar.bins[i];
        if (e < kExpectedFloor) {
            if (y.bins[i] > 0.0)
                throw std::runtime_error("pll: observed counts in a bin with (near-)zero expected counts");
            e = kExpectedFloor;
        }
        if (y.bins[i] > 0.0) acc += y.bins[i] * std::log(e);
        acc -= e;
    }
    return acc;
}

double pll(const Measurements& y, const SystemModel& sm, const ImageGrid& x) {
    validate_counts(y);
    return pll_on_expected(y, expected_counts(sm, x));
}

namespace {

ImageGrid grad_impl(const Measurements& y, const SystemModel& sm, const ImageGrid& x,
                    const std::vector<int>& angles) {
    Measurements ybar = sm.empty_bins(Measurements::Kind::expected);
    forward_project_subset(sm, x, angles, ybar);
    Measurements ratio = sm.empty_bins(Measurements::Kind::expected);
    for (int a : angles)
        for (int r = 0; r < sm.geom.n_radial; ++r)
            for (int p = 0; p < sm.n_planes(); ++p) {
                const std::size_t b = ybar.idx(a, r, p);
                double e = ybar.bins[b] + sm.background.bins[b];
                if (e < kExpectedFloor) {
                    if (y.bins[b] > 0.0)
                        throw std::runtime_error("pll_grad: observed counts in a bin with (near-)zero expected counts");
                    e = kExpectedFloor;
                }
                ratio.bins[b] = y.bins[b] / e - 1.0;
            }
    ImageGrid g = sm.empty_image();
    back_project_subset(sm, ratio, angles, g);
    return g;
}

} // namespace

ImageGrid pll_grad(const Measurements& y, const SystemModel& sm, const ImageGrid& x) {
    validate_counts(y);
    std::vector<int> all(static_cast<std::size_t>(sm.geom.n_angles));
    for (int a = 0; a < sm.geom.n_angles; ++a) all[static_cast<std::size_t>(a)] = a;
    return grad_impl(y, sm, x, all);
}

ImageGrid pll_grad_subset(const Measurements& y, const SystemModel& sm, const ImageGrid& x,
                          const std::vector<int>& subset_angles) {
    validate_counts(y);
    return grad_impl(y, sm, x, subset_angles);
}

double poisson_kldiv(const Measurements& ybar, const Measurements& y) {
    if (!y.same_layout(ybar)) throw std::invalid_argument("poisson_kldiv: layout mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < y.bins.size(); ++i) {
        const double e = ybar.bins[i], o = y.bins[i];
        if (e < 0.0 || o < 0.0) throw std::invalid_argument("poisson_kldiv: negative bin");
        if (e == 0.0) acc += o;
        else if (o == 0.0) acc += e;
        else acc += e * std::log(e / o) - e + o;
    }
    return acc;
}

} // namespace petsgm
