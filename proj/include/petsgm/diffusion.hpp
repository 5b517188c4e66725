#pragma once
// Variance-preserving forward diffusion with linear beta(t) on t in [0,1]:
//   beta(t) = beta_min + t (beta_max - beta_min)
//   x_t | x_0 ~ N(gamma_t x_0, nu_t^2 I)
//   gamma_t = exp(-1/2 int_0^t beta),  nu_t^2 = 1 - exp(-int_0^t beta)
// so gamma_t^2 + nu_t^2 = 1 exactly. Time grids are uniform on [t_min, 1].

#include <cstdint>
#include <vector>

#include "petsgm/grid.hpp"
#include "petsgm/rng.hpp"

namespace petsgm {

class ScoreModel; // see score.hpp

struct DiffusionSchedule {
    double beta_min = 0.1;
    double beta_max = 10.0;
    double t_min = 1e-3;
    int n_steps = 1000;

    void validate() const;
    double beta(double t) const { return beta_min + t * (beta_max - beta_min); }
    double beta_integral(double t) const { return beta_min * t + 0.5 * (beta_max - beta_min) * t * t; }

    struct Coeffs { double gamma, nu2, nu; };
    Coeffs kernel_coeffs(double t) const;

    // n_steps points, uniformly spaced, grid.front() == t_min, grid.back() == 1.
    std::vector<double> grid() const;
};

// x_t = gamma x0 + nu z; optionally returns the drawn z.
ImageGrid perturb(const ImageGrid& x0, double t, const DiffusionSchedule& sched, RngStream& rng,
                  ImageGrid* z_out = nullptr);

// Score of the Gaussian perturbation kernel: -(x_t - gamma x0) / nu^2.
ImageGrid dsm_target(const ImageGrid& x_t, const ImageGrid& x0, double t, const DiffusionSchedule& sched);

// Monte Carlo denoising score-matching loss
//   E_t E_x0 E_z [ nu_t^2 || s(x_t,t) + z/nu_t ||^2 ],  t ~ U[t_min, 1],
// averaged over n_draws draws (x0 picked uniformly from the batch).
double dsm_loss(const ScoreModel& model, const std::vector<ImageGrid>& batch,
                const DiffusionSchedule& sched, std::uint64_t seed, int n_draws);

} // namespace petsgm
