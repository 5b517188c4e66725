#pragma once
// Generation and reconstruction samplers on the reverse-time diffusion:
// Euler-Maruyama and DDIM unconditional sampling, the likelihood-guided
// reconstructors (pet-naive, pet-dps, pet-dds), the Gaussian denoising
// baseline, and the OSEM-based intensity normalisation c_osem.
//
// Noise streams are derived from the run seed with fixed labels so that
// equal seeds give equal draws across methods sharing a path:
//   child("sample_init") - the x_1 ~ N(0, I) initial state
//   child("em_noise")    - Euler-Maruyama increments
//   child("ddim_noise")  - DDIM re-noising (drawn only when eta_k > 0)

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "petsgm/diffusion.hpp"
#include "petsgm/grid.hpp"
#include "petsgm/projector.hpp"
#include "petsgm/score.hpp"

namespace petsgm {

enum class SamplerMethod { em, ddim, pet_naive, pet_dps, pet_dds, naive_osem_denoise };

// Names: "em", "ddim", "pet-naive", "pet-dps", "pet-dds", "naive-osem-denoise".
SamplerMethod parse_sampler_method(const std::string& name);
std::string to_string(SamplerMethod m);

struct SamplerConfig {
    SamplerMethod method = SamplerMethod::em;
    int n_steps = 1000;      // reverse-time grid points (>= 2)
    double eta = 0.0;        // ddim / pet-dds re-noising strength, in [0, 1]
    double lambda = 1.0;     // penalty strength (pet-naive, pet-dps: lambda_t scale;
                             // pet-dds: the anchor weight lambda_dds)
    int p = 4;               // pet-dds inner ascent steps per outer step (>= 0)
    int n_sub = 4;           // subsets for the pet-dds inner data-consistency loop
    double lambda_rdp = 0.0; // pet-dds axial penalty strength (z-direction, volumes)
    double sigma_d = 1.0;    // naive-osem-denoise Gaussian width (> 0)
    double w = 0.0;          // classifier-free guidance strength (prior updates)
    std::uint64_t seed = 0;
    const ImageGrid* condition = nullptr; // guidance image in normalised space, or null
    double c_osem_override = -1.0; // > 0: use this scale instead of the OSEM estimate
    double osem_init = 1.0;        // constant init for the c_osem epoch
    double delta = -1.0;           // pet-dds preconditioner floor; < 0 derives it from
                                   // the inner start as in the classical solver
    // Optional trajectory observer, called after each reverse step with the
    // 0-based destination grid index, its time, and the current state.
    std::function<void(int k, double t, const ImageGrid& x)> on_step;

    void validate() const;
};

struct SamplerResult {
    ImageGrid image;     // c_osem * max(raw, 0)
    ImageGrid raw;       // normalised-space endpoint x_{t_min}
    double c_osem = 1.0;
    int steps = 0;       // reverse steps taken (n_steps - 1)
};

// Intensity scale of an image: sum over all voxels divided by the number of
// voxels strictly above the nearest-rank 1% percentile. If no voxel exceeds
// the percentile (e.g. a constant image) the count falls back to the voxels
// strictly above zero; an image with no positive voxel is an error.
double c_osem_from_image(const ImageGrid& x);

// One OSEM epoch from a constant image, then c_osem_from_image of the result.
double compute_c_osem(const Measurements& y, const SystemModel& sm, int n_sub,
                      double init_value = 1.0);

// Posterior-mean estimate (x_t + nu_t^2 s(x_t, t)) / gamma_t. For volumes the
// score model is planar: it is evaluated per axial slice, with the condition
// (if any) sliced the same way.
ImageGrid tweedie(const ImageGrid& x_t, double t, const ScoreModel& model,
                  const DiffusionSchedule& sched, const ImageGrid* condition = nullptr);

// One DDIM update from grid point k to k-1 (1-based, 2 <= k <= n_steps, over
// the uniform grid with n_steps points; n_steps == 0 uses sched.n_steps):
//   x' = gamma_{k-1} x0hat - nu_k sqrt(nu_{k-1}^2 - eta_k^2) s + eta_k z
// with eta_k = eta (nu_{k-1}/nu_k) sqrt(1 - gamma_k/gamma_{k-1}). z is read
// only when eta_k > 0 (then it must be non-null); eta_k^2 > nu_{k-1}^2 is an
// error.
ImageGrid ddim_step(const ImageGrid& x_tk, int k, const ScoreModel& model,
                    const DiffusionSchedule& sched, const ImageGrid* z, double eta = 0.0,
                    int n_steps = 0, const ImageGrid* condition = nullptr);

// lambda (1 - t) * grad_x L(y | c_osem * max(x_t, 0)), the gradient including
// the chain factor c_osem. Only the input of the likelihood is thresholded;
// the projection's derivative is deliberately not applied.
ImageGrid pet_naive_grad(const Measurements& y, const ImageGrid& x_t, double t,
                         const SystemModel& sm, double c_osem, double lambda);

// lambda_t * d/dx_t L(y | c_osem * max(x0hat(x_t), 0)) with the derivative
// taken through the posterior-mean map (score vector-Jacobian product) and
// lambda_t = lambda / max(KL(c_osem A x0hat + b || y), 1e-8).
ImageGrid pet_dps_grad(const Measurements& y, const ImageGrid& x_t, double t,
                       const ScoreModel& model, const DiffusionSchedule& sched,
                       const SystemModel& sm, double c_osem, double lambda,
                       const ImageGrid* condition = nullptr);

// One inner data-consistency update of the anchored sub-objective
//   Phi_j(x) = L_j(y | sm_c x) + (lambda_rdp R_z(x) - lambda_dds ||x - anchor||^2) / n_sub
// with the preconditioner D = max(x, delta) / sens of the scaled model.
// lambda_dds == 0 takes the shared preconditioned ascent step (unit step
// size); lambda_dds > 0 treats the anchor term implicitly,
//   x+ = max(0, (x + D g + kappa D anchor) / (1 + kappa D)),
// kappa = 2 lambda_dds / n_sub and g the gradient of the smooth part.
// Non-support voxels are left unchanged.
void pet_dds_inner_update(ImageGrid& x, const ImageGrid& anchor, const Measurements& y,
                          const SystemModel& sm_c, const std::vector<int>& subset_angles,
                          double lambda_rdp, double lambda_dds, int n_sub, double delta);

// Unconditional reverse-time sampling from x_1 ~ N(0, I) down to t_min.
// cfg.method must be em or ddim; returns the normalised-space endpoint.
ImageGrid sample_unconditional(const ScoreModel& model, const DiffusionSchedule& sched,
                               const ImageGrid& shape_ref, const SamplerConfig& cfg);

// pet-naive / pet-dps: Euler-Maruyama where each step applies the prior
// update (score at x_k plus noise) and then adds beta dt times the method's
// data gradient, also evaluated at x_k. lambda == 0 skips the data update
// entirely and reproduces sample_unconditional(em) bitwise for equal seeds.
SamplerResult reconstruct_sde(const Measurements& y, const SystemModel& sm,
                              const ScoreModel& model, const DiffusionSchedule& sched,
                              const SamplerConfig& cfg);

// pet-dds: DDIM outer loop; per outer step the posterior-mean estimate is
// refined by cfg.p inner updates (staggered angle subsets visited cyclically
// in Herman-Meyer order, position p*(n_outer_done) + i), then recombined with
// the score at the original x_k. p == 0 reproduces unconditional DDIM
// sampling bitwise for equal seeds.
SamplerResult reconstruct_pet_dds(const Measurements& y, const SystemModel& sm,
                                  const ScoreModel& model, const DiffusionSchedule& sched,
                                  const SamplerConfig& cfg);

// Gaussian denoising baseline: Euler-Maruyama with the likelihood term
// (x_noisy/c - x)/sigma_d^2 added to the score, integrated exactly over each
// step (operator splitting) so small sigma_d stays stable; c is
// c_osem_from_image(x_noisy). sigma_d -> infinity recovers the unconditional
// trajectory; n_steps == 0 uses sched.n_steps.
SamplerResult denoise_naive_osem(const ImageGrid& x_noisy, const ScoreModel& model,
                                 const DiffusionSchedule& sched, double sigma_d,
                                 std::uint64_t seed, int n_steps = 0);

} // namespace petsgm
