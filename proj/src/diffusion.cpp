#include "petsgm/diffusion.hpp"

#include <cmath>
#include <stdexcept>

#include "petsgm/score.hpp"

namespace petsgm {

void DiffusionSchedule::validate() const {
    if (!(beta_min > 0.0) || beta_max < beta_min)
        throw std::invalid_argument("diffusion schedule: need 0 < beta_min <= beta_max");
    if (!(t_min > 0.0) || t_min >= 1.0)
        throw std::invalid_argument("diffusion schedule: need 0 < t_min < 1");
    if (n_steps < 2) throw std::invalid_argument("diffusion schedule: need at least 2 grid points");
}

DiffusionSchedule::Coeffs DiffusionSchedule::kernel_coeffs(double t) const {
    if (t < 0.0 || t > 1.0) throw std::invalid_argument("kernel_coeffs: t must lie in [0,1]");
    const double I = beta_integral(t);
    const double gamma = std::exp(-0.5 * I);
    const double nu2 = 1.0 - std::exp(-I);
    return {gamma, nu2, std::sqrt(nu2)};
}

std::vector<double> DiffusionSchedule::grid() const {
    validate();
    std::vector<double> g(static_cast<std::size_t>(n_steps));
    for (int i = 0; i < n_steps; ++i)
        g[static_cast<std::size_t>(i)] = t_min + (1.0 - t_min) * i / (n_steps - 1);
    g.back() = 1.0;
    return g;
}

ImageGrid perturb(const ImageGrid& x0, double t, const DiffusionSchedule& sched, RngStream& rng,
                  ImageGrid* z_out) {
    const auto c = sched.kernel_coeffs(t);
    if (!(c.nu > 0.0)) throw std::invalid_argument("perturb: t too small, kernel is degenerate");
    ImageGrid out = like(x0);
    ImageGrid z = like(x0);
    rng.fill_normal(z.v);
    for (std::size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = c.gamma * x0.v[i] + c.nu * z.v[i];
    if (z_out) *z_out = std::move(z);
    return out;
}

ImageGrid dsm_target(const ImageGrid& x_t, const ImageGrid& x0, double t, const DiffusionSchedule& sched) {
    require_same_shape(x_t, x0, "dsm_target");
    const auto c = sched.kernel_coeffs(t);
    if (!(c.nu2 > 0.0)) throw std::invalid_argument("dsm_target: t too small, kernel is degenerate");
    ImageGrid out = like(x_t);
    for (std::size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = -(x_t.v[i] - c.gamma * x0.v[i]) / c.nu2;
    return out;
}

double dsm_loss(const ScoreModel& model, const std::vector<ImageGrid>& batch,
                const DiffusionSchedule& sched, std::uint64_t seed, int n_draws) {
    if (batch.empty()) throw std::invalid_argument("dsm_loss: empty batch");
    if (n_draws <= 0) throw std::invalid_argument("dsm_loss: n_draws must be positive");
    sched.validate();
    RngStream rng = RngStream::from_seed(seed).child("dsm_loss");
    double acc = 0.0;
    ImageGrid z;
    for (int d = 0; d < n_draws; ++d) {
        const std::size_t pick = static_cast<std::size_t>(rng.next_u64() % batch.size());
        const ImageGrid& x0 = batch[pick];
        const double t = rng.uniform(sched.t_min, 1.0);
        const auto c = sched.kernel_coeffs(t);
        const ImageGrid x_t = perturb(x0, t, sched, rng, &z);
        const ImageGrid s = model.score(x_t, t);
        double term = 0.0;
        for (std::size_t i = 0; i < s.v.size(); ++i) {
            const double r = s.v[i] + z.v[i] / c.nu;
            term += r * r;
        }
        acc += c.nu2 * term;
    }
    return acc / n_draws;
}

} // namespace petsgm
