#include "petsgm/solvers.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "petsgm/likelihood.hpp"
#include "petsgm/rdp.hpp"

namespace petsgm {

void preconditioned_ascent_step(ImageGrid& x, const ImageGrid& grad, const ImageGrid& sens,
                                const std::vector<std::uint8_t>& support, double delta, double alpha) {
    require_same_shape(x, grad, "preconditioned_ascent_step");
    require_same_shape(x, sens, "preconditioned_ascent_step");
    for (std::size_t i = 0; i < x.v.size(); ++i) {
        if (!support[i]) continue;
        const double d = (x.v[i] > delta ? x.v[i] : delta) / sens.v[i];
        const double next = x.v[i] + alpha * d * grad.v[i];
        x.v[i] = next > 0.0 ? next : 0.0;
    }
}

namespace {

// One multiplicative EM sub-iteration over the given subset.
void em_subset_update(const Measurements& y, const SystemModel& sm, ImageGrid& x,
                      const std::vector<int>& angles, const ImageGrid& subset_sens) {
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
                        throw std::runtime_error("osem: observed counts in a bin with (near-)zero expected counts");
                    e = kExpectedFloor;
                }
                ratio.bins[b] = y.bins[b] / e;
            }
    ImageGrid num = sm.empty_image();
    back_project_subset(sm, ratio, angles, num);
    for (std::size_t i = 0; i < x.v.size(); ++i) {
        if (!sm.support[i]) { x.v[i] = 0.0; continue; }
        if (subset_sens.v[i] > 0.0) x.v[i] = x.v[i] / subset_sens.v[i] * num.v[i];
    }
}

void check_init(const SystemModel& sm, const ImageGrid& init) {
    if (init.nx != sm.nx || init.ny != sm.ny || init.nz != sm.nz)
        throw std::invalid_argument("solver init image shape does not match system model");
    for (double v : init.v)
        if (!(v >= 0.0)) throw std::invalid_argument("solver init image must be non-negative");
}

double mean_nonzero(const ImageGrid& x) {
    double s = 0.0;
    int n = 0;
    for (double v : x.v)
        if (v != 0.0) { s += v; ++n; }
    return n > 0 ? s / n : 0.0;
}

} // namespace

double preconditioner_floor(const ImageGrid& init) { return 1e-4 * mean_nonzero(init); }

ImageGrid osem(const Measurements& y, const SystemModel& sm, const SubsetSchedule& sched,
               const ImageGrid& init, int n_epochs) {
    validate_counts(y);
    check_init(sm, init);
    if (n_epochs < 0) throw std::invalid_argument("osem: n_epochs must be >= 0");
    const std::vector<ImageGrid> ssens = subset_sensitivity(sm, sched);
    ImageGrid x = init;
    for (int e = 0; e < n_epochs; ++e)
        for (int pos = 0; pos < sched.n_sub; ++pos) {
            const int j = sched.order[static_cast<std::size_t>(pos)];
            em_subset_update(y, sm, x, sched.angles[static_cast<std::size_t>(j)], ssens[static_cast<std::size_t>(j)]);
        }
    return x;
}

ImageGrid mlem(const Measurements& y, const SystemModel& sm, const ImageGrid& init, int n_iter) {
    return osem(y, sm, partition_subsets(sm.geom, 1), init, n_iter);
}

ImageGrid osem_one_epoch_from_constant(const Measurements& y, const SystemModel& sm, int n_sub,
                                       double init_value) {
    if (!(init_value > 0.0))
        throw std::invalid_argument("osem_one_epoch_from_constant: init value must be positive");
    ImageGrid init = sm.empty_image();
    std::fill(init.v.begin(), init.v.end(), init_value);
    return osem(y, sm, partition_subsets(sm.geom, n_sub), init, 1);
}

double projected_gradient_norm(const Measurements& y, const SystemModel& sm, const ImageGrid& x,
                               double lambda, const RdpParams& rdp_params) {
    ImageGrid g = pll_grad(y, sm, x);
    if (lambda != 0.0) {
        const ImageGrid rg = rdp_grad(x, rdp_params);
        for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] += lambda * rg.v[i];
    }
    double delta = preconditioner_floor(x);
    if (delta == 0.0) delta = 1.0; // all-zero image: plain sensitivity scaling
    double acc = 0.0;
    for (std::size_t i = 0; i < g.v.size(); ++i) {
        if (!sm.support[i]) continue;
        const double d = std::max(x.v[i], delta) / sm.sens_image.v[i];
        const double step = std::max(0.0, x.v[i] + d * g.v[i]) - x.v[i];
        acc += step * step;
    }
    return std::sqrt(acc);
}

BsremResult bsrem(const Measurements& y, const SystemModel& sm, const BsremParams& params,
                  const ImageGrid* init) {
    validate_counts(y);
    if (params.max_epochs <= 0) throw std::invalid_argument("bsrem: max_epochs must be positive");
    if (!(params.zeta >= 0.0)) throw std::invalid_argument("bsrem: zeta must be >= 0");
    const SubsetSchedule sched = partition_subsets(sm.geom, params.n_sub);

    BsremResult res;
    res.x = init ? *init : osem_one_epoch_from_constant(y, sm, params.n_sub);
    check_init(sm, res.x);
    res.delta = params.delta >= 0.0 ? params.delta : preconditioner_floor(res.x);
    if (!(res.delta > 0.0))
        throw std::invalid_argument("bsrem: preconditioner floor is zero (empty init?)");

    const double lam_sub = params.lambda / params.n_sub;
    int decreasing_run = 0;
    double prev_obj = 0.0;
    ImageGrid prev = res.x;

    for (int epoch = 0; epoch < params.max_epochs; ++epoch) {
        const double alpha = params.alpha0 / (params.zeta * epoch + 1.0);
        for (int pos = 0; pos < sched.n_sub; ++pos) {
            const int j = sched.order[static_cast<std::size_t>(pos)];
            ImageGrid grad = pll_grad_subset(y, sm, res.x, sched.angles[static_cast<std::size_t>(j)]);
            if (params.lambda != 0.0) {
                const ImageGrid rg = rdp_grad(res.x, params.rdp);
                for (std::size_t i = 0; i < grad.v.size(); ++i) grad.v[i] += lam_sub * rg.v[i];
            }
            preconditioned_ascent_step(res.x, grad, sm.sens_image, sm.support, res.delta, alpha);
        }
        res.epochs = epoch + 1;

        const double obj = pll(y, sm, res.x) + params.lambda * rdp(res.x, params.rdp);
        if (!std::isfinite(obj)) throw std::runtime_error("bsrem: objective became non-finite");
        if (!res.objective.empty() && obj < prev_obj - 1e-12 * std::abs(prev_obj)) {
            if (++decreasing_run >= 3)
                throw std::runtime_error(
                    "bsrem: objective decreased for 3 consecutive epochs (diverging), epoch " +
                    std::to_string(epoch) + ", objective " + std::to_string(obj));
        } else {
            decreasing_run = 0;
        }
        res.objective.push_back(obj);
        prev_obj = obj;

        // Stop when the mean voxel change across nonzero voxels falls below
        // stop_rel_change of the mean voxel value.
        double change = 0.0, base = 0.0;
        int n = 0;
        for (std::size_t i = 0; i < res.x.v.size(); ++i) {
            if (prev.v[i] == 0.0) continue;
            change += std::abs(res.x.v[i] - prev.v[i]);
            base += prev.v[i];
            ++n;
        }
        if (n > 0 && base > 0.0 && change / base < params.stop_rel_change) {
            res.converged = true;
            return res;
        }
        prev = res.x;
    }
    return res;
}

} // namespace petsgm
