#include "petsgm/samplers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "petsgm/likelihood.hpp"
#include "petsgm/rdp.hpp"
#include "petsgm/rng.hpp"
#include "petsgm/solvers.hpp"

namespace petsgm {

namespace {

// Same spacing rule as DiffusionSchedule::grid(), for a caller-chosen count.
std::vector<double> time_grid(const DiffusionSchedule& sched, int n) {
    sched.validate();
    if (n < 2) throw std::invalid_argument("sampler: n_steps must be >= 2");
    std::vector<double> g(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        g[static_cast<std::size_t>(i)] = sched.t_min + (1.0 - sched.t_min) * i / (n - 1);
    g.back() = 1.0;
    return g;
}

// Score evaluation, slice-wise for volumes (the prior is planar) and with
// classifier-free guidance folded in when a condition and w != 0 are given.
ImageGrid eval_score(const ScoreModel& model, const ImageGrid& x_t, double t,
                     const ImageGrid* condition, double w) {
    if (condition) require_same_shape(x_t, *condition, "sampler condition");
    auto one = [&](const ImageGrid& xs, const ImageGrid* cs) {
        if (cs && w != 0.0) return cfg_combine(model.score(xs, t, cs), model.score(xs, t, nullptr), w);
        return model.score(xs, t, cs);
    };
    if (x_t.nz == 1) return one(x_t, condition);
    ImageGrid out = like(x_t);
    for (int z = 0; z < x_t.nz; ++z) {
        ImageGrid xs = extract_slice(x_t, z);
        if (condition) {
            ImageGrid cs = extract_slice(*condition, z);
            insert_slice(out, z, one(xs, &cs));
        } else {
            insert_slice(out, z, one(xs, nullptr));
        }
    }
    return out;
}

// Vector-Jacobian product of the (possibly guided) score, slice-wise.
ImageGrid eval_vjp(const ScoreModel& model, const ImageGrid& x_t, double t, const ImageGrid& u,
                   const ImageGrid* condition, double w) {
    if (condition) require_same_shape(x_t, *condition, "sampler condition");
    require_same_shape(x_t, u, "score vjp");
    auto one = [&](const ImageGrid& xs, const ImageGrid& us, const ImageGrid* cs) {
        if (cs && w != 0.0)
            return cfg_combine(model.score_vjp(xs, t, us, cs), model.score_vjp(xs, t, us, nullptr), w);
        return model.score_vjp(xs, t, us, cs);
    };
    if (x_t.nz == 1) return one(x_t, u, condition);
    ImageGrid out = like(x_t);
    for (int z = 0; z < x_t.nz; ++z) {
        ImageGrid xs = extract_slice(x_t, z);
        ImageGrid us = extract_slice(u, z);
        if (condition) {
            ImageGrid cs = extract_slice(*condition, z);
            insert_slice(out, z, one(xs, us, &cs));
        } else {
            insert_slice(out, z, one(xs, us, nullptr));
        }
    }
    return out;
}

ImageGrid tweedie_from_score(const ImageGrid& x_t, const ImageGrid& s,
                             const DiffusionSchedule::Coeffs& kc) {
    ImageGrid out = like(x_t);
    for (std::size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = (x_t.v[i] + kc.nu2 * s.v[i]) / kc.gamma;
    return out;
}

double ddim_eta_k(const DiffusionSchedule::Coeffs& ck, const DiffusionSchedule::Coeffs& cprev,
                  double eta) {
    const double beta_fac = (cprev.nu / ck.nu) * std::sqrt(std::max(0.0, 1.0 - ck.gamma / cprev.gamma));
    return eta * beta_fac;
}

// x' = gamma_{k-1} x0h - nu_k sqrt(nu_{k-1}^2 - eta_k^2) s + eta_k z.
ImageGrid ddim_recombine(const ImageGrid& x0h, const ImageGrid& s,
                         const DiffusionSchedule::Coeffs& ck, const DiffusionSchedule::Coeffs& cprev,
                         double eta_k, const ImageGrid* z) {
    const double rad = cprev.nu2 - eta_k * eta_k;
    if (rad < 0.0) throw std::runtime_error("ddim: eta_k exceeds the step's noise budget nu_{k-1}");
    const double coef_s = -ck.nu * std::sqrt(rad);
    ImageGrid out = like(x0h);
    for (std::size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = cprev.gamma * x0h.v[i] + coef_s * s.v[i];
    if (eta_k > 0.0) {
        if (!z) throw std::invalid_argument("ddim: eta_k > 0 requires a noise image");
        require_same_shape(x0h, *z, "ddim noise");
        for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += eta_k * z->v[i];
    }
    return out;
}

void check_step_finite(const ImageGrid& x, const char* who, int k) {
    require_finite(x, std::string(who) + " at reverse step " + std::to_string(k));
}

} // namespace

SamplerMethod parse_sampler_method(const std::string& name) {
    if (name == "em") return SamplerMethod::em;
    if (name == "ddim") return SamplerMethod::ddim;
    if (name == "pet-naive") return SamplerMethod::pet_naive;
    if (name == "pet-dps") return SamplerMethod::pet_dps;
    if (name == "pet-dds") return SamplerMethod::pet_dds;
    if (name == "naive-osem-denoise") return SamplerMethod::naive_osem_denoise;
    throw std::invalid_argument("unknown sampler method: " + name);
}

std::string to_string(SamplerMethod m) {
    switch (m) {
        case SamplerMethod::em: return "em";
        case SamplerMethod::ddim: return "ddim";
        case SamplerMethod::pet_naive: return "pet-naive";
        case SamplerMethod::pet_dps: return "pet-dps";
        case SamplerMethod::pet_dds: return "pet-dds";
        case SamplerMethod::naive_osem_denoise: return "naive-osem-denoise";
    }
    throw std::logic_error("to_string: bad sampler method");
}

void SamplerConfig::validate() const {
    if (n_steps < 2) throw std::invalid_argument("sampler config: n_steps must be >= 2");
    if (!std::isfinite(eta) || eta < 0.0 || eta > 1.0)
        throw std::invalid_argument("sampler config: eta must be in [0, 1]");
    if (!std::isfinite(lambda) || lambda < 0.0)
        throw std::invalid_argument("sampler config: lambda must be >= 0");
    if (!std::isfinite(w)) throw std::invalid_argument("sampler config: w must be finite");
    if (n_sub < 1) throw std::invalid_argument("sampler config: n_sub must be >= 1");
    if (!std::isfinite(osem_init) || osem_init <= 0.0)
        throw std::invalid_argument("sampler config: osem_init must be > 0");
    if (c_osem_override == 0.0 || !std::isfinite(c_osem_override))
        throw std::invalid_argument("sampler config: c_osem_override must be positive, or negative for auto");
    if (method == SamplerMethod::pet_dds) {
        if (p < 0) throw std::invalid_argument("sampler config: p must be >= 0 for pet-dds");
        if (!std::isfinite(lambda_rdp) || lambda_rdp < 0.0)
            throw std::invalid_argument("sampler config: lambda_rdp must be >= 0");
        if (!(delta < 0.0) && !std::isfinite(delta))
            throw std::invalid_argument("sampler config: delta must be finite or negative for auto");
    }
    if (method == SamplerMethod::naive_osem_denoise && !(sigma_d > 0.0 && std::isfinite(sigma_d)))
        throw std::invalid_argument("sampler config: sigma_d must be > 0");
}

double c_osem_from_image(const ImageGrid& x) {
    if (x.v.empty()) throw std::invalid_argument("c_osem_from_image: empty image");
    require_finite(x, "c_osem_from_image");
    std::vector<double> sorted(x.v);
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    const std::size_t rank = static_cast<std::size_t>(std::ceil(0.01 * static_cast<double>(n)));
    const double q = sorted[rank > 0 ? rank - 1 : 0];
    double total = 0.0;
    std::size_t above_q = 0, above_zero = 0;
    for (double v : x.v) {
        total += v;
        if (v > q) ++above_q;
        if (v > 0.0) ++above_zero;
    }
    const std::size_t count = above_q > 0 ? above_q : above_zero;
    if (count == 0) throw std::runtime_error("c_osem_from_image: image has no positive voxel");
    return total / static_cast<double>(count);
}

double compute_c_osem(const Measurements& y, const SystemModel& sm, int n_sub, double init_value) {
    ImageGrid x = osem_one_epoch_from_constant(y, sm, n_sub, init_value);
    return c_osem_from_image(x);
}

namespace {

// Scale estimation runs a fixed OSEM protocol — one angular subset per view,
// the most-converged single epoch the geometry allows — independent of the
// reconstruction's n_sub. Coupling the two would make the intensity scale
// (and therefore the output) drift with the data-consistency subset choice.
double sampler_c_osem(const Measurements& y, const SystemModel& sm, const SamplerConfig& cfg) {
    if (cfg.c_osem_override > 0.0) return cfg.c_osem_override;
    return compute_c_osem(y, sm, sm.geom.n_angles, cfg.osem_init);
}

} // namespace

ImageGrid tweedie(const ImageGrid& x_t, double t, const ScoreModel& model,
                  const DiffusionSchedule& sched, const ImageGrid* condition) {
    const auto kc = sched.kernel_coeffs(t);
    const ImageGrid s = eval_score(model, x_t, t, condition, 0.0);
    return tweedie_from_score(x_t, s, kc);
}

ImageGrid ddim_step(const ImageGrid& x_tk, int k, const ScoreModel& model,
                    const DiffusionSchedule& sched, const ImageGrid* z, double eta,
                    int n_steps, const ImageGrid* condition) {
    const int n = n_steps > 0 ? n_steps : sched.n_steps;
    const std::vector<double> grid = time_grid(sched, n);
    if (k < 2 || k > n) throw std::invalid_argument("ddim_step: k must be in [2, n_steps]");
    if (!std::isfinite(eta) || eta < 0.0 || eta > 1.0)
        throw std::invalid_argument("ddim_step: eta must be in [0, 1]");
    const auto ck = sched.kernel_coeffs(grid[static_cast<std::size_t>(k - 1)]);
    const auto cprev = sched.kernel_coeffs(grid[static_cast<std::size_t>(k - 2)]);
    const ImageGrid s = eval_score(model, x_tk, grid[static_cast<std::size_t>(k - 1)], condition, 0.0);
    const ImageGrid x0h = tweedie_from_score(x_tk, s, ck);
    const double eta_k = ddim_eta_k(ck, cprev, eta);
    return ddim_recombine(x0h, s, ck, cprev, eta_k, eta_k > 0.0 ? z : nullptr);
}

ImageGrid pet_naive_grad(const Measurements& y, const ImageGrid& x_t, double t,
                         const SystemModel& sm, double c_osem, double lambda) {
    if (!std::isfinite(lambda) || lambda < 0.0)
        throw std::invalid_argument("pet_naive_grad: lambda must be >= 0");
    ImageGrid out = like(x_t);
    const double lambda_t = lambda * (1.0 - t);
    if (lambda_t == 0.0) return out;
    const SystemModel sm_c = scale_system(sm, c_osem);
    ImageGrid xp = x_t;
    clamp_nonneg(xp);
    const ImageGrid g = pll_grad(y, sm_c, xp);
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = lambda_t * g.v[i];
    return out;
}

ImageGrid pet_dps_grad(const Measurements& y, const ImageGrid& x_t, double t,
                       const ScoreModel& model, const DiffusionSchedule& sched,
                       const SystemModel& sm, double c_osem, double lambda,
                       const ImageGrid* condition) {
    if (!std::isfinite(lambda) || lambda < 0.0)
        throw std::invalid_argument("pet_dps_grad: lambda must be >= 0");
    const auto kc = sched.kernel_coeffs(t);
    const ImageGrid s = eval_score(model, x_t, t, condition, 0.0);
    const ImageGrid x0h = tweedie_from_score(x_t, s, kc);
    ImageGrid xp = x0h;
    clamp_nonneg(xp);
    const SystemModel sm_c = scale_system(sm, c_osem);
    const Measurements ybar = expected_counts(sm_c, xp);
    const double kl = poisson_kldiv(ybar, y);
    const double lambda_t = lambda / std::max(kl, 1e-8);
    // Likelihood gradient at the projected estimate, masked by the
    // projection's derivative, then pulled back through the posterior-mean
    // map: d x0hat / d x_t = (I + nu^2 J_s) / gamma.
    ImageGrid u = pll_grad(y, sm_c, xp);
    for (std::size_t i = 0; i < u.v.size(); ++i)
        if (!(x0h.v[i] > 0.0)) u.v[i] = 0.0;
    const ImageGrid ju = eval_vjp(model, x_t, t, u, condition, 0.0);
    ImageGrid out = like(x_t);
    for (std::size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = lambda_t * (u.v[i] + kc.nu2 * ju.v[i]) / kc.gamma;
    return out;
}

void pet_dds_inner_update(ImageGrid& x, const ImageGrid& anchor, const Measurements& y,
                          const SystemModel& sm_c, const std::vector<int>& subset_angles,
                          double lambda_rdp, double lambda_dds, int n_sub, double delta) {
    require_same_shape(x, anchor, "pet_dds_inner_update");
    if (n_sub < 1) throw std::invalid_argument("pet_dds_inner_update: n_sub must be >= 1");
    if (lambda_rdp < 0.0 || lambda_dds < 0.0)
        throw std::invalid_argument("pet_dds_inner_update: penalty weights must be >= 0");
    if (delta < 0.0) throw std::invalid_argument("pet_dds_inner_update: delta must be >= 0");
    ImageGrid g = pll_grad_subset(y, sm_c, x, subset_angles);
    if (lambda_rdp != 0.0) {
        RdpParams rp;
        rp.z_only = true;
        const ImageGrid rg = rdp_grad(x, rp);
        const double wr = lambda_rdp / static_cast<double>(n_sub);
        for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] += wr * rg.v[i];
    }
    if (lambda_dds == 0.0) {
        preconditioned_ascent_step(x, g, sm_c.sens_image, sm_c.support, delta, 1.0);
        return;
    }
    const double kappa = 2.0 * lambda_dds / static_cast<double>(n_sub);
    for (std::size_t i = 0; i < x.v.size(); ++i) {
        if (!sm_c.support[i]) continue;
        const double d = (x.v[i] > delta ? x.v[i] : delta) / sm_c.sens_image.v[i];
        const double xn = (x.v[i] + d * g.v[i] + kappa * d * anchor.v[i]) / (1.0 + kappa * d);
        x.v[i] = xn > 0.0 ? xn : 0.0;
    }
}

ImageGrid sample_unconditional(const ScoreModel& model, const DiffusionSchedule& sched,
                               const ImageGrid& shape_ref, const SamplerConfig& cfg) {
    cfg.validate();
    if (cfg.method != SamplerMethod::em && cfg.method != SamplerMethod::ddim)
        throw std::invalid_argument("sample_unconditional: method must be em or ddim");
    const std::vector<double> grid = time_grid(sched, cfg.n_steps);
    RngStream root = RngStream::from_seed(cfg.seed);
    RngStream init_stream = root.child("sample_init");
    RngStream em_stream = root.child("em_noise");
    RngStream ddim_stream = root.child("ddim_noise");

    ImageGrid x = like(shape_ref);
    init_stream.fill_normal(x.v);
    for (int k = cfg.n_steps - 1; k >= 1; --k) {
        const double t = grid[static_cast<std::size_t>(k)];
        const double dt = t - grid[static_cast<std::size_t>(k - 1)];
        const ImageGrid s = eval_score(model, x, t, cfg.condition, cfg.w);
        if (cfg.method == SamplerMethod::em) {
            const double beta = sched.beta(t);
            const double sd = std::sqrt(beta * dt);
            ImageGrid z = like(x);
            em_stream.fill_normal(z.v);
            for (std::size_t i = 0; i < x.v.size(); ++i)
                x.v[i] = x.v[i] + beta * dt * (0.5 * x.v[i] + s.v[i]) + sd * z.v[i];
        } else {
            const auto ck = sched.kernel_coeffs(t);
            const auto cprev = sched.kernel_coeffs(grid[static_cast<std::size_t>(k - 1)]);
            const ImageGrid x0h = tweedie_from_score(x, s, ck);
            const double eta_k = ddim_eta_k(ck, cprev, cfg.eta);
            ImageGrid z;
            if (eta_k > 0.0) {
                z = like(x);
                ddim_stream.fill_normal(z.v);
            }
            x = ddim_recombine(x0h, s, ck, cprev, eta_k, eta_k > 0.0 ? &z : nullptr);
        }
        check_step_finite(x, "sample_unconditional", k - 1);
        if (cfg.on_step) cfg.on_step(k - 1, grid[static_cast<std::size_t>(k - 1)], x);
    }
    return x;
}

SamplerResult reconstruct_sde(const Measurements& y, const SystemModel& sm,
                              const ScoreModel& model, const DiffusionSchedule& sched,
                              const SamplerConfig& cfg) {
    cfg.validate();
    if (cfg.method != SamplerMethod::pet_naive && cfg.method != SamplerMethod::pet_dps)
        throw std::invalid_argument("reconstruct_sde: method must be pet-naive or pet-dps");
    validate_counts(y);
    const std::vector<double> grid = time_grid(sched, cfg.n_steps);
    const double c = sampler_c_osem(y, sm, cfg);
    RngStream root = RngStream::from_seed(cfg.seed);
    RngStream init_stream = root.child("sample_init");
    RngStream em_stream = root.child("em_noise");

    ImageGrid x = sm.empty_image();
    init_stream.fill_normal(x.v);
    for (int k = cfg.n_steps - 1; k >= 1; --k) {
        const double t = grid[static_cast<std::size_t>(k)];
        const double dt = t - grid[static_cast<std::size_t>(k - 1)];
        const double beta = sched.beta(t);
        const double sd = std::sqrt(beta * dt);
        const ImageGrid s = eval_score(model, x, t, cfg.condition, cfg.w);
        ImageGrid z = like(x);
        em_stream.fill_normal(z.v);
        if (cfg.lambda == 0.0) {
            for (std::size_t i = 0; i < x.v.size(); ++i)
                x.v[i] = x.v[i] + beta * dt * (0.5 * x.v[i] + s.v[i]) + sd * z.v[i];
        } else {
            const ImageGrid g =
                cfg.method == SamplerMethod::pet_naive
                    ? pet_naive_grad(y, x, t, sm, c, cfg.lambda)
                    : pet_dps_grad(y, x, t, model, sched, sm, c, cfg.lambda, cfg.condition);
            for (std::size_t i = 0; i < x.v.size(); ++i)
                x.v[i] = x.v[i] + beta * dt * (0.5 * x.v[i] + s.v[i]) + sd * z.v[i] + beta * dt * g.v[i];
        }
        check_step_finite(x, "reconstruct_sde", k - 1);
        if (cfg.on_step) cfg.on_step(k - 1, grid[static_cast<std::size_t>(k - 1)], x);
    }
    SamplerResult res;
    res.raw = x;
    res.c_osem = c;
    res.steps = cfg.n_steps - 1;
    res.image = like(x);
    for (std::size_t i = 0; i < x.v.size(); ++i) res.image.v[i] = c * std::max(x.v[i], 0.0);
    return res;
}

SamplerResult reconstruct_pet_dds(const Measurements& y, const SystemModel& sm,
                                  const ScoreModel& model, const DiffusionSchedule& sched,
                                  const SamplerConfig& cfg) {
    cfg.validate();
    if (cfg.method != SamplerMethod::pet_dds)
        throw std::invalid_argument("reconstruct_pet_dds: method must be pet-dds");
    validate_counts(y);
    const std::vector<double> grid = time_grid(sched, cfg.n_steps);
    const double c = sampler_c_osem(y, sm, cfg);
    const SystemModel sm_c = scale_system(sm, c);
    const SubsetSchedule subsets = partition_subsets(sm.geom, cfg.n_sub);
    RngStream root = RngStream::from_seed(cfg.seed);
    RngStream init_stream = root.child("sample_init");
    RngStream ddim_stream = root.child("ddim_noise");

    ImageGrid x = sm.empty_image();
    init_stream.fill_normal(x.v);
    const int n = cfg.n_steps;
    for (int k = n - 1; k >= 1; --k) {
        const double t = grid[static_cast<std::size_t>(k)];
        const auto ck = sched.kernel_coeffs(t);
        const auto cprev = sched.kernel_coeffs(grid[static_cast<std::size_t>(k - 1)]);
        const ImageGrid s = eval_score(model, x, t, cfg.condition, cfg.w);
        ImageGrid x0h = tweedie_from_score(x, s, ck);
        if (cfg.p > 0) {
            const ImageGrid anchor = x0h;
            ImageGrid xin = x0h;
            clamp_nonneg(xin);
            const double delta = cfg.delta >= 0.0 ? cfg.delta : preconditioner_floor(xin);
            for (int i = 0; i < cfg.p; ++i) {
                const long pos = static_cast<long>(cfg.p) * (n - 1 - k) + i;
                const int j = subsets.order[static_cast<std::size_t>(pos % cfg.n_sub)];
                pet_dds_inner_update(xin, anchor, y, sm_c, subsets.angles[static_cast<std::size_t>(j)],
                                     cfg.lambda_rdp, cfg.lambda, cfg.n_sub, delta);
            }
            x0h = xin;
        }
        const double eta_k = ddim_eta_k(ck, cprev, cfg.eta);
        ImageGrid z;
        if (eta_k > 0.0) {
            z = like(x);
            ddim_stream.fill_normal(z.v);
        }
        x = ddim_recombine(x0h, s, ck, cprev, eta_k, eta_k > 0.0 ? &z : nullptr);
        check_step_finite(x, "reconstruct_pet_dds", k - 1);
        if (cfg.on_step) cfg.on_step(k - 1, grid[static_cast<std::size_t>(k - 1)], x);
    }
    SamplerResult res;
    res.raw = x;
    res.c_osem = c;
    res.steps = n - 1;
    res.image = like(x);
    for (std::size_t i = 0; i < x.v.size(); ++i) res.image.v[i] = c * std::max(x.v[i], 0.0);
    return res;
}

SamplerResult denoise_naive_osem(const ImageGrid& x_noisy, const ScoreModel& model,
                                 const DiffusionSchedule& sched, double sigma_d,
                                 std::uint64_t seed, int n_steps) {
    if (!(sigma_d > 0.0) || !std::isfinite(sigma_d))
        throw std::invalid_argument("denoise_naive_osem: sigma_d must be > 0");
    const int n = n_steps > 0 ? n_steps : sched.n_steps;
    const std::vector<double> grid = time_grid(sched, n);
    const double c = c_osem_from_image(x_noisy);
    ImageGrid target = x_noisy;
    for (double& v : target.v) v /= c;
    RngStream root = RngStream::from_seed(seed);
    RngStream init_stream = root.child("sample_init");
    RngStream em_stream = root.child("em_noise");

    ImageGrid x = like(x_noisy);
    init_stream.fill_normal(x.v);
    const double inv_s2 = 1.0 / (sigma_d * sigma_d);
    for (int k = n - 1; k >= 1; --k) {
        const double t = grid[static_cast<std::size_t>(k)];
        const double dt = t - grid[static_cast<std::size_t>(k - 1)];
        const double beta = sched.beta(t);
        const double sd = std::sqrt(beta * dt);
        const ImageGrid s = eval_score(model, x, t, nullptr, 0.0);
        ImageGrid z = like(x);
        em_stream.fill_normal(z.v);
        // Prior half of the drift plus diffusion, then the Gaussian data term
        // dx = beta (target - x) / sigma_d^2 dtau integrated exactly over dt.
        const double relax = std::exp(-beta * dt * inv_s2);
        for (std::size_t i = 0; i < x.v.size(); ++i) {
            const double xt = x.v[i] + beta * dt * (0.5 * x.v[i] + s.v[i]) + sd * z.v[i];
            x.v[i] = target.v[i] + (xt - target.v[i]) * relax;
        }
        check_step_finite(x, "denoise_naive_osem", k - 1);
    }
    SamplerResult res;
    res.raw = x;
    res.c_osem = c;
    res.steps = n - 1;
    res.image = like(x);
    for (std::size_t i = 0; i < x.v.size(); ++i) res.image.v[i] = c * std::max(x.v[i], 0.0);
    return res;
}

} // namespace petsgm
