#include "petsgm/score.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <utility>

namespace petsgm {

double c_train(const ImageGrid& x) {
    const int npos = count_positive(x);
    if (npos == 0) throw std::invalid_argument("c_train: image has no positive voxel");
    return sum(x) / npos;
}

MixtureScore::MixtureScore(std::vector<ImageGrid> components, std::vector<double> weights,
                           DiffusionSchedule sched, std::vector<ImageGrid> conditions)
    : comps_(std::move(components)), conds_(std::move(conditions)), sched_(sched) {
    sched_.validate();
    if (comps_.empty()) throw std::invalid_argument("MixtureScore: no components");
    if (weights.size() != comps_.size())
        throw std::invalid_argument("MixtureScore: weights/components size mismatch");
    if (!conds_.empty() && conds_.size() != comps_.size())
        throw std::invalid_argument("MixtureScore: conditions/components size mismatch");
    for (std::size_t i = 1; i < comps_.size(); ++i)
        require_same_shape(comps_[0], comps_[i], "MixtureScore components");
    for (const ImageGrid& c : conds_)
        require_same_shape(comps_[0], c, "MixtureScore conditions");

    // Normalise in log space so extreme raw weights (1e+-300) stay finite.
    log_w_.resize(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (!(weights[i] > 0.0) || !std::isfinite(weights[i]))
            throw std::invalid_argument("MixtureScore: weights must be finite and positive");
        log_w_[i] = std::log(weights[i]);
    }
    const double lmax = *std::max_element(log_w_.begin(), log_w_.end());
    double acc = 0.0;
    for (double lw : log_w_) acc += std::exp(lw - lmax);
    const double lse = lmax + std::log(acc);
    for (double& lw : log_w_) lw -= lse;
}

std::vector<std::size_t> MixtureScore::active(const ImageGrid* condition) const {
    std::vector<std::size_t> act;
    if (condition == nullptr || conds_.empty()) {
        act.resize(comps_.size());
        for (std::size_t i = 0; i < act.size(); ++i) act[i] = i;
        return act;
    }
    require_same_shape(comps_[0], *condition, "MixtureScore condition query");
    for (std::size_t i = 0; i < conds_.size(); ++i)
        if (conds_[i].v == condition->v) act.push_back(i);
    if (act.empty())
        throw std::invalid_argument("MixtureScore: condition matches no component");
    return act;
}

// Log responsibilities over the active components; *logsum receives
// LSE_i [log w_i - |x - gamma comp_i|^2 / (2 nu^2)] for the density.
std::vector<double> MixtureScore::log_resp(const ImageGrid& x_t, double t,
                                           const std::vector<std::size_t>& act,
                                           double* logsum) const {
    const auto kc = sched_.kernel_coeffs(t);
    if (!(kc.nu2 > 0.0)) throw std::invalid_argument("MixtureScore: t too small, kernel is degenerate");
    std::vector<double> lp(act.size());
    for (std::size_t a = 0; a < act.size(); ++a) {
        const ImageGrid& mu = comps_[act[a]];
        double q = 0.0;
        for (std::size_t j = 0; j < x_t.v.size(); ++j) {
            const double d = x_t.v[j] - kc.gamma * mu.v[j];
            q += d * d;
        }
        lp[a] = log_w_[act[a]] - 0.5 * q / kc.nu2;
    }
    const double lmax = *std::max_element(lp.begin(), lp.end());
    double acc = 0.0;
    for (double l : lp) acc += std::exp(l - lmax);
    const double lse = lmax + std::log(acc);
    if (logsum != nullptr) *logsum = lse;
    for (double& l : lp) l -= lse;
    return lp;
}

std::vector<double> MixtureScore::responsibilities(const ImageGrid& x_t, double t,
                                                   const ImageGrid* condition) const {
    require_same_shape(comps_[0], x_t, "MixtureScore::responsibilities");
    const std::vector<std::size_t> act = active(condition);
    const std::vector<double> lr = log_resp(x_t, t, act, nullptr);
    std::vector<double> r(comps_.size(), 0.0);
    for (std::size_t a = 0; a < act.size(); ++a) r[act[a]] = std::exp(lr[a]);
    return r;
}

ImageGrid MixtureScore::posterior_mean(const ImageGrid& x_t, double t,
                                       const ImageGrid* condition) const {
    require_same_shape(comps_[0], x_t, "MixtureScore::posterior_mean");
    const std::vector<std::size_t> act = active(condition);
    const std::vector<double> lr = log_resp(x_t, t, act, nullptr);
    ImageGrid m = like(x_t);
    for (std::size_t a = 0; a < act.size(); ++a) {
        const double r = std::exp(lr[a]);
        const ImageGrid& mu = comps_[act[a]];
        for (std::size_t j = 0; j < m.v.size(); ++j) m.v[j] += r * mu.v[j];
    }
    return m;
}

ImageGrid MixtureScore::score(const ImageGrid& x_t, double t, const ImageGrid* condition) const {
    const auto kc = sched_.kernel_coeffs(t);
    const ImageGrid m = posterior_mean(x_t, t, condition);
    ImageGrid s = like(x_t);
    for (std::size_t j = 0; j < s.v.size(); ++j)
        s.v[j] = -(x_t.v[j] - kc.gamma * m.v[j]) / kc.nu2;
    return s;
}

double MixtureScore::log_density(const ImageGrid& x_t, double t, const ImageGrid* condition) const {
    require_same_shape(comps_[0], x_t, "MixtureScore::log_density");
    const auto kc = sched_.kernel_coeffs(t);
    const std::vector<std::size_t> act = active(condition);
    double lse = 0.0;
    (void)log_resp(x_t, t, act, &lse);
    // With conditioning the restricted weights are renormalised over the
    // active set, matching the conditional density the restricted score
    // integrates to.
    if (act.size() < comps_.size()) {
        double wmax = log_w_[act[0]];
        for (std::size_t i : act) wmax = std::max(wmax, log_w_[i]);
        double acc = 0.0;
        for (std::size_t i : act) acc += std::exp(log_w_[i] - wmax);
        lse -= wmax + std::log(acc);
    }
    const double n = static_cast<double>(x_t.v.size());
    return lse - 0.5 * n * std::log(2.0 * std::numbers::pi * kc.nu2);
}

ImageGrid MixtureScore::score_vjp(const ImageGrid& x_t, double t, const ImageGrid& u,
                                  const ImageGrid* condition) const {
    require_same_shape(comps_[0], x_t, "MixtureScore::score_vjp");
    require_same_shape(x_t, u, "MixtureScore::score_vjp cotangent");
    const auto kc = sched_.kernel_coeffs(t);
    const std::vector<std::size_t> act = active(condition);
    const std::vector<double> lr = log_resp(x_t, t, act, nullptr);

    // m(x) = sum_a r_a mu_a with r_a the softmax responsibilities, so
    //   J_m^T u = (gamma / nu^2) sum_a r_a (mu_a . u) (mu_a - m)
    // and s(x) = -(x - gamma m(x)) / nu^2 gives
    //   J_s^T u = (-u + gamma J_m^T u) / nu^2.
    ImageGrid m = like(x_t);
    std::vector<double> r(act.size());
    std::vector<double> mu_dot_u(act.size());
    for (std::size_t a = 0; a < act.size(); ++a) {
        r[a] = std::exp(lr[a]);
        const ImageGrid& mu = comps_[act[a]];
        mu_dot_u[a] = dot(mu, u);
        for (std::size_t j = 0; j < m.v.size(); ++j) m.v[j] += r[a] * mu.v[j];
    }
    ImageGrid jm_u = like(x_t);
    for (std::size_t a = 0; a < act.size(); ++a) {
        const ImageGrid& mu = comps_[act[a]];
        const double w = kc.gamma / kc.nu2 * r[a] * mu_dot_u[a];
        for (std::size_t j = 0; j < jm_u.v.size(); ++j) jm_u.v[j] += w * (mu.v[j] - m.v[j]);
    }
    ImageGrid out = like(x_t);
    for (std::size_t j = 0; j < out.v.size(); ++j)
        out.v[j] = (-u.v[j] + kc.gamma * jm_u.v[j]) / kc.nu2;
    return out;
}

ImageGrid cfg_combine(const ImageGrid& s_cond, const ImageGrid& s_uncond, double w) {
    if (w == 0.0) return s_cond;
    require_same_shape(s_cond, s_uncond, "cfg_combine");
    ImageGrid out = like(s_cond);
    for (std::size_t j = 0; j < out.v.size(); ++j)
        out.v[j] = (1.0 + w) * s_cond.v[j] - w * s_uncond.v[j];
    return out;
}

ImageGrid CfgScore::score(const ImageGrid& x_t, double t, const ImageGrid* condition) const {
    if (condition == nullptr || w_ == 0.0) return base_.score(x_t, t, condition);
    const ImageGrid sc = base_.score(x_t, t, condition);
    const ImageGrid su = base_.score(x_t, t, nullptr);
    return cfg_combine(sc, su, w_);
}

ImageGrid CfgScore::score_vjp(const ImageGrid& x_t, double t, const ImageGrid& u,
                              const ImageGrid* condition) const {
    if (condition == nullptr || w_ == 0.0) return base_.score_vjp(x_t, t, u, condition);
    const ImageGrid vc = base_.score_vjp(x_t, t, u, condition);
    const ImageGrid vu = base_.score_vjp(x_t, t, u, nullptr);
    return cfg_combine(vc, vu, w_);
}

} // namespace petsgm
