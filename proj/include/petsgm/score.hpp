#pragma once
// Score models: the common interface, an analytic Gaussian-mixture oracle
// whose marginal score under the diffusion kernel is exact (the primary
// verification path for every sampler), and classifier-free combination of a
// conditional and an unconditional score.

#include <memory>
#include <vector>

#include "petsgm/diffusion.hpp"
#include "petsgm/grid.hpp"

namespace petsgm {

class ScoreModel {
public:
    virtual ~ScoreModel() = default;

    // Score of the diffused marginal at (x_t, t); condition == nullptr means
    // unconditional. Deterministic: no internal randomness.
    virtual ImageGrid score(const ImageGrid& x_t, double t, const ImageGrid* condition = nullptr) const = 0;

    // u ^T (d score / d x_t): transpose-Jacobian action, needed for gradients
    // taken through the posterior-mean map.
    virtual ImageGrid score_vjp(const ImageGrid& x_t, double t, const ImageGrid& u,
                                const ImageGrid* condition = nullptr) const = 0;
};

// Normalisation constant of a training image: sum over voxels divided by the
// number of strictly positive voxels. Error if no voxel is positive.
double c_train(const ImageGrid& x);

// p_0 = sum_i w_i delta(x - comp_i)  =>  p_t is a Gaussian mixture
// N(gamma_t comp_i, nu_t^2 I) with exact score, posterior mean and Jacobian.
// If per-component conditions are attached, conditioning restricts the
// mixture to the components whose condition equals the query exactly.
class MixtureScore : public ScoreModel {
public:
    MixtureScore(std::vector<ImageGrid> components, std::vector<double> weights,
                 DiffusionSchedule sched, std::vector<ImageGrid> conditions = {});

    ImageGrid score(const ImageGrid& x_t, double t, const ImageGrid* condition = nullptr) const override;
    ImageGrid score_vjp(const ImageGrid& x_t, double t, const ImageGrid& u,
                        const ImageGrid* condition = nullptr) const override;

    // E[x_0 | x_t] = sum_i r_i(x_t) comp_i.
    ImageGrid posterior_mean(const ImageGrid& x_t, double t, const ImageGrid* condition = nullptr) const;
    // Softmax responsibilities r_i(x_t) (log-sum-exp stabilised).
    std::vector<double> responsibilities(const ImageGrid& x_t, double t,
                                         const ImageGrid* condition = nullptr) const;
    // log p_t(x_t) including the Gaussian normaliser (finite-difference oracle hook).
    double log_density(const ImageGrid& x_t, double t, const ImageGrid* condition = nullptr) const;

    const std::vector<ImageGrid>& components() const { return comps_; }
    const DiffusionSchedule& schedule() const { return sched_; }

private:
    std::vector<std::size_t> active(const ImageGrid* condition) const;
    std::vector<double> log_resp(const ImageGrid& x_t, double t,
                                 const std::vector<std::size_t>& act, double* logsum) const;

    std::vector<ImageGrid> comps_;
    std::vector<double> log_w_;
    std::vector<ImageGrid> conds_;
    DiffusionSchedule sched_;
};

// (1+w) s_cond - w s_uncond; returns s_cond untouched when w == 0.
ImageGrid cfg_combine(const ImageGrid& s_cond, const ImageGrid& s_uncond, double w);

// Guided wrapper: evaluates the base model with and without the condition and
// combines. With no condition (or w == 0) it falls through to the base model.
class CfgScore : public ScoreModel {
public:
    CfgScore(const ScoreModel& base, double w) : base_(base), w_(w) {}
    ImageGrid score(const ImageGrid& x_t, double t, const ImageGrid* condition = nullptr) const override;
    ImageGrid score_vjp(const ImageGrid& x_t, double t, const ImageGrid& u,
                        const ImageGrid* condition = nullptr) const override;

private:
    const ScoreModel& base_;
    double w_;
};

} // namespace petsgm
