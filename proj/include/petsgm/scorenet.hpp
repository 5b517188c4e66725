#pragma once
// A deliberately tiny trainable score network. It is a demonstration path:
// the analytic mixture score stays the verification oracle, and this network
// only has to land in its vicinity (cosine similarity), not replace it.
//
// Architecture: four 3x3 zero-padded convolutions over 2D slices with ReLU
// between them. Input channels are [x_t, condition-or-zero, gamma_t, nu_t]
// (the last two constant over the slice, embedding time). The network
// predicts the denoised image f; the score it reports is the kernel identity
//   s(x_t, t) = -(x_t - gamma_t f) / nu_t^2,
// so a perfect denoiser yields the exact posterior score and an all-zero
// output degrades gracefully to the pure-noise score.

#include <cstdint>
#include <string>
#include <vector>

#include "petsgm/diffusion.hpp"
#include "petsgm/grid.hpp"
#include "petsgm/score.hpp"

namespace petsgm {

class TinyScoreNet : public ScoreModel {
public:
    // Channel widths are [4, hidden, hidden, hidden, 1]; weights are
    // He-initialised from init_seed, final layer damped so f starts near 0.
    TinyScoreNet(DiffusionSchedule sched, int hidden = 10, std::uint64_t init_seed = 0);

    // Denoised estimate f(x_t, t, condition); 2D slices only (nz == 1).
    ImageGrid denoise(const ImageGrid& x_t, double t, const ImageGrid* condition = nullptr) const;

    ImageGrid score(const ImageGrid& x_t, double t, const ImageGrid* condition = nullptr) const override;
    ImageGrid score_vjp(const ImageGrid& x_t, double t, const ImageGrid& u,
                        const ImageGrid* condition = nullptr) const override;

    std::size_t parameter_count() const;
    int layer_count() const { return static_cast<int>(layers_.size()); }
    const DiffusionSchedule& schedule() const { return sched_; }

    // Flat float32 parameter blob + JSON sidecar (layer shapes, schedule).
    void save(const std::string& path_f32) const;
    static TinyScoreNet load(const std::string& path_f32);

    // Parameters flattened in layer order (weights then bias per layer);
    // exposed for the trainer and for determinism checks.
    std::vector<double> parameters() const;
    void set_parameters(const std::vector<double>& flat);

private:
    struct Conv {
        int c_in = 0, c_out = 0;
        std::vector<double> w; // [c_out][c_in][ky][kx], 3x3
        std::vector<double> b; // [c_out]
    };
    // One forward pass keeping pre-activations for backprop.
    struct Trace {
        int nx = 0, ny = 0;
        std::vector<std::vector<double>> act; // act[l] = input of layer l; act.back() = output
    };

    Trace forward(const ImageGrid& x_t, double t, const ImageGrid* condition) const;
    // Backprop of a cotangent on the output. Fills param_grad (same flat
    // layout as parameters()) unless null, and returns the gradient with
    // respect to the x_t input channel.
    std::vector<double> backward(const Trace& tr, const std::vector<double>& dout,
                                 std::vector<double>* param_grad) const;

    DiffusionSchedule sched_;
    int hidden_ = 0;
    std::vector<Conv> layers_;

    friend struct ScoreNetTrainer;
};

struct TrainOptions {
    int steps = 4000;
    double lr = 0.05;
    double q_keep = 0.9;      // probability a provided condition is kept per sample
    bool scale_jitter = true; // per-sample normaliser drawn from U[c/2, 3c/2]
    double t_floor = 0.02;    // training times drawn from U[max(t_floor, t_min), 1]
    std::uint64_t seed = 0;
    int heldout_draws = 400;  // Monte Carlo draws for the held-out DSM loss
};

struct TrainStats {
    int steps = 0;
    long cond_kept = 0;
    long cond_dropped = 0;
    std::size_t n_train = 0;
    std::size_t n_heldout = 0;
    double heldout_initial = 0.0;
    double heldout_final = 0.0;
};

// Denoising score-matching training on normalised images (each divided by
// its own c_train, jittered per sample when enabled). conditions is either
// empty (unconditional) or one image per dataset entry; a kept condition is
// fed as the second channel, a dropped one is replaced by zeros. Datasets
// of five or more images reserve the last fifth as the held-out split;
// smaller ones are evaluated on fresh draws from the training images.
// Throws if the running loss turns non-finite.
TrainStats train_score(const std::vector<ImageGrid>& dataset,
                       const std::vector<ImageGrid>& conditions, TinyScoreNet& net,
                       const DiffusionSchedule& sched, const TrainOptions& opts);

} // namespace petsgm
