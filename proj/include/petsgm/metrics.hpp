#pragma once
// Reconstruction quality metrics (PSNR, SSIM, CRC, ensemble STD, KLDIV), ROI
// derivation from paired phantoms, and the multi-realisation sensitivity
// sweep harness with deterministic CSV output.

#include <cstdint>
#include <string>
#include <vector>

#include "petsgm/grid.hpp"
#include "petsgm/phantom.hpp"
#include "petsgm/projector.hpp"
#include "petsgm/samplers.hpp"
#include "petsgm/solvers.hpp"

namespace petsgm {

// Peak signal-to-noise ratio in dB with peak = max(x_true); an exact match
// (zero MSE) and anything above the cap report 200 dB.
double psnr(const ImageGrid& xhat, const ImageGrid& x_true);

// Mean SSIM over all valid (fully interior) 7x7 windows of every axial
// plane: uniform window weights, sample (n-1) moment normalisation, standard
// constants C1 = (0.01 L)^2 and C2 = (0.03 L)^2 with dynamic range
// L = max(x_true).
double ssim(const ImageGrid& xhat, const ImageGrid& x_true);

struct RoiSet {
    std::vector<std::uint8_t> lesion;
    std::vector<std::uint8_t> background;
    std::vector<std::uint8_t> support;
};

// lesion = lesion_mask > 0.5; support = emitting voxels of the ground truth;
// background = emitting voxels outside the lesions.
RoiSet make_rois(const PairedSample& sample);

// Mean over realisations of (mean_L(recon)/mean_B(recon) - 1) divided by the
// same contrast of the ground truth. Errors when the truth contrast is 1.
double crc(const std::vector<ImageGrid>& recons, const ImageGrid& x_true, const RoiSet& rois);

// (1/N_B) sum_k sqrt( sum_r (B_rk - Bbar_k)^2 / (Bbar_k (R - 1)) ) over
// background voxels k; voxels with Bbar_k == 0 are excluded with a warning on
// standard error. Requires R >= 2.
double ensemble_std(const std::vector<ImageGrid>& recons,
                    const std::vector<std::uint8_t>& background);

// Poisson divergence between the model counts A xhat + b and the measured
// counts; xhat must be non-negative.
double kldiv(const Measurements& y, const ImageGrid& xhat, const SystemModel& sm);

// ---- sensitivity sweep -------------------------------------------------
// Full cross-product of (algorithm, lambda, seed): each seed draws one
// Poisson realisation of the measurements (stream seed -> "measurement"),
// each algorithm/lambda pair reconstructs every realisation, and records are
// aggregated per (algorithm, lambda) group. Cell failures are recorded, not
// fatal.

struct SweepRecord {
    std::string algo;
    double lambda = 0.0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;          // empty when ok
    double psnr = 0.0, ssim = 0.0, crc = 0.0, kldiv = 0.0;
    std::string std_group_id;   // "<algo>:<lambda index>"
};

struct SweepAggregate {
    std::string std_group_id;
    std::string algo;
    double lambda = 0.0;
    int r_ok = 0;
    double psnr_mean = 0.0, ssim_mean = 0.0, crc_mean = 0.0, kldiv_mean = 0.0;
    double std_value = 0.0;     // ensemble STD over the group's realisations
};

struct SweepResult {
    std::vector<SweepRecord> records;
    std::vector<SweepAggregate> aggregates;
};

struct SweepPlan {
    // Algorithms: "mlem", "osem", "bsrem", "pet-naive", "pet-dps", "pet-dds".
    std::vector<std::string> algos;
    std::vector<double> lambdas;        // regularisation grid; mlem/osem ignore the value
    std::vector<std::uint64_t> seeds;   // one measurement realisation per seed
    int n_iter = 200;                   // mlem iterations / osem epochs
    int n_sub = 4;                      // osem subsets
    SamplerConfig sampler;              // template for sampler algorithms
                                        // (method, lambda, seed overridden per cell)
    BsremParams bsrem;                  // template for bsrem (lambda overridden)
    const ScoreModel* score = nullptr;  // required for sampler algorithms
    const DiffusionSchedule* sched = nullptr;
};

SweepResult run_sweep(const SweepPlan& plan, const SystemModel& sm, const ImageGrid& x_true,
                      const RoiSet& rois);

// Deterministic CSV renderings (one row per record / per aggregate, %.9g).
// Row schema:       algo,lambda,seed,psnr,ssim,crc,kldiv,std_group_id
// Aggregate schema: std_group_id,algo,lambda,r_ok,psnr_mean,ssim_mean,crc_mean,kldiv_mean,std
std::string sweep_rows_csv(const SweepResult& res);
std::string sweep_aggregates_csv(const SweepResult& res);
void write_sweep_csv(const SweepResult& res, const std::string& rows_path,
                     const std::string& aggregates_path);

} // namespace petsgm
