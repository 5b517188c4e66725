#pragma once
// Run configuration: strict JSON round-trip (unknown keys are errors,
// missing keys keep defaults), dependent-default resolution, and builders
// for the derived geometry and phantom descriptions.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "petsgm/diffusion.hpp"
#include "petsgm/phantom.hpp"
#include "petsgm/projector.hpp"
#include "petsgm/samplers.hpp"
#include "petsgm/scorenet.hpp"
#include "petsgm/solvers.hpp"

namespace petsgm {

struct RunConfig {
    // geometry
    std::string mode = "2d"; // "2d" | "3d"
    int n_angles = 48;
    int n_radial = 32;
    double fov_mm = 32.0;
    int n_polar = 3;
    double polar_tilt_rad = 0.2;
    // phantom & dataset
    int nx = 32, ny = 32, nz = 1;
    int lesion_count = 0;        // lesions painted into the simulated ground truth
    double lesion_contrast = 4.0;
    int dataset_size = 16;       // training / mixture-prior dataset
    int dataset_lesions = 0;     // lesions in the dataset phantoms
    std::uint64_t dataset_seed = 0;
    int truth_from_dataset = -1; // >= 0: that dataset entry becomes the ground truth
    // simulation
    double noise_level = 2.5;
    double background_frac = 0.2;
    std::uint64_t sim_seed = 0;
    // diffusion schedule
    DiffusionSchedule schedule;
    // score-network training
    int train_hidden = 10;
    std::uint64_t net_init_seed = 0;
    TrainOptions train;
    // sampling / generative reconstruction; p < 0 resolves from the noise level
    SamplerConfig sampler;
    int samples = 1;
    // classical reconstruction
    std::string algo = "mlem";
    int n_iter = 200;
    int recon_n_sub = 4;
    BsremParams bsrem;
    // sweep
    std::vector<std::string> sweep_algos{"mlem"};
    std::vector<double> sweep_lambdas{1.0};
    std::vector<std::uint64_t> sweep_seeds{0, 1};
    // output root; empty falls back to $PETSGM_OUTPUT_ROOT, then "runs"
    std::string output_root;

    RunConfig() { sampler.p = -1; }
};

// Strict parse of a configuration object / file.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

// Fully resolved mirror of the configuration (the manifest payload).
nlohmann::json run_config_to_json(const RunConfig& cfg);

// Fill dependent defaults (sampler.p < 0 resolves to 4 below noise level 10
// and 15 at or above it) and validate cross-field constraints.
void resolve_run_config(RunConfig& cfg);

Geometry make_geometry(const RunConfig& cfg);
PhantomSpec make_phantom_spec(const RunConfig& cfg, int lesions);

} // namespace petsgm
