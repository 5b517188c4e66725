#include "petsgm/config.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <stdexcept>
#include <string>

namespace petsgm {

namespace {

using nlohmann::json;

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw std::invalid_argument("config: " + where + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known) throw std::invalid_argument("config: unknown key '" + it.key() + "' in " + where);
    }
}

template <typename T>
void fetch(const json& j, const char* key, T& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}

bool known_algo(const std::string& a) {
    return a == "mlem" || a == "osem" || a == "bsrem" || a == "pet-naive" || a == "pet-dps" ||
           a == "pet-dds" || a == "naive-osem-denoise";
}

} // namespace

RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig cfg;
    check_keys(j, {"geometry", "phantom", "simulate", "schedule", "train", "sampler", "recon",
                   "sweep", "output_root"},
               "top level");
    if (j.contains("geometry")) {
        const json& g = j.at("geometry");
        check_keys(g, {"mode", "n_angles", "n_radial", "fov_mm", "n_polar", "polar_tilt_rad"},
                   "geometry");
        fetch(g, "mode", cfg.mode);
        fetch(g, "n_angles", cfg.n_angles);
        fetch(g, "n_radial", cfg.n_radial);
        fetch(g, "fov_mm", cfg.fov_mm);
        fetch(g, "n_polar", cfg.n_polar);
        fetch(g, "polar_tilt_rad", cfg.polar_tilt_rad);
    }
    if (j.contains("phantom")) {
        const json& p = j.at("phantom");
        check_keys(p,
                   {"nx", "ny", "nz", "lesion_count", "lesion_contrast", "dataset_size",
                    "dataset_lesions", "dataset_seed", "truth_from_dataset"},
                   "phantom");
        fetch(p, "nx", cfg.nx);
        fetch(p, "ny", cfg.ny);
        fetch(p, "nz", cfg.nz);
        fetch(p, "lesion_count", cfg.lesion_count);
        fetch(p, "lesion_contrast", cfg.lesion_contrast);
        fetch(p, "dataset_size", cfg.dataset_size);
        fetch(p, "dataset_lesions", cfg.dataset_lesions);
        fetch(p, "dataset_seed", cfg.dataset_seed);
        fetch(p, "truth_from_dataset", cfg.truth_from_dataset);
    }
    if (j.contains("simulate")) {
        const json& s = j.at("simulate");
        check_keys(s, {"noise_level", "background_frac", "seed"}, "simulate");
        fetch(s, "noise_level", cfg.noise_level);
        fetch(s, "background_frac", cfg.background_frac);
        fetch(s, "seed", cfg.sim_seed);
    }
    if (j.contains("schedule")) {
        const json& s = j.at("schedule");
        check_keys(s, {"beta_min", "beta_max", "t_min", "n_steps"}, "schedule");
        fetch(s, "beta_min", cfg.schedule.beta_min);
        fetch(s, "beta_max", cfg.schedule.beta_max);
        fetch(s, "t_min", cfg.schedule.t_min);
        fetch(s, "n_steps", cfg.schedule.n_steps);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        check_keys(t,
                   {"hidden", "init_seed", "steps", "lr", "q_keep", "scale_jitter", "t_floor",
                    "seed", "heldout_draws"},
                   "train");
        fetch(t, "hidden", cfg.train_hidden);
        fetch(t, "init_seed", cfg.net_init_seed);
        fetch(t, "steps", cfg.train.steps);
        fetch(t, "lr", cfg.train.lr);
        fetch(t, "q_keep", cfg.train.q_keep);
        fetch(t, "scale_jitter", cfg.train.scale_jitter);
        fetch(t, "t_floor", cfg.train.t_floor);
        fetch(t, "seed", cfg.train.seed);
        fetch(t, "heldout_draws", cfg.train.heldout_draws);
    }
    if (j.contains("sampler")) {
        const json& s = j.at("sampler");
        check_keys(s,
                   {"method", "n_steps", "eta", "lambda", "p", "n_sub", "lambda_rdp", "sigma_d",
                    "w", "seed", "samples", "c_osem_override", "osem_init", "delta"},
                   "sampler");
        if (s.contains("method")) cfg.sampler.method = parse_sampler_method(s.at("method").get<std::string>());
        fetch(s, "n_steps", cfg.sampler.n_steps);
        fetch(s, "eta", cfg.sampler.eta);
        fetch(s, "lambda", cfg.sampler.lambda);
        fetch(s, "p", cfg.sampler.p);
        fetch(s, "n_sub", cfg.sampler.n_sub);
        fetch(s, "lambda_rdp", cfg.sampler.lambda_rdp);
        fetch(s, "sigma_d", cfg.sampler.sigma_d);
        fetch(s, "w", cfg.sampler.w);
        fetch(s, "seed", cfg.sampler.seed);
        fetch(s, "samples", cfg.samples);
        fetch(s, "c_osem_override", cfg.sampler.c_osem_override);
        fetch(s, "osem_init", cfg.sampler.osem_init);
        fetch(s, "delta", cfg.sampler.delta);
    }
    if (j.contains("recon")) {
        const json& r = j.at("recon");
        check_keys(r, {"algo", "n_iter", "n_sub", "lambda", "max_epochs"}, "recon");
        fetch(r, "algo", cfg.algo);
        fetch(r, "n_iter", cfg.n_iter);
        fetch(r, "n_sub", cfg.recon_n_sub);
        fetch(r, "lambda", cfg.bsrem.lambda);
        fetch(r, "max_epochs", cfg.bsrem.max_epochs);
    }
    if (j.contains("sweep")) {
        const json& s = j.at("sweep");
        check_keys(s, {"algos", "lambdas", "seeds"}, "sweep");
        fetch(s, "algos", cfg.sweep_algos);
        fetch(s, "lambdas", cfg.sweep_lambdas);
        fetch(s, "seeds", cfg.sweep_seeds);
    }
    fetch(j, "output_root", cfg.output_root);
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("config: cannot open " + path);
    nlohmann::json j = nlohmann::json::parse(in);
    return run_config_from_json(j);
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["geometry"] = {{"mode", cfg.mode},
                     {"n_angles", cfg.n_angles},
                     {"n_radial", cfg.n_radial},
                     {"fov_mm", cfg.fov_mm},
                     {"n_polar", cfg.n_polar},
                     {"polar_tilt_rad", cfg.polar_tilt_rad}};
    j["phantom"] = {{"nx", cfg.nx},
                    {"ny", cfg.ny},
                    {"nz", cfg.nz},
                    {"lesion_count", cfg.lesion_count},
                    {"lesion_contrast", cfg.lesion_contrast},
                    {"dataset_size", cfg.dataset_size},
                    {"dataset_lesions", cfg.dataset_lesions},
                    {"dataset_seed", cfg.dataset_seed},
                    {"truth_from_dataset", cfg.truth_from_dataset}};
    j["simulate"] = {{"noise_level", cfg.noise_level},
                     {"background_frac", cfg.background_frac},
                     {"seed", cfg.sim_seed}};
    j["schedule"] = {{"beta_min", cfg.schedule.beta_min},
                     {"beta_max", cfg.schedule.beta_max},
                     {"t_min", cfg.schedule.t_min},
                     {"n_steps", cfg.schedule.n_steps}};
    j["train"] = {{"hidden", cfg.train_hidden},
                  {"init_seed", cfg.net_init_seed},
                  {"steps", cfg.train.steps},
                  {"lr", cfg.train.lr},
                  {"q_keep", cfg.train.q_keep},
                  {"scale_jitter", cfg.train.scale_jitter},
                  {"t_floor", cfg.train.t_floor},
                  {"seed", cfg.train.seed},
                  {"heldout_draws", cfg.train.heldout_draws}};
    j["sampler"] = {{"method", to_string(cfg.sampler.method)},
                    {"n_steps", cfg.sampler.n_steps},
                    {"eta", cfg.sampler.eta},
                    {"lambda", cfg.sampler.lambda},
                    {"p", cfg.sampler.p},
                    {"n_sub", cfg.sampler.n_sub},
                    {"lambda_rdp", cfg.sampler.lambda_rdp},
                    {"sigma_d", cfg.sampler.sigma_d},
                    {"w", cfg.sampler.w},
                    {"seed", cfg.sampler.seed},
                    {"samples", cfg.samples},
                    {"c_osem_override", cfg.sampler.c_osem_override},
                    {"osem_init", cfg.sampler.osem_init},
                    {"delta", cfg.sampler.delta}};
    j["recon"] = {{"algo", cfg.algo},
                  {"n_iter", cfg.n_iter},
                  {"n_sub", cfg.recon_n_sub},
                  {"lambda", cfg.bsrem.lambda},
                  {"max_epochs", cfg.bsrem.max_epochs}};
    j["sweep"] = {{"algos", cfg.sweep_algos}, {"lambdas", cfg.sweep_lambdas}, {"seeds", cfg.sweep_seeds}};
    j["output_root"] = cfg.output_root;
    return j;
}

void resolve_run_config(RunConfig& cfg) {
    if (cfg.mode != "2d" && cfg.mode != "3d")
        throw std::invalid_argument("config: geometry.mode must be \"2d\" or \"3d\"");
    if (cfg.mode == "2d" && cfg.nz != 1)
        throw std::invalid_argument("config: 2d mode requires nz == 1");
    if (cfg.mode == "3d" && cfg.nz < 2)
        throw std::invalid_argument("config: 3d mode requires nz >= 2");
    if (cfg.nx < 1 || cfg.ny < 1) throw std::invalid_argument("config: nx and ny must be >= 1");
    if (cfg.n_angles < 1 || cfg.n_radial < 1)
        throw std::invalid_argument("config: n_angles and n_radial must be >= 1");
    if (!(cfg.fov_mm > 0.0)) throw std::invalid_argument("config: fov_mm must be > 0");
    if (!(cfg.noise_level > 0.0)) throw std::invalid_argument("config: noise_level must be > 0");
    if (!(cfg.background_frac >= 0.0) || !std::isfinite(cfg.background_frac))
        throw std::invalid_argument("config: background_frac must be >= 0");
    if (cfg.dataset_size < 1) throw std::invalid_argument("config: dataset_size must be >= 1");
    if (cfg.truth_from_dataset >= cfg.dataset_size)
        throw std::invalid_argument("config: truth_from_dataset is outside the dataset");
    if (cfg.lesion_count < 0 || cfg.dataset_lesions < 0)
        throw std::invalid_argument("config: lesion counts must be >= 0");
    if (!(cfg.lesion_contrast > 0.0))
        throw std::invalid_argument("config: lesion_contrast must be > 0");
    if (cfg.samples < 1) throw std::invalid_argument("config: samples must be >= 1");
    if (cfg.n_iter < 1) throw std::invalid_argument("config: n_iter must be >= 1");
    if (cfg.recon_n_sub < 1) throw std::invalid_argument("config: recon n_sub must be >= 1");
    if (!known_algo(cfg.algo)) throw std::invalid_argument("config: unknown recon algo " + cfg.algo);
    for (const std::string& a : cfg.sweep_algos)
        if (!known_algo(a) || a == "naive-osem-denoise")
            throw std::invalid_argument("config: unsupported sweep algo " + a);
    cfg.schedule.validate();
    if (cfg.train_hidden < 1) throw std::invalid_argument("config: train hidden must be >= 1");
    if (cfg.sampler.p < 0) cfg.sampler.p = cfg.noise_level >= 10.0 ? 15 : 4;
    cfg.sampler.validate();
    cfg.bsrem.n_sub = cfg.recon_n_sub;
    if (!(cfg.bsrem.lambda >= 0.0)) throw std::invalid_argument("config: recon lambda must be >= 0");
}

Geometry make_geometry(const RunConfig& cfg) {
    Geometry g;
    g.mode = cfg.mode == "3d" ? Geometry::Mode::parallel3d : Geometry::Mode::parallel2d;
    g.n_angles = cfg.n_angles;
    g.n_radial = cfg.n_radial;
    g.fov_mm = cfg.fov_mm;
    g.n_polar = cfg.mode == "3d" ? cfg.n_polar : 1;
    g.polar_tilt_rad = cfg.polar_tilt_rad;
    return g;
}

PhantomSpec make_phantom_spec(const RunConfig& cfg, int lesions) {
    PhantomSpec spec = default_brain_spec(cfg.nx, cfg.ny, cfg.nz);
    spec.sx = cfg.fov_mm / cfg.nx;
    spec.sy = cfg.fov_mm / cfg.ny;
    spec.sz = spec.sx;
    spec.lesions.count = lesions;
    spec.lesions.contrast = cfg.lesion_contrast;
    return spec;
}

} // namespace petsgm
