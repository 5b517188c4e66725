#include "petsgm/cli.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include "petsgm/config.hpp"
#include "petsgm/io.hpp"
#include "petsgm/metrics.hpp"
#include "petsgm/samplers.hpp"
#include "petsgm/score.hpp"
#include "petsgm/scorenet.hpp"
#include "petsgm/solvers.hpp"

namespace petsgm {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- manifest -----------------------------------------------------------

struct Manifest {
    std::string command;
    json config;
    fs::path dir;
    json inputs = json::object();
    json outputs = json::object();

    void add_input(const std::string& name, const std::string& path) {
        inputs[name] = {{"path", path}, {"hash", content_hash_file(path)}};
    }
    void add_output(const std::string& rel) { outputs[rel] = content_hash_file((dir / rel).string()); }
    void write() const {
        json j{{"command", command}, {"config", config}, {"inputs", inputs}, {"outputs", outputs}};
        std::ofstream f(dir / "manifest.json", std::ios::binary);
        if (!f) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
        f << j.dump(2) << "\n";
    }
};

std::string sidecar_of(const std::string& rel_f32) {
    return rel_f32.substr(0, rel_f32.size() - 4) + ".json";
}

void write_image_out(Manifest& man, const ImageGrid& img, const std::string& rel) {
    write_image(img, (man.dir / rel).string());
    man.add_output(rel);
    man.add_output(sidecar_of(rel));
}

void write_meas_out(Manifest& man, const Measurements& m, const std::string& rel) {
    write_measurements(m, (man.dir / rel).string());
    man.add_output(rel);
    man.add_output(sidecar_of(rel));
}

void write_text_out(Manifest& man, const std::string& rel, const std::string& text) {
    std::ofstream f(man.dir / rel, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + (man.dir / rel).string());
    f << text;
    f.close();
    man.add_output(rel);
}

void write_json_out(Manifest& man, const std::string& rel, const json& j) {
    write_text_out(man, rel, j.dump(2) + "\n");
}

void export_graymap_out(Manifest& man, const ImageGrid& img, const std::string& rel) {
    export_graymap(img, img.nz / 2, (man.dir / rel).string());
    man.add_output(rel);
}

ImageGrid load_image_input(Manifest& man, const std::string& name, const std::string& path) {
    ImageGrid img = read_image(path);
    man.add_input(name, path);
    return img;
}

// ---- shared setup pieces -------------------------------------------------

fs::path resolve_out_dir(const RunConfig& cfg, const std::string& out_flag, const char* command) {
    if (!out_flag.empty()) return fs::path(out_flag);
    std::string root = cfg.output_root;
    if (root.empty()) {
        const char* env = std::getenv("PETSGM_OUTPUT_ROOT");
        if (env && *env) root = env;
    }
    if (root.empty()) root = "runs";
    return fs::path(root) / command;
}

RunConfig load_cfg(const std::string& config_path) {
    if (config_path.empty()) return RunConfig{};
    return load_run_config(config_path);
}

// Images are stored as float32; rounding the in-memory doubles the same way
// makes mixture conditioning match images that went through disk exactly.
ImageGrid round_f32(ImageGrid img) {
    for (double& v : img.v) v = static_cast<double>(static_cast<float>(v));
    return img;
}

void normalise_by_c_train(ImageGrid& img) {
    const double c = c_train(img);
    for (double& v : img.v) v /= c;
}

// Mixture prior over the configured dataset: each sample normalised by its
// own c_train, volumes contributing one component per axial slice, with the
// structural image attached as the component's condition.
std::unique_ptr<MixtureScore> build_mixture(const RunConfig& cfg) {
    const PhantomSpec spec = make_phantom_spec(cfg, cfg.dataset_lesions);
    const std::vector<PairedSample> data = build_dataset(spec, cfg.dataset_size, cfg.dataset_seed);
    std::vector<ImageGrid> comps, conds;
    for (const PairedSample& s : data) {
        ImageGrid pet = round_f32(s.pet);
        ImageGrid mr = round_f32(s.mr);
        normalise_by_c_train(pet);
        normalise_by_c_train(mr);
        if (pet.nz == 1) {
            comps.push_back(std::move(pet));
            conds.push_back(std::move(mr));
        } else {
            for (int z = 0; z < pet.nz; ++z) {
                comps.push_back(extract_slice(pet, z));
                conds.push_back(extract_slice(mr, z));
            }
        }
    }
    std::vector<double> w(comps.size(), 1.0 / static_cast<double>(comps.size()));
    return std::make_unique<MixtureScore>(std::move(comps), std::move(w), cfg.schedule,
                                          std::move(conds));
}

// kind "mixture" builds the analytic prior from the config's dataset; "net"
// loads a trained network (whose stored schedule then replaces cfg.schedule
// so sampling uses the grid the network was trained for).
std::unique_ptr<ScoreModel> make_score(RunConfig& cfg, const std::string& kind,
                                       const std::string& net_path, Manifest& man) {
    if (kind == "mixture") return build_mixture(cfg);
    if (kind == "net") {
        if (net_path.empty()) throw std::invalid_argument("--score net requires --net PATH");
        man.add_input("net", net_path);
        auto net = std::make_unique<TinyScoreNet>(TinyScoreNet::load(net_path));
        cfg.schedule = net->schedule();
        return net;
    }
    throw std::invalid_argument("unknown score kind '" + kind + "' (expected mixture or net)");
}

struct SimSetup {
    PairedSample sample;
    SystemModel sm;
    double scale_factor = 1.0;
    double background = 0.0;
};

// Ground truth plus the scaled-and-backgrounded system model, shared by
// `simulate` (which then draws counts) and `sweep` (which draws per seed).
SimSetup make_setup(const RunConfig& cfg) {
    SimSetup s;
    if (cfg.truth_from_dataset >= 0) {
        std::vector<PairedSample> data =
            build_dataset(make_phantom_spec(cfg, cfg.dataset_lesions), cfg.dataset_size, cfg.dataset_seed);
        s.sample = std::move(data[static_cast<std::size_t>(cfg.truth_from_dataset)]);
    } else {
        s.sample = generate_phantom(make_phantom_spec(cfg, cfg.lesion_count),
                                    RngStream::from_seed(cfg.sim_seed).child("phantom"));
    }
    SystemModel sm = build_system_model(make_geometry(cfg), s.sample.pet);
    s.scale_factor = scale_to_noise_level(sm, s.sample.pet, cfg.noise_level);
    s.sm = scale_system(sm, s.scale_factor);
    const Measurements trues = forward_project(s.sm, s.sample.pet);
    const double mean_trues =
        std::accumulate(trues.bins.begin(), trues.bins.end(), 0.0) / static_cast<double>(trues.bins.size());
    s.background = cfg.background_frac * mean_trues;
    set_constant_background(s.sm, s.background);
    return s;
}

const char* mode_name(Geometry::Mode m) {
    return m == Geometry::Mode::parallel3d ? "3d" : "2d";
}

json system_to_json(const SystemModel& sm, double scale_factor, double background) {
    return json{{"geometry",
                 {{"mode", mode_name(sm.geom.mode)},
                  {"n_angles", sm.geom.n_angles},
                  {"n_radial", sm.geom.n_radial},
                  {"fov_mm", sm.geom.fov_mm},
                  {"n_polar", sm.geom.n_polar},
                  {"polar_tilt_rad", sm.geom.polar_tilt_rad}}},
                {"image",
                 {{"nx", sm.nx}, {"ny", sm.ny}, {"nz", sm.nz}, {"sx", sm.sx}, {"sy", sm.sy}, {"sz", sm.sz}}},
                {"scale_factor", scale_factor},
                {"background", background}};
}

SystemModel load_system(Manifest& man, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot open system description " + path);
    man.add_input("system", path);
    const json j = json::parse(in);
    const json& g = j.at("geometry");
    Geometry geom;
    const std::string mode = g.at("mode").get<std::string>();
    if (mode != "2d" && mode != "3d")
        throw std::invalid_argument("system: geometry mode must be \"2d\" or \"3d\"");
    geom.mode = mode == "3d" ? Geometry::Mode::parallel3d : Geometry::Mode::parallel2d;
    geom.n_angles = g.at("n_angles").get<int>();
    geom.n_radial = g.at("n_radial").get<int>();
    geom.fov_mm = g.at("fov_mm").get<double>();
    geom.n_polar = g.at("n_polar").get<int>();
    geom.polar_tilt_rad = g.at("polar_tilt_rad").get<double>();
    const json& im = j.at("image");
    const ImageGrid ref(im.at("nx").get<int>(), im.at("ny").get<int>(), im.at("nz").get<int>(),
                        im.at("sx").get<double>(), im.at("sy").get<double>(), im.at("sz").get<double>());
    SystemModel sm = build_system_model(geom, ref);
    sm = scale_system(sm, j.at("scale_factor").get<double>());
    set_constant_background(sm, j.at("background").get<double>());
    return sm;
}

// ---- single-reconstruction metrics (same schema as the sweep rows) -------

std::string single_metrics_csv(const std::string& algo, double lambda, std::uint64_t seed,
                               const ImageGrid& recon, const ImageGrid& truth,
                               const ImageGrid* lesion_mask, const Measurements* y,
                               const SystemModel* sm) {
    const double qnan = std::numeric_limits<double>::quiet_NaN();
    SweepResult res;
    SweepRecord rec;
    rec.algo = algo;
    rec.lambda = lambda;
    rec.seed = seed;
    rec.ok = true;
    rec.std_group_id = algo + ":0";
    rec.psnr = psnr(recon, truth);
    rec.ssim = ssim(recon, truth);
    rec.crc = qnan;
    rec.kldiv = qnan;
    if (lesion_mask) {
        RoiSet rois;
        rois.lesion.resize(truth.v.size());
        rois.support.resize(truth.v.size());
        rois.background.resize(truth.v.size());
        require_same_shape(truth, *lesion_mask, "metrics: lesion mask");
        for (std::size_t i = 0; i < truth.v.size(); ++i) {
            rois.lesion[i] = lesion_mask->v[i] > 0.5 ? 1 : 0;
            rois.support[i] = truth.v[i] > 0.0 ? 1 : 0;
            rois.background[i] = (rois.support[i] && !rois.lesion[i]) ? 1 : 0;
        }
        try {
            rec.crc = crc({recon}, truth, rois);
        } catch (const std::exception&) {
            rec.crc = qnan; // no lesion / degenerate contrast: leave it undefined
        }
    }
    if (y && sm) {
        try {
            rec.kldiv = kldiv(*y, recon, *sm);
        } catch (const std::exception&) {
            rec.kldiv = qnan;
        }
    }
    res.records.push_back(std::move(rec));
    return sweep_rows_csv(res);
}

// ---- flag plumbing --------------------------------------------------------

// One optional override: remembers whether the flag was given.
template <typename T>
struct Opt {
    T value{};
    CLI::Option* opt = nullptr;
    void add(CLI::App* app, const std::string& name, const std::string& desc) {
        opt = app->add_option(name, value, desc);
    }
    bool given() const { return opt && opt->count() > 0; }
    void apply(T& target) const {
        if (given()) target = value;
    }
};

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    void add(CLI::App* app) {
        app->add_option("--config", config_path, "JSON configuration file");
        app->add_option("--out", out_dir, "output directory (default <output_root>/<command>)");
    }
};

// Flags shared by every command that samples or reconstructs with a score.
struct ScoreFlags {
    std::string kind = "mixture";
    std::string net_path;
    std::string condition_path;
    void add(CLI::App* app, bool with_condition) {
        app->add_option("--score", kind, "score model: mixture | net")
            ->check(CLI::IsMember({"mixture", "net"}));
        app->add_option("--net", net_path, "trained network file (*.f32) for --score net");
        if (with_condition)
            app->add_option("--condition", condition_path,
                            "structural guidance image (*.f32), normalised internally");
    }
};

struct SamplerFlags {
    Opt<std::string> method;
    Opt<int> n_steps;
    Opt<double> eta, lambda, w;
    Opt<std::uint64_t> seed;
    void add(CLI::App* app) {
        method.add(app, "--method", "sampler method");
        n_steps.add(app, "--steps", "reverse-time grid points");
        eta.add(app, "--eta", "ddim / pet-dds re-noising strength");
        lambda.add(app, "--lambda", "penalty strength");
        w.add(app, "--w", "classifier-free guidance strength");
        seed.add(app, "--seed", "sampling seed");
    }
    void apply(RunConfig& cfg) const {
        if (method.given()) cfg.sampler.method = parse_sampler_method(method.value);
        n_steps.apply(cfg.sampler.n_steps);
        eta.apply(cfg.sampler.eta);
        lambda.apply(cfg.sampler.lambda);
        w.apply(cfg.sampler.w);
        seed.apply(cfg.sampler.seed);
    }
};

} // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"desk-scale PET simulation, score-model training and reconstruction"};
    app.require_subcommand(1);

    // simulate ------------------------------------------------------------
    CLI::App* sim = app.add_subcommand("simulate", "generate a phantom and Poisson measurements");
    CommonFlags sim_common;
    sim_common.add(sim);
    Opt<double> sim_noise;
    Opt<std::uint64_t> sim_seed;
    Opt<int> sim_lesions, sim_truth_idx;
    sim_noise.add(sim, "--noise-level", "mean trues per emitting voxel");
    sim_seed.add(sim, "--seed", "simulation seed");
    sim_lesions.add(sim, "--lesions", "lesion count in the ground truth");
    sim_truth_idx.add(sim, "--truth-from-dataset", "use this dataset entry as the ground truth");

    // train-score ----------------------------------------------------------
    CLI::App* train = app.add_subcommand("train-score", "train the small score network");
    CommonFlags train_common;
    train_common.add(train);
    Opt<int> train_steps, train_hidden;
    Opt<std::uint64_t> train_seed;
    train_steps.add(train, "--steps", "training steps");
    train_hidden.add(train, "--hidden", "hidden channel width");
    train_seed.add(train, "--seed", "training seed");

    // sample ---------------------------------------------------------------
    CLI::App* sample = app.add_subcommand("sample", "unconditional / guided prior sampling");
    CommonFlags sample_common;
    sample_common.add(sample);
    ScoreFlags sample_score;
    sample_score.add(sample, true);
    SamplerFlags sample_flags;
    sample_flags.add(sample);
    Opt<int> sample_count;
    sample_count.add(sample, "--samples", "number of samples to draw");

    // reconstruct ----------------------------------------------------------
    CLI::App* rec = app.add_subcommand("reconstruct", "reconstruct an image from measurements");
    CommonFlags rec_common;
    rec_common.add(rec);
    std::string rec_y, rec_system, rec_truth, rec_lesion;
    rec->add_option("--y", rec_y, "measured counts (*.f32)")->required();
    rec->add_option("--system", rec_system, "system description (default system.json beside --y)");
    rec->add_option("--truth", rec_truth, "ground truth (*.f32); enables metrics.csv");
    rec->add_option("--lesion", rec_lesion, "lesion mask (*.f32); enables CRC");
    ScoreFlags rec_score;
    rec_score.add(rec, true);
    SamplerFlags rec_flags;
    rec_flags.add(rec);
    Opt<std::string> rec_algo;
    Opt<int> rec_iters, rec_nsub, rec_snapshot;
    rec_algo.add(rec, "--algo",
                 "mlem | osem | bsrem | pet-naive | pet-dps | pet-dds | naive-osem-denoise");
    rec_iters.add(rec, "--iters", "mlem iterations / osem epochs");
    rec_nsub.add(rec, "--n-sub", "subsets for osem / bsrem");
    rec_snapshot.add(rec, "--snapshot-every", "write the trajectory every K reverse steps");

    // evaluate ---------------------------------------------------------------
    CLI::App* eval = app.add_subcommand("evaluate", "metrics for an existing reconstruction");
    CommonFlags eval_common;
    eval_common.add(eval);
    std::string eval_recon, eval_truth, eval_y, eval_system, eval_lesion, eval_label = "recon";
    eval->add_option("--recon", eval_recon, "reconstruction (*.f32)")->required();
    eval->add_option("--truth", eval_truth, "ground truth (*.f32)")->required();
    eval->add_option("--y", eval_y, "measured counts (*.f32), enables KLDIV");
    eval->add_option("--system", eval_system, "system description (default system.json beside --y)");
    eval->add_option("--lesion", eval_lesion, "lesion mask (*.f32), enables CRC");
    eval->add_option("--label", eval_label, "algorithm label for the CSV row");

    // sweep ------------------------------------------------------------------
    CLI::App* sweep = app.add_subcommand("sweep", "multi-realisation sensitivity sweep");
    CommonFlags sweep_common;
    sweep_common.add(sweep);
    ScoreFlags sweep_score;
    sweep_score.add(sweep, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (app.got_subcommand(sim)) {
            RunConfig cfg = load_cfg(sim_common.config_path);
            sim_noise.apply(cfg.noise_level);
            sim_seed.apply(cfg.sim_seed);
            sim_lesions.apply(cfg.lesion_count);
            sim_truth_idx.apply(cfg.truth_from_dataset);
            resolve_run_config(cfg);
            const fs::path dir = resolve_out_dir(cfg, sim_common.out_dir, "simulate");
            fs::create_directories(dir);
            Manifest man{"simulate", run_config_to_json(cfg), dir};

            const SimSetup setup = make_setup(cfg);
            const Measurements y = simulate_measurements(
                setup.sm, setup.sample.pet, RngStream::from_seed(cfg.sim_seed).child("measurement"));
            write_image_out(man, setup.sample.pet, "truth.f32");
            write_image_out(man, setup.sample.mr, "mr.f32");
            write_image_out(man, setup.sample.lesion_mask, "lesion_mask.f32");
            write_meas_out(man, y, "y.f32");
            write_json_out(man, "system.json",
                           system_to_json(setup.sm, setup.scale_factor, setup.background));
            export_graymap_out(man, setup.sample.pet, "truth.pgm");
            man.write();
            const double total = std::accumulate(y.bins.begin(), y.bins.end(), 0.0);
            std::cout << "simulate: " << dir.string() << "  counts " << total << "  background "
                      << setup.background << "\n";
            return 0;
        }

        if (app.got_subcommand(train)) {
            RunConfig cfg = load_cfg(train_common.config_path);
            train_steps.apply(cfg.train.steps);
            train_hidden.apply(cfg.train_hidden);
            train_seed.apply(cfg.train.seed);
            resolve_run_config(cfg);
            if (cfg.nz != 1)
                throw std::invalid_argument("train-score requires 2d phantoms (nz == 1)");
            const fs::path dir = resolve_out_dir(cfg, train_common.out_dir, "train-score");
            fs::create_directories(dir);
            Manifest man{"train-score", run_config_to_json(cfg), dir};

            const std::vector<PairedSample> data = build_dataset(
                make_phantom_spec(cfg, cfg.dataset_lesions), cfg.dataset_size, cfg.dataset_seed);
            std::vector<ImageGrid> pets, mrs;
            for (const PairedSample& s : data) {
                pets.push_back(s.pet);
                mrs.push_back(s.mr);
            }
            TinyScoreNet net(cfg.schedule, cfg.train_hidden, cfg.net_init_seed);
            const TrainStats st = train_score(pets, mrs, net, cfg.schedule, cfg.train);
            net.save((dir / "net.f32").string());
            man.add_output("net.f32");
            man.add_output("net.json");
            write_json_out(man, "train_stats.json",
                           json{{"steps", st.steps},
                                {"cond_kept", st.cond_kept},
                                {"cond_dropped", st.cond_dropped},
                                {"n_train", st.n_train},
                                {"n_heldout", st.n_heldout},
                                {"heldout_initial", st.heldout_initial},
                                {"heldout_final", st.heldout_final}});
            man.write();
            std::cout << "train-score: held-out DSM " << st.heldout_initial << " -> "
                      << st.heldout_final << "\n";
            return 0;
        }

        if (app.got_subcommand(sample)) {
            RunConfig cfg = load_cfg(sample_common.config_path);
            sample_flags.apply(cfg);
            sample_count.apply(cfg.samples);
            resolve_run_config(cfg);
            if (cfg.sampler.method != SamplerMethod::em && cfg.sampler.method != SamplerMethod::ddim)
                throw std::invalid_argument(
                    "sample supports methods em and ddim; use reconstruct for guided methods");
            const fs::path dir = resolve_out_dir(cfg, sample_common.out_dir, "sample");
            fs::create_directories(dir);
            Manifest man{"sample", run_config_to_json(cfg), dir};

            const std::unique_ptr<ScoreModel> model =
                make_score(cfg, sample_score.kind, sample_score.net_path, man);
            ImageGrid cond;
            bool has_cond = false;
            if (!sample_score.condition_path.empty()) {
                cond = load_image_input(man, "condition", sample_score.condition_path);
                normalise_by_c_train(cond);
                has_cond = true;
            }
            const PhantomSpec spec = make_phantom_spec(cfg, 0);
            const ImageGrid shape_ref(spec.nx, spec.ny, spec.nz, spec.sx, spec.sy, spec.sz);

            std::vector<ImageGrid> draws;
            for (int i = 0; i < cfg.samples; ++i) {
                SamplerConfig sc = cfg.sampler;
                sc.seed = cfg.sampler.seed + static_cast<std::uint64_t>(i);
                sc.condition = has_cond ? &cond : nullptr;
                ImageGrid x = sample_unconditional(*model, cfg.schedule, shape_ref, sc);
                char name[32];
                std::snprintf(name, sizeof name, "sample_%03d.f32", i);
                write_image_out(man, x, name);
                draws.push_back(std::move(x));
            }
            if (draws.size() > 1) {
                ImageGrid mean = like(draws[0]);
                ImageGrid sd = like(draws[0]);
                for (const ImageGrid& d : draws)
                    for (std::size_t i = 0; i < mean.v.size(); ++i) mean.v[i] += d.v[i];
                for (double& v : mean.v) v /= static_cast<double>(draws.size());
                for (const ImageGrid& d : draws)
                    for (std::size_t i = 0; i < sd.v.size(); ++i) {
                        const double dev = d.v[i] - mean.v[i];
                        sd.v[i] += dev * dev;
                    }
                for (double& v : sd.v) v = std::sqrt(v / static_cast<double>(draws.size() - 1));
                write_image_out(man, mean, "mean.f32");
                write_image_out(man, sd, "std.f32");
            }
            export_graymap_out(man, draws[0], "sample_000.pgm");
            man.write();
            std::cout << "sample: wrote " << draws.size() << " draw(s) to " << dir.string() << "\n";
            return 0;
        }

        if (app.got_subcommand(rec)) {
            RunConfig cfg = load_cfg(rec_common.config_path);
            rec_flags.apply(cfg);
            rec_algo.apply(cfg.algo);
            rec_iters.apply(cfg.n_iter);
            rec_nsub.apply(cfg.recon_n_sub);
            if (rec_flags.lambda.given()) cfg.bsrem.lambda = rec_flags.lambda.value;
            resolve_run_config(cfg);
            const fs::path dir = resolve_out_dir(cfg, rec_common.out_dir, "reconstruct");
            fs::create_directories(dir);
            Manifest man{"reconstruct", run_config_to_json(cfg), dir};

            Measurements y = read_measurements(rec_y);
            man.add_input("y", rec_y);
            const std::string system_path =
                rec_system.empty() ? (fs::path(rec_y).parent_path() / "system.json").string() : rec_system;
            const SystemModel sm = load_system(man, system_path);
            if (y.size() != sm.n_bins())
                throw std::invalid_argument("reconstruct: measurement layout does not match the system");

            const std::string algo = cfg.algo;
            double lambda_used = 0.0;
            ImageGrid recon;
            if (algo == "mlem" || algo == "osem") {
                ImageGrid init = sm.empty_image();
                std::fill(init.v.begin(), init.v.end(), 1.0);
                recon = algo == "mlem"
                            ? mlem(y, sm, init, cfg.n_iter)
                            : osem(y, sm, partition_subsets(sm.geom, cfg.recon_n_sub), init, cfg.n_iter);
            } else if (algo == "bsrem") {
                lambda_used = cfg.bsrem.lambda;
                const BsremResult r = bsrem(y, sm, cfg.bsrem);
                recon = r.x;
                write_json_out(man, "bsrem_stats.json",
                               json{{"epochs", r.epochs},
                                    {"converged", r.converged},
                                    {"delta", r.delta},
                                    {"objective_final", r.objective.empty() ? 0.0 : r.objective.back()}});
            } else {
                SamplerConfig sc = cfg.sampler;
                sc.method = parse_sampler_method(algo);
                lambda_used = sc.lambda;
                const std::unique_ptr<ScoreModel> model =
                    make_score(cfg, rec_score.kind, rec_score.net_path, man);
                ImageGrid cond;
                if (!rec_score.condition_path.empty()) {
                    cond = load_image_input(man, "condition", rec_score.condition_path);
                    normalise_by_c_train(cond);
                    sc.condition = &cond;
                }
                if (rec_snapshot.given() && rec_snapshot.value > 0) {
                    const int every = rec_snapshot.value;
                    sc.on_step = [&man, every](int k, double, const ImageGrid& x) {
                        if (k % every != 0) return;
                        char name[40];
                        std::snprintf(name, sizeof name, "snapshot_%04d.f32", k);
                        write_image_out(man, x, name);
                    };
                }
                SamplerResult r;
                if (sc.method == SamplerMethod::pet_dds) {
                    r = reconstruct_pet_dds(y, sm, *model, cfg.schedule, sc);
                } else if (sc.method == SamplerMethod::naive_osem_denoise) {
                    const ImageGrid x_noisy =
                        osem_one_epoch_from_constant(y, sm, sc.n_sub, sc.osem_init);
                    r = denoise_naive_osem(x_noisy, *model, cfg.schedule, sc.sigma_d, sc.seed,
                                           sc.n_steps);
                } else if (sc.method == SamplerMethod::pet_naive || sc.method == SamplerMethod::pet_dps) {
                    r = reconstruct_sde(y, sm, *model, cfg.schedule, sc);
                } else {
                    throw std::invalid_argument("reconstruct: unsupported algorithm " + algo);
                }
                recon = std::move(r.image);
                write_json_out(man, "recon_stats.json",
                               json{{"c_osem", r.c_osem}, {"steps", r.steps}});
            }

            write_image_out(man, recon, "recon.f32");
            export_graymap_out(man, recon, "recon.pgm");
            std::string report;
            if (!rec_truth.empty()) {
                const ImageGrid truth = load_image_input(man, "truth", rec_truth);
                ImageGrid lesion;
                const ImageGrid* lesion_ptr = nullptr;
                if (!rec_lesion.empty()) {
                    lesion = load_image_input(man, "lesion", rec_lesion);
                    lesion_ptr = &lesion;
                }
                const std::string csv = single_metrics_csv(algo, lambda_used, cfg.sampler.seed, recon,
                                                           truth, lesion_ptr, &y, &sm);
                write_text_out(man, "metrics.csv", csv);
                report = "  psnr " + std::to_string(psnr(recon, truth)) + " dB";
            }
            man.write();
            std::cout << "reconstruct: " << algo << " -> " << (dir / "recon.f32").string() << report
                      << "\n";
            return 0;
        }

        if (app.got_subcommand(eval)) {
            RunConfig cfg = load_cfg(eval_common.config_path);
            const fs::path dir = resolve_out_dir(cfg, eval_common.out_dir, "evaluate");
            fs::create_directories(dir);
            Manifest man{"evaluate", run_config_to_json(cfg), dir};

            const ImageGrid recon = load_image_input(man, "recon", eval_recon);
            const ImageGrid truth = load_image_input(man, "truth", eval_truth);
            ImageGrid lesion;
            const ImageGrid* lesion_ptr = nullptr;
            if (!eval_lesion.empty()) {
                lesion = load_image_input(man, "lesion", eval_lesion);
                lesion_ptr = &lesion;
            }
            Measurements y;
            SystemModel sm;
            const Measurements* y_ptr = nullptr;
            const SystemModel* sm_ptr = nullptr;
            if (!eval_y.empty()) {
                y = read_measurements(eval_y);
                man.add_input("y", eval_y);
                const std::string system_path =
                    eval_system.empty() ? (fs::path(eval_y).parent_path() / "system.json").string()
                                        : eval_system;
                sm = load_system(man, system_path);
                y_ptr = &y;
                sm_ptr = &sm;
            }
            const std::string csv =
                single_metrics_csv(eval_label, 0.0, 0, recon, truth, lesion_ptr, y_ptr, sm_ptr);
            write_text_out(man, "metrics.csv", csv);
            man.write();
            std::cout << "evaluate: psnr " << psnr(recon, truth) << " dB, ssim " << ssim(recon, truth)
                      << "\n";
            return 0;
        }

        if (app.got_subcommand(sweep)) {
            RunConfig cfg = load_cfg(sweep_common.config_path);
            resolve_run_config(cfg);
            const fs::path dir = resolve_out_dir(cfg, sweep_common.out_dir, "sweep");
            fs::create_directories(dir);
            Manifest man{"sweep", run_config_to_json(cfg), dir};

            const SimSetup setup = make_setup(cfg);
            bool needs_score = false;
            for (const std::string& a : cfg.sweep_algos)
                needs_score = needs_score || a == "pet-naive" || a == "pet-dps" || a == "pet-dds";
            std::unique_ptr<ScoreModel> model;
            if (needs_score) model = make_score(cfg, sweep_score.kind, sweep_score.net_path, man);

            SweepPlan plan;
            plan.algos = cfg.sweep_algos;
            plan.lambdas = cfg.sweep_lambdas;
            plan.seeds = cfg.sweep_seeds;
            plan.n_iter = cfg.n_iter;
            plan.n_sub = cfg.recon_n_sub;
            plan.sampler = cfg.sampler;
            plan.bsrem = cfg.bsrem;
            plan.score = model.get();
            plan.sched = &cfg.schedule;
            const RoiSet rois = make_rois(setup.sample);
            const SweepResult res = run_sweep(plan, setup.sm, setup.sample.pet, rois);
            write_text_out(man, "rows.csv", sweep_rows_csv(res));
            write_text_out(man, "aggregates.csv", sweep_aggregates_csv(res));
            man.write();
            int ok = 0;
            for (const SweepRecord& r : res.records) ok += r.ok ? 1 : 0;
            std::cout << "sweep: " << res.records.size() << " cells, " << ok << " ok -> "
                      << dir.string() << "\n";
            return 0;
        }

        throw std::invalid_argument("no command given");
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

} // namespace petsgm
