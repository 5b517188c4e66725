#include "petsgm/scorenet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "petsgm/io.hpp"
#include "petsgm/rng.hpp"

namespace petsgm {

namespace {

using nlohmann::json;

std::string sidecar_of(const std::string& path_f32, const std::string& what) {
    if (path_f32.size() < 4 || path_f32.substr(path_f32.size() - 4) != ".f32")
        throw std::invalid_argument(what + ": parameter path must end in .f32: " + path_f32);
    return path_f32.substr(0, path_f32.size() - 4) + ".json";
}

void require_slice(const ImageGrid& x, const std::string& what) {
    if (x.nz != 1) throw std::invalid_argument(what + ": expects a single 2D slice (nz == 1)");
    if (x.nx < 1 || x.ny < 1) throw std::invalid_argument(what + ": empty image");
}

} // namespace

TinyScoreNet::TinyScoreNet(DiffusionSchedule sched, int hidden, std::uint64_t init_seed)
    : sched_(sched), hidden_(hidden) {
    sched_.validate();
    if (hidden < 1 || hidden > 32)
        throw std::invalid_argument("TinyScoreNet: hidden width out of range [1, 32]");
    const int widths[5] = {4, hidden, hidden, hidden, 1};
    RngStream root = RngStream::from_seed(init_seed).child("scorenet_init");
    layers_.resize(4);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        Conv& c = layers_[l];
        c.c_in = widths[l];
        c.c_out = widths[l + 1];
        c.w.resize(static_cast<std::size_t>(c.c_out) * c.c_in * 9);
        c.b.assign(static_cast<std::size_t>(c.c_out), 0.0);
        RngStream ls = root.child_index(l);
        double std_dev = std::sqrt(2.0 / (9.0 * c.c_in));
        if (l + 1 == layers_.size()) std_dev *= 0.1; // start near f == 0
        for (double& w : c.w) w = std_dev * ls.normal();
    }
}

std::size_t TinyScoreNet::parameter_count() const {
    std::size_t n = 0;
    for (const Conv& c : layers_) n += c.w.size() + c.b.size();
    return n;
}

std::vector<double> TinyScoreNet::parameters() const {
    std::vector<double> flat;
    flat.reserve(parameter_count());
    for (const Conv& c : layers_) {
        flat.insert(flat.end(), c.w.begin(), c.w.end());
        flat.insert(flat.end(), c.b.begin(), c.b.end());
    }
    return flat;
}

void TinyScoreNet::set_parameters(const std::vector<double>& flat) {
    if (flat.size() != parameter_count())
        throw std::invalid_argument("TinyScoreNet::set_parameters: size mismatch");
    std::size_t off = 0;
    for (Conv& c : layers_) {
        std::copy(flat.begin() + off, flat.begin() + off + c.w.size(), c.w.begin());
        off += c.w.size();
        std::copy(flat.begin() + off, flat.begin() + off + c.b.size(), c.b.begin());
        off += c.b.size();
    }
}

// z[oc](x,y) = b[oc] + sum_{ic,ky,kx} w[oc][ic][ky][kx] a[ic](x+kx-1, y+ky-1),
// zero outside the slice.
TinyScoreNet::Trace TinyScoreNet::forward(const ImageGrid& x_t, double t,
                                          const ImageGrid* condition) const {
    require_slice(x_t, "TinyScoreNet");
    if (condition != nullptr) require_same_shape(x_t, *condition, "TinyScoreNet condition");
    const auto kc = sched_.kernel_coeffs(t);
    const int nx = x_t.nx, ny = x_t.ny;
    const std::size_t n = static_cast<std::size_t>(nx) * ny;

    Trace tr;
    tr.nx = nx;
    tr.ny = ny;
    tr.act.resize(layers_.size() + 1);
    std::vector<double>& in = tr.act[0];
    in.assign(4 * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) in[i] = x_t.v[i];
    if (condition != nullptr)
        for (std::size_t i = 0; i < n; ++i) in[n + i] = condition->v[i];
    for (std::size_t i = 0; i < n; ++i) in[2 * n + i] = kc.gamma;
    for (std::size_t i = 0; i < n; ++i) in[3 * n + i] = kc.nu;

    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const Conv& c = layers_[l];
        const std::vector<double>& a = tr.act[l];
        std::vector<double>& z = tr.act[l + 1];
        z.assign(static_cast<std::size_t>(c.c_out) * n, 0.0);
        for (int oc = 0; oc < c.c_out; ++oc) {
            double* zo = z.data() + static_cast<std::size_t>(oc) * n;
            for (std::size_t i = 0; i < n; ++i) zo[i] = c.b[static_cast<std::size_t>(oc)];
            for (int ic = 0; ic < c.c_in; ++ic) {
                const double* ai = a.data() + static_cast<std::size_t>(ic) * n;
                const double* wk = c.w.data() + (static_cast<std::size_t>(oc) * c.c_in + ic) * 9;
                for (int y = 0; y < ny; ++y) {
                    for (int x = 0; x < nx; ++x) {
                        double acc = 0.0;
                        for (int ky = 0; ky < 3; ++ky) {
                            const int yy = y + ky - 1;
                            if (yy < 0 || yy >= ny) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                const int xx = x + kx - 1;
                                if (xx < 0 || xx >= nx) continue;
                                acc += wk[ky * 3 + kx] * ai[static_cast<std::size_t>(yy) * nx + xx];
                            }
                        }
                        zo[static_cast<std::size_t>(y) * nx + x] += acc;
                    }
                }
            }
        }
        if (l + 1 < layers_.size())
            for (double& v : z) v = v > 0.0 ? v : 0.0; // ReLU on hidden layers
    }
    return tr;
}

std::vector<double> TinyScoreNet::backward(const Trace& tr, const std::vector<double>& dout,
                                           std::vector<double>* param_grad) const {
    const int nx = tr.nx, ny = tr.ny;
    const std::size_t n = static_cast<std::size_t>(nx) * ny;
    if (dout.size() != n) throw std::invalid_argument("TinyScoreNet::backward: cotangent size mismatch");
    if (param_grad != nullptr) param_grad->assign(parameter_count(), 0.0);

    // Offsets of each layer's (w, b) in the flat parameter vector.
    std::vector<std::size_t> w_off(layers_.size()), b_off(layers_.size());
    {
        std::size_t off = 0;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            w_off[l] = off;
            off += layers_[l].w.size();
            b_off[l] = off;
            off += layers_[l].b.size();
        }
    }

    std::vector<double> dz = dout;
    for (std::size_t li = layers_.size(); li-- > 0;) {
        const Conv& c = layers_[li];
        const std::vector<double>& a = tr.act[li];
        // Hidden layers stored post-ReLU activations, so the mask is act > 0.
        if (li + 1 < layers_.size()) {
            const std::vector<double>& out = tr.act[li + 1];
            for (std::size_t i = 0; i < dz.size(); ++i)
                if (!(out[i] > 0.0)) dz[i] = 0.0;
        }
        std::vector<double> da(static_cast<std::size_t>(c.c_in) * n, 0.0);
        for (int oc = 0; oc < c.c_out; ++oc) {
            const double* dzo = dz.data() + static_cast<std::size_t>(oc) * n;
            if (param_grad != nullptr) {
                double bg = 0.0;
                for (std::size_t i = 0; i < n; ++i) bg += dzo[i];
                (*param_grad)[b_off[li] + static_cast<std::size_t>(oc)] += bg;
            }
            for (int ic = 0; ic < c.c_in; ++ic) {
                const double* ai = a.data() + static_cast<std::size_t>(ic) * n;
                const double* wk = c.w.data() + (static_cast<std::size_t>(oc) * c.c_in + ic) * 9;
                double* dai = da.data() + static_cast<std::size_t>(ic) * n;
                double* wg = param_grad != nullptr
                                 ? param_grad->data() + w_off[li] + (static_cast<std::size_t>(oc) * c.c_in + ic) * 9
                                 : nullptr;
                for (int y = 0; y < ny; ++y) {
                    for (int x = 0; x < nx; ++x) {
                        const double g = dzo[static_cast<std::size_t>(y) * nx + x];
                        if (g == 0.0) continue;
                        for (int ky = 0; ky < 3; ++ky) {
                            const int yy = y + ky - 1;
                            if (yy < 0 || yy >= ny) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                const int xx = x + kx - 1;
                                if (xx < 0 || xx >= nx) continue;
                                const std::size_t src = static_cast<std::size_t>(yy) * nx + xx;
                                if (wg != nullptr) wg[ky * 3 + kx] += g * ai[src];
                                dai[src] += g * wk[ky * 3 + kx];
                            }
                        }
                    }
                }
            }
        }
        dz = std::move(da);
    }
    // dz now holds the gradient over all 4 input channels; channel 0 is x_t.
    return std::vector<double>(dz.begin(), dz.begin() + static_cast<std::ptrdiff_t>(n));
}

ImageGrid TinyScoreNet::denoise(const ImageGrid& x_t, double t, const ImageGrid* condition) const {
    const Trace tr = forward(x_t, t, condition);
    ImageGrid f = like(x_t);
    f.v = tr.act.back();
    return f;
}

ImageGrid TinyScoreNet::score(const ImageGrid& x_t, double t, const ImageGrid* condition) const {
    const auto kc = sched_.kernel_coeffs(t);
    if (!(kc.nu2 > 0.0)) throw std::invalid_argument("TinyScoreNet::score: t too small, kernel is degenerate");
    const ImageGrid f = denoise(x_t, t, condition);
    ImageGrid s = like(x_t);
    for (std::size_t i = 0; i < s.v.size(); ++i)
        s.v[i] = -(x_t.v[i] - kc.gamma * f.v[i]) / kc.nu2;
    return s;
}

ImageGrid TinyScoreNet::score_vjp(const ImageGrid& x_t, double t, const ImageGrid& u,
                                  const ImageGrid* condition) const {
    require_same_shape(x_t, u, "TinyScoreNet::score_vjp cotangent");
    const auto kc = sched_.kernel_coeffs(t);
    if (!(kc.nu2 > 0.0)) throw std::invalid_argument("TinyScoreNet::score_vjp: t too small");
    const Trace tr = forward(x_t, t, condition);
    const std::vector<double> df = backward(tr, u.v, nullptr);
    ImageGrid out = like(x_t);
    for (std::size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = (-u.v[i] + kc.gamma * df[i]) / kc.nu2;
    return out;
}

void TinyScoreNet::save(const std::string& path_f32) const {
    const std::string sp = sidecar_of(path_f32, "TinyScoreNet::save");
    write_f32_blob(path_f32, parameters(), "TinyScoreNet::save");
    json layers = json::array();
    for (const Conv& c : layers_) layers.push_back({c.c_in, c.c_out, 3});
    const json j = {
        {"type", "scorenet"},
        {"hidden", hidden_},
        {"layers", layers},
        {"schedule",
         {{"beta_min", sched_.beta_min},
          {"beta_max", sched_.beta_max},
          {"t_min", sched_.t_min},
          {"n_steps", sched_.n_steps}}},
    };
    std::ofstream f(sp);
    if (!f) throw std::runtime_error("TinyScoreNet::save: cannot open sidecar: " + sp);
    f << j.dump(2) << "\n";
    if (!f) throw std::runtime_error("TinyScoreNet::save: short write: " + sp);
}

TinyScoreNet TinyScoreNet::load(const std::string& path_f32) {
    const std::string sp = sidecar_of(path_f32, "TinyScoreNet::load");
    std::ifstream f(sp);
    if (!f) throw std::runtime_error("TinyScoreNet::load: missing sidecar: " + sp);
    json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error("TinyScoreNet::load: malformed sidecar " + sp + ": " + e.what());
    }
    if (j.value("type", "") != "scorenet")
        throw std::runtime_error("TinyScoreNet::load: sidecar type is not 'scorenet': " + sp);
    DiffusionSchedule sched;
    const json& js = j.at("schedule");
    sched.beta_min = js.at("beta_min").get<double>();
    sched.beta_max = js.at("beta_max").get<double>();
    sched.t_min = js.at("t_min").get<double>();
    sched.n_steps = js.at("n_steps").get<int>();
    TinyScoreNet net(sched, j.at("hidden").get<int>());
    json layers = json::array();
    for (const Conv& c : net.layers_) layers.push_back({c.c_in, c.c_out, 3});
    if (j.at("layers") != layers)
        throw std::runtime_error("TinyScoreNet::load: layer shapes do not match this build: " + sp);
    net.set_parameters(read_f32_blob(path_f32, net.parameter_count(), "TinyScoreNet::load"));
    return net;
}

// Trainer backdoor into the private forward/backward machinery.
struct ScoreNetTrainer {
    static TinyScoreNet::Trace forward(const TinyScoreNet& net, const ImageGrid& x_t, double t,
                                       const ImageGrid* cond) {
        return net.forward(x_t, t, cond);
    }
    static std::vector<double> backward(const TinyScoreNet& net, const TinyScoreNet::Trace& tr,
                                        const std::vector<double>& dout, std::vector<double>* pg) {
        return net.backward(tr, dout, pg);
    }
    static void sgd_step(TinyScoreNet& net, const std::vector<double>& grad, double lr) {
        std::size_t off = 0;
        for (TinyScoreNet::Conv& c : net.layers_) {
            for (double& w : c.w) w -= lr * grad[off++];
            for (double& b : c.b) b -= lr * grad[off++];
        }
    }
};

TrainStats train_score(const std::vector<ImageGrid>& dataset,
                       const std::vector<ImageGrid>& conditions, TinyScoreNet& net,
                       const DiffusionSchedule& sched, const TrainOptions& opts) {
    sched.validate();
    const DiffusionSchedule& ns = net.schedule();
    if (ns.beta_min != sched.beta_min || ns.beta_max != sched.beta_max ||
        ns.t_min != sched.t_min || ns.n_steps != sched.n_steps)
        throw std::invalid_argument("train_score: schedule differs from the network's");
    if (dataset.empty()) throw std::invalid_argument("train_score: empty dataset");
    if (!conditions.empty() && conditions.size() != dataset.size())
        throw std::invalid_argument("train_score: conditions must be empty or one per image");
    if (opts.steps < 1) throw std::invalid_argument("train_score: steps must be positive");
    if (!(opts.lr > 0.0)) throw std::invalid_argument("train_score: lr must be positive");
    if (opts.q_keep < 0.0 || opts.q_keep > 1.0)
        throw std::invalid_argument("train_score: q_keep must lie in [0,1]");
    if (opts.heldout_draws < 1) throw std::invalid_argument("train_score: heldout_draws must be positive");
    for (const ImageGrid& x : dataset) require_slice(x, "train_score");
    for (const ImageGrid& c : conditions) require_slice(c, "train_score condition");

    // Normalised copies: every image divided by its own per-image constant.
    std::vector<ImageGrid> norm(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const double c = c_train(dataset[i]);
        norm[i] = dataset[i];
        for (double& v : norm[i].v) v /= c;
    }

    TrainStats stats;
    stats.steps = opts.steps;
    const std::size_t n_held = dataset.size() >= 5 ? dataset.size() / 5 : 0;
    stats.n_train = dataset.size() - n_held;
    std::vector<ImageGrid> heldout(norm.begin() + static_cast<std::ptrdiff_t>(stats.n_train), norm.end());
    if (heldout.empty()) heldout = norm; // too few images to split: fresh draws instead
    stats.n_heldout = heldout.size();

    const std::uint64_t eval_seed = RngStream::from_seed(opts.seed).child("scorenet_heldout").key();
    stats.heldout_initial = dsm_loss(net, heldout, sched, eval_seed, opts.heldout_draws);

    RngStream stream = RngStream::from_seed(opts.seed).child("scorenet_train");
    const double t_lo = std::max(opts.t_floor, sched.t_min);
    std::vector<double> grad;
    for (int step = 0; step < opts.steps; ++step) {
        const std::size_t pick = static_cast<std::size_t>(stream.next_u64() % stats.n_train);
        ImageGrid clean = norm[pick];
        if (opts.scale_jitter) {
            const double alpha = stream.uniform(0.5, 1.5);
            for (double& v : clean.v) v /= alpha;
        }
        const ImageGrid* cond = nullptr;
        if (!conditions.empty()) {
            if (stream.uniform() < opts.q_keep) {
                cond = &conditions[pick];
                ++stats.cond_kept;
            } else {
                ++stats.cond_dropped;
            }
        }
        const double t = stream.uniform(t_lo, 1.0);
        const ImageGrid x_t = perturb(clean, t, sched, stream);

        const auto tr = ScoreNetTrainer::forward(net, x_t, t, cond);
        const std::vector<double>& f = tr.act.back();
        const std::size_t n = f.size();
        std::vector<double> dout(n);
        double loss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double r = f[i] - clean.v[i];
            loss += r * r;
            dout[i] = 2.0 * r / static_cast<double>(n);
        }
        loss /= static_cast<double>(n);
        if (!std::isfinite(loss))
            throw std::runtime_error("train_score: loss diverged at step " + std::to_string(step));
        (void)ScoreNetTrainer::backward(net, tr, dout, &grad);
        ScoreNetTrainer::sgd_step(net, grad, opts.lr);
    }

    stats.heldout_final = dsm_loss(net, heldout, sched, eval_seed, opts.heldout_draws);
    return stats;
}

} // namespace petsgm
