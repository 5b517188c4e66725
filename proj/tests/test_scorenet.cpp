#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <vector>

#include "petsgm/diffusion.hpp"
#include "petsgm/grid.hpp"
#include "petsgm/rng.hpp"
#include "petsgm/score.hpp"
#include "petsgm/scorenet.hpp"

using namespace petsgm;
namespace fs = std::filesystem;

namespace {

ImageGrid bump(int n, double cx, double cy, double amp, double width) {
    ImageGrid x(n, n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
            const double dx = (i - cx) / width, dy = (j - cy) / width;
            x(i, j) = amp * std::exp(-0.5 * (dx * dx + dy * dy));
        }
    return x;
}

double cosine(const ImageGrid& a, const ImageGrid& b) {
    return dot(a, b) / (norm2(a) * norm2(b));
}

} // namespace

TEST_CASE("parameter count of the default architecture") {
    DiffusionSchedule sched;
    const TinyScoreNet net(sched, 10, 0);
    // Four 3x3 convolutions over channels [4,10,10,10,1]:
    // (4*10+10*10+10*10+10*1)*9 weights + (10+10+10+1) biases = 2281.
    CHECK(net.parameter_count() == 2281);
    CHECK(net.layer_count() == 4);
    CHECK(net.parameters().size() == 2281);
}

TEST_CASE("the reported score is the x0-parameterised kernel identity") {
    DiffusionSchedule sched;
    const TinyScoreNet net(sched, 6, 3);
    ImageGrid x(8, 8);
    RngStream r = RngStream::from_seed(2).child("x");
    for (double& v : x.v) v = r.normal();
    const double t = 0.37;
    const auto c = sched.kernel_coeffs(t);
    const ImageGrid f = net.denoise(x, t);
    const ImageGrid s = net.score(x, t);
    for (std::size_t i = 0; i < s.v.size(); ++i)
        CHECK(s.v[i] == doctest::Approx(-(x.v[i] - c.gamma * f.v[i]) / c.nu2).epsilon(1e-12));

    // All-zero parameters degrade to the pure-noise score.
    TinyScoreNet zeroed(sched, 6, 3);
    zeroed.set_parameters(std::vector<double>(zeroed.parameter_count(), 0.0));
    const ImageGrid s0 = zeroed.score(x, t);
    for (std::size_t i = 0; i < s0.v.size(); ++i)
        CHECK(s0.v[i] == doctest::Approx(-x.v[i] / c.nu2).epsilon(1e-12));
}

TEST_CASE("network save/load round-trips through float32") {
    DiffusionSchedule sched;
    sched.n_steps = 321; // make sure the sidecar carries the schedule
    TinyScoreNet net(sched, 5, 7);
    const fs::path dir = fs::temp_directory_path() / "petsgm_net";
    fs::create_directories(dir);
    const std::string path = (dir / "net.f32").string();
    net.save(path);
    const TinyScoreNet back = TinyScoreNet::load(path);
    CHECK(back.schedule().n_steps == 321);
    CHECK(back.parameter_count() == net.parameter_count());
    const std::vector<double> p0 = net.parameters();
    const std::vector<double> p1 = back.parameters();
    for (std::size_t i = 0; i < p0.size(); ++i)
        CHECK(p1[i] == static_cast<double>(static_cast<float>(p0[i])));
}

TEST_CASE("training is deterministic and counts condition keep/drop") {
    DiffusionSchedule sched;
    const std::vector<ImageGrid> data{bump(8, 3, 3, 1.0, 1.5), bump(8, 5, 5, 0.8, 2.0)};
    const std::vector<ImageGrid> conds{bump(8, 3, 3, 0.5, 2.5), bump(8, 5, 5, 0.5, 2.5)};
    TrainOptions opts;
    opts.steps = 60;
    opts.heldout_draws = 40;
    opts.seed = 9;
    opts.q_keep = 1.0;
    TinyScoreNet a(sched, 4, 1), b(sched, 4, 1);
    const TrainStats sa = train_score(data, conds, a, sched, opts);
    const TrainStats sb = train_score(data, conds, b, sched, opts);
    const std::vector<double> pa = a.parameters(), pb = b.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);
    CHECK(sa.steps == 60);
    CHECK(sa.cond_dropped == 0); // q_keep == 1 never drops
    CHECK(sa.cond_kept == 60);
    CHECK(sa.heldout_final == sb.heldout_final);
}

TEST_CASE("training a singleton dataset crushes the held-out DSM loss") {
    DiffusionSchedule sched;
    const std::vector<ImageGrid> data{bump(8, 4, 4, 1.2, 1.8)};
    TrainOptions opts;
    opts.steps = 1200;
    opts.heldout_draws = 150;
    opts.seed = 3;
    TinyScoreNet net(sched, 8, 2);
    const TrainStats st = train_score(data, {}, net, sched, opts);
    CHECK(st.heldout_final < 0.1 * st.heldout_initial);
}

TEST_CASE("the trained score points the way the exact mixture score points") {
    DiffusionSchedule sched;
    const std::vector<ImageGrid> data{bump(8, 3, 3, 1.0, 1.6), bump(8, 5, 5, 1.0, 1.6)};
    std::vector<ImageGrid> normalised = data;
    for (ImageGrid& img : normalised) {
        const double c = c_train(img);
        for (double& v : img.v) v /= c;
    }
    TrainOptions opts;
    opts.steps = 2500;
    opts.scale_jitter = false;
    opts.seed = 4;
    opts.heldout_draws = 50;
    TinyScoreNet net(sched, 10, 5);
    train_score(data, {}, net, sched, opts);
    const MixtureScore exact(normalised, {0.5, 0.5}, sched);

    RngStream r = RngStream::from_seed(31).child("probe");
    double worst = 1.0;
    for (double t : {0.2, 0.5, 0.8}) {
        ImageGrid x0 = normalised[0];
        const ImageGrid xt = perturb(x0, t, sched, r);
        worst = std::min(worst, cosine(net.score(xt, t), exact.score(xt, t)));
    }
    CHECK(worst > 0.9);
}
