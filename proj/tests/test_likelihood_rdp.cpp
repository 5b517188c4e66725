#include "doctest.h"

#include <cmath>
#include <vector>

#include "petsgm/grid.hpp"
#include "petsgm/likelihood.hpp"
#include "petsgm/projector.hpp"
#include "petsgm/rdp.hpp"
#include "petsgm/rng.hpp"

using namespace petsgm;

namespace {

SystemModel small_system(int n = 10) {
    Geometry g;
    g.mode = Geometry::Mode::parallel2d;
    g.n_angles = 8;
    g.n_radial = n;
    g.fov_mm = static_cast<double>(n);
    ImageGrid ref(n, n);
    SystemModel sm = build_system_model(g, ref);
    set_constant_background(sm, 0.05);
    return sm;
}

ImageGrid positive_image(int n, std::uint64_t seed) {
    ImageGrid x(n, n);
    RngStream r = RngStream::from_seed(seed).child("img");
    for (double& v : x.v) v = 0.2 + r.uniform();
    return x;
}

Measurements counts_for(const SystemModel& sm, const ImageGrid& x, std::uint64_t seed) {
    return simulate_measurements(sm, x, RngStream::from_seed(seed).child("measurement"));
}

} // namespace

TEST_CASE("poisson log-likelihood on explicit expected counts") {
    Measurements y(1, 2, 1, Measurements::Kind::counts);
    Measurements ybar(1, 2, 1, Measurements::Kind::expected);
    y.bins = {2.0, 0.0};
    ybar.bins = {1.5, 0.7};
    // 2 log 1.5 - 1.5 + (0 - 0.7)
    const double expected = 2.0 * std::log(1.5) - 1.5 - 0.7;
    CHECK(pll_on_expected(y, ybar) == doctest::Approx(expected).epsilon(1e-12));

    // A clamped (zero-expectation) bin with observed counts is impossible data.
    ybar.bins[1] = 0.0;
    y.bins[1] = 1.0;
    CHECK_THROWS(pll_on_expected(y, ybar));
    // ...but zero counts on a zero-expectation bin are fine.
    y.bins[1] = 0.0;
    CHECK(std::isfinite(pll_on_expected(y, ybar)));
}

TEST_CASE("pll agrees with pll_on_expected through the forward model") {
    const SystemModel sm = small_system();
    const ImageGrid x = positive_image(10, 3);
    const Measurements y = counts_for(sm, x, 3);
    CHECK(pll(y, sm, x) == doctest::Approx(pll_on_expected(y, expected_counts(sm, x))).epsilon(1e-12));
}

TEST_CASE("pll gradient matches finite differences") {
    const SystemModel sm = small_system();
    const ImageGrid x = positive_image(10, 4);
    const Measurements y = counts_for(sm, x, 4);
    const ImageGrid g = pll_grad(y, sm, x);

    RngStream rd = RngStream::from_seed(8).child("dir");
    ImageGrid d = like(x);
    for (double& v : d.v) v = rd.normal();
    const double eps = 1e-6;
    ImageGrid xp = x, xm = x;
    for (std::size_t i = 0; i < x.v.size(); ++i) {
        xp.v[i] += eps * d.v[i];
        xm.v[i] -= eps * d.v[i];
    }
    const double fd = (pll(y, sm, xp) - pll(y, sm, xm)) / (2.0 * eps);
    CHECK(dot(g, d) == doctest::Approx(fd).epsilon(1e-5));
}

TEST_CASE("subset gradients sum to the full gradient") {
    const SystemModel sm = small_system();
    const SubsetSchedule sched = partition_subsets(sm.geom, 4);
    const ImageGrid x = positive_image(10, 5);
    const Measurements y = counts_for(sm, x, 5);
    const ImageGrid full = pll_grad(y, sm, x);
    ImageGrid acc = like(full);
    for (const std::vector<int>& angles : sched.angles) {
        const ImageGrid part = pll_grad_subset(y, sm, x, angles);
        for (std::size_t i = 0; i < acc.v.size(); ++i) acc.v[i] += part.v[i];
    }
    for (std::size_t i = 0; i < full.v.size(); ++i)
        CHECK(acc.v[i] == doctest::Approx(full.v[i]).epsilon(1e-10));
}

TEST_CASE("poisson_kldiv has the right value, conventions and zero point") {
    Measurements y(1, 1, 1, Measurements::Kind::counts);
    Measurements ybar(1, 1, 1, Measurements::Kind::expected);
    y.bins = {2.0};
    ybar.bins = {1.0};
    // 1*log(1/2) - 1 + 2 = 1 - log 2
    CHECK(poisson_kldiv(ybar, y) == doctest::Approx(1.0 - std::log(2.0)).epsilon(1e-12));

    y.bins = {0.0};
    ybar.bins = {0.8};
    CHECK(poisson_kldiv(ybar, y) == doctest::Approx(0.8).epsilon(1e-12));
    y.bins = {0.6};
    ybar.bins = {0.0};
    CHECK(poisson_kldiv(ybar, y) == doctest::Approx(0.6).epsilon(1e-12));

    y.bins = {3.0};
    ybar.bins = {3.0};
    CHECK(poisson_kldiv(ybar, y) == doctest::Approx(0.0).epsilon(1e-15));
    ybar.bins = {3.2};
    CHECK(poisson_kldiv(ybar, y) > 0.0);
}

TEST_CASE("validate_counts rejects bad measurement data") {
    Measurements y(1, 3, 1, Measurements::Kind::counts);
    y.bins = {0.0, 2.0, 1.0};
    CHECK_NOTHROW(validate_counts(y));
    y.bins[1] = -1.0;
    CHECK_THROWS(validate_counts(y));
    y.bins[1] = 2.0;
    y.kind = Measurements::Kind::expected;
    CHECK_THROWS(validate_counts(y));
}

TEST_CASE("rdp value and gradient on a two-voxel image") {
    ImageGrid x(2, 1);
    x.v = {2.0, 1.0};
    // One unordered pair: -(2-1)^2 / (2+1+|2-1|) = -1/4.
    CHECK(rdp(x) == doctest::Approx(-0.25).epsilon(1e-12));
    const ImageGrid g = rdp_grad(x);
    CHECK(g.v[0] == doctest::Approx(-0.375).epsilon(1e-12));
    CHECK(g.v[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("rdp gradient matches finite differences") {
    ImageGrid x(6, 5);
    RngStream r = RngStream::from_seed(2).child("img");
    for (double& v : x.v) v = 0.5 + r.uniform();
    const ImageGrid g = rdp_grad(x);
    const double eps = 1e-6;
    for (std::size_t i : {std::size_t(0), std::size_t(7), std::size_t(17), std::size_t(29)}) {
        ImageGrid xp = x, xm = x;
        xp.v[i] += eps;
        xm.v[i] -= eps;
        const double fd = (rdp(xp) - rdp(xm)) / (2.0 * eps);
        CHECK(g.v[i] == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("rdp gradient is scale-invariant and the value is 1-homogeneous") {
    ImageGrid x(5, 4);
    RngStream r = RngStream::from_seed(6).child("img");
    for (double& v : x.v) v = 0.1 + r.uniform();
    ImageGrid xs = x;
    for (double& v : xs.v) v *= 7.3;
    CHECK(rdp(xs) == doctest::Approx(7.3 * rdp(x)).epsilon(1e-12));
    const ImageGrid g = rdp_grad(x);
    const ImageGrid gs = rdp_grad(xs);
    for (std::size_t i = 0; i < g.v.size(); ++i)
        CHECK(gs.v[i] == doctest::Approx(g.v[i]).epsilon(1e-10));
}

TEST_CASE("z-only rdp sees only axial neighbours") {
    ImageGrid flat(4, 4);
    RngStream r = RngStream::from_seed(3).child("img");
    for (double& v : flat.v) v = r.uniform();
    RdpParams zp;
    zp.z_only = true;
    CHECK(rdp(flat, zp) == 0.0); // single slice: no axial pairs
    const ImageGrid gz = rdp_grad(flat, zp);
    for (double v : gz.v) CHECK(v == 0.0);

    // A volume constant within each slice has no in-plane pairs contributing;
    // z_only and full neighbourhoods must agree on the axial-ramp part.
    ImageGrid ramp(3, 3, 3);
    for (int z = 0; z < 3; ++z)
        for (int y = 0; y < 3; ++y)
            for (int x = 0; x < 3; ++x) ramp(x, y, z) = 1.0 + z;
    CHECK(rdp(ramp, zp) < 0.0);
    RdpParams full;
    // Full neighbourhood adds diagonal axial pairs, so it penalises at least as much.
    CHECK(rdp(ramp, full) <= rdp(ramp, zp));
}

TEST_CASE("rdp of a single voxel is zero (reflected boundary)") {
    ImageGrid x(1, 1);
    x.v = {3.0};
    CHECK(rdp(x) == 0.0);
    CHECK(rdp_grad(x).v[0] == 0.0);
}
