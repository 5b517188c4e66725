#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "petsgm/grid.hpp"
#include "petsgm/likelihood.hpp"
#include "petsgm/phantom.hpp"
#include "petsgm/projector.hpp"
#include "petsgm/rng.hpp"
#include "petsgm/solvers.hpp"

using namespace petsgm;

namespace {

struct Problem {
    SystemModel sm;
    ImageGrid truth;
    Measurements y;
};

Problem make_problem(int n = 16, double level = 6.0, std::uint64_t seed = 0) {
    PhantomSpec spec = default_brain_spec(n, n);
    const PairedSample s = generate_phantom(spec, RngStream::from_seed(seed).child("phantom"));
    Geometry g;
    g.mode = Geometry::Mode::parallel2d;
    g.n_angles = 12;
    g.n_radial = n;
    g.fov_mm = static_cast<double>(n);
    SystemModel sm = build_system_model(g, s.pet);
    const double f = scale_to_noise_level(sm, s.pet, level);
    sm = scale_system(sm, f);
    Measurements trues = forward_project(sm, s.pet);
    double mean = 0.0;
    for (double b : trues.bins) mean += b;
    mean /= static_cast<double>(trues.bins.size());
    set_constant_background(sm, 0.2 * mean);
    Problem p{std::move(sm), s.pet, {}};
    p.y = simulate_measurements(p.sm, p.truth, RngStream::from_seed(seed).child("measurement"));
    return p;
}

ImageGrid ones_like(const SystemModel& sm) {
    ImageGrid x = sm.empty_image();
    std::fill(x.v.begin(), x.v.end(), 1.0);
    return x;
}

} // namespace

TEST_CASE("one MLEM iteration equals the update formula") {
    const Problem p = make_problem();
    const ImageGrid x0 = ones_like(p.sm);
    const ImageGrid x1 = mlem(p.y, p.sm, x0, 1);

    const Measurements ybar = expected_counts(p.sm, x0);
    Measurements ratio = ybar;
    for (std::size_t i = 0; i < ratio.bins.size(); ++i)
        ratio.bins[i] = p.y.bins[i] / std::max(ybar.bins[i], kExpectedFloor);
    const ImageGrid bp = back_project(p.sm, ratio);
    for (std::size_t i = 0; i < x1.v.size(); ++i) {
        const double expected =
            p.sm.support[i] ? x0.v[i] * bp.v[i] / p.sm.sens_image.v[i] : x0.v[i];
        CHECK(x1.v[i] == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("MLEM increases the Poisson log-likelihood monotonically") {
    const Problem p = make_problem(16, 4.0, 2);
    ImageGrid x = ones_like(p.sm);
    double prev = pll(p.y, p.sm, x);
    for (int it = 0; it < 25; ++it) {
        x = mlem(p.y, p.sm, x, 1);
        const double cur = pll(p.y, p.sm, x);
        CHECK(cur >= prev - 1e-9 * std::abs(prev));
        prev = cur;
    }
}

TEST_CASE("OSEM with one subset is MLEM, bitwise") {
    const Problem p = make_problem(12, 5.0, 3);
    const ImageGrid x0 = ones_like(p.sm);
    const SubsetSchedule sched = partition_subsets(p.sm.geom, 1);
    const ImageGrid a = mlem(p.y, p.sm, x0, 4);
    const ImageGrid b = osem(p.y, p.sm, sched, x0, 4);
    for (std::size_t i = 0; i < a.v.size(); ++i) CHECK(a.v[i] == b.v[i]);
}

TEST_CASE("OSEM epochs make progress comparable to MLEM") {
    const Problem p = make_problem(16, 6.0, 4);
    const ImageGrid x0 = ones_like(p.sm);
    const SubsetSchedule sched = partition_subsets(p.sm.geom, 4);
    const ImageGrid xo = osem(p.y, p.sm, sched, x0, 5);
    const double before = pll(p.y, p.sm, x0);
    const double after = pll(p.y, p.sm, xo);
    CHECK(after > before);
    CHECK(osem_one_epoch_from_constant(p.y, p.sm, 4, 1.0).v ==
          osem(p.y, p.sm, sched, x0, 1).v);
}

TEST_CASE("preconditioner_floor is 1e-4 times the mean nonzero voxel") {
    ImageGrid x(3, 1);
    x.v = {1.0, 0.0, 3.0};
    CHECK(preconditioner_floor(x) == doctest::Approx(1e-4 * 2.0).epsilon(1e-12));
    ImageGrid z(2, 1);
    CHECK(preconditioner_floor(z) == 0.0);
}

TEST_CASE("preconditioned ascent step clamps and respects the support") {
    ImageGrid x(2, 1);
    x.v = {1.0, 2.0};
    ImageGrid grad(2, 1);
    grad.v = {-10.0, 0.5};
    ImageGrid sens(2, 1);
    sens.v = {2.0, 4.0};
    const std::vector<std::uint8_t> support{1, 0};
    ImageGrid out = x;
    preconditioned_ascent_step(out, grad, sens, support, 0.1, 1.0);
    // Voxel 0: 1 + max(1, 0.1)/2 * (-10) = -4, clamped to 0.
    CHECK(out.v[0] == 0.0);
    // Voxel 1 is outside the support: untouched.
    CHECK(out.v[1] == 2.0);
}

TEST_CASE("the first BSREM epoch with one subset and no prior is an MLEM step") {
    const Problem p = make_problem(12, 8.0, 5);
    const ImageGrid x0 = osem_one_epoch_from_constant(p.y, p.sm, 4, 1.0);
    BsremParams params;
    params.n_sub = 1;
    params.lambda = 0.0;
    params.alpha0 = 1.0;
    params.max_epochs = 1;
    params.delta = 1e-12; // keep max(x, delta) == x on the support
    const BsremResult r = bsrem(p.y, p.sm, params, &x0);
    const ImageGrid xm = mlem(p.y, p.sm, x0, 1);
    const double peak = *std::max_element(xm.v.begin(), xm.v.end());
    for (std::size_t i = 0; i < xm.v.size(); ++i)
        if (p.sm.support[i] && x0.v[i] > 0.0 && xm.v[i] > 1e-6 * peak)
            CHECK(r.x.v[i] == doctest::Approx(xm.v[i]).epsilon(1e-10));
}

TEST_CASE("BSREM converges and reports its derived floor") {
    const Problem p = make_problem(16, 10.0, 6);
    BsremParams params;
    params.n_sub = 4;
    params.lambda = 0.3;
    params.max_epochs = 400;
    const BsremResult r = bsrem(p.y, p.sm, params);
    CHECK(r.converged);
    CHECK(r.epochs < params.max_epochs);
    CHECK(r.delta > 0.0);

    // The objective trace is reported per epoch and ends near its maximum.
    REQUIRE(static_cast<int>(r.objective.size()) == r.epochs);
    const double best = *std::max_element(r.objective.begin(), r.objective.end());
    CHECK(r.objective.back() >= best - 1e-6 * std::abs(best));
}

TEST_CASE("the point where the mean-change rule stops BSREM is first-order stationary") {
    // The stop rule fires when the per-epoch movement falls below 0.01% of the
    // mean voxel value, and the movement tracks alpha times the gradient
    // mapping. A gentler relaxation keeps alpha large when the rule fires, so
    // the stop certifies a genuinely small mapping norm instead of a decayed
    // step size.
    const Problem p = make_problem(16, 20.0, 6);
    BsremParams params;
    params.n_sub = 1;
    params.lambda = 1.0;
    params.zeta = 0.05;
    params.max_epochs = 1000;
    const ImageGrid start = ones_like(p.sm);
    const double g0 = projected_gradient_norm(p.y, p.sm, start, params.lambda, params.rdp);
    const BsremResult r = bsrem(p.y, p.sm, params, &start);
    CHECK(r.converged);
    const double g1 = projected_gradient_norm(p.y, p.sm, r.x, params.lambda, params.rdp);
    CHECK(g1 < 1e-3 * g0);
}

TEST_CASE("BSREM honours an explicit preconditioner floor") {
    const Problem p = make_problem(12, 6.0, 7);
    BsremParams params;
    params.n_sub = 2;
    params.lambda = 0.1;
    params.delta = 0.05;
    params.max_epochs = 3;
    const BsremResult r = bsrem(p.y, p.sm, params);
    CHECK(r.delta == 0.05);
}
