#pragma once
// Parallel-beam emission system model.
//
// Bins are indexed (angle, radial, plane). Azimuthal angles are uniform over
// [0, pi); radial offsets are centered on the grid with spacing fov/n_radial.
// In 3D each plane index combines an axial offset (one per image slice) with
// a polar tilt from an odd set including 0; tilted rays couple image slices,
// so 3D data is not a stack of independent 2D problems.
//
// The geometric line integral uses bilinear (trilinear in 3D) interpolation
// sampled every half voxel along the ray's dominant axis, phase-locked to the
// voxel lattice so axis-aligned rays integrate exactly. Per-bin detector
// sensitivity and attenuation exp(-line integral of mu) fold into one cached
// multiplicative bin weight, so forward and back projection are exact
// adjoints of each other by construction.

#include <cstdint>
#include <vector>

#include "petsgm/grid.hpp"
#include "petsgm/rng.hpp"

namespace petsgm {

struct Geometry {
    enum class Mode { parallel2d, parallel3d };
    Mode mode = Mode::parallel2d;
    int n_angles = 0;
    int n_radial = 0;
    double fov_mm = 0.0;
    int n_polar = 1;             // 3D only; must be odd so the 0 tilt is included
    double polar_tilt_rad = 0.2; // 3D: tilts are linspace(-t, +t, n_polar)
};

struct SystemModel {
    Geometry geom;
    // Bound image shape (projection weights depend on it).
    int nx = 0, ny = 0, nz = 1;
    double sx = 1.0, sy = 1.0, sz = 1.0;

    std::vector<double> bin_weight; // sensitivity * attenuation, one per bin
    Measurements background;        // expected additive term b, one per bin
    ImageGrid sens_image;           // backprojection of all-ones (with weights)
    std::vector<std::uint8_t> support; // voxels with sens_image > 0

    int n_planes() const { return geom.mode == Geometry::Mode::parallel3d ? nz * geom.n_polar : 1; }
    std::size_t n_bins() const {
        return static_cast<std::size_t>(geom.n_angles) * geom.n_radial * n_planes();
    }
    Measurements empty_bins(Measurements::Kind kind) const {
        return Measurements(geom.n_angles, geom.n_radial, n_planes(), kind);
    }
    ImageGrid empty_image() const { return ImageGrid(nx, ny, nz, sx, sy, sz); }
};

// attenuation: optional mu map (same shape as shape_ref), nullptr for none.
// sensitivity: optional per-bin factors (size n_bins), empty for all-ones.
SystemModel build_system_model(const Geometry& geom, const ImageGrid& shape_ref,
                               const ImageGrid* attenuation = nullptr,
                               const std::vector<double>& sensitivity = {});

void set_constant_background(SystemModel& sm, double value);

// Copy of sm with every bin weight (and hence the sensitivity image) scaled
// by `factor` > 0; background and support are unchanged. Used by the samplers
// to absorb an image normalisation constant into the forward model.
SystemModel scale_system(const SystemModel& sm, double factor);

// y = A x (no background). Output kind is 'expected'.
Measurements forward_project(const SystemModel& sm, const ImageGrid& x);
// x = A^T q.
ImageGrid back_project(const SystemModel& sm, const Measurements& q);

// A x + b.
Measurements expected_counts(const SystemModel& sm, const ImageGrid& x);

// Angle-staggered subsets accessed in Herman-Meyer order.
struct SubsetSchedule {
    int n_sub = 1;
    std::vector<std::vector<int>> angles; // angles[k] = {k, k+n_sub, ...}
    std::vector<int> order;               // herman_meyer_order(n_sub)
};

// Prime-decimation permutation of {0..n-1}; identity for prime n.
std::vector<int> herman_meyer_order(int n);

SubsetSchedule partition_subsets(const Geometry& geom, int n_sub);

// Subset-restricted operators: bins outside the subset's angles are untouched
// (forward) or contribute nothing (backprojection).
void forward_project_subset(const SystemModel& sm, const ImageGrid& x,
                            const std::vector<int>& subset_angles, Measurements& out);
void back_project_subset(const SystemModel& sm, const Measurements& q,
                         const std::vector<int>& subset_angles, ImageGrid& out);
// A_j^T 1 for every subset.
std::vector<ImageGrid> subset_sensitivity(const SystemModel& sm, const SubsetSchedule& sched);

// Scale s with sum(s * A x_true) = level * #{x_true > 0}.
double scale_to_noise_level(const SystemModel& sm, const ImageGrid& x_true, double level);

// Poisson counts with mean A x + b; bitwise deterministic for a given stream.
Measurements simulate_measurements(const SystemModel& sm, const ImageGrid& x_true, RngStream rng);

} // namespace petsgm
