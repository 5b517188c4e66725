#pragma once
// Core voxel-grid and measurement containers shared by every module.

#include <cstddef>
#include <string>
#include <vector>

namespace petsgm {

// Regular voxel grid; nz == 1 for 2D. Values are doubles in memory (solver
// precision); files store float32, see io.hpp. Layout: x fastest, then y,
// then z: index = x + nx*(y + ny*z).
struct ImageGrid {
    int nx = 0, ny = 0, nz = 1;
    double sx = 1.0, sy = 1.0, sz = 1.0; // voxel spacing in mm
    std::vector<double> v;

    ImageGrid() = default;
    ImageGrid(int nx_, int ny_, int nz_ = 1, double sx_ = 1.0, double sy_ = 1.0, double sz_ = 1.0)
        : nx(nx_), ny(ny_), nz(nz_), sx(sx_), sy(sy_), sz(sz_),
          v(static_cast<std::size_t>(nx_) * ny_ * nz_, 0.0) {}

    std::size_t size() const { return v.size(); }
    std::size_t idx(int x, int y, int z = 0) const {
        return static_cast<std::size_t>(x) + static_cast<std::size_t>(nx) * (static_cast<std::size_t>(y) + static_cast<std::size_t>(ny) * z);
    }
    double& operator()(int x, int y, int z = 0) { return v[idx(x, y, z)]; }
    double operator()(int x, int y, int z = 0) const { return v[idx(x, y, z)]; }

    bool same_shape(const ImageGrid& o) const {
        return nx == o.nx && ny == o.ny && nz == o.nz && sx == o.sx && sy == o.sy && sz == o.sz;
    }
};

// Projection-domain data. Layout (n_angles, n_radial, n_planes), row-major in
// that order: index = p + n_planes*(r + n_radial*a). For 2D n_planes == 1;
// for 3D n_planes = image nz * n_polar (axial offset major, polar tilt minor).
struct Measurements {
    enum class Kind { counts, expected };

    int n_angles = 0, n_radial = 0, n_planes = 1;
    Kind kind = Kind::expected;
    std::vector<double> bins;

    Measurements() = default;
    Measurements(int na, int nr, int np, Kind k)
        : n_angles(na), n_radial(nr), n_planes(np), kind(k),
          bins(static_cast<std::size_t>(na) * nr * np, 0.0) {}

    std::size_t size() const { return bins.size(); }
    std::size_t idx(int a, int r, int p) const {
        return static_cast<std::size_t>(p) + static_cast<std::size_t>(n_planes) * (static_cast<std::size_t>(r) + static_cast<std::size_t>(n_radial) * a);
    }
    double& at(int a, int r, int p) { return bins[idx(a, r, p)]; }
    double at(int a, int r, int p) const { return bins[idx(a, r, p)]; }

    bool same_layout(const Measurements& o) const {
        return n_angles == o.n_angles && n_radial == o.n_radial && n_planes == o.n_planes;
    }
};

// Small shared helpers (all shape-checked, throwing std::invalid_argument).
ImageGrid like(const ImageGrid& ref, double fill = 0.0);
// Copy one axial plane out of / back into a volume (slice has nz == 1 and
// keeps the volume's in-plane spacing).
ImageGrid extract_slice(const ImageGrid& vol, int z);
void insert_slice(ImageGrid& vol, int z, const ImageGrid& slice);
double sum(const ImageGrid& a);
double dot(const ImageGrid& a, const ImageGrid& b);
double norm2(const ImageGrid& a);                      // Euclidean norm
void clamp_nonneg(ImageGrid& a);                       // in-place max(x, 0)
int count_positive(const ImageGrid& a);
void require_finite(const ImageGrid& a, const std::string& what);
void require_finite_bins(const Measurements& m, const std::string& what);
void require_same_shape(const ImageGrid& a, const ImageGrid& b, const std::string& where);

} // namespace petsgm
