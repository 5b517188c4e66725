#include "petsgm/phantom.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace petsgm {

namespace {

// Normalized coordinate of voxel index i on an n-wide axis: centers span
// (-1, 1) symmetrically.
inline double ncoord(int i, int n) { return (2.0 * i - (n - 1)) / n; }

bool inside(const Ellipse& e, double u, double v, double w, bool three_d) {
    const double cu = u - e.cx, cv = v - e.cy;
    const double ca = std::cos(e.angle_rad), sa = std::sin(e.angle_rad);
    const double ru = cu * ca + cv * sa;
    const double rv = -cu * sa + cv * ca;
    double q = (ru * ru) / (e.ax * e.ax) + (rv * rv) / (e.ay * e.ay);
    if (three_d) {
        const double cw = w - e.cz;
        q += (cw * cw) / (e.az * e.az);
    }
    return q <= 1.0;
}

void validate(const PhantomSpec& s) {
    if (s.nx <= 0 || s.ny <= 0 || s.nz <= 0) throw std::invalid_argument("phantom: dims must be positive");
    if (s.sx <= 0 || s.sy <= 0 || s.sz <= 0) throw std::invalid_argument("phantom: spacing must be positive");
    if (s.ellipses.empty()) throw std::invalid_argument("phantom: needs at least one ellipse");
    for (const auto& e : s.ellipses) {
        if (e.ax <= 0 || e.ay <= 0 || e.az <= 0) throw std::invalid_argument("phantom: ellipse axes must be positive");
        if (e.pet < 0 || e.mr < 0) throw std::invalid_argument("phantom: intensities must be >= 0");
    }
    const auto& l = s.lesions;
    if (l.count < 0) throw std::invalid_argument("phantom: lesion count must be >= 0");
    if (l.count > 0) {
        if (!(l.radius_min > 0) || l.radius_max < l.radius_min)
            throw std::invalid_argument("phantom: lesion radius range invalid");
        if (!(l.contrast > 0)) throw std::invalid_argument("phantom: lesion contrast must be positive");
        if (!(s.soft_tissue_value > 0)) throw std::invalid_argument("phantom: lesions need a positive soft-tissue value");
    }
}

} // namespace

PhantomSpec default_brain_spec(int nx, int ny, int nz) {
    PhantomSpec s;
    s.nx = nx; s.ny = ny; s.nz = nz;
    const bool three_d = nz > 1;
    const double az_head = three_d ? 0.85 : 1.0;
    const double az_white = three_d ? 0.68 : 1.0;
    const double az_vent = three_d ? 0.30 : 1.0;
    // Gray shell / soft-tissue interior / ventricle; MR inverts gray-white.
    s.ellipses = {
        {0.0, 0.0, 0.0, 0.82, 0.90, az_head, 0.06, 1.00, 0.25},
        {0.0, -0.04, 0.0, 0.58, 0.66, az_white, 0.02, 0.25, 1.00},
        {0.0, 0.26, 0.0, 0.13, 0.20, az_vent, 0.00, 0.10, 0.90},
    };
    s.soft_tissue_value = 0.25;
    return s;
}

PairedSample generate_phantom(const PhantomSpec& spec, RngStream rng) {
    validate(spec);
    const bool three_d = spec.nz > 1;
    PairedSample out;
    out.pet = ImageGrid(spec.nx, spec.ny, spec.nz, spec.sx, spec.sy, spec.sz);
    out.mr = like(out.pet);
    out.lesion_mask = like(out.pet);

    for (int z = 0; z < spec.nz; ++z)
        for (int y = 0; y < spec.ny; ++y)
            for (int x = 0; x < spec.nx; ++x) {
                const double u = ncoord(x, spec.nx), v = ncoord(y, spec.ny);
                const double w = three_d ? ncoord(z, spec.nz) : 0.0;
                for (const auto& e : spec.ellipses)
                    if (inside(e, u, v, w, three_d)) {
                        out.pet(x, y, z) = e.pet;
                        out.mr(x, y, z) = e.mr;
                    }
            }

    // Lesions: spheres fully contained in the uniform soft-tissue compartment,
    // painted at exactly contrast * soft_tissue_value (MR left untouched).
    RngStream les = rng.child("lesions");
    const double lesion_value = spec.lesions.contrast * spec.soft_tissue_value;
    for (int li = 0; li < spec.lesions.count; ++li) {
        bool placed = false;
        for (int attempt = 0; attempt < 400 && !placed; ++attempt) {
            const double radius = les.uniform(spec.lesions.radius_min, spec.lesions.radius_max);
            const double cu = les.uniform(-0.7, 0.7);
            const double cv = les.uniform(-0.7, 0.7);
            const double cw = three_d ? les.uniform(-0.5, 0.5) : 0.0;
            std::vector<std::size_t> voxels;
            bool ok = true;
            for (int z = 0; z < spec.nz && ok; ++z)
                for (int y = 0; y < spec.ny && ok; ++y)
                    for (int x = 0; x < spec.nx && ok; ++x) {
                        const double du = ncoord(x, spec.nx) - cu;
                        const double dv = ncoord(y, spec.ny) - cv;
                        const double dw = three_d ? ncoord(z, spec.nz) - cw : 0.0;
                        if (du * du + dv * dv + dw * dw > radius * radius) continue;
                        const std::size_t idx = out.pet.idx(x, y, z);
                        if (out.pet.v[idx] != spec.soft_tissue_value || out.lesion_mask.v[idx] != 0.0)
                            ok = false;
                        else
                            voxels.push_back(idx);
                    }
            if (!ok || voxels.empty()) continue;
            for (std::size_t idx : voxels) {
                out.pet.v[idx] = lesion_value;
                out.lesion_mask.v[idx] = 1.0;
            }
            placed = true;
        }
        if (!placed)
            throw std::runtime_error("generate_phantom: could not place lesion inside uniform soft tissue");
    }
    return out;
}

std::vector<PairedSample> build_dataset(const PhantomSpec& base, int n, std::uint64_t seed) {
    if (n <= 0) throw std::invalid_argument("build_dataset: n must be positive");
    std::vector<PairedSample> out;
    out.reserve(static_cast<std::size_t>(n));
    std::set<std::uint64_t> seen;
    RngStream root = RngStream::from_seed(seed).child("dataset");
    for (int i = 0; i < n; ++i) {
        RngStream s = root.child_index(static_cast<std::uint64_t>(i));
        PhantomSpec spec = base;
        for (auto& e : spec.ellipses) {
            e.cx += s.uniform(-0.04, 0.04);
            e.cy += s.uniform(-0.04, 0.04);
            if (spec.nz > 1) e.cz += s.uniform(-0.04, 0.04);
            e.ax *= s.uniform(0.92, 1.08);
            e.ay *= s.uniform(0.92, 1.08);
            if (spec.nz > 1) e.az *= s.uniform(0.95, 1.05);
            e.angle_rad += s.uniform(-0.10, 0.10);
        }
        PairedSample ph = generate_phantom(spec, s.child("phantom"));
        const std::uint64_t h = fnv1a64(ph.pet.v.data(), ph.pet.v.size() * sizeof(double));
        if (!seen.insert(h).second)
            throw std::runtime_error("build_dataset: jitter produced duplicate samples");
        out.push_back(std::move(ph));
    }
    return out;
}

} // namespace petsgm
