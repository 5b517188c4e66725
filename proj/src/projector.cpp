#include "petsgm/projector.hpp"

#include <cmath>
#include <stdexcept>

namespace petsgm {

namespace {

struct Ray {
    double px, py, pz; // a point on the ray
    double dx, dy, dz; // unit direction
};

struct BoundShape {
    int nx, ny, nz;
    double sx, sy, sz;
};

// Voxel (i,j,k) center in mm, grid centered on the origin.
inline double center_x(const BoundShape& s, int i) { return (i - 0.5 * (s.nx - 1)) * s.sx; }

Ray make_ray(const Geometry& g, const BoundShape& s, int a, int r, int p) {
    const double phi = M_PI * a / g.n_angles;
    const double dr = g.fov_mm / g.n_radial;
    const double off = (r - 0.5 * (g.n_radial - 1)) * dr;
    const double c = std::cos(phi), sn = std::sin(phi);
    double psi = 0.0, zc = 0.0;
    if (g.mode == Geometry::Mode::parallel3d) {
        const int iz = p / g.n_polar;
        const int ip = p % g.n_polar;
        zc = (iz - 0.5 * (s.nz - 1)) * s.sz;
        if (g.n_polar > 1)
            psi = g.polar_tilt_rad * (2.0 * ip / (g.n_polar - 1) - 1.0);
    }
    const double cp = std::cos(psi), sp = std::sin(psi);
    return Ray{off * c, off * sn, zc, -sn * cp, c * cp, sp};
}

// Visit the ray's interpolation footprint: samples every half voxel along the
// dominant axis, phase-locked to the voxel lattice (and extended one voxel
// beyond each end so edge-voxel tents are fully integrated). emit(index, w)
// receives the line-integral weight of each touched voxel.
template <class Emit>
void trace(const BoundShape& s, const Ray& ray, Emit&& emit) {
    const double adx = std::abs(ray.dx), ady = std::abs(ray.dy), adz = std::abs(ray.dz);
    int dom;
    if (adx >= ady && adx >= adz) dom = 0;
    else if (ady >= adz) dom = 1;
    else dom = 2;

    const double sp_dom = dom == 0 ? s.sx : dom == 1 ? s.sy : s.sz;
    const int n_dom = dom == 0 ? s.nx : dom == 1 ? s.ny : s.nz;
    const double d_dom = dom == 0 ? ray.dx : dom == 1 ? ray.dy : ray.dz;
    const double p_dom = dom == 0 ? ray.px : dom == 1 ? ray.py : ray.pz;
    if (d_dom == 0.0) return; // degenerate direction

    const double ds = 0.5 * sp_dom / std::abs(d_dom);
    const int m_lo = -2, m_hi = 2 * (n_dom - 1) + 2;
    for (int m = m_lo; m <= m_hi; ++m) {
        const double q = (0.5 * m - 0.5 * (n_dom - 1)) * sp_dom;
        const double t = (q - p_dom) / d_dom;
        const double X = ray.px + t * ray.dx;
        const double Y = ray.py + t * ray.dy;
        const double Z = ray.pz + t * ray.dz;
        // Continuous voxel coordinates.
        const double u = X / s.sx + 0.5 * (s.nx - 1);
        const double v = Y / s.sy + 0.5 * (s.ny - 1);
        const double w = s.nz > 1 ? Z / s.sz + 0.5 * (s.nz - 1) : 0.0;

        const int i0 = static_cast<int>(std::floor(u));
        const int j0 = static_cast<int>(std::floor(v));
        const int k0 = s.nz > 1 ? static_cast<int>(std::floor(w)) : 0;
        const double fu = u - i0, fv = v - j0, fw = s.nz > 1 ? w - k0 : 0.0;

        const double wx[2] = {1.0 - fu, fu};
        const double wy[2] = {1.0 - fv, fv};
        const double wz[2] = {1.0 - fw, fw};
        const int kmax = s.nz > 1 ? 2 : 1;
        for (int dk = 0; dk < kmax; ++dk) {
            const int k = k0 + dk;
            if (k < 0 || k >= s.nz || wz[dk] == 0.0) continue;
            for (int dj = 0; dj < 2; ++dj) {
                const int j = j0 + dj;
                if (j < 0 || j >= s.ny || wy[dj] == 0.0) continue;
                const double wyz = wy[dj] * (s.nz > 1 ? wz[dk] : 1.0);
                for (int di = 0; di < 2; ++di) {
                    const int i = i0 + di;
                    if (i < 0 || i >= s.nx || wx[di] == 0.0) continue;
                    const std::size_t idx = static_cast<std::size_t>(i) +
                        static_cast<std::size_t>(s.nx) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(s.ny) * k);
                    emit(idx, ds * wx[di] * wyz);
                }
            }
        }
    }
}

BoundShape bound_shape(const SystemModel& sm) {
    return BoundShape{sm.nx, sm.ny, sm.nz, sm.sx, sm.sy, sm.sz};
}

void validate_geometry(const Geometry& g, const ImageGrid& shape) {
    if (g.n_angles <= 0 || g.n_radial <= 0) throw std::invalid_argument("geometry: n_angles and n_radial must be positive");
    if (!(g.fov_mm > 0.0)) throw std::invalid_argument("geometry: fov_mm must be positive");
    if (g.mode == Geometry::Mode::parallel3d) {
        if (g.n_polar < 1 || g.n_polar % 2 == 0)
            throw std::invalid_argument("geometry: n_polar must be odd so the zero tilt is included");
        if (std::abs(g.polar_tilt_rad) >= M_PI / 2)
            throw std::invalid_argument("geometry: polar tilt must lie in (-pi/2, pi/2)");
    } else {
        if (shape.nz != 1) throw std::invalid_argument("geometry: 2D mode requires a single-slice image");
    }
    if (shape.nx <= 0 || shape.ny <= 0 || shape.nz <= 0)
        throw std::invalid_argument("geometry: bound image has empty dims");
}

double ray_line_integral(const BoundShape& s, const Ray& ray, const ImageGrid& img) {
    double acc = 0.0;
    trace(s, ray, [&](std::size_t idx, double w) { acc += w * img.v[idx]; });
    return acc;
}

} // namespace

SystemModel build_system_model(const Geometry& geom, const ImageGrid& shape_ref,
                               const ImageGrid* attenuation, const std::vector<double>& sensitivity) {
    validate_geometry(geom, shape_ref);
    SystemModel sm;
    sm.geom = geom;
    sm.nx = shape_ref.nx; sm.ny = shape_ref.ny; sm.nz = shape_ref.nz;
    sm.sx = shape_ref.sx; sm.sy = shape_ref.sy; sm.sz = shape_ref.sz;

    const std::size_t m = sm.n_bins();
    if (!sensitivity.empty() && sensitivity.size() != m)
        throw std::invalid_argument("build_system_model: sensitivity size must match bin count");
    if (attenuation && !attenuation->same_shape(shape_ref))
        throw std::invalid_argument("build_system_model: attenuation map shape mismatch");

    sm.bin_weight.assign(m, 1.0);
    const BoundShape bs = bound_shape(sm);
    const int np = sm.n_planes();
    std::size_t b = 0;
    for (int a = 0; a < geom.n_angles; ++a)
        for (int r = 0; r < geom.n_radial; ++r)
            for (int p = 0; p < np; ++p, ++b) {
                double w = sensitivity.empty() ? 1.0 : sensitivity[b];
                if (w < 0.0) throw std::invalid_argument("build_system_model: negative sensitivity");
                if (attenuation) {
                    const Ray ray = make_ray(geom, bs, a, r, p);
                    w *= std::exp(-ray_line_integral(bs, ray, *attenuation));
                }
                sm.bin_weight[b] = w;
            }

    sm.background = sm.empty_bins(Measurements::Kind::expected);
    Measurements ones = sm.empty_bins(Measurements::Kind::expected);
    std::fill(ones.bins.begin(), ones.bins.end(), 1.0);
    sm.sens_image = sm.empty_image();
    // Fill below via back_project (needs sm complete except sens/support).
    Measurements weighted = ones;
    sm.support.assign(sm.sens_image.size(), 0);
    sm.sens_image = back_project(sm, weighted);
    for (std::size_t i = 0; i < sm.sens_image.size(); ++i)
        sm.support[i] = sm.sens_image.v[i] > 0.0 ? 1 : 0;
    return sm;
}

void set_constant_background(SystemModel& sm, double value) {
    if (value < 0.0) throw std::invalid_argument("set_constant_background: value must be >= 0");
    std::fill(sm.background.bins.begin(), sm.background.bins.end(), value);
}

SystemModel scale_system(const SystemModel& sm, double factor) {
    if (!(factor > 0.0) || !std::isfinite(factor))
        throw std::invalid_argument("scale_system: factor must be positive and finite");
    SystemModel out = sm;
    for (double& w : out.bin_weight) w *= factor;
    for (double& s : out.sens_image.v) s *= factor;
    return out;
}

Measurements forward_project(const SystemModel& sm, const ImageGrid& x) {
    Measurements out = sm.empty_bins(Measurements::Kind::expected);
    std::vector<int> all(static_cast<std::size_t>(sm.geom.n_angles));
    for (int a = 0; a < sm.geom.n_angles; ++a) all[static_cast<std::size_t>(a)] = a;
    forward_project_subset(sm, x, all, out);
    return out;
}

ImageGrid back_project(const SystemModel& sm, const Measurements& q) {
    ImageGrid out = sm.empty_image();
    std::vector<int> all(static_cast<std::size_t>(sm.geom.n_angles));
    for (int a = 0; a < sm.geom.n_angles; ++a) all[static_cast<std::size_t>(a)] = a;
    back_project_subset(sm, q, all, out);
    return out;
}

Measurements expected_counts(const SystemModel& sm, const ImageGrid& x) {
    Measurements out = forward_project(sm, x);
    for (std::size_t i = 0; i < out.bins.size(); ++i) out.bins[i] += sm.background.bins[i];
    return out;
}

std::vector<int> herman_meyer_order(int n) {
    if (n <= 0) throw std::invalid_argument("herman_meyer_order: n must be positive");
    // Prime factorisation, ascending.
    std::vector<int> factors;
    int rem = n;
    for (int f = 2; f * f <= rem;) {
        if (rem % f == 0) { factors.push_back(f); rem /= f; }
        else ++f;
    }
    if (rem > 1) factors.push_back(rem);

    // Decimation = mixed-radix digit reversal: write each index little-endian
    // in the factor radices, read it back with the first digit most
    // significant.
    const int nf = static_cast<int>(factors.size());
    std::vector<int> weight(static_cast<std::size_t>(nf), 1);
    for (int k = nf - 2; k >= 0; --k)
        weight[static_cast<std::size_t>(k)] = weight[static_cast<std::size_t>(k + 1)] * factors[static_cast<std::size_t>(k + 1)];
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int e = 0; e < n; ++e) {
        int rest = e, val = 0;
        for (int k = 0; k < nf; ++k) {
            const int digit = rest % factors[static_cast<std::size_t>(k)];
            rest /= factors[static_cast<std::size_t>(k)];
            val += digit * weight[static_cast<std::size_t>(k)];
        }
        order[static_cast<std::size_t>(e)] = val;
    }
    return order;
}

SubsetSchedule partition_subsets(const Geometry& geom, int n_sub) {
    if (n_sub <= 0) throw std::invalid_argument("partition_subsets: n_sub must be positive");
    if (geom.n_angles % n_sub != 0)
        throw std::invalid_argument("partition_subsets: n_sub must divide n_angles");
    SubsetSchedule sched;
    sched.n_sub = n_sub;
    sched.angles.resize(static_cast<std::size_t>(n_sub));
    for (int k = 0; k < n_sub; ++k)
        for (int a = k; a < geom.n_angles; a += n_sub)
            sched.angles[static_cast<std::size_t>(k)].push_back(a);
    sched.order = herman_meyer_order(n_sub);
    return sched;
}

void forward_project_subset(const SystemModel& sm, const ImageGrid& x,
                            const std::vector<int>& subset_angles, Measurements& out) {
    if (x.nx != sm.nx || x.ny != sm.ny || x.nz != sm.nz)
        throw std::invalid_argument("forward_project: image shape does not match system model");
    if (!out.same_layout(sm.background))
        throw std::invalid_argument("forward_project: output layout mismatch");
    const BoundShape bs = bound_shape(sm);
    const int np = sm.n_planes();
    for (int a : subset_angles) {
        for (int r = 0; r < sm.geom.n_radial; ++r)
            for (int p = 0; p < np; ++p) {
                const Ray ray = make_ray(sm.geom, bs, a, r, p);
                const std::size_t b = out.idx(a, r, p);
                out.bins[b] = sm.bin_weight[b] * ray_line_integral(bs, ray, x);
            }
    }
}

void back_project_subset(const SystemModel& sm, const Measurements& q,
                         const std::vector<int>& subset_angles, ImageGrid& out) {
    if (!q.same_layout(sm.background))
        throw std::invalid_argument("back_project: input layout mismatch");
    if (out.nx != sm.nx || out.ny != sm.ny || out.nz != sm.nz)
        throw std::invalid_argument("back_project: output shape does not match system model");
    const BoundShape bs = bound_shape(sm);
    const int np = sm.n_planes();
    for (int a : subset_angles) {
        for (int r = 0; r < sm.geom.n_radial; ++r)
            for (int p = 0; p < np; ++p) {
                const std::size_t b = q.idx(a, r, p);
                const double coef = sm.bin_weight[b] * q.bins[b];
                if (coef == 0.0) continue;
                const Ray ray = make_ray(sm.geom, bs, a, r, p);
                trace(bs, ray, [&](std::size_t idx, double w) { out.v[idx] += coef * w; });
            }
    }
}

std::vector<ImageGrid> subset_sensitivity(const SystemModel& sm, const SubsetSchedule& sched) {
    Measurements ones = sm.empty_bins(Measurements::Kind::expected);
    std::fill(ones.bins.begin(), ones.bins.end(), 1.0);
    std::vector<ImageGrid> out;
    out.reserve(sched.angles.size());
    for (const auto& subset : sched.angles) {
        ImageGrid s = sm.empty_image();
        back_project_subset(sm, ones, subset, s);
        out.push_back(std::move(s));
    }
    return out;
}

double scale_to_noise_level(const SystemModel& sm, const ImageGrid& x_true, double level) {
    if (!(level > 0.0)) throw std::invalid_argument("scale_to_noise_level: level must be positive");
    const int n_emit = count_positive(x_true);
    if (n_emit == 0) throw std::invalid_argument("scale_to_noise_level: phantom has no emission voxels");
    const Measurements trues = forward_project(sm, x_true);
    double total = 0.0;
    for (double b : trues.bins) total += b;
    if (!(total > 0.0)) throw std::invalid_argument("scale_to_noise_level: clean trues sum to zero");
    return level * n_emit / total;
}

Measurements simulate_measurements(const SystemModel& sm, const ImageGrid& x_true, RngStream rng) {
    const Measurements ybar = expected_counts(sm, x_true);
    require_finite_bins(ybar, "simulate_measurements");
    Measurements y(ybar.n_angles, ybar.n_radial, ybar.n_planes, Measurements::Kind::counts);
    RngStream stream = rng.child("poisson");
    for (std::size_t i = 0; i < ybar.bins.size(); ++i)
        y.bins[i] = static_cast<double>(stream.poisson(ybar.bins[i]));
    return y;
}

} // namespace petsgm
