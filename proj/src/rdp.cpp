#include "petsgm/rdp.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace petsgm {

namespace {

struct Offset { int dx, dy, dz; };

// One offset per unordered neighbour pair: lexicographically positive half of
// the box neighbourhood.
std::vector<Offset> pair_offsets(const ImageGrid& x, const RdpParams& p) {
    std::vector<Offset> out;
    if (p.z_only) {
        if (x.nz > 1) out.push_back({0, 0, 1});
        return out;
    }
    const int zr = x.nz > 1 ? 1 : 0;
    for (int dz = 0; dz <= zr; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                if (dz == 0 && (dy < 0 || (dy == 0 && dx <= 0))) continue;
                out.push_back({dx, dy, dz});
            }
    return out;
}

void check(const ImageGrid& x, const RdpParams& p) {
    if (x.size() == 0) throw std::invalid_argument("rdp: empty image");
    if (!(p.xi >= 0.0)) throw std::invalid_argument("rdp: xi must be >= 0");
    for (double v : x.v)
        if (v < 0.0) throw std::invalid_argument("rdp: voxel values must be >= 0");
}

template <class PairFn>
void for_each_pair(const ImageGrid& x, const RdpParams& p, PairFn&& fn) {
    const auto offsets = pair_offsets(x, p);
    for (const auto& o : offsets)
        for (int z = 0; z < x.nz; ++z) {
            const int z2 = z + o.dz;
            if (z2 < 0 || z2 >= x.nz) continue;
            for (int y = 0; y < x.ny; ++y) {
                const int y2 = y + o.dy;
                if (y2 < 0 || y2 >= x.ny) continue;
                for (int xx = 0; xx < x.nx; ++xx) {
                    const int x2 = xx + o.dx;
                    if (x2 < 0 || x2 >= x.nx) continue;
                    fn(x.idx(xx, y, z), x.idx(x2, y2, z2));
                }
            }
        }
}

} // namespace

double rdp(const ImageGrid& x, const RdpParams& params) {
    check(x, params);
    double acc = 0.0;
    for_each_pair(x, params, [&](std::size_t j, std::size_t k) {
        const double d = x.v[j] - x.v[k];
        if (d == 0.0) return;
        double den = x.v[j] + x.v[k] + params.xi * std::abs(d);
        if (den == 0.0) den = params.epsilon;
        acc -= d * d / den;
    });
    return acc;
}

ImageGrid rdp_grad(const ImageGrid& x, const RdpParams& params) {
    check(x, params);
    ImageGrid g = like(x);
    for_each_pair(x, params, [&](std::size_t j, std::size_t k) {
        const double d = x.v[j] - x.v[k];
        if (d == 0.0) return;
        const double s = d > 0.0 ? 1.0 : -1.0;
        double den = x.v[j] + x.v[k] + params.xi * std::abs(d);
        if (den == 0.0) den = params.epsilon;
        const double den2 = den * den;
        // d/dx_j and d/dx_k of -(d^2/den); both endpoints of the pair.
        g.v[j] -= (2.0 * d * den - d * d * (1.0 + params.xi * s)) / den2;
        g.v[k] -= (-2.0 * d * den - d * d * (1.0 - params.xi * s)) / den2;
    });
    return g;
}

} // namespace petsgm
