#include "petsgm/grid.hpp"

#include <cmath>
#include <stdexcept>

namespace petsgm {

ImageGrid like(const ImageGrid& ref, double fill) {
    ImageGrid out(ref.nx, ref.ny, ref.nz, ref.sx, ref.sy, ref.sz);
    if (fill != 0.0) std::fill(out.v.begin(), out.v.end(), fill);
    return out;
}

ImageGrid extract_slice(const ImageGrid& vol, int z) {
    if (z < 0 || z >= vol.nz) throw std::invalid_argument("extract_slice: plane index out of range");
    ImageGrid out(vol.nx, vol.ny, 1, vol.sx, vol.sy, vol.sz);
    const std::size_t plane = static_cast<std::size_t>(vol.nx) * static_cast<std::size_t>(vol.ny);
    const std::size_t base = plane * static_cast<std::size_t>(z);
    for (std::size_t i = 0; i < plane; ++i) out.v[i] = vol.v[base + i];
    return out;
}

void insert_slice(ImageGrid& vol, int z, const ImageGrid& slice) {
    if (z < 0 || z >= vol.nz) throw std::invalid_argument("insert_slice: plane index out of range");
    if (slice.nx != vol.nx || slice.ny != vol.ny || slice.nz != 1)
        throw std::invalid_argument("insert_slice: slice shape does not match volume");
    const std::size_t plane = static_cast<std::size_t>(vol.nx) * static_cast<std::size_t>(vol.ny);
    const std::size_t base = plane * static_cast<std::size_t>(z);
    for (std::size_t i = 0; i < plane; ++i) vol.v[base + i] = slice.v[i];
}

double sum(const ImageGrid& a) {
    double s = 0.0;
    for (double x : a.v) s += x;
    return s;
}

double dot(const ImageGrid& a, const ImageGrid& b) {
    require_same_shape(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.v.size(); ++i) s += a.v[i] * b.v[i];
    return s;
}

double norm2(const ImageGrid& a) {
    double s = 0.0;
    for (double x : a.v) s += x * x;
    return std::sqrt(s);
}

void clamp_nonneg(ImageGrid& a) {
    for (double& x : a.v)
        if (x < 0.0) x = 0.0;
}

int count_positive(const ImageGrid& a) {
    int n = 0;
    for (double x : a.v)
        if (x > 0.0) ++n;
    return n;
}

void require_finite(const ImageGrid& a, const std::string& what) {
    for (double x : a.v)
        if (!std::isfinite(x)) throw std::runtime_error(what + ": non-finite voxel value");
}

void require_finite_bins(const Measurements& m, const std::string& what) {
    for (double x : m.bins)
        if (!std::isfinite(x)) throw std::runtime_error(what + ": non-finite bin value");
}

void require_same_shape(const ImageGrid& a, const ImageGrid& b, const std::string& where) {
    if (!a.same_shape(b)) throw std::invalid_argument(where + ": image shapes differ");
}

} // namespace petsgm
