#include "petsgm/io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "petsgm/rng.hpp"

namespace petsgm {

namespace {

using nlohmann::json;

std::string sidecar_path(const std::string& path_f32) {
    if (path_f32.size() < 4 || path_f32.substr(path_f32.size() - 4) != ".f32")
        throw std::invalid_argument("image/measurement path must end in .f32: " + path_f32);
    return path_f32.substr(0, path_f32.size() - 4) + ".json";
}

} // namespace

void write_f32_blob(const std::string& path, const std::vector<double>& values, const std::string& what) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error(what + ": cannot open for write: " + path);
    std::vector<unsigned char> buf;
    buf.reserve(values.size() * 4);
    for (double d : values) {
        if (!std::isfinite(d)) throw std::runtime_error(what + ": refusing to write non-finite value");
        const auto u = std::bit_cast<std::uint32_t>(static_cast<float>(d));
        buf.push_back(static_cast<unsigned char>(u & 0xff));
        buf.push_back(static_cast<unsigned char>((u >> 8) & 0xff));
        buf.push_back(static_cast<unsigned char>((u >> 16) & 0xff));
        buf.push_back(static_cast<unsigned char>((u >> 24) & 0xff));
    }
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw std::runtime_error(what + ": short write: " + path);
}

std::vector<double> read_f32_blob(const std::string& path, std::size_t expected, const std::string& what) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error(what + ": cannot open: " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() != expected * 4)
        throw std::runtime_error(what + ": payload size " + std::to_string(buf.size()) +
                                 " does not match sidecar shape (" + std::to_string(expected * 4) + " bytes): " + path);
    std::vector<double> out(expected);
    for (std::size_t i = 0; i < expected; ++i) {
        const std::uint32_t u = static_cast<std::uint32_t>(buf[4 * i]) |
                                (static_cast<std::uint32_t>(buf[4 * i + 1]) << 8) |
                                (static_cast<std::uint32_t>(buf[4 * i + 2]) << 16) |
                                (static_cast<std::uint32_t>(buf[4 * i + 3]) << 24);
        const float x = std::bit_cast<float>(u);
        if (!std::isfinite(x)) throw std::runtime_error(what + ": non-finite value in payload: " + path);
        out[i] = static_cast<double>(x);
    }
    return out;
}

namespace {

json read_sidecar(const std::string& path_f32, const std::string& what) {
    const std::string sp = sidecar_path(path_f32);
    std::ifstream f(sp);
    if (!f) throw std::runtime_error(what + ": missing sidecar: " + sp);
    json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error(what + ": malformed sidecar " + sp + ": " + e.what());
    }
    return j;
}

void write_sidecar(const std::string& path_f32, const json& j) {
    const std::string sp = sidecar_path(path_f32);
    std::ofstream f(sp);
    if (!f) throw std::runtime_error("cannot open sidecar for write: " + sp);
    f << j.dump(2) << "\n";
}

} // namespace

void write_image(const ImageGrid& img, const std::string& path_f32) {
    if (img.nx <= 0 || img.ny <= 0 || img.nz <= 0 || img.size() != img.v.size() ||
        img.v.size() != static_cast<std::size_t>(img.nx) * img.ny * img.nz)
        throw std::invalid_argument("write_image: inconsistent dims");
    json j = {
        {"type", "image"},
        {"dims", {img.nx, img.ny, img.nz}},
        {"spacing", {img.sx, img.sy, img.sz}},
    };
    write_f32_blob(path_f32, img.v, "write_image");
    write_sidecar(path_f32, j);
}

ImageGrid read_image(const std::string& path_f32) {
    const json j = read_sidecar(path_f32, "read_image");
    if (j.value("type", "") != "image")
        throw std::runtime_error("read_image: sidecar type is not 'image': " + path_f32);
    const auto dims = j.at("dims");
    const auto spacing = j.at("spacing");
    if (dims.size() != 3 || spacing.size() != 3)
        throw std::runtime_error("read_image: sidecar dims/spacing must have 3 entries");
    ImageGrid img(dims[0].get<int>(), dims[1].get<int>(), dims[2].get<int>(),
                  spacing[0].get<double>(), spacing[1].get<double>(), spacing[2].get<double>());
    if (img.nx <= 0 || img.ny <= 0 || img.nz <= 0 || img.sx <= 0 || img.sy <= 0 || img.sz <= 0)
        throw std::runtime_error("read_image: invalid dims or spacing in sidecar");
    img.v = read_f32_blob(path_f32, img.size(), "read_image");
    return img;
}

void write_measurements(const Measurements& m, const std::string& path_f32) {
    if (m.n_angles <= 0 || m.n_radial <= 0 || m.n_planes <= 0 ||
        m.bins.size() != static_cast<std::size_t>(m.n_angles) * m.n_radial * m.n_planes)
        throw std::invalid_argument("write_measurements: inconsistent layout");
    if (m.kind == Measurements::Kind::counts) {
        for (double b : m.bins)
            if (b < 0.0 || b != std::floor(b))
                throw std::runtime_error("write_measurements: counts must be non-negative integers");
    }
    json j = {
        {"type", "measurements"},
        {"layout", {m.n_angles, m.n_radial, m.n_planes}},
        {"kind", m.kind == Measurements::Kind::counts ? "counts" : "expected"},
    };
    write_f32_blob(path_f32, m.bins, "write_measurements");
    write_sidecar(path_f32, j);
}

Measurements read_measurements(const std::string& path_f32) {
    const json j = read_sidecar(path_f32, "read_measurements");
    if (j.value("type", "") != "measurements")
        throw std::runtime_error("read_measurements: sidecar type is not 'measurements': " + path_f32);
    const auto layout = j.at("layout");
    if (layout.size() != 3) throw std::runtime_error("read_measurements: layout must have 3 entries");
    const std::string kind = j.at("kind").get<std::string>();
    if (kind != "counts" && kind != "expected")
        throw std::runtime_error("read_measurements: kind must be 'counts' or 'expected'");
    Measurements m(layout[0].get<int>(), layout[1].get<int>(), layout[2].get<int>(),
                   kind == "counts" ? Measurements::Kind::counts : Measurements::Kind::expected);
    if (m.n_angles <= 0 || m.n_radial <= 0 || m.n_planes <= 0)
        throw std::runtime_error("read_measurements: invalid layout in sidecar");
    m.bins = read_f32_blob(path_f32, m.size(), "read_measurements");
    if (m.kind == Measurements::Kind::counts) {
        for (double b : m.bins)
            if (b < 0.0 || b != std::floor(b))
                throw std::runtime_error("read_measurements: counts payload has non-integer or negative bins");
    }
    return m;
}

void export_graymap(const ImageGrid& img, int z, const std::string& path_pgm) {
    if (z < 0 || z >= img.nz)
        throw std::invalid_argument("export_graymap: slice index out of range");
    double lo = img(0, 0, z), hi = lo;
    for (int y = 0; y < img.ny; ++y)
        for (int x = 0; x < img.nx; ++x) {
            const double val = img(x, y, z);
            lo = std::min(lo, val);
            hi = std::max(hi, val);
        }
    std::ofstream f(path_pgm, std::ios::binary);
    if (!f) throw std::runtime_error("export_graymap: cannot open for write: " + path_pgm);
    f << "P5\n" << img.nx << " " << img.ny << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(img.nx));
    for (int y = 0; y < img.ny; ++y) {
        for (int x = 0; x < img.nx; ++x) {
            unsigned char g = 128;
            if (hi > lo) {
                const double t = (img(x, y, z) - lo) / (hi - lo);
                g = static_cast<unsigned char>(std::lround(t * 255.0));
            }
            row[static_cast<std::size_t>(x)] = g;
        }
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw std::runtime_error("export_graymap: short write: " + path_pgm);
}

std::string content_hash_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("content_hash_file: cannot open: " + path);
    std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const std::uint64_t h = fnv1a64(buf.data(), buf.size());
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return std::string(out);
}

} // namespace petsgm
