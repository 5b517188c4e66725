#include "petsgm/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace petsgm {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

// splitmix64 finalizer (Steele et al.); bijective 64-bit mix.
std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

RngStream RngStream::from_seed(std::uint64_t master_seed) {
    return RngStream(mix64(master_seed + kGolden));
}

RngStream RngStream::child(std::string_view label) const {
    const std::uint64_t lh = fnv1a64(label.data(), label.size());
    return RngStream(mix64(key_ ^ mix64(lh + kGolden)));
}

RngStream RngStream::child_index(std::uint64_t index) const {
    return RngStream(mix64(key_ ^ mix64((index + 1) * kGolden)));
}

std::uint64_t RngStream::next_u64() {
    counter_ += 1;
    return mix64(key_ + counter_ * kGolden);
}

double RngStream::uniform() {
    // 53 random bits into (0,1): (k + 0.5) / 2^53 with k in [0, 2^53).
    const std::uint64_t bits = next_u64() >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double RngStream::normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(2.0 * M_PI * u2);
}

void RngStream::fill_normal(std::span<double> out) {
    for (double& x : out) x = normal();
}

long RngStream::poisson(double mean) {
    if (!(mean >= 0.0) || !std::isfinite(mean))
        throw std::invalid_argument("poisson: mean must be finite and >= 0");
    if (mean == 0.0) return 0;
    // Poisson(a+b) = Poisson(a) + Poisson(b): sample in chunks small enough
    // for Knuth's product method to stay well-conditioned.
    constexpr double kChunk = 16.0;
    long total = 0;
    double remaining = mean;
    while (remaining > 0.0) {
        const double lam = remaining > kChunk ? kChunk : remaining;
        remaining -= lam;
        const double limit = std::exp(-lam);
        long k = 0;
        double prod = 1.0;
        do {
            k += 1;
            prod *= uniform();
        } while (prod > limit);
        total += k - 1;
    }
    return total;
}

} // namespace petsgm
