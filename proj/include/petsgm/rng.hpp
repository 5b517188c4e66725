#pragma once
// Deterministic counter-based random streams.
//
// Every stochastic component draws from an RngStream derived from a 64-bit
// master seed plus a human-readable label (and optional integer index), so
// results are bitwise reproducible across runs, platforms and thread counts.
// The generator is splitmix64 driven in counter mode; normal and Poisson
// variates are produced by fixed, portable algorithms rather than
// std::*_distribution (whose output is implementation-defined).

#include <cstdint>
#include <span>
#include <string_view>

namespace petsgm {

class RngStream {
public:
    RngStream() = default;
    explicit RngStream(std::uint64_t key) : key_(key) {}

    // Root stream for a master seed.
    static RngStream from_seed(std::uint64_t master_seed);

    // Child streams; derivation depends only on (key, label/index), never on
    // how much the parent has been consumed.
    RngStream child(std::string_view label) const;
    RngStream child_index(std::uint64_t index) const;

    std::uint64_t next_u64();

    // Uniform on (0,1), 53-bit mantissa, never exactly 0 or 1.
    double uniform();
    // Uniform on [lo, hi).
    double uniform(double lo, double hi);

    // Standard normal via Box-Muller; consumes exactly two uniforms.
    double normal();
    void fill_normal(std::span<double> out);

    // Poisson with exact chunked Knuth sampling (valid for any mean >= 0).
    long poisson(double mean);

    std::uint64_t key() const { return key_; }

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

// 64-bit FNV-1a, used for label hashing and content hashing of files.
std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ULL);

} // namespace petsgm
