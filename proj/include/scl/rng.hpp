#pragma once

#include <array>
#include <cstdint>

namespace scl {

// Philox4x32-10 counter-based generator. A (key, counter) pair maps to four
// independent 32-bit words, so any draw can be recomputed without replaying
// a stream.
class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    explicit Philox4x32(std::uint64_t seed)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

    Counter operator()(Counter counter) const;

private:
    Key key_;
};

// Standard normal draws for one Monte Carlo path: draw k of path p depends
// only on (seed, p, k).
class PathNormalStream {
public:
    PathNormalStream(std::uint64_t seed, std::uint64_t path) : gen_(seed), path_(path) {}

    double operator()(std::uint64_t index) const;
    // Draws 2*block and 2*block+1 together.
    std::array<double, 2> pair(std::uint64_t block) const;

private:
    Philox4x32 gen_;
    std::uint64_t path_;
};

// Uniform on the open interval (0, 1) from two 32-bit words.
double to_unit_open(std::uint32_t hi, std::uint32_t lo);

}  // namespace scl
