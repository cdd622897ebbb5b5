#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "olora/matrix.hpp"

namespace olora {

/// splitmix64 finalizer; mixes two 64-bit values into a well-scrambled seed.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ull + b * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = 0x6c62272e07bb0142ull;
    for (std::uint64_t p : parts) h = mix_seed(h, p);
    return h;
}

/// The single randomness source: every stream is derived from an explicit seed,
/// never from ambient state.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    double gaussian(double stddev = 1.0) {
        std::normal_distribution<double> dist(0.0, stddev);
        return dist(gen_);
    }

    double uniform(double lo = 0.0, double hi = 1.0) {
        std::uniform_real_distribution<double> dist(lo, hi);
        return dist(gen_);
    }

    /// Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        std::uniform_int_distribution<int> dist(lo, hi);
        return dist(gen_);
    }

    void fill_gaussian(Matrix& m, double stddev) {
        std::normal_distribution<double> dist(0.0, stddev);
        for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = dist(gen_);
    }

    Matrix gaussian_matrix(int rows, int cols, double stddev) {
        Matrix m(rows, cols);
        fill_gaussian(m, stddev);
        return m;
    }

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
};

}  // namespace olora
