#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace gesture {

// Row-major throughout: rows are time steps, columns are channels.
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatF = Mat<float>;
using MatD = Mat<double>;
using MatI = Eigen::Matrix<int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Thrown when a required file, checkpoint, or dataset is absent. The CLI
// maps it to exit code 2; every other failure maps to exit code 1.
class MissingInput : public std::runtime_error {
public:
    explicit MissingInput(const std::string& what) : std::runtime_error(what) {}
};

// Deterministic RNG. The raw engine is std::mt19937_64 but all value
// transforms are spelled out here so streams are identical across
// standard library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    int64_t uniform_int(int64_t n) {
        return static_cast<int64_t>(uniform() * static_cast<double>(n));
    }

    // Standard normal via Box-Muller (no cached spare, keeps the stream simple).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    template <typename T>
    Mat<T> normal_mat(Eigen::Index rows, Eigen::Index cols, double stddev = 1.0) {
        Mat<T> m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j)
                m(i, j) = static_cast<T>(normal() * stddev);
        return m;
    }

    template <typename T>
    Mat<T> uniform_mat(Eigen::Index rows, Eigen::Index cols, double lo, double hi) {
        Mat<T> m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j)
                m(i, j) = static_cast<T>(uniform(lo, hi));
        return m;
    }

private:
    std::mt19937_64 engine_;
};

// Derives an independent stream for a named task from a master seed.
inline uint64_t derive_seed(uint64_t master, const std::string& stream) {
    uint64_t h = master ^ 0x9e3779b97f4a7c15ull;
    for (unsigned char c : stream) {
        h ^= c;
        h *= 0x100000001b3ull;
        h ^= h >> 29;
    }
    h *= 0xbf58476d1ce4e5b9ull;
    h ^= h >> 32;
    return h;
}

}  // namespace gesture
