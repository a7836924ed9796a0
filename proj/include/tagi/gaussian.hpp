#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace tagi {

/// Mean vector plus diagonal variance vector. The universal carrier of
/// uncertain quantities: covariates, hidden states, outputs.
struct GaussianVector {
    std::vector<double> mean;
    std::vector<double> var;

    GaussianVector() = default;
    GaussianVector(std::vector<double> m, std::vector<double> v)
        : mean(std::move(m)), var(std::move(v)) {}

    static GaussianVector deterministic(std::vector<double> values) {
        std::vector<double> zeros(values.size(), 0.0);
        return GaussianVector(std::move(values), std::move(zeros));
    }

    std::size_t size() const { return mean.size(); }
};

inline void validate(const GaussianVector& g, const char* what = "GaussianVector") {
    if (g.mean.size() != g.var.size())
        throw std::invalid_argument(std::string(what) + ": mean/var length mismatch");
    for (double v : g.var)
        if (!(v >= 0.0))
            throw std::invalid_argument(std::string(what) + ": negative variance");
}

/// Observed values for a subset of a Gaussian vector's components.
struct PartialObservation {
    std::vector<std::size_t> index;
    std::vector<double> value;

    static PartialObservation full(const std::vector<double>& y) {
        PartialObservation o;
        o.index.resize(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) o.index[i] = i;
        o.value = y;
        return o;
    }

    std::size_t size() const { return index.size(); }
};

/// Raised when an inference step needs to condition on a state whose prior
/// variance is exactly zero yet whose posterior moved.
struct DegenerateInferenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Scalar normal math
// ---------------------------------------------------------------------------

inline double normal_cdf(double x) {
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

inline double normal_log_pdf(double x, double mean, double variance) {
    constexpr double kLog2Pi = 1.8378770664093454836;
    const double d = x - mean;
    return -0.5 * (kLog2Pi + std::log(variance) + d * d / variance);
}

// ---------------------------------------------------------------------------
// Deterministic random streams
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Derive an independent stream seed from a base seed and a stream index.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(seed ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

/// mt19937_64 with hand-rolled uniform and Box-Muller draws so identical
/// seeds give bit-identical streams on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        constexpr double kTwoPi = 6.283185307179586477;
        spare_ = r * std::sin(kTwoPi * u2);
        has_spare_ = true;
        return r * std::cos(kTwoPi * u2);
    }

    double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return engine_() % n; }

    /// Deterministic Fisher-Yates shuffle (std::shuffle is implementation-defined).
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace tagi
