#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace biospix {

// Error kinds, one class per failure family so callers (and the CLI exit-code
// mapping) can tell them apart.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad command line / API misuse (maps to exit code 1).
struct UsageError : Error {
    using Error::Error;
};
// Invalid configuration value.
struct ParamError : Error {
    using Error::Error;
};
// Tensor extent mismatch.
struct ShapeError : Error {
    using Error::Error;
};
// Spatial arithmetic produced an impossible size.
struct GeometryError : Error {
    using Error::Error;
};
// Unreadable or malformed input file.
struct IoError : Error {
    using Error::Error;
};
// Label id outside the configured category budget.
struct CategoryOverflowError : Error {
    using Error::Error;
};
// Non-finite value where a finite one is required.
struct NumericError : Error {
    using Error::Error;
};

inline std::int64_t numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) n *= e;
    return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// Deterministic RNG over a splitmix64 stream. All conversions to doubles and
// ranges are written out explicitly, so the same seed yields the same values
// on every platform. std::*_distribution is implementation-defined and is
// avoided throughout.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {
        // splitmix64 warmup so nearby seeds decorrelate
        for (int i = 0; i < 4; ++i) next_raw();
    }

    std::uint64_t next_raw() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_raw() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n), rejection sampled
    std::int64_t uniform_int(std::int64_t n) {
        if (n <= 0) throw ParamError("uniform_int: n must be positive");
        const std::uint64_t un = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        std::uint64_t x;
        do {
            x = next_raw();
        } while (x >= limit);
        return static_cast<std::int64_t>(x % un);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // standard normal via Box-Muller, one spare cached
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * M_PI * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(static_cast<std::int64_t>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Mix a base seed with a stream index (per-sample RNG streams).
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t index) {
    std::uint64_t z = base ^ (0x9e3779b97f4a7c15ull + (index << 1));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace biospix
