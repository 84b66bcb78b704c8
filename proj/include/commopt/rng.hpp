#pragma once

// Deterministic shared randomness.  Streams are keyed by
// (protocol tag, round, machine id); the same (seed, key) yields the
// same stream on the coordinator and on every machine, so "shared"
// randomness never crosses a channel.

#include <cmath>
#include <cstdint>
#include <string_view>

namespace commopt {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= std::uint8_t(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}
} // namespace detail

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // decorrelate nearby seeds
        detail::splitmix64(state_);
        detail::splitmix64(state_);
    }

    std::uint64_t next_u64() { return detail::splitmix64(state_); }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        // 128-bit multiply rejection-free mapping (bias < 2^-64, irrelevant here)
        return (unsigned __int128)(next_u64()) * n >> 64;
    }

    bool bernoulli(double p) { return uniform() < p; }

    int rademacher() { return (next_u64() & 1u) ? 1 : -1; }

    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        have_spare_ = true;
        return u * m;
    }

    double exponential() { return -std::log(1.0 - uniform()); }

    double cauchy() { return std::tan(M_PI * (uniform() - 0.5)); }

    // Chambers-Mallows-Stuck symmetric p-stable variate, p in (0, 2]
    double stable(double p) {
        if (p >= 2.0) return std::sqrt(2.0) * gaussian();
        if (p == 1.0) return cauchy();
        const double u = M_PI * (uniform() - 0.5);
        const double w = exponential();
        return std::sin(p * u) / std::pow(std::cos(u), 1.0 / p) *
               std::pow(std::cos(u * (1.0 - p)) / w, (1.0 - p) / p);
    }

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

class SharedRandomness {
public:
    explicit SharedRandomness(std::uint64_t master_seed) : master_(master_seed) {}

    std::uint64_t master_seed() const { return master_; }

    Rng stream(std::string_view tag, std::uint64_t round = 0,
               std::uint64_t machine = 0) const {
        std::uint64_t s = master_;
        s ^= detail::fnv1a(tag) + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
        s ^= (round + 1) * 0xd6e8feb86659fd93ULL;
        s ^= (machine + 1) * 0xa3b195354a39b70dULL;
        return Rng(s);
    }

    // derived master seed for sub-protocols / per-seed sweeps
    SharedRandomness fork(std::string_view tag, std::uint64_t idx = 0) const {
        std::uint64_t s = master_;
        s ^= detail::fnv1a(tag) * 0x2545f4914f6cdd1dULL;
        s += (idx + 1) * 0x9e3779b97f4a7c15ULL;
        return SharedRandomness(s);
    }

private:
    std::uint64_t master_;
};

} // namespace commopt
