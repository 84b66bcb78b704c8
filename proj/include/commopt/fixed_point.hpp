#pragma once

// L-bit fixed-point scalars: at most L bits before and L bits after the
// binary point.  These are the only values allowed on simulated channels;
// all local arithmetic stays in double precision.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace commopt {

struct overflow_error : std::runtime_error {
    explicit overflow_error(const std::string& what) : std::runtime_error(what) {}
};

// value = numerator * 2^-scale_bits, |numerator| <= 2^(2L) - 1
struct FixedPointScalar {
    std::int64_t numerator = 0;
    int scale_bits = 0;

    double value() const { return std::ldexp(double(numerator), -scale_bits); }
};

namespace fp {

inline std::int64_t max_numerator(int L) {
    return (std::int64_t(1) << (2 * L)) - 1;
}

// Nearest grid point k 2^-L, ties rounded away from zero.
inline FixedPointScalar encode(double v, int L) {
    if (L < 1 || L > 31)
        throw std::invalid_argument("fixed-point width L must be in [1,31]");
    if (!std::isfinite(v)) throw overflow_error("non-finite value");
    const double scaled = std::ldexp(v, L);
    // llround rounds halfway cases away from zero
    const std::int64_t num = std::llround(scaled);
    if (std::llabs(num) > max_numerator(L))
        throw overflow_error("value " + std::to_string(v) + " exceeds " +
                             std::to_string(L) + "-bit fixed-point range");
    return FixedPointScalar{num, L};
}

inline double decode(const FixedPointScalar& x) { return x.value(); }

inline bool representable(double v, int L) {
    const std::int64_t num = std::llround(std::ldexp(v, L));
    return std::llabs(num) <= max_numerator(L) &&
           std::ldexp(double(num), -L) == v;
}

// Round to the grid without the range check (used for wire payloads with
// explicit integer/fraction widths).
inline std::int64_t grid_round(double v, int frac_bits) {
    return std::llround(std::ldexp(v, frac_bits));
}

} // namespace fp
} // namespace commopt
