#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "evocnn/errors.hpp"

namespace evocnn {

// Signed fixed-point format. Default is Q7.8: 16 bits total, 8 fractional.
struct FxFormat {
    int total_bits = 16;
    int frac_bits = 8;

    bool valid() const { return frac_bits > 0 && frac_bits < total_bits && total_bits <= 32; }

    int64_t max_code() const { return (int64_t{1} << (total_bits - 1)) - 1; }
    int64_t min_code() const { return -(int64_t{1} << (total_bits - 1)); }

    double resolution() const { return std::ldexp(1.0, -frac_bits); }
    double max_value() const { return std::ldexp(static_cast<double>(max_code()), -frac_bits); }
    double min_value() const { return std::ldexp(static_cast<double>(min_code()), -frac_bits); }

    bool operator==(const FxFormat&) const = default;
};

// Integer code; represented real value is raw / 2^frac_bits.
struct FxValue {
    int32_t raw = 0;
    bool operator==(const FxValue&) const = default;
};

// Quantize a finite real. Rounds half away from zero, saturates to the code range.
inline FxValue to_fx(double x, const FxFormat& fmt = FxFormat{}) {
    const double scaled = std::ldexp(x, fmt.frac_bits);
    if (scaled >= static_cast<double>(fmt.max_code())) {
        return FxValue{static_cast<int32_t>(fmt.max_code())};
    }
    if (scaled <= static_cast<double>(fmt.min_code())) {
        return FxValue{static_cast<int32_t>(fmt.min_code())};
    }
    // llround rounds half away from zero.
    return FxValue{static_cast<int32_t>(std::llround(scaled))};
}

inline double from_fx(FxValue v, const FxFormat& fmt = FxFormat{}) {
    return std::ldexp(static_cast<double>(v.raw), -fmt.frac_bits);
}

// Rescale a double-width raw product back to the code range: divide by
// 2^frac_bits rounding half away from zero, then saturate.
inline int64_t fx_rescale_product(int64_t product, const FxFormat& fmt) {
    const int64_t half = int64_t{1} << (fmt.frac_bits - 1);
    const int64_t q = product >= 0 ? (product + half) >> fmt.frac_bits
                                   : -((-product + half) >> fmt.frac_bits);
    return std::clamp(q, fmt.min_code(), fmt.max_code());
}

// Emulated fixed-point multiply: quantize both operands, integer-multiply,
// rescale with the same rounding rule, saturate, convert back to real.
inline double quantized_mul(double a, double b, const FxFormat& fmt = FxFormat{}) {
    const int64_t ra = to_fx(a, fmt).raw;
    const int64_t rb = to_fx(b, fmt).raw;
    const int64_t raw = fx_rescale_product(ra * rb, fmt);
    return std::ldexp(static_cast<double>(raw), -fmt.frac_bits);
}

} // namespace evocnn
