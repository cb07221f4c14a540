#pragma once

#include <cmath>

#include "falcon/common.hpp"

namespace falcon {

inline constexpr u64 kDefaultPlainModulus = 1316638721;  // prime, == 1 mod 4096
inline constexpr unsigned kDefaultFracBits = 8;

struct FixedPointConfig {
    unsigned frac_bits = kDefaultFracBits;
    u64 p = kDefaultPlainModulus;

    u64 scale() const { return u64(1) << frac_bits; }

    void validate() const {
        check(p % 2 == 1, ErrorCode::BadArgument, "plaintext modulus must be odd");
        check(p > (u64(1) << 30), ErrorCode::BadArgument, "plaintext modulus too small");
    }
};

// Centered signed representation: values above floor(p/2) are negative.
inline u64 encode_signed(double v, const FixedPointConfig& cfg) {
    double scaled = v * static_cast<double>(cfg.scale());
    check(std::abs(scaled) < static_cast<double>(cfg.p / 2), ErrorCode::Capacity,
          "fixed-point overflow: |v|*2^frac_bits must stay below floor(p/2)");
    return from_signed(round_half_away(scaled), cfg.p);
}

inline double decode_signed(u64 x, const FixedPointConfig& cfg) {
    check(x < cfg.p, ErrorCode::BadArgument, "value out of Z_p");
    return static_cast<double>(signed_lift(x, cfg.p)) / static_cast<double>(cfg.scale());
}

}  // namespace falcon
