#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "falcon/common.hpp"
#include "falcon/fixed_point.hpp"

namespace falcon {

// A w x h plane of signed integers, row-major. Used both for spatial data
// (fixed-point values at the caller's scale) and as halves of FreqPlanes.
struct Plane {
    u32 w = 0, h = 0;
    std::vector<i64> data;

    Plane() = default;
    Plane(u32 w_, u32 h_) : w(w_), h(h_), data(static_cast<size_t>(w_) * h_, 0) {}

    i64& at(u32 x, u32 y) { return data[static_cast<size_t>(y) * w + x]; }
    i64 at(u32 x, u32 y) const { return data[static_cast<size_t>(y) * w + x]; }
};

// Real and imaginary planes of a 2-D transform. Entries are fixed-point:
// stored = round(coefficient * 2^frac_bits).
struct FreqPlanes {
    u32 w = 0, h = 0;
    std::vector<i64> real, imag;

    FreqPlanes() = default;
    FreqPlanes(u32 w_, u32 h_)
        : w(w_), h(h_), real(static_cast<size_t>(w_) * h_, 0), imag(static_cast<size_t>(w_) * h_, 0) {}

    size_t size() const { return real.size(); }
};

// Direct-summation DFT, coefficients rounded once at 2^frac_bits.
// Exact to rounding; sizes here are desk scale so O(M^2 N^2) is fine.
inline FreqPlanes fft2d(const Plane& plane, const FixedPointConfig& cfg) {
    check(plane.w >= 1 && plane.h >= 1, ErrorCode::BadArgument, "fft2d: empty plane");
    const u32 w = plane.w, h = plane.h;
    FreqPlanes out(w, h);
    const double scale = static_cast<double>(cfg.scale());
    const double tau = 2.0 * std::numbers::pi;
    for (u32 v = 0; v < h; ++v) {
        for (u32 u = 0; u < w; ++u) {
            double re = 0.0, im = 0.0;
            for (u32 y = 0; y < h; ++y) {
                for (u32 x = 0; x < w; ++x) {
                    double theta = tau * (static_cast<double>(u) * x / w + static_cast<double>(v) * y / h);
                    double val = static_cast<double>(plane.at(x, y));
                    re += val * std::cos(theta);
                    im -= val * std::sin(theta);
                }
            }
            out.real[static_cast<size_t>(v) * w + u] = round_half_away(re * scale);
            out.imag[static_cast<size_t>(v) * w + u] = round_half_away(im * scale);
        }
    }
    return out;
}

inline Plane ifft2d(const FreqPlanes& fp, const FixedPointConfig& cfg) {
    check(fp.w >= 1 && fp.h >= 1, ErrorCode::BadArgument, "ifft2d: empty planes");
    const u32 w = fp.w, h = fp.h;
    Plane out(w, h);
    const double norm = 1.0 / (static_cast<double>(w) * h * static_cast<double>(cfg.scale()));
    const double tau = 2.0 * std::numbers::pi;
    for (u32 y = 0; y < h; ++y) {
        for (u32 x = 0; x < w; ++x) {
            double acc = 0.0;
            for (u32 v = 0; v < h; ++v) {
                for (u32 u = 0; u < w; ++u) {
                    double theta = tau * (static_cast<double>(u) * x / w + static_cast<double>(v) * y / h);
                    double re = static_cast<double>(fp.real[static_cast<size_t>(v) * w + u]);
                    double im = static_cast<double>(fp.imag[static_cast<size_t>(v) * w + u]);
                    acc += re * std::cos(theta) - im * std::sin(theta);
                }
            }
            out.at(x, y) = round_half_away(acc * norm);
        }
    }
    return out;
}

// Entrywise complex product with one rescale by 2^frac_bits.
inline FreqPlanes pointwise_complex_mul(const FreqPlanes& a, const FreqPlanes& b,
                                        const FixedPointConfig& cfg) {
    check(a.w == b.w && a.h == b.h, ErrorCode::BadArgument, "pointwise_complex_mul: extent mismatch");
    FreqPlanes out(a.w, a.h);
    const i64 half = static_cast<i64>(cfg.scale()) / 2;
    auto rescale = [&](i128 v) -> i64 {
        i128 s = static_cast<i64>(cfg.scale());
        i128 r = v >= 0 ? (v + half) / s : (v - half) / s;
        return static_cast<i64>(r);
    };
    for (size_t i = 0; i < out.size(); ++i) {
        i128 re = (i128)a.real[i] * b.real[i] - (i128)a.imag[i] * b.imag[i];
        i128 im = (i128)a.real[i] * b.imag[i] + (i128)a.imag[i] * b.real[i];
        out.real[i] = rescale(re);
        out.imag[i] = rescale(im);
    }
    return out;
}

// Places the filter at the origin of a w x h plane; the rest stays zero.
inline Plane zero_pad_filter(const Plane& f, u32 w, u32 h) {
    check(f.w <= w && f.h <= h, ErrorCode::BadArgument, "zero_pad_filter: filter larger than target");
    Plane out(w, h);
    for (u32 y = 0; y < f.h; ++y)
        for (u32 x = 0; x < f.w; ++x) out.at(x, y) = f.at(x, y);
    return out;
}

// Reference oracle: y(u,v) = sum_{a,b} x(a,b) * f((u-a) mod w, (v-b) mod h).
inline Plane circular_conv_oracle(const Plane& x, const Plane& f) {
    check(x.w == f.w && x.h == f.h, ErrorCode::BadArgument, "circular_conv_oracle: extent mismatch");
    const u32 w = x.w, h = x.h;
    Plane out(w, h);
    for (u32 v = 0; v < h; ++v) {
        for (u32 u = 0; u < w; ++u) {
            i64 acc = 0;
            for (u32 b = 0; b < h; ++b) {
                for (u32 a = 0; a < w; ++a) {
                    u32 fu = (u + w - a % w) % w;
                    u32 fv = (v + h - b % h) % h;
                    acc += x.at(a, b) * f.at(fu, fv);
                }
            }
            out.at(u, v) = acc;
        }
    }
    return out;
}

}  // namespace falcon
