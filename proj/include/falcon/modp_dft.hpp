#pragma once

#include <algorithm>
#include <vector>

#include "falcon/common.hpp"

namespace falcon {

// Exact 2-D Fourier transform over Z_p, p prime with suitable roots of unity.
//
// Since p == 1 (mod 4), Z_p contains a square root of -1, and "complex"
// pairs (re, im) with i^2 = -1 form a ring where the usual transform
// identities (linearity, inversion, convolution theorem) hold exactly.
// This is what lets frequency-domain masking reduce cleanly mod p: the
// transform is a Z_p-linear bijection, so uniform spatial masks stay
// uniform and the client recovers y - r mod p exactly.

inline std::vector<u64> prime_factors(u64 n) {
    std::vector<u64> fs;
    for (u64 d = 2; d * d <= n; ++d) {
        if (n % d == 0) {
            fs.push_back(d);
            while (n % d == 0) n /= d;
        }
    }
    if (n > 1) fs.push_back(n);
    return fs;
}

inline u64 find_generator(u64 p) {
    auto fs = prime_factors(p - 1);
    for (u64 g = 2; g < p; ++g) {
        bool ok = true;
        for (u64 f : fs) {
            if (pow_mod(g, (p - 1) / f, p) == 1) {
                ok = false;
                break;
            }
        }
        if (ok) return g;
    }
    throw Error(ErrorCode::BadArgument, "no generator found (p not prime?)");
}

inline bool dft_size_supported(u64 p, u32 m) { return m >= 1 && (p - 1) % m == 0; }

// Smallest transform size >= need that divides p-1. Plane side is capped so a
// full plane fits into one ciphertext's slots.
inline u32 next_supported_dft_size(u64 p, u32 need, u32 cap = 45) {
    for (u32 m = need; m <= cap; ++m)
        if (dft_size_supported(p, m)) return m;
    throw Error(ErrorCode::Capacity, "no supported transform size >= " + std::to_string(need));
}

struct ModpFreq {
    u32 w = 0, h = 0;
    std::vector<u64> real, imag;  // elements of Z_p

    ModpFreq() = default;
    ModpFreq(u32 w_, u32 h_)
        : w(w_), h(h_), real(static_cast<size_t>(w_) * h_, 0), imag(static_cast<size_t>(w_) * h_, 0) {}
    size_t size() const { return real.size(); }
};

class PlaneTransform {
public:
    PlaneTransform(u64 p, u32 w, u32 h) : p_(p), w_(w), h_(h) {
        check(dft_size_supported(p, w) && dft_size_supported(p, h), ErrorCode::BadArgument,
              "transform size must divide p-1");
        check((p - 1) % 4 == 0, ErrorCode::BadArgument, "p must be 1 mod 4");
        u64 g = find_generator(p);
        u64 iota = pow_mod(g, (p - 1) / 4, p);
        inv2_ = inv_mod(2, p);
        u64 inv2i = inv_mod(mul_mod(2, iota, p), p);
        build_tables(pow_mod(g, (p - 1) / w, p), w, inv2i, cw_, sw_);
        build_tables(pow_mod(g, (p - 1) / h, p), h, inv2i, ch_, sh_);
        inv_wh_ = inv_mod(mul_mod(w % p, h % p, p), p);
    }

    u64 p() const { return p_; }
    u32 w() const { return w_; }
    u32 h() const { return h_; }

    // F(u,v) = sum_{x,y} z(x,y) * zeta_w^{-ux} * zeta_h^{-vy}, z a real plane in Z_p.
    ModpFreq forward(const std::vector<u64>& spatial) const {
        check(spatial.size() == size(), ErrorCode::BadArgument, "forward: size mismatch");
        // rows, then columns
        std::vector<u64> tr(size()), ti(size(), 0);
        for (u32 y = 0; y < h_; ++y)
            dft1d_real(&spatial[static_cast<size_t>(y) * w_], 1, w_, cw_, sw_,
                       &tr[static_cast<size_t>(y) * w_], &ti[static_cast<size_t>(y) * w_]);
        ModpFreq out(w_, h_);
        for (u32 u = 0; u < w_; ++u)
            dft1d_complex(&tr[u], &ti[u], w_, h_, ch_, sh_, &out.real[u], &out.imag[u], w_);
        return out;
    }

    // Real part of (1/wh) * sum_{u,v} F(u,v) * zeta_w^{+ux} * zeta_h^{+vy}.
    std::vector<u64> inverse(const ModpFreq& f) const {
        check(f.w == w_ && f.h == h_, ErrorCode::BadArgument, "inverse: size mismatch");
        std::vector<u64> tr(size()), ti(size());
        // conjugate twiddles = forward tables with negated sine
        for (u32 v = 0; v < h_; ++v)
            idft1d(&f.real[static_cast<size_t>(v) * w_], &f.imag[static_cast<size_t>(v) * w_], 1, w_,
                   cw_, sw_, &tr[static_cast<size_t>(v) * w_], &ti[static_cast<size_t>(v) * w_], 1);
        std::vector<u64> out(size());
        std::vector<u64> colr(h_), coli(h_);
        for (u32 x = 0; x < w_; ++x) {
            idft1d(&tr[x], &ti[x], w_, h_, ch_, sh_, colr.data(), coli.data(), 1);
            for (u32 y = 0; y < h_; ++y)
                out[static_cast<size_t>(y) * w_ + x] = mul_mod(colr[y], inv_wh_, p_);
        }
        return out;
    }

    size_t size() const { return static_cast<size_t>(w_) * h_; }

private:
    // cos/sin analogs of zeta^{-s} for s in [0, m)
    void build_tables(u64 omega, u32 m, u64 inv2i, std::vector<u64>& c, std::vector<u64>& s) {
        c.resize(m);
        s.resize(m);
        u64 winv = inv_mod(omega, p_);
        u64 fwd = 1, bwd = 1;  // omega^{-t}, omega^{+t}
        for (u32 t = 0; t < m; ++t) {
            c[t] = mul_mod(add_mod(fwd, bwd, p_), inv2_, p_);
            s[t] = mul_mod(sub_mod(fwd, bwd, p_), inv2i, p_);
            fwd = mul_mod(fwd, winv, p_);
            bwd = mul_mod(bwd, omega, p_);
        }
    }

    void dft1d_real(const u64* in, size_t stride, u32 m, const std::vector<u64>& c,
                    const std::vector<u64>& s, u64* outr, u64* outi) const {
        for (u32 u = 0; u < m; ++u) {
            u128 ar = 0, ai = 0;
            for (u32 t = 0; t < m; ++t) {
                u32 idx = static_cast<u32>((static_cast<u64>(u) * t) % m);
                u64 v = in[t * stride];
                ar += (u128)c[idx] * v;
                ai += (u128)s[idx] * v;
                if ((t & 15) == 15) {
                    ar %= p_;
                    ai %= p_;
                }
            }
            outr[u * stride] = static_cast<u64>(ar % p_);
            outi[u * stride] = static_cast<u64>(ai % p_);
        }
    }

    void dft1d_complex(const u64* inr, const u64* ini, size_t stride, u32 m,
                       const std::vector<u64>& c, const std::vector<u64>& s, u64* outr, u64* outi,
                       size_t out_stride) const {
        for (u32 u = 0; u < m; ++u) {
            u64 ar = 0, ai = 0;
            for (u32 t = 0; t < m; ++t) {
                u32 idx = static_cast<u32>((static_cast<u64>(u) * t) % m);
                u64 zr = inr[t * stride], zi = ini[t * stride];
                // (zr + i zi) * (c + i s)
                u64 rr = sub_mod(mul_mod(zr, c[idx], p_), mul_mod(zi, s[idx], p_), p_);
                u64 ii = add_mod(mul_mod(zr, s[idx], p_), mul_mod(zi, c[idx], p_), p_);
                ar = add_mod(ar, rr, p_);
                ai = add_mod(ai, ii, p_);
            }
            outr[u * out_stride] = ar;
            outi[u * out_stride] = ai;
        }
    }

    // Same as dft1d_complex but with conjugated twiddles (zeta^{+s}).
    void idft1d(const u64* inr, const u64* ini, size_t stride, u32 m, const std::vector<u64>& c,
                const std::vector<u64>& s, u64* outr, u64* outi, size_t out_stride) const {
        for (u32 u = 0; u < m; ++u) {
            u64 ar = 0, ai = 0;
            for (u32 t = 0; t < m; ++t) {
                u32 idx = static_cast<u32>((static_cast<u64>(u) * t) % m);
                u64 zr = inr[t * stride], zi = ini[t * stride];
                u64 cs = c[idx], sn = s[idx] == 0 ? 0 : p_ - s[idx];
                u64 rr = sub_mod(mul_mod(zr, cs, p_), mul_mod(zi, sn, p_), p_);
                u64 ii = add_mod(mul_mod(zr, sn, p_), mul_mod(zi, cs, p_), p_);
                ar = add_mod(ar, rr, p_);
                ai = add_mod(ai, ii, p_);
            }
            outr[u * out_stride] = ar;
            outi[u * out_stride] = ai;
        }
    }

    u64 p_;
    u32 w_, h_;
    u64 inv2_, inv_wh_;
    std::vector<u64> cw_, sw_, ch_, sh_;
};

}  // namespace falcon
