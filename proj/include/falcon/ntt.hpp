#pragma once

#include <vector>

#include "falcon/common.hpp"
#include "falcon/modp_dft.hpp"

namespace falcon {

// Negacyclic number-theoretic transform over Z_q, q prime with q == 1 (mod 2n).
// Merged psi-power layout (Longa-Naehrig butterflies, Shoup multiplication).
class NttTables {
public:
    NttTables(u64 q, u32 n) : q_(q), n_(n) {
        check(is_power_of_two(n), ErrorCode::BadArgument, "ntt size must be a power of two");
        check((q - 1) % (2 * static_cast<u64>(n)) == 0, ErrorCode::BadArgument,
              "modulus not NTT-friendly: q != 1 mod 2n");
        u64 g = find_generator(q);
        u64 psi = pow_mod(g, (q - 1) / (2 * static_cast<u64>(n)), q);
        u64 psi_inv = inv_mod(psi, q);
        unsigned logn = bit_length(n) - 1;
        root_.resize(n);
        root_shoup_.resize(n);
        inv_root_.resize(n);
        inv_root_shoup_.resize(n);
        for (u32 i = 0; i < n; ++i) {
            u32 r = bitrev(i, logn);
            root_[i] = pow_mod(psi, r, q);
            inv_root_[i] = pow_mod(psi_inv, r, q);
            root_shoup_[i] = shoup(root_[i]);
            inv_root_shoup_[i] = shoup(inv_root_[i]);
        }
        n_inv_ = inv_mod(n, q);
        n_inv_shoup_ = shoup(n_inv_);
    }

    u64 q() const { return q_; }
    u32 n() const { return n_; }

    // In-place forward negacyclic NTT (coefficients -> evaluation domain).
    void forward(std::vector<u64>& a) const {
        check(a.size() == n_, ErrorCode::BadArgument, "ntt: wrong length");
        u32 t = n_;
        for (u32 m = 1; m < n_; m <<= 1) {
            t >>= 1;
            for (u32 i = 0; i < m; ++i) {
                u64 w = root_[m + i], ws = root_shoup_[m + i];
                u64* lo = a.data() + static_cast<size_t>(2) * i * t;
                u64* hi = lo + t;
                for (u32 j = 0; j < t; ++j) {
                    u64 x = lo[j];
                    u64 y = mul_shoup(hi[j], w, ws);
                    lo[j] = add_mod(x, y, q_);
                    hi[j] = sub_mod(x, y, q_);
                }
            }
        }
    }

    // In-place inverse (evaluation -> coefficients), including the 1/n factor.
    void inverse(std::vector<u64>& a) const {
        check(a.size() == n_, ErrorCode::BadArgument, "intt: wrong length");
        u32 t = 1;
        for (u32 m = n_; m > 1; m >>= 1) {
            u32 h = m >> 1;
            size_t j1 = 0;
            for (u32 i = 0; i < h; ++i) {
                u64 w = inv_root_[h + i], ws = inv_root_shoup_[h + i];
                u64* lo = a.data() + j1;
                u64* hi = lo + t;
                for (u32 j = 0; j < t; ++j) {
                    u64 x = lo[j], y = hi[j];
                    lo[j] = add_mod(x, y, q_);
                    hi[j] = mul_shoup(sub_mod(x, y, q_), w, ws);
                }
                j1 += static_cast<size_t>(2) * t;
            }
            t <<= 1;
        }
        for (u32 i = 0; i < n_; ++i) a[i] = mul_shoup(a[i], n_inv_, n_inv_shoup_);
    }

    // c = a * b mod (X^n + 1, q); all in coefficient domain.
    std::vector<u64> negacyclic_mul(std::vector<u64> a, std::vector<u64> b) const {
        forward(a);
        forward(b);
        for (u32 i = 0; i < n_; ++i) a[i] = mul_mod(a[i], b[i], q_);
        inverse(a);
        return a;
    }

private:
    static u32 bitrev(u32 x, unsigned bits) {
        u32 r = 0;
        for (unsigned i = 0; i < bits; ++i) r |= ((x >> i) & 1) << (bits - 1 - i);
        return r;
    }

    u64 shoup(u64 w) const { return static_cast<u64>(((u128)w << 64) / q_); }

    u64 mul_shoup(u64 a, u64 w, u64 ws) const {
        u64 hi = static_cast<u64>(((u128)a * ws) >> 64);
        u64 r = a * w - hi * q_;
        return r >= q_ ? r - q_ : r;
    }

    u64 q_;
    u32 n_;
    u64 n_inv_, n_inv_shoup_;
    std::vector<u64> root_, root_shoup_, inv_root_, inv_root_shoup_;
};

}  // namespace falcon
