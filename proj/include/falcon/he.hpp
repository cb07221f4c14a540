#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "falcon/common.hpp"
#include "falcon/fixed_point.hpp"
#include "falcon/ntt.hpp"
#include "falcon/rng.hpp"

namespace falcon {

// Scale-invariant lattice scheme over Z_q[X]/(X^n+1) providing exactly the two
// operations the protocol needs: slotwise ciphertext addition and slotwise
// plaintext multiplication. No relinearization or rotation keys exist; nothing
// here ever multiplies two ciphertexts or rotates slots.
//
// The ciphertext modulus is a product of one or two word-sized NTT-friendly
// primes. A single 60-bit modulus cannot absorb a multiply by a full-range
// mod-p plaintext (error ~ sqrt(n)*p*B_fresh plus the carry term), so the
// default uses a 45+51-bit pair whose product has a small centered residue
// mod p, keeping the carry term far below the decryption budget.

inline constexpr u64 kDefaultQ1 = 35184372121601;     // 45-bit, == 1 mod 4096
inline constexpr u64 kDefaultQ2 = 2251799833772033;   // 51-bit, == 1 mod 4096
inline constexpr u64 kPaperQ = 1152921504382476289;   // 60-bit single modulus

struct HEParams {
    u32 n = 2048;
    u64 p = kDefaultPlainModulus;
    std::vector<u64> qs = {kDefaultQ1, kDefaultQ2};
    unsigned cbd_eta = 20;  // sigma = sqrt(eta/2) ~ 3.2

    u128 q() const {
        u128 q = 1;
        for (u64 qi : qs) q *= qi;
        return q;
    }

    void validate() const {
        check(is_power_of_two(n), ErrorCode::BadArgument, "n must be a power of two");
        check(p % 2 == 1, ErrorCode::BadArgument, "p must be odd");
        check(p % (2 * static_cast<u64>(n)) == 1, ErrorCode::BadArgument, "p must be 1 mod 2n");
        check(!qs.empty() && qs.size() <= 2, ErrorCode::BadArgument, "one or two q limbs supported");
        for (u64 qi : qs)
            check(qi > p && qi % (2 * static_cast<u64>(n)) == 1, ErrorCode::BadArgument,
                  "each q limb must exceed p and be 1 mod 2n");
        check(cbd_eta >= 2 && cbd_eta <= 64, ErrorCode::BadArgument, "bad noise width");
    }

    Seed32 hash() const {
        std::vector<u8> buf;
        put_u32(buf, n);
        put_u64(buf, p);
        put_u32(buf, static_cast<u32>(qs.size()));
        for (u64 qi : qs) put_u64(buf, qi);
        put_u32(buf, cbd_eta);
        return sha256(buf);
    }

    bool operator==(const HEParams& o) const {
        return n == o.n && p == o.p && qs == o.qs && cbd_eta == o.cbd_eta;
    }
};

// One ring element, stored per-limb in coefficient domain.
struct RnsPoly {
    std::vector<std::vector<u64>> limbs;

    static RnsPoly zero(const HEParams& pr) {
        RnsPoly x;
        for (size_t i = 0; i < pr.qs.size(); ++i) x.limbs.emplace_back(pr.n, 0);
        return x;
    }
};

struct SecretKey {
    std::vector<i64> s;  // ternary coefficients
};

struct PublicKey {
    RnsPoly b, a;  // b = -(a*s + e)
};

struct KeyPair {
    SecretKey secret;
    PublicKey pub;
};

struct PackedPlaintext {
    std::vector<u64> slots;  // length n, entries in [0, p)
};

struct PackedCiphertext {
    RnsPoly c0, c1;
    double noise_bits = 0.0;  // running estimate, advisory
};

struct HeOpCounter {
    u64 adds_ct = 0;
    u64 adds_pt = 0;
    u64 mults_pt = 0;
    u64 rotations = 0;  // structurally never incremented
    u64 encryptions = 0;

    HeOpCounter& operator+=(const HeOpCounter& o) {
        adds_ct += o.adds_ct;
        adds_pt += o.adds_pt;
        mults_pt += o.mults_pt;
        rotations += o.rotations;
        encryptions += o.encryptions;
        return *this;
    }
};

class HeContext {
public:
    explicit HeContext(HEParams params = HEParams{}) : params_(std::move(params)) {
        params_.validate();
        for (u64 qi : params_.qs) ntt_q_.push_back(std::make_shared<NttTables>(qi, params_.n));
        ntt_p_ = std::make_shared<NttTables>(params_.p, params_.n);
        // Delta = round(q/p); centering minimizes the carry term |q - Delta*p|.
        u128 q = params_.q();
        delta_ = (q + params_.p / 2) / params_.p;
        for (u64 qi : params_.qs) delta_mod_q_.push_back(static_cast<u64>(delta_ % qi));
        i128 resid = static_cast<i128>(q) - static_cast<i128>(delta_) * params_.p;
        centered_residue_ = resid < 0 ? static_cast<u64>(-resid) : static_cast<u64>(resid);

        if (params_.qs.size() == 2)
            q1_inv_mod_q2_ = inv_mod(params_.qs[0] % params_.qs[1], params_.qs[1]);

        fresh_bits_ = log2d(fresh_noise_bound());
        // carry term of a plaintext multiply: |q - Delta*p| * n*p/4
        kappa_bits_ = log2d(static_cast<double>(centered_residue_) + 1.0) +
                      log2d(static_cast<double>(params_.n) * params_.p / 4.0);
        budget_bits_ = log2d(static_cast<double>(q / params_.p)) - 1.0;
    }

    const HEParams& params() const { return params_; }
    double budget_bits() const { return budget_bits_; }
    HeOpCounter& counter() const { return counter_; }

    // ---- key generation ----

    KeyPair keygen(const Seed32& seed) const {
        Rng rng(seed);
        KeyPair kp;
        kp.secret.s = sample_ternary(rng);
        RnsPoly a;
        for (size_t li = 0; li < params_.qs.size(); ++li) {
            std::vector<u64> av(params_.n);
            for (auto& c : av) c = rng.uniform(params_.qs[li]);
            a.limbs.push_back(std::move(av));
        }
        std::vector<i64> e = sample_cbd(rng);
        RnsPoly as = mul_by_ternary(a, kp.secret.s);
        RnsPoly b = RnsPoly::zero(params_);
        for (size_t li = 0; li < params_.qs.size(); ++li) {
            u64 qi = params_.qs[li];
            for (u32 i = 0; i < params_.n; ++i) {
                u64 v = add_mod(as.limbs[li][i], from_signed(e[i], qi), qi);
                b.limbs[li][i] = v == 0 ? 0 : qi - v;
            }
        }
        kp.pub.a = std::move(a);
        kp.pub.b = std::move(b);
        return kp;
    }

    // ---- slot packing ----

    PackedPlaintext encode_slots(const std::vector<u64>& values) const {
        check(values.size() <= params_.n, ErrorCode::Capacity, "too many slot values");
        for (u64 v : values) check(v < params_.p, ErrorCode::BadArgument, "slot value >= p");
        PackedPlaintext pt;
        pt.slots = values;
        pt.slots.resize(params_.n, 0);
        return pt;
    }

    std::vector<u64> decode_slots(const PackedPlaintext& pt) const { return pt.slots; }

    // ---- encryption ----

    PackedCiphertext encrypt(const PackedPlaintext& pt, const PublicKey& pk, Rng& rng) const {
        counter_.encryptions++;
        std::vector<i64> u = sample_ternary(rng);
        std::vector<i64> e1 = sample_cbd(rng), e2 = sample_cbd(rng);
        std::vector<i64> mc = centered_message(pt);
        PackedCiphertext ct;
        ct.c0 = mul_by_ternary(pk.b, u);
        ct.c1 = mul_by_ternary(pk.a, u);
        for (size_t li = 0; li < params_.qs.size(); ++li) {
            u64 qi = params_.qs[li];
            for (u32 i = 0; i < params_.n; ++i) {
                u64 dm = mul_mod(delta_mod_q_[li], from_signed(mc[i], qi), qi);
                ct.c0.limbs[li][i] =
                    add_mod(add_mod(ct.c0.limbs[li][i], from_signed(e1[i], qi), qi), dm, qi);
                ct.c1.limbs[li][i] = add_mod(ct.c1.limbs[li][i], from_signed(e2[i], qi), qi);
            }
        }
        ct.noise_bits = fresh_bits_;
        return ct;
    }

    PackedPlaintext decrypt(const PackedCiphertext& ct, const SecretKey& sk) const {
        if (ct.noise_bits > budget_bits_)
            throw Error(ErrorCode::Crypto, "decryption refused: estimated noise " +
                                               std::to_string(ct.noise_bits) + " bits exceeds budget " +
                                               std::to_string(budget_bits_));
        RnsPoly c1s = mul_by_ternary(ct.c1, sk.s);
        std::vector<u64> coeffs(params_.n);
        u128 q = params_.q();
        double worst_frac = 0.0;
        for (u32 i = 0; i < params_.n; ++i) {
            u128 v = crt_lift(ct, c1s, i);
            // m = round(p*v / q), with noise fraction |p*v - m*q| / q
            u128 num = static_cast<u128>(params_.p) * v;
            u128 m = (num + q / 2) / q;
            i128 rem = static_cast<i128>(num - m * q);
            double frac = std::abs(static_cast<double>(rem)) / static_cast<double>(q);
            if (frac > worst_frac) worst_frac = frac;
            coeffs[i] = static_cast<u64>(m % params_.p);
        }
        check(worst_frac < 0.45, ErrorCode::Crypto,
              "decryption failed: noise budget exhausted (fraction " + std::to_string(worst_frac) +
                  ")");
        ntt_p_->forward(coeffs);  // coefficients -> slots
        PackedPlaintext pt;
        pt.slots = std::move(coeffs);
        return pt;
    }

    // ---- homomorphic operations ----

    PackedCiphertext simd_add_ct(const PackedCiphertext& a, const PackedCiphertext& b) const {
        counter_.adds_ct++;
        PackedCiphertext out = a;
        for (size_t li = 0; li < params_.qs.size(); ++li) {
            u64 qi = params_.qs[li];
            for (u32 i = 0; i < params_.n; ++i) {
                out.c0.limbs[li][i] = add_mod(out.c0.limbs[li][i], b.c0.limbs[li][i], qi);
                out.c1.limbs[li][i] = add_mod(out.c1.limbs[li][i], b.c1.limbs[li][i], qi);
            }
        }
        out.noise_bits = noise_sum(a.noise_bits, b.noise_bits);
        return out;
    }

    PackedCiphertext simd_add_pt(const PackedCiphertext& a, const PackedPlaintext& b) const {
        counter_.adds_pt++;
        std::vector<i64> mc = centered_message(b);
        PackedCiphertext out = a;
        for (size_t li = 0; li < params_.qs.size(); ++li) {
            u64 qi = params_.qs[li];
            for (u32 i = 0; i < params_.n; ++i) {
                u64 dm = mul_mod(delta_mod_q_[li], from_signed(mc[i], qi), qi);
                out.c0.limbs[li][i] = add_mod(out.c0.limbs[li][i], dm, qi);
            }
        }
        out.noise_bits = noise_sum(a.noise_bits, log2d(static_cast<double>(centered_residue_) + 1.0));
        return out;
    }

    PackedCiphertext simd_mul_pt(const PackedCiphertext& a, const PackedPlaintext& b) const {
        counter_.mults_pt++;
        std::vector<i64> wc = centered_message(b);
        double l1 = 1.0;
        for (i64 c : wc) l1 += std::abs(static_cast<double>(c));
        PackedCiphertext out;
        out.c0 = mul_by_signed(a.c0, wc);
        out.c1 = mul_by_signed(a.c1, wc);
        out.noise_bits = noise_sum(a.noise_bits + log2d(l1), kappa_bits_);
        if (out.noise_bits > budget_bits_)
            throw Error(ErrorCode::Crypto, "noise budget exhausted by plaintext multiply");
        return out;
    }

    PackedCiphertext rerandomize(const PackedCiphertext& a, const PublicKey& pk, Rng& rng) const {
        PackedPlaintext zero;
        zero.slots.assign(params_.n, 0);
        PackedCiphertext z = encrypt(zero, pk, rng);
        counter_.adds_ct--;  // hygiene op, not a protocol addition
        counter_.encryptions--;
        PackedCiphertext out = simd_add_ct(a, z);
        out.noise_bits = noise_sum(a.noise_bits, fresh_bits_);
        return out;
    }

    // ---- serialization: params hash || component count || coefficients ----

    std::vector<u8> serialize(const PackedCiphertext& ct) const {
        std::vector<u8> out;
        Seed32 h = params_.hash();
        out.insert(out.end(), h.begin(), h.end());
        put_u32(out, 2);
        for (const RnsPoly* c : {&ct.c0, &ct.c1})
            for (const auto& limb : c->limbs)
                for (u64 v : limb) put_u64(out, v);
        return out;
    }

    PackedCiphertext deserialize(ByteReader& r) const {
        Seed32 h = params_.hash();
        auto got = r.bytes(32);
        check(std::equal(h.begin(), h.end(), got.begin()), ErrorCode::Protocol,
              "ciphertext params hash mismatch");
        u32 comps = r.u32le();
        check(comps == 2, ErrorCode::Protocol, "unexpected ciphertext component count");
        PackedCiphertext ct;
        ct.c0 = RnsPoly::zero(params_);
        ct.c1 = RnsPoly::zero(params_);
        for (RnsPoly* c : {&ct.c0, &ct.c1})
            for (size_t li = 0; li < params_.qs.size(); ++li)
                for (u32 i = 0; i < params_.n; ++i) {
                    u64 v = r.u64le();
                    check(v < params_.qs[li], ErrorCode::Protocol, "coefficient out of range");
                    c->limbs[li][i] = v;
                }
        ct.noise_bits = fresh_bits_;  // wire ciphertexts are freshly encrypted uploads
        return ct;
    }

    std::vector<u8> serialize(const PackedPlaintext& pt) const {
        std::vector<u8> out;
        put_u32(out, static_cast<u32>(pt.slots.size()));
        for (u64 v : pt.slots) put_u64(out, v);
        return out;
    }

private:
    static double log2d(double v) { return std::log2(v); }

    // log2(2^a + 2^b)
    static double noise_sum(double a, double b) {
        double hi = std::max(a, b), lo = std::min(a, b);
        return hi + std::log2(1.0 + std::exp2(lo - hi));
    }

    double fresh_noise_bound() const {
        double sigma = std::sqrt(params_.cbd_eta / 2.0);
        return 6.0 * sigma * std::sqrt(1.0 + 4.0 * params_.n / 3.0);
    }

    std::vector<i64> sample_ternary(Rng& rng) const {
        std::vector<i64> v(params_.n);
        for (auto& x : v) x = rng.uniform_i64(-1, 1);
        return v;
    }

    std::vector<i64> sample_cbd(Rng& rng) const {
        std::vector<i64> v(params_.n);
        for (auto& x : v) x = rng.centered_binomial(params_.cbd_eta);
        return v;
    }

    // slots -> centered coefficient vector over Z
    std::vector<i64> centered_message(const PackedPlaintext& pt) const {
        check(pt.slots.size() == params_.n, ErrorCode::BadArgument, "plaintext has wrong slot count");
        std::vector<u64> coeffs = pt.slots;
        ntt_p_->inverse(coeffs);  // slots -> coefficients
        std::vector<i64> mc(params_.n);
        for (u32 i = 0; i < params_.n; ++i) mc[i] = signed_lift(coeffs[i], params_.p);
        return mc;
    }

    RnsPoly mul_by_ternary(const RnsPoly& a, const std::vector<i64>& t) const {
        return mul_by_signed(a, t);
    }

    RnsPoly mul_by_signed(const RnsPoly& a, const std::vector<i64>& w) const {
        RnsPoly out = RnsPoly::zero(params_);
        for (size_t li = 0; li < params_.qs.size(); ++li) {
            u64 qi = params_.qs[li];
            std::vector<u64> wq(params_.n);
            for (u32 i = 0; i < params_.n; ++i) wq[i] = from_signed(w[i], qi);
            out.limbs[li] = ntt_q_[li]->negacyclic_mul(a.limbs[li], std::move(wq));
        }
        return out;
    }

    u128 crt_lift(const PackedCiphertext& ct, const RnsPoly& c1s, u32 i) const {
        if (params_.qs.size() == 1) {
            u64 q0 = params_.qs[0];
            return add_mod(ct.c0.limbs[0][i], c1s.limbs[0][i], q0);
        }
        u64 q1 = params_.qs[0], q2 = params_.qs[1];
        u64 v1 = add_mod(ct.c0.limbs[0][i], c1s.limbs[0][i], q1);
        u64 v2 = add_mod(ct.c0.limbs[1][i], c1s.limbs[1][i], q2);
        // v = v1 + q1 * ((v2 - v1) * q1^{-1} mod q2)
        u64 diff = sub_mod(v2 % q2, v1 % q2, q2);
        u64 t = mul_mod(diff, q1_inv_mod_q2_, q2);
        return static_cast<u128>(v1) + static_cast<u128>(q1) * t;
    }

    HEParams params_;
    std::vector<std::shared_ptr<NttTables>> ntt_q_;
    std::shared_ptr<NttTables> ntt_p_;
    u128 delta_ = 0;
    std::vector<u64> delta_mod_q_;
    u64 centered_residue_ = 0;
    u64 q1_inv_mod_q2_ = 0;
    double fresh_bits_ = 0, kappa_bits_ = 0, budget_bits_ = 0;
    mutable HeOpCounter counter_;
};

}  // namespace falcon
