#pragma once

#include <cmath>
#include <optional>

#include "falcon/circuit.hpp"
#include "falcon/fixed_point.hpp"

namespace falcon {

// Division- and exponentiation-free softmax: drop every class whose logit
// falls more than m below the maximum, renormalize exponents into [0, m]
// shared mod (m+1), and evaluate the bounded-denominator sum in a garbled
// circuit. m is chosen so the dropped mass changes p_t by at most 10^-l.

struct SoftmaxConfig {
    u32 K = 2;
    u32 l = 2;                    // target error 10^-l
    u32 m = 0;                    // 0 = derive from (l, K)
    unsigned exp_frac_bits = 20;
    unsigned logit_frac_bits = 0;  // renormalization thresholds on integer logits
};

// Raw bound from the accuracy theorem: ln((10^l - 1)(K - 1)).
inline double raw_threshold_bound(u32 l, u32 K) {
    check(l >= 1, ErrorCode::BadArgument, "accuracy exponent l must be >= 1");
    check(K >= 2, ErrorCode::BadArgument, "class count K must be >= 2");
    return std::log((std::pow(10.0, static_cast<double>(l)) - 1.0) * (static_cast<double>(K) - 1.0));
}

// Rounded up: the bound is one-sided, so rounding up preserves it.
inline u32 threshold_m(u32 l, u32 K) {
    return static_cast<u32>(std::ceil(raw_threshold_bound(l, K)));
}

// Integer bits of e^m (the paper-facing count: e.g. e^12 needs 18 bits).
inline unsigned exponent_int_bits(u32 m) {
    u64 v = static_cast<u64>(std::floor(std::exp(static_cast<double>(m))));
    return std::max(1u, bit_length(v));
}

// Circuit word size for one exponential: integer bits + fraction + headroom.
inline unsigned exponent_bit_width(u32 m, unsigned exp_frac_bits) {
    return exponent_int_bits(m) + exp_frac_bits + 1;
}

// round(e^v * 2^exp_frac_bits) for a renormalized share value v in [0, m].
inline u64 local_exp(u64 share, unsigned exp_frac_bits) {
    double v = std::exp(static_cast<double>(share)) * std::exp2(static_cast<double>(exp_frac_bits));
    return static_cast<u64>(std::llround(v));
}

// ---- reference oracle ----

struct BoundCase {
    double T0 = 0, T1 = 0, T2 = 0;  // e^{x_t}, kept non-target mass, dropped mass
    u32 s1 = 0, s2 = 0;             // term counts, s1 + s2 = K - 1
};

struct SoftmaxOracleResult {
    u32 t = 0;             // argmax, lowest index on ties
    double p_exact = 0;    // full softmax probability of class t
    double p_approx = 0;   // probability with the drop rule applied
    double gap = 0;        // |p_exact - p_approx|
    double denominator_scaled = 0;  // sum of e^{m - (x_t - x_k)} over kept classes
    BoundCase bound;
};

inline SoftmaxOracleResult softmax_oracle(const std::vector<double>& logits, u32 l,
                                          std::optional<u32> m_override = std::nullopt) {
    check(logits.size() >= 2, ErrorCode::BadArgument, "need at least two logits");
    const u32 K = static_cast<u32>(logits.size());
    const u32 m = m_override ? *m_override : threshold_m(l, K);
    SoftmaxOracleResult r;
    for (u32 k = 1; k < K; ++k)
        if (logits[k] > logits[r.t]) r.t = k;
    const double xt = logits[r.t];
    double full = 0, kept = 0;
    for (u32 k = 0; k < K; ++k) {
        double e = std::exp(logits[k] - xt);  // stable: relative to the max
        full += e;
        bool keep = xt - logits[k] <= static_cast<double>(m);
        if (keep) {
            kept += e;
            if (k != r.t) {
                r.bound.T1 += e;
                r.bound.s1++;
            }
        } else {
            r.bound.T2 += e;
            r.bound.s2++;
        }
    }
    r.bound.T0 = 1.0;  // e^{x_t - x_t}
    r.p_exact = 1.0 / full;
    r.p_approx = 1.0 / kept;
    r.gap = std::abs(r.p_exact - r.p_approx);
    r.denominator_scaled = kept * std::exp(static_cast<double>(m));
    return r;
}

// p_t' from the protocol outputs: numerator e^m is public.
inline double probability(u64 denominator, u32 m, unsigned exp_frac_bits) {
    check(denominator > 0, ErrorCode::BadArgument, "zero softmax denominator");
    double num = std::exp(static_cast<double>(m)) * std::exp2(static_cast<double>(exp_frac_bits));
    return num / static_cast<double>(denominator);
}

// ---- step-3 circuit: oblivious argmax + threshold renormalization ----
//
// Inputs: per class, a 32-bit additive logit share from each party (values
// mod p at scale 2^{2*frac_bits}), the server's fresh randomness r'_k mod
// (m+1) and a flag mask bit. The client learns the argmax index t, its share
// (x'_k - r'_k) mod (m+1), and flag XOR mask; the server's share of x'_k is
// r'_k and its flag share is the mask bit, both its own inputs.

struct RenormalizeCircuit {
    CircuitGraph circuit;
    u32 K = 0, m = 0;
    unsigned share_width = 0;
    // input order: per class: client share (Evaluator), server share (Garbler),
    // then per class: server r' (Garbler), server mask bit (Garbler)
    // output order (all Evaluator): t, then per class: share, flag
};

inline RenormalizeCircuit argmax_renormalize_circuit(u32 K, u64 p, u32 m, unsigned frac_bits,
                                                     unsigned logit_frac_bits = 0) {
    check(K >= 2, ErrorCode::BadArgument, "K must be >= 2");
    check(logit_frac_bits == 0, ErrorCode::BadArgument,
          "renormalization thresholds on integer logits (logit_frac_bits must be 0)");
    check(p < (u64(1) << 31), ErrorCode::Capacity, "p exceeds the 32-bit circuit word");
    RenormalizeCircuit rc;
    rc.K = K;
    rc.m = m;
    const u32 W = 32;
    const unsigned shift = 2 * frac_bits;  // logits arrive at scale 2^{2 fb}
    CircuitGraph& c = rc.circuit;

    std::vector<u32> xc(K), xs(K), rp(K), mask(K);
    for (u32 k = 0; k < K; ++k) {
        xc[k] = c.add_input(Party::Evaluator, W, 1);
        xs[k] = c.add_input(Party::Garbler, W, 1);
    }
    const unsigned sw = bit_length(m + 1) + 1;
    rc.share_width = sw;
    for (u32 k = 0; k < K; ++k) rp[k] = c.add_input(Party::Garbler, sw, 1);
    for (u32 k = 0; k < K; ++k) mask[k] = c.add_input(Party::Garbler, 1, 1);

    // preprocess to [0, p), then bias so unsigned order matches signed order
    std::vector<u32> biased(K);
    for (u32 k = 0; k < K; ++k) {
        u32 sum = c.add(xc[k], xs[k]);
        u32 gt = c.gt(sum, c.constant(p - 1, W, 1));
        u32 red = c.mux(c.sub(sum, c.constant(p, W, 1)), sum, gt);
        u32 t = c.add(red, c.constant(p / 2, W, 1));
        u32 gt2 = c.gt(t, c.constant(p - 1, W, 1));
        biased[k] = c.mux(c.sub(t, c.constant(p, W, 1)), t, gt2);
    }

    // linear-scan argmax, strict compare keeps the lowest index on ties
    const u32 idxw = std::max(1u, bit_length(K - 1));
    u32 best = biased[0];
    u32 besti = c.constant(0, idxw, 1);
    for (u32 k = 1; k < K; ++k) {
        u32 gt = c.gt(biased[k], best);
        best = c.mux(biased[k], best, gt);
        besti = c.mux(c.constant(k, idxw, 1), besti, gt);
    }
    c.mark_output(besti, Party::Evaluator);

    for (u32 k = 0; k < K; ++k) {
        u32 d = c.sub(best, biased[k]);                  // >= 0, scale 2^{2 fb}
        u32 dint = c.shr_logical(d, shift);              // integer difference
        u32 drop = c.gt(dint, c.constant(m, W, 1));
        // x' = m - d_int for kept classes, 0 for dropped
        u32 xm = c.sub(c.constant(m, W, 1), dint);
        u32 xprime = c.mux(c.constant(0, W, 1), xm, drop);
        // share mod (m+1): (x' - r') with a conditional correction
        u32 xp = c.trunc(xprime, sw);
        u32 borrow = c.gt(rp[k], xp);
        u32 t1 = c.sub(xp, rp[k]);
        u32 t2 = c.add(t1, c.constant(m + 1, sw, 1));
        c.mark_output(c.mux(t2, t1, borrow), Party::Evaluator);
        // flag share: drop XOR mask, carried as a width-1 ADD
        c.mark_output(c.add(drop, mask[k]), Party::Evaluator);
    }
    return rc;
}

// ---- step-4 circuit: bounded denominator ----
//
// Client inputs e^{(x'_k - r'_k) mod (m+1)} and its flag share; the server
// inputs e^{r'_k mod (m+1)} and its mask bits. Per class the product is
// rescaled once; a product at or above e^{m+1} (detectable with an e^{1/2}
// margin on either side) is multiplied by the public constant e^{-(m+1)}.
// Dropped classes contribute zero. Only the client learns the sum.

struct DenominatorCircuit {
    CircuitGraph circuit;
    u32 K = 0, m = 0;
    unsigned exp_frac_bits = 0;
    unsigned input_width = 0;
    // input order: per class: client exp (Evaluator), client flag (Evaluator),
    //              server exp (Garbler), server mask (Garbler)
    // output: denominator sum (Evaluator)
};

inline DenominatorCircuit denominator_circuit(u32 K, u32 m, unsigned exp_frac_bits) {
    check(K >= 2, ErrorCode::BadArgument, "K must be >= 2");
    DenominatorCircuit dc;
    dc.K = K;
    dc.m = m;
    dc.exp_frac_bits = exp_frac_bits;
    const unsigned W = exponent_bit_width(m, exp_frac_bits);
    dc.input_width = W;
    const unsigned Wp = 2 * W;
    check(Wp <= 64, ErrorCode::Capacity,
          "width overflow: exponential products need " + std::to_string(Wp) +
              " bits; lower exp_frac_bits or the accuracy target");
    const unsigned Wsum = exponent_int_bits(m + 1) + exp_frac_bits + bit_length(K) + 1;
    check(Wsum <= Wp, ErrorCode::Capacity, "width overflow in the denominator sum");

    const double scale = std::exp2(static_cast<double>(exp_frac_bits));
    const u64 wrap_threshold =
        static_cast<u64>(std::llround(std::exp(static_cast<double>(m) + 0.5) * scale));
    // The correction constant e^{-(m+1)} is tiny; store it at extended
    // precision so the corrected term keeps ~exp_frac_bits significant bits.
    // The extra shift is bounded so u * const still fits the product width.
    const unsigned u_bits = static_cast<unsigned>(
                                std::ceil(2.0 * m / std::log(2.0))) + exp_frac_bits + 1;
    unsigned extra = exponent_int_bits(m + 1);
    auto const_at = [&](unsigned e) {
        return static_cast<u64>(std::llround(std::exp(-(static_cast<double>(m) + 1.0)) *
                                             std::exp2(static_cast<double>(exp_frac_bits + e))));
    };
    while (extra > 0 && u_bits + bit_length(const_at(extra)) > Wp) --extra;
    const u64 unwrap_const = const_at(extra);
    check(bit_length(unwrap_const) + 2 >= exp_frac_bits, ErrorCode::Capacity,
          "width overflow: wraparound correction cannot keep enough precision");
    const unsigned unwrap_shift = exp_frac_bits + extra;

    CircuitGraph& c = dc.circuit;
    std::vector<u32> ea(K), fa(K), eb(K), mb(K);
    for (u32 k = 0; k < K; ++k) {
        ea[k] = c.add_input(Party::Evaluator, W, 1);
        fa[k] = c.add_input(Party::Evaluator, 1, 1);
        eb[k] = c.add_input(Party::Garbler, W, 1);
        mb[k] = c.add_input(Party::Garbler, 1, 1);
    }
    u32 acc = c.constant(0, Wp, 1);
    for (u32 k = 0; k < K; ++k) {
        u32 prod = c.mul(c.zext(ea[k], Wp), c.zext(eb[k], Wp));
        u32 u = c.shr_logical(prod, exp_frac_bits);
        u32 wrap = c.gt(u, c.constant(wrap_threshold, Wp, 1));
        u32 corr = c.shr_logical(c.mul(u, c.constant(unwrap_const, Wp, 1)), unwrap_shift);
        u32 val = c.mux(corr, u, wrap);
        u32 flag = c.add(fa[k], mb[k]);  // XOR of the two flag shares
        u32 kept = c.mux(c.constant(0, Wp, 1), val, flag);
        acc = c.add(acc, kept);
    }
    c.mark_output(acc, Party::Evaluator);
    return dc;
}

}  // namespace falcon
