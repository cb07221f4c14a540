#include <catch2/catch_amalgamated.hpp>

#include "falcon/softmax.hpp"

using namespace falcon;

namespace {
constexpr u64 P = kDefaultPlainModulus;
}

TEST_CASE("threshold from the accuracy bound") {
    CHECK(threshold_m(3, 100) == 12);
    CHECK(raw_threshold_bound(3, 100) == Catch::Approx(11.5019).margin(0.002));
    CHECK(threshold_m(2, 10) == 7);   // ln 891 ~ 6.79
    CHECK(threshold_m(1, 2) == 3);    // ln 9 ~ 2.20
    CHECK_THROWS_AS(threshold_m(0, 10), Error);
    CHECK_THROWS_AS(threshold_m(2, 1), Error);
}

TEST_CASE("exponent bit widths") {
    CHECK(exponent_int_bits(12) == 18);  // e^12 = 162754.79 needs 18 integer bits
    CHECK(exponent_int_bits(7) == 11);
    CHECK(exponent_int_bits(0) == 1);
    CHECK(exponent_bit_width(7, 20) == 32);  // 11 + 20 + 1
    CHECK(exponent_bit_width(0, 20) == 22);  // 1 + 20 + 1
}

TEST_CASE("local exponentials") {
    const unsigned E = 20;
    CHECK(local_exp(0, E) == (u64(1) << E));
    CHECK(local_exp(7, E) == static_cast<u64>(std::llround(std::exp(7.0) * (1 << E))));
    // product property: exp(a)*exp(b)/2^E ~ exp(a+b) within a couple of units
    for (u64 a = 0; a <= 5; ++a)
        for (u64 b = 0; b <= 5; ++b) {
            u64 prod = (local_exp(a, E) * local_exp(b, E)) >> E;
            i64 diff = static_cast<i64>(prod) - static_cast<i64>(local_exp(a + b, E));
            CHECK(std::abs(diff) <= 2 + static_cast<i64>(local_exp(a + b, E) >> (E - 2)));
        }
}

TEST_CASE("softmax oracle on symmetric and closed-form cases") {
    auto equal = softmax_oracle({1.0, 1.0, 1.0, 1.0}, 2);
    CHECK(equal.p_exact == Catch::Approx(0.25));
    CHECK(equal.p_approx == Catch::Approx(0.25));
    CHECK(equal.gap == 0.0);
    CHECK(equal.t == 0);  // lowest index on ties
    CHECK(equal.bound.s2 == 0);

    // two classes, the second exactly one past the threshold
    u32 m = threshold_m(1, 2);
    auto two = softmax_oracle({0.0, -static_cast<double>(m) - 1.0}, 1);
    double e = std::exp(-static_cast<double>(m) - 1.0);
    CHECK(two.gap == Catch::Approx(e / (1.0 + e)));
    CHECK(two.gap <= 0.1);
    CHECK(two.bound.s2 == 1);
    CHECK(two.p_approx == 1.0);
}

TEST_CASE("oracle bound holds on a randomized sweep") {
    Rng rng(seed_from_u64(400));
    for (u32 l : {1u, 2u}) {
        for (u32 K : {2u, 10u}) {
            double worst = 0;
            for (int t = 0; t < 2000; ++t) {
                std::vector<double> logits(K);
                for (auto& v : logits) v = rng.uniform_real(-20.0, 120.0);
                worst = std::max(worst, softmax_oracle(logits, l).gap);
            }
            CHECK(worst <= std::pow(10.0, -static_cast<double>(l)));
        }
    }
}

TEST_CASE("probability from the denominator") {
    const unsigned E = 20;
    u32 m = 7;
    u64 den = static_cast<u64>(std::llround(std::exp(7.0) * (1 << E)));
    CHECK(probability(den, m, E) == Catch::Approx(1.0).epsilon(1e-5));
    CHECK_THROWS_AS(probability(0, m, E), Error);
}

TEST_CASE("renormalize circuit matches a plaintext renormalization oracle") {
    Rng rng(seed_from_u64(401));
    const unsigned fb = 8;
    const u32 K = 10;
    const u32 m = threshold_m(2, K);  // 7
    auto rc = argmax_renormalize_circuit(K, P, m, fb);

    for (int trial = 0; trial < 200; ++trial) {
        // logits at scale 2^{2 fb}, magnitudes within +-20 real
        std::vector<i64> logits(K);
        for (auto& v : logits) v = rng.uniform_i64(-20 * (1 << 2 * fb), 20 * (1 << 2 * fb));
        // random additive shares
        std::vector<std::vector<u64>> eval_in, garb_in;
        std::vector<u64> rprime(K), mask(K);
        std::vector<std::vector<u64>> xc(K), xs(K);
        for (u32 k = 0; k < K; ++k) {
            u64 share = rng.uniform(P);
            xs[k] = {share};
            xc[k] = {sub_mod(from_signed(logits[k], P), share, P)};
        }
        for (u32 k = 0; k < K; ++k) {
            rprime[k] = rng.uniform(m + 1);
            mask[k] = rng.uniform(2);
        }
        // input order: per class xc, xs interleaved, then r', then masks
        std::vector<std::vector<u64>> inputs;
        for (u32 k = 0; k < K; ++k) {
            inputs.push_back(xc[k]);
            inputs.push_back(xs[k]);
        }
        for (u32 k = 0; k < K; ++k) inputs.push_back({rprime[k]});
        for (u32 k = 0; k < K; ++k) inputs.push_back({mask[k]});

        auto out = rc.circuit.eval(inputs);
        // oracle
        u32 t = 0;
        for (u32 k = 1; k < K; ++k)
            if (logits[k] > logits[t]) t = k;
        CHECK(out[0][0] == t);
        for (u32 k = 0; k < K; ++k) {
            i64 dint = (logits[t] - logits[k]) >> (2 * fb);
            bool drop = dint > static_cast<i64>(m);
            u64 xprime = drop ? 0 : m - static_cast<u64>(dint);
            u64 cshare = out[1 + 2 * k][0];
            u64 flag_share = out[2 + 2 * k][0];
            CHECK((cshare + rprime[k]) % (m + 1) == xprime % (m + 1));
            CHECK((flag_share ^ mask[k]) == (drop ? 1 : 0));
        }
    }
}

TEST_CASE("renormalize circuit: all-equal logits keep every class at m") {
    const unsigned fb = 8;
    const u32 K = 4, m = threshold_m(2, K);
    auto rc = argmax_renormalize_circuit(K, P, m, fb);
    std::vector<std::vector<u64>> inputs;
    u64 v = from_signed(3 << (2 * fb), P);
    for (u32 k = 0; k < K; ++k) {
        inputs.push_back({v});
        inputs.push_back({0});
    }
    for (u32 k = 0; k < K; ++k) inputs.push_back({0});  // r' = 0
    for (u32 k = 0; k < K; ++k) inputs.push_back({0});  // masks = 0
    auto out = rc.circuit.eval(inputs);
    CHECK(out[0][0] == 0);  // tie-break to the lowest index
    for (u32 k = 0; k < K; ++k) {
        CHECK(out[1 + 2 * k][0] == m);  // x' = m, r' = 0
        CHECK(out[2 + 2 * k][0] == 0);  // kept
    }
}

TEST_CASE("renormalize circuit: a class far below the maximum is dropped") {
    const unsigned fb = 8;
    const u32 K = 2, m = threshold_m(2, K);
    auto rc = argmax_renormalize_circuit(K, P, m, fb);
    std::vector<std::vector<u64>> inputs;
    i64 top = 10 << (2 * fb);
    i64 low = top - static_cast<i64>((m + 5) << (2 * fb));
    inputs.push_back({from_signed(top, P)});
    inputs.push_back({0});
    inputs.push_back({from_signed(low, P)});
    inputs.push_back({0});
    inputs.push_back({0});
    inputs.push_back({0});
    inputs.push_back({0});
    inputs.push_back({0});
    auto out = rc.circuit.eval(inputs);
    CHECK(out[0][0] == 0);
    CHECK(out[1][0] == m);  // x'_t = m
    CHECK(out[2][0] == 0);  // kept
    CHECK(out[3][0] == 0);  // dropped share is zero
    CHECK(out[4][0] == 1);  // drop flag set
}

TEST_CASE("denominator circuit: single survivor gives e^m") {
    const unsigned E = 20;
    const u32 K = 4, m = 7;
    auto dc = denominator_circuit(K, m, E);
    std::vector<std::vector<u64>> inputs;
    for (u32 k = 0; k < K; ++k) {
        bool survivor = k == 0;
        // x' = m, r' = 0 for the survivor; others dropped (flag 1)
        inputs.push_back({local_exp(survivor ? m : 0, E)});  // client exp
        inputs.push_back({survivor ? 0u : 1u});              // client flag share
        inputs.push_back({local_exp(0, E)});                 // server exp (r' = 0)
        inputs.push_back({0});                               // server mask
    }
    auto out = dc.circuit.eval(inputs);
    CHECK(out[0][0] == local_exp(m, E));
}

TEST_CASE("denominator circuit: equal logits sum K exponentials with shares") {
    Rng rng(seed_from_u64(402));
    const unsigned E = 20;
    const u32 K = 4, m = 7;
    auto dc = denominator_circuit(K, m, E);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::vector<u64>> inputs;
        for (u32 k = 0; k < K; ++k) {
            u64 rp = rng.uniform(m + 1);
            u64 cshare = (m + (m + 1) - rp) % (m + 1);  // x' = m
            u64 mu = rng.uniform(2);
            inputs.push_back({local_exp(cshare, E)});
            inputs.push_back({mu});  // flag = 0: client share equals the mask
            inputs.push_back({local_exp(rp, E)});
            inputs.push_back({mu});
        }
        auto out = dc.circuit.eval(inputs);
        double want = 4.0 * std::exp(7.0) * std::exp2(E);
        double got = static_cast<double>(out[0][0]);
        CHECK(std::abs(got - want) / want < std::exp2(-(double)E + 3));
    }
}

TEST_CASE("denominator wraparound correction matches direct evaluation") {
    const unsigned E = 20;
    const u32 m = 7;
    auto dc = denominator_circuit(2, m, E);
    // class 0: x' = 3 via a wrapped split: c = (3 - 6) mod 8 = 5, r' = 6 -> 5+6 = 11 = 3+8
    std::vector<std::vector<u64>> inputs;
    inputs.push_back({local_exp(5, E)});
    inputs.push_back({0});
    inputs.push_back({local_exp(6, E)});
    inputs.push_back({0});
    // class 1 dropped
    inputs.push_back({local_exp(0, E)});
    inputs.push_back({1});
    inputs.push_back({local_exp(0, E)});
    inputs.push_back({0});
    auto out = dc.circuit.eval(inputs);
    double want = std::exp(3.0) * std::exp2(E);
    CHECK(std::abs(static_cast<double>(out[0][0]) - want) < want * std::exp2(-(double)E + 4));
}

TEST_CASE("denominator circuit rejects widths past 64 bits") {
    // m = 12 needs 18+20+1 = 39-bit operands; the 78-bit product overflows
    CHECK_THROWS_AS(denominator_circuit(100, 12, 20), Error);
    // lowering the fraction makes it fit
    auto dc = denominator_circuit(100, 12, 11);
    CHECK(dc.input_width == 30);
}

TEST_CASE("range confinement: denominator inputs live in [2^E, e^m * 2^E]") {
    const unsigned E = 20;
    for (u32 m : {3u, 7u}) {
        for (u64 v = 0; v <= m; ++v) {
            u64 e = local_exp(v, E);
            CHECK(e >= (u64(1) << E));
            CHECK(e <= local_exp(m, E));
        }
    }
}
