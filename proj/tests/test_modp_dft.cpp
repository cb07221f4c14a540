#include <catch2/catch_amalgamated.hpp>

#include "falcon/fixed_point.hpp"
#include "falcon/modp_dft.hpp"
#include "falcon/rng.hpp"

using namespace falcon;

namespace {
constexpr u64 P = kDefaultPlainModulus;

std::vector<u64> random_spatial(size_t n, Rng& rng) {
    std::vector<u64> v(n);
    for (auto& x : v) x = rng.uniform(P);
    return v;
}

std::vector<u64> circ_conv_mod_p(const std::vector<u64>& x, const std::vector<u64>& f, u32 w, u32 h) {
    std::vector<u64> out(x.size(), 0);
    for (u32 v = 0; v < h; ++v)
        for (u32 u = 0; u < w; ++u) {
            u64 acc = 0;
            for (u32 b = 0; b < h; ++b)
                for (u32 a = 0; a < w; ++a) {
                    u32 fu = (u + w - a % w) % w, fv = (v + h - b % h) % h;
                    acc = add_mod(acc, mul_mod(x[(size_t)b * w + a], f[(size_t)fv * w + fu], P), P);
                }
            out[(size_t)v * w + u] = acc;
        }
    return out;
}
}  // namespace

TEST_CASE("supported sizes divide p-1") {
    CHECK(dft_size_supported(P, 8));
    CHECK(dft_size_supported(P, 10));
    CHECK(dft_size_supported(P, 16));
    CHECK(dft_size_supported(P, 20));
    CHECK(dft_size_supported(P, 32));
    CHECK(dft_size_supported(P, 40));
    CHECK_FALSE(dft_size_supported(P, 18));
    CHECK_FALSE(dft_size_supported(P, 12));
    CHECK(next_supported_dft_size(P, 10) == 10);
    CHECK(next_supported_dft_size(P, 18) == 20);
    CHECK(next_supported_dft_size(P, 33) == 40);
}

TEST_CASE("exact roundtrip mod p") {
    Rng rng(seed_from_u64(11));
    for (u32 s : {8u, 10u, 16u, 20u}) {
        PlaneTransform t(P, s, s);
        auto x = random_spatial((size_t)s * s, rng);
        auto f = t.forward(x);
        CHECK(t.inverse(f) == x);
    }
}

TEST_CASE("transform of an impulse is the all-ones frequency plane") {
    PlaneTransform t(P, 8, 8);
    std::vector<u64> x(64, 0);
    x[0] = 1;
    auto f = t.forward(x);
    for (u64 v : f.real) CHECK(v == 1);
    for (u64 v : f.imag) CHECK(v == 0);
}

TEST_CASE("exact linearity mod p") {
    Rng rng(seed_from_u64(12));
    PlaneTransform t(P, 10, 10);
    auto x = random_spatial(100, rng), y = random_spatial(100, rng);
    std::vector<u64> s(100);
    for (size_t i = 0; i < 100; ++i) s[i] = add_mod(x[i], y[i], P);
    auto fx = t.forward(x), fy = t.forward(y), fs = t.forward(s);
    for (size_t i = 0; i < 100; ++i) {
        CHECK(add_mod(fx.real[i], fy.real[i], P) == fs.real[i]);
        CHECK(add_mod(fx.imag[i], fy.imag[i], P) == fs.imag[i]);
    }
}

TEST_CASE("exact convolution theorem mod p") {
    Rng rng(seed_from_u64(13));
    for (u32 s : {8u, 10u}) {
        PlaneTransform t(P, s, s);
        auto x = random_spatial((size_t)s * s, rng);
        auto f = random_spatial((size_t)s * s, rng);
        auto fx = t.forward(x), ff = t.forward(f);
        ModpFreq prod(s, s);
        for (size_t i = 0; i < prod.size(); ++i) {
            prod.real[i] = sub_mod(mul_mod(fx.real[i], ff.real[i], P),
                                   mul_mod(fx.imag[i], ff.imag[i], P), P);
            prod.imag[i] = add_mod(mul_mod(fx.real[i], ff.imag[i], P),
                                   mul_mod(fx.imag[i], ff.real[i], P), P);
        }
        CHECK(t.inverse(prod) == circ_conv_mod_p(x, f, s, s));
    }
}

TEST_CASE("masking in the frequency domain cancels exactly") {
    Rng rng(seed_from_u64(14));
    PlaneTransform t(P, 10, 10);
    auto y = random_spatial(100, rng);
    auto r = random_spatial(100, rng);
    auto fy = t.forward(y), fr = t.forward(r);
    ModpFreq masked(10, 10);
    for (size_t i = 0; i < masked.size(); ++i) {
        masked.real[i] = sub_mod(fy.real[i], fr.real[i], P);
        masked.imag[i] = sub_mod(fy.imag[i], fr.imag[i], P);
    }
    auto client_share = t.inverse(masked);  // y - r mod p, exactly
    for (size_t i = 0; i < 100; ++i)
        CHECK(add_mod(client_share[i], r[i], P) == y[i]);
}
