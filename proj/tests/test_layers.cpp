#include <catch2/catch_amalgamated.hpp>

#include "falcon/layers.hpp"
#include "falcon/reference.hpp"

using namespace falcon;

namespace {
constexpr u64 P = kDefaultPlainModulus;

const HeContext& ctx() {
    static HeContext c{HEParams{}};
    return c;
}

std::vector<u64> random_tensor(size_t n, Rng& rng) {
    std::vector<u64> v(n);
    for (auto& x : v) x = rng.uniform(P);
    return v;
}

std::vector<u64> random_small_tensor(size_t n, Rng& rng, unsigned frac_bits) {
    // fixed-point values in roughly [-1, 1]
    std::vector<u64> v(n);
    i64 lim = i64(1) << frac_bits;
    for (auto& x : v) x = from_signed(rng.uniform_i64(-lim, lim), P);
    return v;
}

std::vector<u64> reconstruct(const std::vector<u64>& a, const std::vector<u64>& b) {
    std::vector<u64> out(a.size());
    for (size_t i = 0; i < a.size(); ++i) out[i] = add_mod(a[i], b[i], P);
    return out;
}
}  // namespace

TEST_CASE("packing arithmetic") {
    auto pack = PackingDescriptor::make(16, 16, 128, 2048);
    CHECK(pack.group_size == 8);
    CHECK(pack.group_count == 16);
    CHECK(pack.ciphertext_count() == 32);  // 2 * ceil(16*16*128 / 2048)

    auto small = PackingDescriptor::make(10, 10, 1, 2048);
    CHECK(small.group_size == 20);
    CHECK(small.group_count == 1);
    CHECK(small.ciphertext_count() == 2);

    CHECK_THROWS_AS(PackingDescriptor::make(64, 64, 1, 2048), Error);  // plane > slots
}

TEST_CASE("conv plan geometry") {
    auto plan = make_conv_plan(Shape{8, 8, 1}, 3, 3, 2, false, P);
    CHECK(plan.sw == 10);  // 8 + 3 - 1 = 10 divides p-1
    CHECK(plan.sh == 10);
    CHECK(plan.out == Shape{8, 8, 2});
    CHECK(plan.c0 == 1);

    auto plan16 = make_conv_plan(Shape{16, 16, 4}, 3, 3, 2, false, P);
    CHECK(plan16.sw == 20);  // 18 unsupported, next is 20

    auto fc = fc_to_conv(Shape{2, 2, 1}, 4, 3, P);
    CHECK(fc.out == Shape{1, 1, 3});
    CHECK(fc.f_w == 2);
    CHECK(fc.full_cover);
    CHECK_THROWS_AS(fc_to_conv(Shape{2, 2, 1}, 5, 3, P), Error);
}

TEST_CASE("secure convolution reconstructs the integer oracle exactly") {
    auto kp = ctx().keygen(seed_from_u64(300));
    Rng rng(seed_from_u64(301));
    const unsigned fb = 8;

    for (int trial = 0; trial < 3; ++trial) {
        Shape in{4, 4, 3};
        u32 k = 2;
        LayerSpec l{};
        l.kind = LayerKind::Conv;
        l.f_w = 3;
        l.f_h = 3;
        l.k = k;
        QuantizedLayer ql;
        for (size_t i = 0; i < static_cast<size_t>(k) * in.c * 9; ++i)
            ql.weights.push_back(rng.uniform_i64(-256, 256));

        auto plan = make_conv_plan(in, l.f_w, l.f_h, k, false, P);
        PlaneTransform tf(P, plan.sw, plan.sh);
        auto ft = make_filter_transforms(plan, ql.weights, {}, P, tf);

        auto x = random_small_tensor(in.count(), rng, fb);
        auto ect = encrypt_tensor_for_conv(ctx(), kp.pub, rng, x, plan, tf);
        CHECK(ect.pack.ciphertext_count() == 2);  // 4*4*3 = 48 slots packed together

        auto srv = conv_server(ctx(), kp.pub, rng, ect, ft, tf, fb);
        auto client_share = conv_client_combine(ctx(), kp.secret, srv, ect.pack, plan, tf);

        auto got = reconstruct(client_share, srv.server_share);
        auto want = linear_layer_raw(x, in, ql, l, P, fb);
        CHECK(got == want);
    }
}

TEST_CASE("identity filter convolution decrypts to the input") {
    auto kp = ctx().keygen(seed_from_u64(302));
    Rng rng(seed_from_u64(303));
    Shape in{4, 4, 1};
    LayerSpec l{};
    l.kind = LayerKind::Conv;
    l.f_w = 1;
    l.f_h = 1;
    l.k = 1;
    QuantizedLayer ql;
    ql.weights = {1};  // impulse: output = input (at the raw combined scale)

    auto plan = make_conv_plan(in, 1, 1, 1, false, P);
    PlaneTransform tf(P, plan.sw, plan.sh);
    auto ft = make_filter_transforms(plan, ql.weights, {}, P, tf);
    auto x = random_tensor(in.count(), rng);
    auto ect = encrypt_tensor_for_conv(ctx(), kp.pub, rng, x, plan, tf);
    auto srv = conv_server(ctx(), kp.pub, rng, ect, ft, tf, 8);
    auto got = reconstruct(conv_client_combine(ctx(), kp.secret, srv, ect.pack, plan, tf),
                           srv.server_share);
    CHECK(got == x);
}

TEST_CASE("simple-case operation counts are fixed to 4 multiplies and 2 additions") {
    auto kp = ctx().keygen(seed_from_u64(304));
    Rng rng(seed_from_u64(305));
    Shape in{8, 8, 1};
    QuantizedLayer ql;
    for (int i = 0; i < 9; ++i) ql.weights.push_back(rng.uniform_i64(-100, 100));
    auto plan = make_conv_plan(in, 3, 3, 1, false, P);
    PlaneTransform tf(P, plan.sw, plan.sh);
    auto ft = make_filter_transforms(plan, ql.weights, {}, P, tf);
    auto x = random_small_tensor(in.count(), rng, 8);
    auto ect = encrypt_tensor_for_conv(ctx(), kp.pub, rng, x, plan, tf);
    auto srv = conv_server(ctx(), kp.pub, rng, ect, ft, tf, 8);
    CHECK(srv.core_mults == 4);
    CHECK(srv.core_adds == 2);
    CHECK(ctx().counter().rotations == 0);
}

TEST_CASE("general case scales counts by filters and groups") {
    auto kp = ctx().keygen(seed_from_u64(306));
    Rng rng(seed_from_u64(307));
    Shape in{4, 4, 3};
    u32 k = 2;
    QuantizedLayer ql;
    for (size_t i = 0; i < static_cast<size_t>(k) * 3 * 9; ++i)
        ql.weights.push_back(rng.uniform_i64(-50, 50));
    auto plan = make_conv_plan(in, 3, 3, k, false, P);
    PlaneTransform tf(P, plan.sw, plan.sh);
    auto ft = make_filter_transforms(plan, ql.weights, {}, P, tf);
    auto x = random_small_tensor(in.count(), rng, 8);
    auto ect = encrypt_tensor_for_conv(ctx(), kp.pub, rng, x, plan, tf);
    auto srv = conv_server(ctx(), kp.pub, rng, ect, ft, tf, 8);
    CHECK(srv.core_mults == 4ull * k * ect.pack.group_count);
    CHECK(srv.core_adds == 2ull * k * ect.pack.group_count);
}

TEST_CASE("share to ciphertext and back") {
    auto kp = ctx().keygen(seed_from_u64(308));
    Rng rng(seed_from_u64(309));
    Shape in{4, 4, 2};
    auto plan = make_conv_plan(in, 1, 1, 1, false, P);
    PlaneTransform tf(P, plan.sw, plan.sh);

    auto xc = random_tensor(in.count(), rng);
    auto xs = random_tensor(in.count(), rng);

    auto ect = encrypt_tensor_for_conv(ctx(), kp.pub, rng, xc, plan, tf);
    add_share_to_ct(ctx(), ect, xs, plan, tf);

    auto planes = ct_to_share_planes(ctx(), kp.secret, ect, tf);
    for (u32 ch = 0; ch < in.c; ++ch) {
        auto want = pad_channel_plane(reconstruct(xc, xs), in, ch, plan.sw, plan.sh);
        CHECK(planes[ch] == want);
    }
}

TEST_CASE("masking preserves reconstruction: server share r, client y - r") {
    auto kp = ctx().keygen(seed_from_u64(310));
    Rng rng(seed_from_u64(311));
    Shape in{8, 8, 1};
    auto plan = make_conv_plan(in, 1, 1, 1, false, P);
    PlaneTransform tf(P, plan.sw, plan.sh);

    auto y = random_tensor(in.count(), rng);
    auto ect = encrypt_tensor_for_conv(ctx(), kp.pub, rng, y, plan, tf);
    auto masked = shares_from_ct(ctx(), kp.pub, rng, ect, tf);
    auto client_planes = ct_to_share_planes(ctx(), kp.secret, masked.masked, tf);

    for (u32 ch = 0; ch < in.c; ++ch) {
        auto want = pad_channel_plane(y, in, ch, plan.sw, plan.sh);
        for (size_t i = 0; i < want.size(); ++i)
            CHECK(add_mod(client_planes[ch][i], masked.server_share_planes[ch][i], P) == want[i]);
    }
}

// ---- circuits ----

TEST_CASE("preprocessing circuit reduces share sums mod p") {
    auto c = preprocess_shares_circuit(1, 11);
    CHECK(c.eval({{7}, {9}})[0][0] == 5);
    CHECK(c.eval({{3}, {4}})[0][0] == 7);
    CHECK(c.eval({{0}, {0}})[0][0] == 0);
    CHECK(c.eval({{5}, {6}})[0][0] == 0);  // exact wrap to p

    auto cost = c.gate_count();
    CHECK(cost == CostReport{}.add_simd(1, 4));

    Rng rng(seed_from_u64(320));
    auto big = preprocess_shares_circuit(8, P);
    CHECK(big.gate_count() == preprocessing_cost(8));
    for (int t = 0; t < 50; ++t) {
        std::vector<u64> a(8), b(8);
        for (auto& v : a) v = rng.uniform(P);
        for (auto& v : b) v = rng.uniform(P);
        auto out = big.eval({a, b})[0];
        for (int i = 0; i < 8; ++i) CHECK(out[i] == add_mod(a[i], b[i], P));
    }
}

TEST_CASE("relu circuit clamps negatives") {
    auto c = relu_circuit(1, 11);
    CHECK(c.eval({{4}})[0][0] == 4);
    CHECK(c.eval({{7}})[0][0] == 0);  // encodes -4
    CHECK(c.eval({{5}})[0][0] == 5);  // boundary floor(p/2) treated positive
    CHECK(c.gate_count() == CostReport{}.add_simd(1, 2));
}

TEST_CASE("rescale circuit floor-shifts the signed value") {
    Rng rng(seed_from_u64(321));
    for (unsigned shift : {4u, 8u}) {
        auto c = rescale_circuit(4, P, shift, false);
        CHECK(c.gate_count() == rescale_cost(4));
        auto cb = rescale_circuit(4, P, shift, true);
        for (int t = 0; t < 100; ++t) {
            std::vector<u64> y(4);
            for (auto& v : y) v = rng.uniform(P);
            auto out = c.eval({y})[0];
            auto outb = cb.eval({y})[0];
            for (int i = 0; i < 4; ++i) {
                u64 want = rescale_mod(y[i], P, shift);
                CHECK(out[i] == want);
                CHECK(outb[i] == add_mod(want, P / 2, P));
            }
        }
    }
}

TEST_CASE("maxpool circuit selects the region maximum") {
    auto c = maxpool_circuit(4, 4);
    CHECK(c.eval({{3, 1, 4, 2}})[0][0] == 4);
    CHECK(c.eval({{6, 6, 6, 6}})[0][0] == 6);
    CHECK(c.gate_count() == CostReport{}.add_subset(1).add_simd(1, 3));

    Rng rng(seed_from_u64(322));
    auto big = maxpool_circuit(16, 4);
    for (int t = 0; t < 50; ++t) {
        std::vector<u64> x(16);
        for (auto& v : x) v = rng.uniform(P / 2);  // non-negative, post-ReLU domain
        auto out = big.eval({x})[0];
        for (int r = 0; r < 4; ++r) {
            u64 want = 0;
            for (int i = 0; i < 4; ++i) want = std::max(want, x[r * 4 + i]);
            CHECK(out[r] == want);
        }
    }
    CHECK_THROWS_AS(maxpool_circuit(16, 3), Error);
}

TEST_CASE("fused maxpool+relu handles mixed-sign regions") {
    auto c = fused_maxpool_relu_circuit_modp(2, 2, 11);
    CHECK(c.eval({{3, 9}})[0][0] == 3);  // {3, -2} -> 3 (unsigned GT would say 0)
    CHECK(c.eval({{9, 8}})[0][0] == 0);  // {-2, -3} -> clamp
    CHECK(c.eval({{5, 2}})[0][0] == 5);  // boundary value is positive

    // pipeline form carries the pinned cost: 1 Subset + (k+1) SIMD(N/k)
    auto pipe = fused_maxpool_relu_circuit(16, 4, P);
    CHECK(pipe.gate_count() == CostReport{}.add_subset(1).add_simd(4, 5));
}

TEST_CASE("fused circuit equals ReLU-then-maxpool composition") {
    Rng rng(seed_from_u64(323));
    const u32 n = 16, k = 4;
    auto fused = fused_maxpool_relu_circuit_modp(n, k, P);
    auto relu = relu_circuit(n, P);
    auto pool = maxpool_circuit(n, k);
    for (int t = 0; t < 1000; ++t) {
        std::vector<u64> x(n);
        for (auto& v : x) v = rng.uniform(P);  // mixed signs
        auto got = fused.eval({x})[0];
        auto relued = relu.eval({x})[0];
        auto want = pool.eval({relued})[0];
        CHECK(got == want);
    }
}

TEST_CASE("output resharing emits y - r to the client") {
    auto c = output_reshare_circuit(1, 11);
    // server supplies -r mod p as its input
    CHECK(c.eval({{4}, {(11 - 9) % 11}})[0][0] == 6);  // y=4, r=9 -> 6; 6+9 = 4 mod 11
    CHECK(c.eval({{4}, {0}})[0][0] == 4);              // degenerate r=0
    CHECK(c.gate_count() == reshare_cost(1));

    Rng rng(seed_from_u64(324));
    auto big = output_reshare_circuit(4, P);
    for (int t = 0; t < 250; ++t) {
        std::vector<u64> y(4), r(4), negr(4);
        for (int i = 0; i < 4; ++i) {
            y[i] = rng.uniform(P);
            r[i] = rng.uniform(P);
            negr[i] = r[i] == 0 ? 0 : P - r[i];
        }
        auto out = big.eval({y, negr})[0];
        for (int i = 0; i < 4; ++i) CHECK(add_mod(out[i], r[i], P) == y[i]);
    }
}

TEST_CASE("local mean pooling floors each party's share") {
    AdditiveShareTensor client{Shape{2, 1, 1}, {6, 2}, Party::Evaluator};
    AdditiveShareTensor server{Shape{2, 1, 1}, {4, 0}, Party::Garbler};
    auto pc = mean_pool_local(client, 2, 1, P);
    auto ps = mean_pool_local(server, 2, 1, P);
    CHECK(pc.data == std::vector<u64>{4});
    CHECK(ps.data == std::vector<u64>{2});
    CHECK(add_mod(pc.data[0], ps.data[0], P) == 6);  // mean(10, 2) = 6 exactly

    AdditiveShareTensor c2{Shape{2, 1, 1}, {3, 0}, Party::Evaluator};
    AdditiveShareTensor s2{Shape{2, 1, 1}, {1, 0}, Party::Garbler};
    auto pc2 = mean_pool_local(c2, 2, 1, P);
    auto ps2 = mean_pool_local(s2, 2, 1, P);
    CHECK(add_mod(pc2.data[0], ps2.data[0], P) == 1);  // true mean 2, one floor unit off

    AdditiveShareTensor z{Shape{2, 2, 1}, {0, 0, 0, 0}, Party::Evaluator};
    CHECK(mean_pool_local(z, 2, 2, P).data == std::vector<u64>{0});
}

TEST_CASE("symbolic layer costs match the accounting formulas") {
    LayerSpec fused{};
    fused.kind = LayerKind::FusedMaxPoolReLU;
    fused.pool_w = 2;
    fused.pool_h = 2;
    auto lc = layer_cost(fused, 64);
    CHECK(lc.cost == CostReport{}.add_subset(1).add_simd(16, 5));  // Subset + 5 SIMD(N/4)
    REQUIRE(lc.savings.has_value());
    CHECK(lc.savings->minuend == CostReport{}.add_simd(64, 2));
    CHECK(lc.savings->subtrahend == CostReport{}.add_simd(16, 2));

    LayerSpec relu{};
    relu.kind = LayerKind::ReLU;
    LayerSpec pool{};
    pool.kind = LayerKind::MaxPool;
    pool.pool_w = 2;
    pool.pool_h = 2;
    auto unfused = layer_cost(relu, 64).cost + layer_cost(pool, 64).cost;
    CHECK(unfused == CostReport{}.add_simd(64, 2).add_subset(1).add_simd(16, 3));

    CHECK(relu_savings_fraction(4) == 0.75);
}

TEST_CASE("pool flattening order groups regions contiguously") {
    auto order = pool_flatten_order(Shape{4, 2, 1}, 2, 2);
    // regions: {(0,0),(1,0),(0,1),(1,1)} then {(2,0),(3,0),(2,1),(3,1)}
    CHECK(order == std::vector<u32>{0, 1, 4, 5, 2, 3, 6, 7});
}

TEST_CASE("secure FC equals the matrix-product oracle exactly") {
    auto kp = ctx().keygen(seed_from_u64(330));
    Rng rng(seed_from_u64(331));
    Shape in{4, 4, 2};
    u32 l_o = 3;
    LayerSpec l{};
    l.kind = LayerKind::FC;
    l.l_i = static_cast<u32>(in.count());
    l.l_o = l_o;
    l.has_bias = true;
    QuantizedLayer ql;
    for (size_t i = 0; i < static_cast<size_t>(l_o) * in.count(); ++i)
        ql.weights.push_back(rng.uniform_i64(-200, 200));
    for (u32 i = 0; i < l_o; ++i) ql.bias.push_back(rng.uniform_i64(-200, 200));

    auto plan = fc_to_conv(in, l.l_i, l_o, P);
    PlaneTransform tf(P, plan.sw, plan.sh);
    auto ft = make_filter_transforms(plan, ql.weights, ql.bias, P, tf);

    auto x = random_small_tensor(in.count(), rng, 8);
    auto ect = encrypt_tensor_for_conv(ctx(), kp.pub, rng, x, plan, tf);
    auto srv = conv_server(ctx(), kp.pub, rng, ect, ft, tf, 8);
    auto got = reconstruct(conv_client_combine(ctx(), kp.secret, srv, ect.pack, plan, tf),
                           srv.server_share);
    auto want = linear_layer_raw(x, in, ql, l, P, 8);
    CHECK(got == want);
}
