#pragma once

#include "falcon/circuit.hpp"
#include "falcon/he.hpp"
#include "falcon/model.hpp"
#include "falcon/modp_dft.hpp"

namespace falcon {

// Secure linear layers: frequency-domain packed ciphertexts, pointwise
// products against precomputed filter transforms, frequency masking, and the
// ciphertext <-> additive-share translations. Non-linear layers are garbled
// circuits built from the preprocessing / rescale / ReLU / pooling pieces
// below.

struct AdditiveShareTensor {
    Shape shape;
    std::vector<u64> data;  // mod p, channel-major, row-major within a channel
    Party role = Party::Evaluator;
};

// ---- packing ----

struct PackingDescriptor {
    u32 sw = 0, sh = 0;     // transform extents (padded plane)
    u32 channels = 0;
    u32 plane_slots = 0;    // sw * sh
    u32 group_size = 0;     // channel planes per ciphertext
    u32 group_count = 0;
    u32 n = 0;

    static PackingDescriptor make(u32 sw, u32 sh, u32 channels, u32 n) {
        PackingDescriptor d;
        d.sw = sw;
        d.sh = sh;
        d.channels = channels;
        d.plane_slots = sw * sh;
        d.n = n;
        check(d.plane_slots >= 1 && d.plane_slots <= n, ErrorCode::Capacity,
              "plane does not fit the slot count");
        d.group_size = n / d.plane_slots;
        d.group_count = (channels + d.group_size - 1) / d.group_size;
        return d;
    }

    // 2 * ceil(w*h*c / n) up to slot-alignment: real and imaginary parts are
    // packed separately.
    u32 ciphertext_count() const { return 2 * group_count; }

    u32 group_of(u32 channel) const { return channel / group_size; }
    u32 slot_of(u32 channel, u32 pos) const {
        return (channel % group_size) * plane_slots + pos;
    }
    std::pair<u32, u32> group_channels(u32 g) const {
        u32 lo = g * group_size;
        return {lo, std::min(channels, lo + group_size)};
    }

    bool operator==(const PackingDescriptor& o) const {
        return sw == o.sw && sh == o.sh && channels == o.channels && n == o.n;
    }
};

struct EncryptedFreqTensor {
    PackingDescriptor pack;
    std::vector<PackedCiphertext> real_cts, imag_cts;  // one per group
};

// ---- conv geometry ----

struct ConvPlan {
    Shape in;
    u32 f_w = 0, f_h = 0, k = 0;
    bool full_cover = false;  // FC-as-conv: one valid output position
    Shape out;
    u32 sw = 0, sh = 0;  // padded transform extents (public metadata)
    u32 c0 = 0, c1 = 0;  // same-conv window offsets (row, col)
};

inline ConvPlan make_conv_plan(Shape in, u32 f_w, u32 f_h, u32 k, bool full_cover, u64 p) {
    ConvPlan pl;
    pl.in = in;
    pl.f_w = f_w;
    pl.f_h = f_h;
    pl.k = k;
    pl.full_cover = full_cover;
    pl.out = full_cover ? Shape{1, 1, k} : Shape{in.w, in.h, k};
    pl.sw = next_supported_dft_size(p, in.w + f_w - 1);
    pl.sh = next_supported_dft_size(p, in.h + f_h - 1);
    pl.c0 = full_cover ? 0 : (f_h - 1) / 2;
    pl.c1 = full_cover ? 0 : (f_w - 1) / 2;
    return pl;
}

// The FC -> Conv transformation: l_o filters covering the whole input.
inline ConvPlan fc_to_conv(Shape in, u32 l_i, u32 l_o, u64 p) {
    check(l_i == in.count(), ErrorCode::BadArgument, "fc input length mismatch with incoming shape");
    return make_conv_plan(in, in.w, in.h, l_o, true, p);
}

// ---- server-side filter transforms (setup phase) ----

struct FilterTransforms {
    ConvPlan plan;
    // flipped, padded, transformed filter planes: [filter][channel]
    std::vector<std::vector<ModpFreq>> gf;
    std::vector<i64> bias;  // quantized at 2^frac_bits; empty when absent
};

// Filters arrive as quantized weights laid out [k][c][f_h][f_w]. The plane
// template places w(dx,dy) at ((-dx) mod sw, (-dy) mod sh) so that a circular
// convolution computes a cross-correlation.
inline FilterTransforms make_filter_transforms(const ConvPlan& plan, const std::vector<i64>& weights,
                                               const std::vector<i64>& bias, u64 p,
                                               const PlaneTransform& tf) {
    check(tf.w() == plan.sw && tf.h() == plan.sh, ErrorCode::BadArgument, "transform extent mismatch");
    FilterTransforms ft;
    ft.plan = plan;
    ft.bias = bias;
    const u32 c = plan.in.c;
    check(weights.size() == static_cast<size_t>(plan.k) * c * plan.f_h * plan.f_w,
          ErrorCode::BadArgument, "filter weight count mismatch");
    for (u32 j = 0; j < plan.k; ++j) {
        std::vector<ModpFreq> per_channel;
        for (u32 i = 0; i < c; ++i) {
            std::vector<u64> plane(static_cast<size_t>(plan.sw) * plan.sh, 0);
            for (u32 dy = 0; dy < plan.f_h; ++dy)
                for (u32 dx = 0; dx < plan.f_w; ++dx) {
                    i64 wv = weights[((static_cast<size_t>(j) * c + i) * plan.f_h + dy) * plan.f_w + dx];
                    u32 px = (plan.sw - dx) % plan.sw;
                    u32 py = (plan.sh - dy) % plan.sh;
                    plane[static_cast<size_t>(py) * plan.sw + px] = from_signed(wv, p);
                }
            per_channel.push_back(tf.forward(plane));
        }
        ft.gf.push_back(std::move(per_channel));
    }
    return ft;
}

// ---- client-side encryption of a (share) tensor for a linear layer ----

inline std::vector<u64> pad_channel_plane(const std::vector<u64>& tensor, Shape s, u32 channel,
                                          u32 sw, u32 sh) {
    std::vector<u64> plane(static_cast<size_t>(sw) * sh, 0);
    for (u32 y = 0; y < s.h; ++y)
        for (u32 x = 0; x < s.w; ++x)
            plane[static_cast<size_t>(y) * sw + x] =
                tensor[(static_cast<size_t>(channel) * s.h + y) * s.w + x];
    return plane;
}

inline EncryptedFreqTensor encrypt_tensor_for_conv(const HeContext& he, const PublicKey& pk,
                                                   Rng& rng, const std::vector<u64>& tensor,
                                                   const ConvPlan& plan, const PlaneTransform& tf) {
    check(tensor.size() == plan.in.count(), ErrorCode::BadArgument, "tensor size mismatch");
    EncryptedFreqTensor out;
    out.pack = PackingDescriptor::make(plan.sw, plan.sh, plan.in.c, he.params().n);
    for (u32 g = 0; g < out.pack.group_count; ++g) {
        auto [lo, hi] = out.pack.group_channels(g);
        std::vector<u64> slots_r(he.params().n, 0), slots_i(he.params().n, 0);
        for (u32 ch = lo; ch < hi; ++ch) {
            auto plane = pad_channel_plane(tensor, plan.in, ch, plan.sw, plan.sh);
            ModpFreq f = tf.forward(plane);
            for (u32 pos = 0; pos < out.pack.plane_slots; ++pos) {
                slots_r[out.pack.slot_of(ch, pos)] = f.real[pos];
                slots_i[out.pack.slot_of(ch, pos)] = f.imag[pos];
            }
        }
        out.real_cts.push_back(he.encrypt(he.encode_slots(slots_r), pk, rng));
        out.imag_cts.push_back(he.encrypt(he.encode_slots(slots_i), pk, rng));
    }
    return out;
}

// Server homomorphically adds the transform of its own share (the
// share -> ciphertext translation for layers past the first).
inline void add_share_to_ct(const HeContext& he, EncryptedFreqTensor& ct,
                            const std::vector<u64>& server_share, const ConvPlan& plan,
                            const PlaneTransform& tf) {
    check(server_share.size() == plan.in.count(), ErrorCode::BadArgument, "share size mismatch");
    for (u32 g = 0; g < ct.pack.group_count; ++g) {
        auto [lo, hi] = ct.pack.group_channels(g);
        std::vector<u64> slots_r(he.params().n, 0), slots_i(he.params().n, 0);
        for (u32 ch = lo; ch < hi; ++ch) {
            auto plane = pad_channel_plane(server_share, plan.in, ch, plan.sw, plan.sh);
            ModpFreq f = tf.forward(plane);
            for (u32 pos = 0; pos < ct.pack.plane_slots; ++pos) {
                slots_r[ct.pack.slot_of(ch, pos)] = f.real[pos];
                slots_i[ct.pack.slot_of(ch, pos)] = f.imag[pos];
            }
        }
        ct.real_cts[g] = he.simd_add_pt(ct.real_cts[g], he.encode_slots(slots_r));
        ct.imag_cts[g] = he.simd_add_pt(ct.imag_cts[g], he.encode_slots(slots_i));
    }
}

// ---- the secure convolution ----

struct MaskRecord {
    // spatial masks, one plane per (filter, channel); consumed by one layer
    std::vector<std::vector<std::vector<u64>>> r;  // [filter][channel][plane]
};

struct ConvServerOutput {
    // masked intermediate ciphertexts, [filter][group]
    std::vector<std::vector<PackedCiphertext>> real_cts, imag_cts;
    // the server's additive share of the layer output (scale 2^{2 fb}, with
    // bias folded in), plan.out extents
    std::vector<u64> server_share;
    // operation counts for the homomorphic core (before masking)
    u64 core_mults = 0, core_adds = 0, mask_adds = 0;
};

// Extracts the valid window of a circular cross-correlation result.
inline u64 window_value(const std::vector<u64>& plane, u32 sw, u32 sh, u32 c0, u32 c1, u32 a,
                        u32 b) {
    u32 px = (a + sw - c1) % sw;
    u32 py = (b + sh - c0) % sh;
    return plane[static_cast<size_t>(py) * sw + px];
}

inline u64 window_value(const std::vector<u64>& plane, const ConvPlan& plan, u32 a, u32 b) {
    return window_value(plane, plan.sw, plan.sh, plan.c0, plan.c1, a, b);
}

// Masks are sampled during the setup phase: uniform over Z_p per element,
// one plane per (filter, channel), used for exactly one layer output.
inline MaskRecord sample_conv_masks(Rng& rng, const ConvPlan& plan, u64 p) {
    MaskRecord masks;
    masks.r.resize(plan.k);
    for (u32 j = 0; j < plan.k; ++j) {
        masks.r[j].resize(plan.in.c);
        for (u32 i = 0; i < plan.in.c; ++i) {
            auto& plane = masks.r[j][i];
            plane.resize(static_cast<size_t>(plan.sw) * plan.sh);
            for (u64& v : plane) v = rng.uniform(p);
        }
    }
    return masks;
}

// The server's share of the layer output: windowed sum of its masks, plus the
// bias at scale 2^{2 fb}. Computable entirely in setup.
inline std::vector<u64> conv_server_share_from_masks(const MaskRecord& masks,
                                                     const FilterTransforms& ft, unsigned frac_bits,
                                                     u64 p) {
    const ConvPlan& plan = ft.plan;
    std::vector<u64> share(plan.out.count());
    for (u32 j = 0; j < plan.k; ++j) {
        std::vector<u64> total(static_cast<size_t>(plan.sw) * plan.sh, 0);
        for (u32 i = 0; i < plan.in.c; ++i)
            for (size_t t = 0; t < total.size(); ++t) total[t] = add_mod(total[t], masks.r[j][i][t], p);
        u64 bias_term = 0;
        if (!ft.bias.empty())
            bias_term = mul_mod(from_signed(ft.bias[j], p), (u64(1) << frac_bits) % p, p);
        for (u32 b = 0; b < plan.out.h; ++b)
            for (u32 a = 0; a < plan.out.w; ++a)
                share[(static_cast<size_t>(j) * plan.out.h + b) * plan.out.w + a] =
                    add_mod(window_value(total, plan, a, b), bias_term, p);
    }
    return share;
}

inline ConvServerOutput conv_server_with_masks(const HeContext& he, const PublicKey& client_pk,
                                               Rng& rng, const EncryptedFreqTensor& in,
                                               const FilterTransforms& ft, const PlaneTransform& tf,
                                               const MaskRecord& masks, unsigned frac_bits) {
    const ConvPlan& plan = ft.plan;
    const u64 p = he.params().p;
    check(in.pack == PackingDescriptor::make(plan.sw, plan.sh, plan.in.c, he.params().n),
          ErrorCode::BadArgument, "packing descriptor mismatch");
    ConvServerOutput out;
    auto before = he.counter();

    for (u32 j = 0; j < plan.k; ++j) {
        std::vector<PackedCiphertext> row_r, row_i;
        for (u32 g = 0; g < in.pack.group_count; ++g) {
            auto [lo, hi] = in.pack.group_channels(g);
            std::vector<u64> gr(he.params().n, 0), gi(he.params().n, 0), gin(he.params().n, 0);
            for (u32 ch = lo; ch < hi; ++ch) {
                const ModpFreq& f = ft.gf[j][ch];
                for (u32 pos = 0; pos < in.pack.plane_slots; ++pos) {
                    u32 s = in.pack.slot_of(ch, pos);
                    gr[s] = f.real[pos];
                    gi[s] = f.imag[pos];
                    gin[s] = f.imag[pos] == 0 ? 0 : p - f.imag[pos];
                }
            }
            // [F(y)_R] = [F(x)_R] (x) F(f)_R  (+)  [F(x)_I] (x) (-F(f)_I)
            // [F(y)_I] = [F(x)_R] (x) F(f)_I  (+)  [F(x)_I] (x) F(f)_R
            PackedCiphertext pr = he.simd_add_ct(he.simd_mul_pt(in.real_cts[g], he.encode_slots(gr)),
                                                 he.simd_mul_pt(in.imag_cts[g], he.encode_slots(gin)));
            PackedCiphertext pi = he.simd_add_ct(he.simd_mul_pt(in.real_cts[g], he.encode_slots(gi)),
                                                 he.simd_mul_pt(in.imag_cts[g], he.encode_slots(gr)));
            row_r.push_back(std::move(pr));
            row_i.push_back(std::move(pi));
        }
        out.real_cts.push_back(std::move(row_r));
        out.imag_cts.push_back(std::move(row_i));
    }
    auto mid = he.counter();
    out.core_mults = mid.mults_pt - before.mults_pt;
    out.core_adds = mid.adds_ct - before.adds_ct;

    // mask: fresh encryptions of -F(r) added to every returned ciphertext
    for (u32 j = 0; j < plan.k; ++j) {
        for (u32 g = 0; g < in.pack.group_count; ++g) {
            auto [lo, hi] = in.pack.group_channels(g);
            std::vector<u64> mr(he.params().n, 0), mi(he.params().n, 0);
            for (u32 ch = lo; ch < hi; ++ch) {
                ModpFreq f = tf.forward(masks.r[j][ch]);
                for (u32 pos = 0; pos < in.pack.plane_slots; ++pos) {
                    u32 s = in.pack.slot_of(ch, pos);
                    mr[s] = f.real[pos] == 0 ? 0 : p - f.real[pos];
                    mi[s] = f.imag[pos] == 0 ? 0 : p - f.imag[pos];
                }
            }
            out.real_cts[j][g] =
                he.simd_add_ct(out.real_cts[j][g], he.encrypt(he.encode_slots(mr), client_pk, rng));
            out.imag_cts[j][g] =
                he.simd_add_ct(out.imag_cts[j][g], he.encrypt(he.encode_slots(mi), client_pk, rng));
        }
    }
    out.mask_adds = he.counter().adds_ct - mid.adds_ct;
    out.server_share = conv_server_share_from_masks(masks, ft, frac_bits, p);
    return out;
}

inline ConvServerOutput conv_server(const HeContext& he, const PublicKey& client_pk, Rng& rng,
                                    const EncryptedFreqTensor& in, const FilterTransforms& ft,
                                    const PlaneTransform& tf, unsigned frac_bits) {
    MaskRecord masks = sample_conv_masks(rng, ft.plan, he.params().p);
    return conv_server_with_masks(he, client_pk, rng, in, ft, tf, masks, frac_bits);
}

// Client side: decrypt, sum per-channel frequency products, invert, window.
// The result is the client's share of the layer output at scale 2^{2 fb}.
inline std::vector<u64> conv_client_combine(const HeContext& he, const SecretKey& sk,
                                            const ConvServerOutput& srv, const PackingDescriptor& pack,
                                            const ConvPlan& plan, const PlaneTransform& tf) {
    const u64 p = he.params().p;
    std::vector<u64> out(plan.out.count());
    for (u32 j = 0; j < plan.k; ++j) {
        ModpFreq acc(plan.sw, plan.sh);
        for (u32 g = 0; g < pack.group_count; ++g) {
            auto slots_r = he.decrypt(srv.real_cts[j][g], sk).slots;
            auto slots_i = he.decrypt(srv.imag_cts[j][g], sk).slots;
            auto [lo, hi] = pack.group_channels(g);
            for (u32 ch = lo; ch < hi; ++ch)
                for (u32 pos = 0; pos < pack.plane_slots; ++pos) {
                    acc.real[pos] = add_mod(acc.real[pos], slots_r[pack.slot_of(ch, pos)], p);
                    acc.imag[pos] = add_mod(acc.imag[pos], slots_i[pack.slot_of(ch, pos)], p);
                }
        }
        std::vector<u64> spatial = tf.inverse(acc);
        for (u32 b = 0; b < plan.out.h; ++b)
            for (u32 a = 0; a < plan.out.w; ++a)
                out[(static_cast<size_t>(j) * plan.out.h + b) * plan.out.w + a] =
                    window_value(spatial, plan, a, b);
    }
    return out;
}

// ---- ciphertext <-> share translation as standalone operations ----

struct MaskedCts {
    EncryptedFreqTensor masked;
    std::vector<std::vector<u64>> server_share_planes;  // [channel][sw*sh]
};

// Server holds [F(y)]; emits [F(y - r)] and keeps r.
inline MaskedCts shares_from_ct(const HeContext& he, const PublicKey& client_pk, Rng& rng,
                                const EncryptedFreqTensor& ct, const PlaneTransform& tf) {
    const u64 p = he.params().p;
    MaskedCts out;
    out.masked = ct;
    out.server_share_planes.resize(ct.pack.channels);
    for (u32 g = 0; g < ct.pack.group_count; ++g) {
        auto [lo, hi] = ct.pack.group_channels(g);
        std::vector<u64> mr(he.params().n, 0), mi(he.params().n, 0);
        for (u32 ch = lo; ch < hi; ++ch) {
            auto& plane = out.server_share_planes[ch];
            plane.resize(ct.pack.plane_slots);
            for (u64& v : plane) v = rng.uniform(p);
            ModpFreq f = tf.forward(plane);
            for (u32 pos = 0; pos < ct.pack.plane_slots; ++pos) {
                u32 s = ct.pack.slot_of(ch, pos);
                mr[s] = f.real[pos] == 0 ? 0 : p - f.real[pos];
                mi[s] = f.imag[pos] == 0 ? 0 : p - f.imag[pos];
            }
        }
        out.masked.real_cts[g] =
            he.simd_add_ct(out.masked.real_cts[g], he.encrypt(he.encode_slots(mr), client_pk, rng));
        out.masked.imag_cts[g] =
            he.simd_add_ct(out.masked.imag_cts[g], he.encrypt(he.encode_slots(mi), client_pk, rng));
    }
    return out;
}

// Client decrypts masked ciphertexts and inverts the transform, obtaining
// y - r mod p per channel plane.
inline std::vector<std::vector<u64>> ct_to_share_planes(const HeContext& he, const SecretKey& sk,
                                                        const EncryptedFreqTensor& ct,
                                                        const PlaneTransform& tf) {
    std::vector<std::vector<u64>> out(ct.pack.channels);
    for (u32 g = 0; g < ct.pack.group_count; ++g) {
        auto slots_r = he.decrypt(ct.real_cts[g], sk).slots;
        auto slots_i = he.decrypt(ct.imag_cts[g], sk).slots;
        auto [lo, hi] = ct.pack.group_channels(g);
        for (u32 ch = lo; ch < hi; ++ch) {
            ModpFreq f(ct.pack.sw, ct.pack.sh);
            for (u32 pos = 0; pos < ct.pack.plane_slots; ++pos) {
                f.real[pos] = slots_r[ct.pack.slot_of(ch, pos)];
                f.imag[pos] = slots_i[ct.pack.slot_of(ch, pos)];
            }
            out[ch] = tf.inverse(f);
        }
    }
    return out;
}

// ---- garbled-circuit building blocks for the non-linear layers ----

inline constexpr u32 kLayerWordBits = 32;  // ceil(log2 p) + 1

// (x_C + x_S) mod p: ADD, GT, SUB, MUX.
inline u32 build_preprocess(CircuitGraph& c, u32 xc, u32 xs, u64 p) {
    u32 n = c.simd_of(xc);
    u32 sum = c.add(xc, xs);
    u32 gt = c.gt(sum, c.constant(p - 1, kLayerWordBits, n));
    u32 dif = c.sub(sum, c.constant(p, kLayerWordBits, n));
    return c.mux(dif, sum, gt);
}

// floor(v / 2^shift) on the signed value behind the mod-p encoding.
// Emits either the mod-p encoding or the order-isomorphic biased encoding
// b = v + floor(p/2); the shifts themselves are free rewiring.
inline u32 build_rescale(CircuitGraph& c, u32 y, u64 p, unsigned shift, bool to_biased) {
    u32 n = c.simd_of(y);
    u32 gt = c.gt(y, c.constant(p / 2, kLayerWordBits, n));  // 1 = negative
    u32 pos = c.shr_logical(y, shift);
    u32 wrapped = c.sub(y, c.constant(p, kLayerWordBits, n));
    u32 neg = c.shr_arith(wrapped, shift);
    if (to_biased) {
        u32 sel = c.mux(neg, pos, gt);
        return c.add(sel, c.constant(p / 2, kLayerWordBits, n));
    }
    u32 negp = c.add(neg, c.constant(p, kLayerWordBits, n));
    return c.mux(negp, pos, gt);
}

// max(x, 0) on the mod-p encoding: GT against floor(p/2), MUX to zero.
inline u32 build_relu(CircuitGraph& c, u32 x, u64 p) {
    u32 n = c.simd_of(x);
    u32 gt = c.gt(x, c.constant(p / 2, kLayerWordBits, n));
    return c.mux(c.constant(0, kLayerWordBits, n), x, gt);
}

// max(x, bias-of-zero) on the biased encoding; same two-gate shape.
inline u32 build_relu_biased(CircuitGraph& c, u32 x, u64 p) {
    u32 n = c.simd_of(x);
    u32 gt = c.gt(x, c.constant(p / 2, kLayerWordBits, n));
    return c.mux(x, c.constant(p / 2, kLayerWordBits, n), gt);
}

// Region max: subset into k bundles then k-1 compare-select rounds.
// Values must be order-comparable unsigned (non-negative mod-p, or biased).
inline u32 build_region_max(CircuitGraph& c, u32 x, u32 k) {
    auto groups = c.subset(x, k);
    u32 res = groups[0];
    for (u32 i = 1; i < k; ++i) {
        u32 gt = c.gt(res, groups[i]);
        res = c.mux(res, groups[i], gt);
    }
    return res;
}

// (y + z) mod p where z is the server's fresh -r mod p (bias folded in when
// y is biased). Output goes to the client only; the server's share is r.
inline u32 build_reshare(CircuitGraph& c, u32 y, u32 z, u64 p) {
    return build_preprocess(c, y, z, p);
}

// ---- standalone circuits (spec operations) ----

inline CircuitGraph preprocess_shares_circuit(u32 n, u64 p) {
    check(bit_length(p) + 1 <= kLayerWordBits, ErrorCode::Capacity, "word width too small for p");
    CircuitGraph c;
    u32 xc = c.add_input(Party::Evaluator, kLayerWordBits, n);
    u32 xs = c.add_input(Party::Garbler, kLayerWordBits, n);
    c.mark_output(build_preprocess(c, xc, xs, p), Party::Evaluator);
    return c;
}

inline CircuitGraph rescale_circuit(u32 n, u64 p, unsigned shift, bool to_biased = false) {
    CircuitGraph c;
    u32 y = c.add_input(Party::Evaluator, kLayerWordBits, n);
    c.mark_output(build_rescale(c, y, p, shift, to_biased), Party::Evaluator);
    return c;
}

inline CircuitGraph relu_circuit(u32 n, u64 p) {
    CircuitGraph c;
    u32 x = c.add_input(Party::Evaluator, kLayerWordBits, n);
    c.mark_output(build_relu(c, x, p), Party::Evaluator);
    return c;
}

inline CircuitGraph maxpool_circuit(u32 n, u32 k) {
    check(k >= 1 && n % k == 0, ErrorCode::BadArgument, "pool size must divide N");
    CircuitGraph c;
    u32 x = c.add_input(Party::Evaluator, kLayerWordBits, n);
    c.mark_output(build_region_max(c, x, k), Party::Evaluator);
    return c;
}

// Pipeline form: biased input (as produced by build_rescale(to_biased)),
// biased output (un-biasing folds into the reshare constant). This is the
// form whose cost is 1 Subset + (k+1) SIMD(N/k).
inline CircuitGraph fused_maxpool_relu_circuit(u32 n, u32 k, u64 p) {
    check(k >= 1 && n % k == 0, ErrorCode::BadArgument, "pool size must divide N");
    CircuitGraph c;
    u32 x = c.add_input(Party::Evaluator, kLayerWordBits, n);
    u32 mx = build_region_max(c, x, k);
    c.mark_output(build_relu_biased(c, mx, p), Party::Evaluator);
    return c;
}

// Standalone form on the mod-p encoding ("inputs in [0,p) possibly encoding
// negatives"): bias first, then the pipeline core, then un-bias.
inline CircuitGraph fused_maxpool_relu_circuit_modp(u32 n, u32 k, u64 p) {
    check(k >= 1 && n % k == 0, ErrorCode::BadArgument, "pool size must divide N");
    CircuitGraph c;
    u32 x = c.add_input(Party::Evaluator, kLayerWordBits, n);
    u32 t = c.add(x, c.constant(p / 2, kLayerWordBits, n));
    u32 gt = c.gt(t, c.constant(p - 1, kLayerWordBits, n));
    u32 biased = c.mux(c.sub(t, c.constant(p, kLayerWordBits, n)), t, gt);
    u32 mx = build_region_max(c, biased, k);
    u32 rb = build_relu_biased(c, mx, p);
    c.mark_output(c.sub(rb, c.constant(p / 2, kLayerWordBits, c.simd_of(rb))), Party::Evaluator);
    return c;
}

inline CircuitGraph output_reshare_circuit(u32 n, u64 p) {
    CircuitGraph c;
    u32 y = c.add_input(Party::Evaluator, kLayerWordBits, n);
    u32 z = c.add_input(Party::Garbler, kLayerWordBits, n);
    c.mark_output(build_reshare(c, y, z, p), Party::Evaluator);
    return c;
}

// ---- local mean pooling on shares ----

// Each party floor-divides its own region sums in signed representation;
// reconstruction differs from the true floored mean by at most one unit.
inline AdditiveShareTensor mean_pool_local(const AdditiveShareTensor& share, u32 pool_w, u32 pool_h,
                                           u64 p) {
    const Shape& s = share.shape;
    check(pool_w >= 1 && pool_h >= 1 && s.w % pool_w == 0 && s.h % pool_h == 0,
          ErrorCode::BadArgument, "pool regions must tile the plane");
    AdditiveShareTensor out;
    out.role = share.role;
    out.shape = Shape{s.w / pool_w, s.h / pool_h, s.c};
    out.data.resize(out.shape.count());
    const i64 k = static_cast<i64>(pool_w) * pool_h;
    for (u32 ch = 0; ch < s.c; ++ch)
        for (u32 ry = 0; ry < out.shape.h; ++ry)
            for (u32 rx = 0; rx < out.shape.w; ++rx) {
                i64 sum = 0;
                for (u32 dy = 0; dy < pool_h; ++dy)
                    for (u32 dx = 0; dx < pool_w; ++dx)
                        sum += signed_lift(
                            share.data[(static_cast<size_t>(ch) * s.h + ry * pool_h + dy) * s.w +
                                       rx * pool_w + dx],
                            p);
                i64 mean = sum >= 0 ? sum / k : -((-sum + k - 1) / k);  // floor
                out.data[(static_cast<size_t>(ch) * out.shape.h + ry) * out.shape.w + rx] =
                    from_signed(mean, p);
            }
    return out;
}

// ---- pooled flattening order ----

// Elements must enter the pooling circuit region-contiguous: channel-major,
// region row-major, row-major within each region. Returns, for each position
// in that order, the flat tensor index.
inline std::vector<u32> pool_flatten_order(Shape s, u32 pool_w, u32 pool_h) {
    std::vector<u32> order;
    order.reserve(s.count());
    for (u32 ch = 0; ch < s.c; ++ch)
        for (u32 ry = 0; ry < s.h / pool_h; ++ry)
            for (u32 rx = 0; rx < s.w / pool_w; ++rx)
                for (u32 dy = 0; dy < pool_h; ++dy)
                    for (u32 dx = 0; dx < pool_w; ++dx)
                        order.push_back((ch * s.h + ry * pool_h + dy) * s.w + rx * pool_w + dx);
    return order;
}

// ---- symbolic layer costs (the paper's accounting) ----

// savings expressed as a difference of unit tallies: minuend - subtrahend
struct SavingsExpr {
    CostReport minuend, subtrahend;
    std::string to_string() const {
        return minuend.to_string() + " - " + subtrahend.to_string();
    }
};

struct LayerCost {
    CostReport cost;
    std::optional<SavingsExpr> savings;  // fused pipeline vs ReLU-then-pool
};

inline CostReport preprocessing_cost(u32 n) { return CostReport{}.add_simd(n, 4); }
inline CostReport rescale_cost(u32 n) { return CostReport{}.add_simd(n, 4); }
inline CostReport reshare_cost(u32 n) { return CostReport{}.add_simd(n, 4); }

inline LayerCost layer_cost(const LayerSpec& l, u32 n) {
    LayerCost lc;
    switch (l.kind) {
        case LayerKind::ReLU:
            lc.cost.add_simd(n, 2);
            break;
        case LayerKind::MaxPool: {
            u32 k = l.pool_w * l.pool_h;
            lc.cost.add_subset(1).add_simd(n / k, k - 1);
            break;
        }
        case LayerKind::FusedMaxPoolReLU: {
            u32 k = l.pool_w * l.pool_h;
            lc.cost.add_subset(1).add_simd(n / k, k + 1);
            SavingsExpr sav;  // 2 SIMD(N) - 2 SIMD(N/k)
            sav.minuend.add_simd(n, 2);
            sav.subtrahend.add_simd(n / k, 2);
            lc.savings = sav;
            break;
        }
        default:
            break;
    }
    return lc;
}

// Fraction of ReLU-stage SIMD units removed by fusing: 1 - 1/k.
inline double relu_savings_fraction(u32 k) { return 1.0 - 1.0 / static_cast<double>(k); }

}  // namespace falcon
