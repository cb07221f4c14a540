#pragma once

#include "falcon/model.hpp"
#include "falcon/softmax.hpp"

namespace falcon {

struct PredictionResult {
    u32 t = 0;
    double probability = 0.0;              // p_t (plain) or p_t' (secure path)
    std::vector<double> logits;            // reference engines only
};

// ---- floating-point reference engine ----

namespace detail {

inline double& at3(std::vector<double>& v, const Shape& s, u32 x, u32 y, u32 ch) {
    return v[(static_cast<size_t>(ch) * s.h + y) * s.w + x];
}

inline double get3(const std::vector<double>& v, const Shape& s, i64 x, i64 y, u32 ch) {
    if (x < 0 || y < 0 || x >= static_cast<i64>(s.w) || y >= static_cast<i64>(s.h)) return 0.0;
    return v[(static_cast<size_t>(ch) * s.h + y) * s.w + x];
}

}  // namespace detail

// Evaluates every layer in floating point: "same" zero-padded stride-1
// cross-correlation for conv, pooling regions tiling the plane with stride
// equal to the region, FC on the channel-major flattened vector.
inline PredictionResult plain_forward(const ModelDescriptor& m, const ImageF& image) {
    check(image.shape == m.input, ErrorCode::BadArgument, "image shape mismatch");
    m.shape_chain();
    std::vector<double> x = image.data;
    Shape s = m.input;
    for (const LayerSpec& l : m.layers) {
        switch (l.kind) {
            case LayerKind::Conv: {
                Shape os{s.w, s.h, l.k};
                std::vector<double> y(os.count(), 0.0);
                const u32 c0 = (l.f_h - 1) / 2, c1 = (l.f_w - 1) / 2;
                for (u32 j = 0; j < l.k; ++j)
                    for (u32 b = 0; b < s.h; ++b)
                        for (u32 a = 0; a < s.w; ++a) {
                            double acc = l.has_bias ? l.bias[j] : 0.0;
                            for (u32 i = 0; i < s.c; ++i)
                                for (u32 dy = 0; dy < l.f_h; ++dy)
                                    for (u32 dx = 0; dx < l.f_w; ++dx)
                                        acc += detail::get3(x, s, (i64)a + dx - c1, (i64)b + dy - c0, i) *
                                               l.weights[((static_cast<size_t>(j) * s.c + i) * l.f_h + dy) *
                                                             l.f_w +
                                                         dx];
                            detail::at3(y, os, a, b, j) = acc;
                        }
                x = std::move(y);
                s = os;
                break;
            }
            case LayerKind::FC: {
                std::vector<double> y(l.l_o, 0.0);
                for (u32 j = 0; j < l.l_o; ++j) {
                    double acc = l.has_bias ? l.bias[j] : 0.0;
                    for (u32 i = 0; i < l.l_i; ++i) acc += l.weights[static_cast<size_t>(j) * l.l_i + i] * x[i];
                    y[j] = acc;
                }
                x = std::move(y);
                s = Shape{1, 1, l.l_o};
                break;
            }
            case LayerKind::ReLU:
                for (double& v : x) v = std::max(v, 0.0);
                break;
            case LayerKind::MaxPool:
            case LayerKind::MeanPool:
            case LayerKind::FusedMaxPoolReLU: {
                Shape os{s.w / l.pool_w, s.h / l.pool_h, s.c};
                std::vector<double> y(os.count(), 0.0);
                for (u32 ch = 0; ch < s.c; ++ch)
                    for (u32 ry = 0; ry < os.h; ++ry)
                        for (u32 rx = 0; rx < os.w; ++rx) {
                            double acc = l.kind == LayerKind::MeanPool
                                             ? 0.0
                                             : -std::numeric_limits<double>::infinity();
                            for (u32 dy = 0; dy < l.pool_h; ++dy)
                                for (u32 dx = 0; dx < l.pool_w; ++dx) {
                                    double v = detail::get3(x, s, rx * l.pool_w + dx, ry * l.pool_h + dy, ch);
                                    if (l.kind == LayerKind::MeanPool)
                                        acc += v;
                                    else
                                        acc = std::max(acc, v);
                                }
                            if (l.kind == LayerKind::MeanPool)
                                acc /= static_cast<double>(l.pool_w) * l.pool_h;
                            if (l.kind == LayerKind::FusedMaxPoolReLU) acc = std::max(acc, 0.0);
                            detail::at3(y, os, rx, ry, ch) = acc;
                        }
                x = std::move(y);
                s = os;
                break;
            }
            case LayerKind::Softmax:
                break;  // handled below on the logits
        }
    }
    PredictionResult r;
    r.logits = x;
    for (u32 k = 1; k < x.size(); ++k)
        if (x[k] > x[r.t]) r.t = k;
    if (m.has_softmax()) {
        double sum = 0;
        for (double v : x) sum += std::exp(v - x[r.t]);
        r.probability = 1.0 / sum;
    } else {
        r.probability = 1.0;
    }
    return r;
}

// ---- bit-exact integer mirror of the secure pipeline ----
//
// State lives in Z_p at scale 2^frac_bits. Linear layers produce raw values
// at scale 2^{2 frac_bits}; the garbled stage that follows reconstructs,
// floor-shifts by frac_bits (the share rescale) and applies the non-linear
// step. Softmax consumes the raw logits and thresholds integerized
// differences. This is the comparison target for every secure-layer test.

struct FixedTrace {
    // mod-p tensor after each layer boundary the secure pipeline exposes
    std::vector<std::vector<u64>> post_layer;
    // raw (pre-rescale) output of the last linear layer, mod p, scale 2^{2 fb}
    std::vector<u64> logits_raw;
    std::vector<i64> logits_int;  // integerized as the renormalize circuit sees them
};

struct FixedResult {
    u32 t = 0;
    double probability = 0.0;  // p_t' via the drop rule on integerized logits
    FixedTrace trace;
};

namespace detail {

inline u64 get3_mod(const std::vector<u64>& v, const Shape& s, i64 x, i64 y, u32 ch) {
    if (x < 0 || y < 0 || x >= static_cast<i64>(s.w) || y >= static_cast<i64>(s.h)) return 0;
    return v[(static_cast<size_t>(ch) * s.h + y) * s.w + x];
}

}  // namespace detail

// Integer cross-correlation mod p ("same" for conv, single output for FC via
// its conv form), plus bias at scale 2^{2 fb}.
inline std::vector<u64> linear_layer_raw(const std::vector<u64>& x, const Shape& s,
                                         const QuantizedLayer& ql, const LayerSpec& l, u64 p,
                                         unsigned frac_bits) {
    if (l.kind == LayerKind::FC) {
        std::vector<u64> y(l.l_o, 0);
        for (u32 j = 0; j < l.l_o; ++j) {
            u64 acc = l.has_bias
                          ? mul_mod(from_signed(ql.bias[j], p), (u64(1) << frac_bits) % p, p)
                          : 0;
            for (u32 i = 0; i < l.l_i; ++i)
                acc = add_mod(acc, mul_mod(x[i], from_signed(ql.weights[static_cast<size_t>(j) * l.l_i + i], p), p), p);
            y[j] = acc;
        }
        return y;
    }
    Shape os{s.w, s.h, l.k};
    std::vector<u64> y(os.count(), 0);
    const u32 c0 = (l.f_h - 1) / 2, c1 = (l.f_w - 1) / 2;
    for (u32 j = 0; j < l.k; ++j)
        for (u32 b = 0; b < s.h; ++b)
            for (u32 a = 0; a < s.w; ++a) {
                u64 acc = l.has_bias
                              ? mul_mod(from_signed(ql.bias[j], p), (u64(1) << frac_bits) % p, p)
                              : 0;
                for (u32 i = 0; i < s.c; ++i)
                    for (u32 dy = 0; dy < l.f_h; ++dy)
                        for (u32 dx = 0; dx < l.f_w; ++dx) {
                            u64 xv = detail::get3_mod(x, s, (i64)a + dx - c1, (i64)b + dy - c0, i);
                            u64 wv = from_signed(
                                ql.weights[((static_cast<size_t>(j) * s.c + i) * l.f_h + dy) * l.f_w + dx], p);
                            acc = add_mod(acc, mul_mod(xv, wv, p), p);
                        }
                y[(static_cast<size_t>(j) * os.h + b) * os.w + a] = acc;
            }
    return y;
}

// floor(v / 2^s) on the signed value, re-encoded mod p (the rescale circuit).
inline u64 rescale_mod(u64 x, u64 p, unsigned s) {
    return from_signed(signed_lift(x, p) >> s, p);
}

inline FixedResult fixed_point_forward(const QuantizedModel& m, const ImageQ& image) {
    check(image.shape == m.desc.input, ErrorCode::BadArgument, "image shape mismatch");
    auto chain = m.desc.shape_chain();
    const u64 p = kDefaultPlainModulus;
    const unsigned fb = m.desc.frac_bits;

    FixedResult r;
    std::vector<u64> x;
    for (i64 v : image.data) x.push_back(from_signed(v, p));
    Shape s = m.desc.input;
    bool raw_scale = false;  // true while carrying 2^{2 fb} linear output

    auto settle = [&](std::vector<u64>& v) {
        if (!raw_scale) return;
        for (u64& e : v) e = rescale_mod(e, p, fb);
        raw_scale = false;
    };

    for (size_t li = 0; li < m.desc.layers.size(); ++li) {
        const LayerSpec& l = m.desc.layers[li];
        switch (l.kind) {
            case LayerKind::Conv:
            case LayerKind::FC: {
                check(!raw_scale, ErrorCode::BadArgument,
                      "two linear layers without a non-linear stage between them");
                x = linear_layer_raw(x, s, m.q[li], l, p, fb);
                s = chain[li];
                raw_scale = true;
                r.trace.logits_raw = x;  // last linear layer wins
                break;
            }
            case LayerKind::ReLU: {
                settle(x);
                for (u64& v : x) {
                    i64 sv = signed_lift(v, p);
                    v = sv > 0 ? v : 0;
                }
                break;
            }
            case LayerKind::MaxPool:
            case LayerKind::FusedMaxPoolReLU: {
                settle(x);
                Shape os = chain[li];
                std::vector<u64> y(os.count(), 0);
                for (u32 ch = 0; ch < s.c; ++ch)
                    for (u32 ry = 0; ry < os.h; ++ry)
                        for (u32 rx = 0; rx < os.w; ++rx) {
                            i64 best = std::numeric_limits<i64>::min();
                            for (u32 dy = 0; dy < l.pool_h; ++dy)
                                for (u32 dx = 0; dx < l.pool_w; ++dx) {
                                    u64 v = x[(static_cast<size_t>(ch) * s.h + ry * l.pool_h + dy) * s.w +
                                              rx * l.pool_w + dx];
                                    best = std::max(best, signed_lift(v, p));
                                }
                            if (l.kind == LayerKind::FusedMaxPoolReLU) best = std::max<i64>(best, 0);
                            y[(static_cast<size_t>(ch) * os.h + ry) * os.w + rx] = from_signed(best, p);
                        }
                x = std::move(y);
                s = os;
                break;
            }
            case LayerKind::MeanPool: {
                settle(x);
                Shape os = chain[li];
                std::vector<u64> y(os.count(), 0);
                const i64 k = static_cast<i64>(l.pool_w) * l.pool_h;
                for (u32 ch = 0; ch < s.c; ++ch)
                    for (u32 ry = 0; ry < os.h; ++ry)
                        for (u32 rx = 0; rx < os.w; ++rx) {
                            i64 sum = 0;
                            for (u32 dy = 0; dy < l.pool_h; ++dy)
                                for (u32 dx = 0; dx < l.pool_w; ++dx)
                                    sum += signed_lift(
                                        x[(static_cast<size_t>(ch) * s.h + ry * l.pool_h + dy) * s.w +
                                          rx * l.pool_w + dx],
                                        p);
                            i64 mean = sum >= 0 ? sum / k : -((-sum + k - 1) / k);  // floor
                            y[(static_cast<size_t>(ch) * os.h + ry) * os.w + rx] = from_signed(mean, p);
                        }
                x = std::move(y);
                s = os;
                break;
            }
            case LayerKind::Softmax:
                break;
        }
        r.trace.post_layer.push_back(x);
    }

    // classification on the raw logits (scale 2^{2 fb}); argmax is scale-free
    check(!r.trace.logits_raw.empty(), ErrorCode::BadArgument, "model has no linear layer");
    const std::vector<u64>& logits = r.trace.logits_raw;
    std::vector<i64> sv;
    for (u64 v : logits) sv.push_back(signed_lift(v, p));
    r.t = 0;
    for (u32 k = 1; k < sv.size(); ++k)
        if (sv[k] > sv[r.t]) r.t = k;

    // integerized logits exactly as the renormalize circuit computes them:
    // d_int = floor((v_t - v_k) / 2^{2 fb}), logit_int = -d_int
    for (u32 k = 0; k < sv.size(); ++k) {
        i64 d = sv[r.t] - sv[k];  // >= 0
        r.trace.logits_int.push_back(-(d >> (2 * fb)));
    }

    if (m.desc.has_softmax()) {
        const LayerSpec& sm = m.desc.layers.back();
        std::vector<double> li(r.trace.logits_int.begin(), r.trace.logits_int.end());
        auto res = softmax_oracle(li, sm.softmax_l);
        r.probability = res.p_approx;
    } else {
        r.probability = 1.0;
    }
    return r;
}

}  // namespace falcon
