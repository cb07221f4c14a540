#pragma once

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "falcon/fixed_point.hpp"
#include "falcon/rng.hpp"

namespace falcon {

struct Shape {
    u32 w = 0, h = 0, c = 0;
    size_t count() const { return static_cast<size_t>(w) * h * c; }
    bool operator==(const Shape& o) const { return w == o.w && h == o.h && c == o.c; }
};

enum class LayerKind : u8 { Conv, FC, ReLU, MaxPool, MeanPool, FusedMaxPoolReLU, Softmax };

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv: return "conv";
        case LayerKind::FC: return "fc";
        case LayerKind::ReLU: return "relu";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::MeanPool: return "meanpool";
        case LayerKind::FusedMaxPoolReLU: return "fused_maxpool_relu";
        case LayerKind::Softmax: return "softmax";
    }
    return "?";
}

inline bool linear_layer(LayerKind k) { return k == LayerKind::Conv || k == LayerKind::FC; }

// One layer. Weights are floating point here; quantization produces the
// integer model the secure pipeline and its oracle run on.
//
// Conv weights layout: [filter j][channel i][row dy][col dx], row-major.
// FC weights layout: [row j][input i] over the flattened input (channel-major,
// then row-major within a channel).
struct LayerSpec {
    LayerKind kind;
    u32 f_w = 0, f_h = 0, k = 0;   // Conv
    u32 l_i = 0, l_o = 0;          // FC
    u32 pool_w = 0, pool_h = 0;    // pools (stride = region size)
    u32 softmax_l = 2;             // accuracy exponent
    bool has_bias = false;
    std::vector<double> weights;
    std::vector<double> bias;
};

struct ModelDescriptor {
    u32 version = 1;
    Shape input;
    unsigned frac_bits = kDefaultFracBits;
    std::vector<LayerSpec> layers;

    // Shape after each layer; validates the whole chain.
    std::vector<Shape> shape_chain() const {
        std::vector<Shape> out;
        Shape s = input;
        check(s.count() > 0, ErrorCode::BadArgument, "empty input shape");
        bool prev_relu = false;
        for (size_t idx = 0; idx < layers.size(); ++idx) {
            const LayerSpec& l = layers[idx];
            switch (l.kind) {
                case LayerKind::Conv:
                    check(l.f_w >= 1 && l.f_h >= 1 && l.k >= 1, ErrorCode::BadArgument,
                          "conv geometry");
                    check(l.f_w <= s.w && l.f_h <= s.h, ErrorCode::BadArgument,
                          "filter larger than input");
                    check(l.weights.size() == static_cast<size_t>(l.k) * s.c * l.f_h * l.f_w,
                          ErrorCode::BadArgument, "conv weight count");
                    check(!l.has_bias || l.bias.size() == l.k, ErrorCode::BadArgument, "conv bias");
                    s = Shape{s.w, s.h, l.k};
                    break;
                case LayerKind::FC:
                    check(l.l_i == s.count(), ErrorCode::BadArgument,
                          "fc input length does not match incoming shape");
                    check(l.weights.size() == static_cast<size_t>(l.l_o) * l.l_i,
                          ErrorCode::BadArgument, "fc weight count");
                    check(!l.has_bias || l.bias.size() == l.l_o, ErrorCode::BadArgument, "fc bias");
                    s = Shape{1, 1, l.l_o};
                    break;
                case LayerKind::ReLU:
                    break;
                case LayerKind::MaxPool:
                    check(prev_relu, ErrorCode::BadArgument,
                          "maxpool requires non-negative inputs: place it after relu or use "
                          "fused_maxpool_relu");
                    [[fallthrough]];
                case LayerKind::MeanPool:
                case LayerKind::FusedMaxPoolReLU:
                    check(l.pool_w >= 1 && l.pool_h >= 1, ErrorCode::BadArgument, "pool geometry");
                    check(s.w % l.pool_w == 0 && s.h % l.pool_h == 0, ErrorCode::BadArgument,
                          "pool regions must tile the plane");
                    s = Shape{s.w / l.pool_w, s.h / l.pool_h, s.c};
                    break;
                case LayerKind::Softmax:
                    check(idx + 1 == layers.size(), ErrorCode::BadArgument, "softmax must be last");
                    check(s.w == 1 && s.h == 1 && s.c >= 2, ErrorCode::BadArgument,
                          "softmax needs a logit vector");
                    check(l.softmax_l >= 1, ErrorCode::BadArgument, "softmax accuracy exponent");
                    break;
            }
            prev_relu = l.kind == LayerKind::ReLU;
            out.push_back(s);
        }
        if (!layers.empty()) {
            LayerKind last = layers.back().kind;
            LayerKind tail = layers.size() >= 2 && last == LayerKind::Softmax
                                 ? layers[layers.size() - 2].kind
                                 : last;
            check(tail == LayerKind::FC, ErrorCode::BadArgument,
                  "the final layer must be fully connected (optionally with softmax)");
        }
        return out;
    }

    bool has_softmax() const {
        return !layers.empty() && layers.back().kind == LayerKind::Softmax;
    }

    u32 class_count() const {
        auto chain = shape_chain();
        return chain.empty() ? input.c : chain.back().c;
    }
};

// Integer model: weights and biases at scale 2^frac_bits, stored signed.
struct QuantizedLayer {
    std::vector<i64> weights;
    std::vector<i64> bias;
};

struct QuantizedModel {
    ModelDescriptor desc;
    std::vector<QuantizedLayer> q;
};

inline QuantizedModel quantize(const ModelDescriptor& m, unsigned frac_bits) {
    QuantizedModel out;
    out.desc = m;
    out.desc.frac_bits = frac_bits;
    out.desc.shape_chain();
    const double scale = std::exp2(static_cast<double>(frac_bits));
    const double limit = static_cast<double>(kDefaultPlainModulus / 2);
    for (const LayerSpec& l : m.layers) {
        QuantizedLayer ql;
        for (double w : l.weights) {
            check(std::abs(w) * scale < limit, ErrorCode::Capacity, "weight overflows fixed point");
            ql.weights.push_back(round_half_away(w * scale));
        }
        for (double b : l.bias) {
            check(std::abs(b) * scale < limit, ErrorCode::Capacity, "bias overflows fixed point");
            ql.bias.push_back(round_half_away(b * scale));
        }
        out.q.push_back(std::move(ql));
    }
    return out;
}

inline ModelDescriptor dequantize(const QuantizedModel& m) {
    ModelDescriptor out = m.desc;
    const double scale = std::exp2(static_cast<double>(m.desc.frac_bits));
    for (size_t i = 0; i < out.layers.size(); ++i) {
        out.layers[i].weights.clear();
        for (i64 w : m.q[i].weights) out.layers[i].weights.push_back(w / scale);
        out.layers[i].bias.clear();
        for (i64 b : m.q[i].bias) out.layers[i].bias.push_back(b / scale);
    }
    return out;
}

// ---- images ----

struct ImageF {
    Shape shape;
    std::vector<double> data;  // channel-major, row-major within a channel
};

struct ImageQ {
    Shape shape;
    std::vector<i64> data;  // fixed point at the model's frac_bits
};

inline ImageQ quantize_image(const ImageF& img, unsigned frac_bits) {
    ImageQ out;
    out.shape = img.shape;
    const double scale = std::exp2(static_cast<double>(frac_bits));
    for (double v : img.data) out.data.push_back(round_half_away(v * scale));
    return out;
}

// ---- model file format ----
//
// Manifest: line-oriented text, one layer per line, sidecar with the
// quantized weights as little-endian 8-byte two's-complement integers in
// layer order (weights then bias per layer), row-major.

inline std::string manifest_text(const QuantizedModel& m, const std::string& weights_file) {
    std::ostringstream os;
    os << "falcon-model v1\n";
    os << "input " << m.desc.input.w << " " << m.desc.input.h << " " << m.desc.input.c << "\n";
    os << "frac_bits " << m.desc.frac_bits << "\n";
    os << "weights " << weights_file << "\n";
    for (const LayerSpec& l : m.desc.layers) {
        os << layer_kind_name(l.kind);
        switch (l.kind) {
            case LayerKind::Conv:
                os << " k=" << l.k << " fw=" << l.f_w << " fh=" << l.f_h
                   << " bias=" << (l.has_bias ? 1 : 0);
                break;
            case LayerKind::FC:
                os << " in=" << l.l_i << " out=" << l.l_o << " bias=" << (l.has_bias ? 1 : 0);
                break;
            case LayerKind::MaxPool:
            case LayerKind::MeanPool:
            case LayerKind::FusedMaxPoolReLU:
                os << " kw=" << l.pool_w << " kh=" << l.pool_h;
                break;
            case LayerKind::Softmax:
                os << " l=" << l.softmax_l;
                break;
            case LayerKind::ReLU:
                break;
        }
        os << "\n";
    }
    return os.str();
}

inline std::vector<u8> weights_blob(const QuantizedModel& m) {
    std::vector<u8> out;
    for (const QuantizedLayer& l : m.q) {
        for (i64 w : l.weights) put_u64(out, static_cast<u64>(w));
        for (i64 b : l.bias) put_u64(out, static_cast<u64>(b));
    }
    return out;
}

inline void save_model(const QuantizedModel& m, const std::string& manifest_path) {
    std::string wfile = manifest_path + ".weights";
    {
        std::ofstream f(manifest_path, std::ios::trunc);
        check(f.good(), ErrorCode::BadArgument, "cannot write " + manifest_path);
        // store the sidecar name relative to the manifest
        auto slash = wfile.find_last_of('/');
        f << manifest_text(m, slash == std::string::npos ? wfile : wfile.substr(slash + 1));
    }
    {
        std::ofstream f(wfile, std::ios::trunc | std::ios::binary);
        check(f.good(), ErrorCode::BadArgument, "cannot write " + wfile);
        auto blob = weights_blob(m);
        f.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    }
}

inline QuantizedModel load_model(const std::string& manifest_path) {
    std::ifstream f(manifest_path);
    check(f.good(), ErrorCode::BadArgument, "cannot read " + manifest_path);
    std::string line;
    check(std::getline(f, line) && line == "falcon-model v1", ErrorCode::BadArgument,
          "bad model manifest header");
    QuantizedModel m;
    std::string weights_file;

    auto parse_kv = [](const std::string& tok, const std::string& key) -> std::optional<u64> {
        if (tok.rfind(key + "=", 0) != 0) return std::nullopt;
        return std::stoull(tok.substr(key.size() + 1));
    };

    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream is(line);
        std::string head;
        is >> head;
        if (head == "input") {
            is >> m.desc.input.w >> m.desc.input.h >> m.desc.input.c;
        } else if (head == "frac_bits") {
            is >> m.desc.frac_bits;
        } else if (head == "weights") {
            is >> weights_file;
        } else {
            LayerSpec l{};
            std::string tok;
            std::vector<std::string> toks;
            while (is >> tok) toks.push_back(tok);
            auto get = [&](const std::string& key) -> std::optional<u64> {
                for (const auto& t : toks)
                    if (auto v = parse_kv(t, key)) return v;
                return std::nullopt;
            };
            if (head == "conv") {
                l.kind = LayerKind::Conv;
                l.k = static_cast<u32>(get("k").value());
                l.f_w = static_cast<u32>(get("fw").value());
                l.f_h = static_cast<u32>(get("fh").value());
                l.has_bias = get("bias").value_or(0) != 0;
            } else if (head == "fc") {
                l.kind = LayerKind::FC;
                l.l_i = static_cast<u32>(get("in").value());
                l.l_o = static_cast<u32>(get("out").value());
                l.has_bias = get("bias").value_or(0) != 0;
            } else if (head == "relu") {
                l.kind = LayerKind::ReLU;
            } else if (head == "maxpool" || head == "meanpool" || head == "fused_maxpool_relu") {
                l.kind = head == "maxpool" ? LayerKind::MaxPool
                         : head == "meanpool" ? LayerKind::MeanPool
                                              : LayerKind::FusedMaxPoolReLU;
                l.pool_w = static_cast<u32>(get("kw").value());
                l.pool_h = static_cast<u32>(get("kh").value());
            } else if (head == "softmax") {
                l.kind = LayerKind::Softmax;
                l.softmax_l = static_cast<u32>(get("l").value_or(2));
            } else {
                throw Error(ErrorCode::BadArgument, "unknown layer kind in manifest: " + head);
            }
            m.desc.layers.push_back(l);
        }
    }
    check(!weights_file.empty(), ErrorCode::BadArgument, "manifest missing weights line");

    // Fill in expected counts from the shape chain, then read the sidecar.
    Shape s = m.desc.input;
    std::vector<std::pair<size_t, size_t>> counts;  // (weights, bias) per layer
    for (LayerSpec& l : m.desc.layers) {
        size_t nw = 0, nb = 0;
        switch (l.kind) {
            case LayerKind::Conv:
                nw = static_cast<size_t>(l.k) * s.c * l.f_h * l.f_w;
                nb = l.has_bias ? l.k : 0;
                s = Shape{s.w, s.h, l.k};
                break;
            case LayerKind::FC:
                nw = static_cast<size_t>(l.l_o) * l.l_i;
                nb = l.has_bias ? l.l_o : 0;
                s = Shape{1, 1, l.l_o};
                break;
            case LayerKind::MaxPool:
            case LayerKind::MeanPool:
            case LayerKind::FusedMaxPoolReLU:
                s = Shape{s.w / l.pool_w, s.h / l.pool_h, s.c};
                break;
            default:
                break;
        }
        counts.push_back({nw, nb});
    }

    std::string dir;
    auto slash = manifest_path.find_last_of('/');
    if (slash != std::string::npos) dir = manifest_path.substr(0, slash + 1);
    std::ifstream wf(dir + weights_file, std::ios::binary);
    check(wf.good(), ErrorCode::BadArgument, "cannot read weights sidecar " + dir + weights_file);
    std::vector<u8> blob((std::istreambuf_iterator<char>(wf)), std::istreambuf_iterator<char>());
    ByteReader r(blob);
    const double scale = std::exp2(static_cast<double>(m.desc.frac_bits));
    for (size_t i = 0; i < m.desc.layers.size(); ++i) {
        QuantizedLayer ql;
        for (size_t j = 0; j < counts[i].first; ++j) ql.weights.push_back(static_cast<i64>(r.u64le()));
        for (size_t j = 0; j < counts[i].second; ++j) ql.bias.push_back(static_cast<i64>(r.u64le()));
        for (i64 w : ql.weights) m.desc.layers[i].weights.push_back(w / scale);
        for (i64 b : ql.bias) m.desc.layers[i].bias.push_back(b / scale);
        m.q.push_back(std::move(ql));
    }
    check(r.done(), ErrorCode::BadArgument, "weights sidecar has trailing bytes");
    m.desc.shape_chain();  // validate
    return m;
}

// ---- image file format: w, h, c as 4-byte unsigned LE, then fixed-point
// values as 8-byte LE two's complement, channel-major ----

inline void save_image(const ImageQ& img, const std::string& path) {
    std::vector<u8> out;
    put_u32(out, img.shape.w);
    put_u32(out, img.shape.h);
    put_u32(out, img.shape.c);
    for (i64 v : img.data) put_u64(out, static_cast<u64>(v));
    std::ofstream f(path, std::ios::trunc | std::ios::binary);
    check(f.good(), ErrorCode::BadArgument, "cannot write " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

inline ImageQ load_image(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    check(f.good(), ErrorCode::BadArgument, "cannot read " + path);
    std::vector<u8> blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    ByteReader r(blob);
    ImageQ img;
    img.shape.w = r.u32le();
    img.shape.h = r.u32le();
    img.shape.c = r.u32le();
    check(img.shape.count() > 0 && img.shape.count() < (1u << 24), ErrorCode::BadArgument,
          "implausible image shape");
    for (size_t i = 0; i < img.shape.count(); ++i) img.data.push_back(static_cast<i64>(r.u64le()));
    check(r.done(), ErrorCode::BadArgument, "image file has trailing bytes");
    return img;
}

// ---- toy model generation (demos and tests) ----

inline ModelDescriptor make_toy_model(const Seed32& seed, u32 side = 8, u32 classes = 4,
                                      bool fused = true, bool with_softmax = true, u32 l = 2) {
    Rng rng(seed);
    ModelDescriptor m;
    m.input = Shape{side, side, 1};
    LayerSpec conv{};
    conv.kind = LayerKind::Conv;
    conv.f_w = 3;
    conv.f_h = 3;
    conv.k = 2;
    for (size_t i = 0; i < 3u * 3u * 1u * 2u; ++i) conv.weights.push_back(rng.uniform_real(-0.9, 0.9));
    m.layers.push_back(conv);
    if (fused) {
        LayerSpec pool{};
        pool.kind = LayerKind::FusedMaxPoolReLU;
        pool.pool_w = 2;
        pool.pool_h = 2;
        m.layers.push_back(pool);
    } else {
        LayerSpec relu{};
        relu.kind = LayerKind::ReLU;
        m.layers.push_back(relu);
        LayerSpec pool{};
        pool.kind = LayerKind::MaxPool;
        pool.pool_w = 2;
        pool.pool_h = 2;
        m.layers.push_back(pool);
    }
    LayerSpec fc{};
    fc.kind = LayerKind::FC;
    fc.l_i = (side / 2) * (side / 2) * 2;
    fc.l_o = classes;
    fc.has_bias = true;
    for (size_t i = 0; i < static_cast<size_t>(fc.l_o) * fc.l_i; ++i)
        fc.weights.push_back(rng.uniform_real(-0.5, 0.5));
    for (u32 i = 0; i < classes; ++i) fc.bias.push_back(rng.uniform_real(-0.5, 0.5));
    m.layers.push_back(fc);
    if (with_softmax) {
        LayerSpec sm{};
        sm.kind = LayerKind::Softmax;
        sm.softmax_l = l;
        m.layers.push_back(sm);
    }
    m.shape_chain();
    return m;
}

inline ImageF make_toy_image(const Seed32& seed, Shape shape) {
    Rng rng(seed);
    ImageF img;
    img.shape = shape;
    for (size_t i = 0; i < shape.count(); ++i) img.data.push_back(rng.uniform_real(-1.0, 1.0));
    return img;
}

}  // namespace falcon
