#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <sstream>
#include <thread>

#include "falcon/channel.hpp"
#include "falcon/layers.hpp"
#include "falcon/ot.hpp"
#include "falcon/reference.hpp"
#include "falcon/twoparty.hpp"

namespace falcon {

// Session orchestration: handshake, a setup phase (filter transforms, mask
// pre-generation, garbling, garbled-table transfer), then the online layer
// sequence with ciphertext/share translations exactly where the flow places
// them. The server garbles; the client evaluates and is the only party that
// ever sees plaintext results.

inline constexpr u32 kProtocolVersion = 1;

struct SessionConfig {
    HEParams he;
    unsigned frac_bits = kDefaultFracBits;
    bool argmax_only = false;
    bool use_fused = true;  // execute fused maxpool+relu layers fused
    OtMode ot_mode = OtMode::BaseOt;
    bool allow_insecure_ot = false;
    u32 softmax_l = 0;  // 0: take the model's setting
    unsigned exp_frac_bits = 20;
    Seed32 seed{};

    ObliviousTransferConfig ot_config() const { return {ot_mode, allow_insecure_ot}; }
};

struct SecurePrediction {
    u32 t = 0;
    std::optional<double> probability;
};

// ---- transcript ----

struct Transcript {
    u64 setup_bytes_sent = 0, setup_bytes_received = 0;
    u64 online_bytes_sent = 0, online_bytes_received = 0;
    u64 setup_frames = 0, online_frames = 0;
    double setup_ms = 0, online_ms = 0;
    HeOpCounter he_ops;
    CostReport gc_cost;
    std::vector<std::pair<std::string, CostReport>> per_circuit;
    u64 gc_and_gates = 0;
    u64 ot_count = 0;
    Seed32 stream_digest{};
    u32 result_t = 0;
    std::optional<double> result_probability;

    u64 total_bytes() const {
        return setup_bytes_sent + setup_bytes_received + online_bytes_sent + online_bytes_received;
    }
};

// CSV with one metric per row; parses back losslessly for the numeric fields.
inline std::string transcript_report(const Transcript& t) {
    std::ostringstream os;
    os << "metric,value\n";
    os << "setup_bytes_sent," << t.setup_bytes_sent << "\n";
    os << "setup_bytes_received," << t.setup_bytes_received << "\n";
    os << "online_bytes_sent," << t.online_bytes_sent << "\n";
    os << "online_bytes_received," << t.online_bytes_received << "\n";
    os << "setup_frames," << t.setup_frames << "\n";
    os << "online_frames," << t.online_frames << "\n";
    os << "setup_ms," << t.setup_ms << "\n";
    os << "online_ms," << t.online_ms << "\n";
    os << "he_adds_ct," << t.he_ops.adds_ct << "\n";
    os << "he_adds_pt," << t.he_ops.adds_pt << "\n";
    os << "he_mults_pt," << t.he_ops.mults_pt << "\n";
    os << "he_rotations," << t.he_ops.rotations << "\n";
    os << "he_encryptions," << t.he_ops.encryptions << "\n";
    os << "gc_and_gates," << t.gc_and_gates << "\n";
    os << "ot_count," << t.ot_count << "\n";
    os << "gc_subset_units," << t.gc_cost.subset_units << "\n";
    for (const auto& [n, u] : t.gc_cost.simd_units) os << "gc_simd_units_" << n << "," << u << "\n";
    for (const auto& [name, cost] : t.per_circuit) os << "circuit_" << name << "," << cost.to_string() << "\n";
    os << "result_t," << t.result_t << "\n";
    if (t.result_probability) os << "result_probability," << *t.result_probability << "\n";
    return os.str();
}

inline Transcript parse_transcript_csv(const std::string& csv) {
    Transcript t;
    std::istringstream is(csv);
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
        auto comma = line.find(',');
        if (comma == std::string::npos) continue;
        std::string key = line.substr(0, comma), val = line.substr(comma + 1);
        auto u = [&] { return std::stoull(val); };
        if (key == "setup_bytes_sent") t.setup_bytes_sent = u();
        else if (key == "setup_bytes_received") t.setup_bytes_received = u();
        else if (key == "online_bytes_sent") t.online_bytes_sent = u();
        else if (key == "online_bytes_received") t.online_bytes_received = u();
        else if (key == "setup_frames") t.setup_frames = u();
        else if (key == "online_frames") t.online_frames = u();
        else if (key == "setup_ms") t.setup_ms = std::stod(val);
        else if (key == "online_ms") t.online_ms = std::stod(val);
        else if (key == "he_adds_ct") t.he_ops.adds_ct = u();
        else if (key == "he_adds_pt") t.he_ops.adds_pt = u();
        else if (key == "he_mults_pt") t.he_ops.mults_pt = u();
        else if (key == "he_rotations") t.he_ops.rotations = u();
        else if (key == "he_encryptions") t.he_ops.encryptions = u();
        else if (key == "gc_and_gates") t.gc_and_gates = u();
        else if (key == "ot_count") t.ot_count = u();
        else if (key == "gc_subset_units") t.gc_cost.subset_units = u();
        else if (key.rfind("gc_simd_units_", 0) == 0)
            t.gc_cost.simd_units[std::stoull(key.substr(14))] = u();
        else if (key == "result_t") t.result_t = static_cast<u32>(u());
        else if (key == "result_probability") t.result_probability = std::stod(val);
    }
    return t;
}

// ---- public model metadata (MODEL_META) ----

struct PublicLayerMeta {
    u8 category = 0;  // 0 linear, 1 relu, 2 maxpool, 3 meanpool, 4 fused, 5 softmax
    Shape out{};
    u32 pool_w = 0, pool_h = 0;
    u32 sw = 0, sh = 0, c0 = 0, c1 = 0;  // linear layers: pad and window geometry
};

struct ModelMeta {
    Shape input{};
    std::vector<PublicLayerMeta> layers;
    u32 K = 0;
    u32 softmax_l = 0;
    u32 m = 0;
    unsigned exp_frac_bits = 0;
    unsigned frac_bits = 0;
    bool argmax_only = false;
    bool fused_enabled = true;
    u8 ot_mode = 0;

    std::vector<u8> serialize() const {
        std::vector<u8> out;
        put_u32(out, input.w);
        put_u32(out, input.h);
        put_u32(out, input.c);
        put_u32(out, static_cast<u32>(layers.size()));
        for (const auto& l : layers) {
            out.push_back(l.category);
            put_u32(out, l.out.w);
            put_u32(out, l.out.h);
            put_u32(out, l.out.c);
            put_u32(out, l.pool_w);
            put_u32(out, l.pool_h);
            put_u32(out, l.sw);
            put_u32(out, l.sh);
            put_u32(out, l.c0);
            put_u32(out, l.c1);
        }
        put_u32(out, K);
        put_u32(out, softmax_l);
        put_u32(out, m);
        put_u32(out, exp_frac_bits);
        put_u32(out, frac_bits);
        out.push_back(argmax_only ? 1 : 0);
        out.push_back(fused_enabled ? 1 : 0);
        out.push_back(ot_mode);
        return out;
    }

    static ModelMeta deserialize(ByteReader& r) {
        ModelMeta m;
        m.input = {r.u32le(), r.u32le(), r.u32le()};
        u32 nl = r.u32le();
        check(nl < 1024, ErrorCode::Protocol, "implausible layer count");
        for (u32 i = 0; i < nl; ++i) {
            PublicLayerMeta l;
            l.category = r.bytes(1)[0];
            l.out = {r.u32le(), r.u32le(), r.u32le()};
            l.pool_w = r.u32le();
            l.pool_h = r.u32le();
            l.sw = r.u32le();
            l.sh = r.u32le();
            l.c0 = r.u32le();
            l.c1 = r.u32le();
            m.layers.push_back(l);
        }
        m.K = r.u32le();
        m.softmax_l = r.u32le();
        m.m = r.u32le();
        m.exp_frac_bits = r.u32le();
        m.frac_bits = r.u32le();
        m.argmax_only = r.bytes(1)[0] != 0;
        m.fused_enabled = r.bytes(1)[0] != 0;
        m.ot_mode = r.bytes(1)[0];
        return m;
    }
};

// Derives the public metadata from the model and the session configuration.
inline ModelMeta make_model_meta(const QuantizedModel& model, const SessionConfig& cfg) {
    ModelMeta meta;
    meta.input = model.desc.input;
    meta.frac_bits = model.desc.frac_bits;
    auto chain = model.desc.shape_chain();
    Shape s = model.desc.input;
    for (size_t i = 0; i < model.desc.layers.size(); ++i) {
        const LayerSpec& l = model.desc.layers[i];
        PublicLayerMeta pm;
        pm.out = chain[i];
        switch (l.kind) {
            case LayerKind::Conv: {
                auto plan = make_conv_plan(s, l.f_w, l.f_h, l.k, false, cfg.he.p);
                pm.category = 0;
                pm.sw = plan.sw;
                pm.sh = plan.sh;
                pm.c0 = plan.c0;
                pm.c1 = plan.c1;
                break;
            }
            case LayerKind::FC: {
                auto plan = fc_to_conv(s, l.l_i, l.l_o, cfg.he.p);
                pm.category = 0;
                pm.sw = plan.sw;
                pm.sh = plan.sh;
                pm.c0 = 0;
                pm.c1 = 0;
                break;
            }
            case LayerKind::ReLU: pm.category = 1; break;
            case LayerKind::MaxPool:
                pm.category = 2;
                pm.pool_w = l.pool_w;
                pm.pool_h = l.pool_h;
                break;
            case LayerKind::MeanPool:
                pm.category = 3;
                pm.pool_w = l.pool_w;
                pm.pool_h = l.pool_h;
                break;
            case LayerKind::FusedMaxPoolReLU:
                pm.category = 4;
                pm.pool_w = l.pool_w;
                pm.pool_h = l.pool_h;
                break;
            case LayerKind::Softmax: pm.category = 5; break;
        }
        meta.layers.push_back(pm);
        s = chain[i];
    }
    meta.K = model.desc.class_count();
    meta.softmax_l = cfg.softmax_l ? cfg.softmax_l
                                   : (model.desc.has_softmax() ? model.desc.layers.back().softmax_l : 2);
    meta.m = threshold_m(meta.softmax_l, meta.K);
    // clamp the exponent fraction so the per-class product fits a 64-bit
    // bundle: width = int_bits(m) + E + 1 must stay at or below 32
    unsigned ib = exponent_int_bits(meta.m);
    unsigned emax = ib < 31 ? 31 - ib : 1;
    meta.exp_frac_bits = std::min<unsigned>(cfg.exp_frac_bits, emax);
    meta.argmax_only = cfg.argmax_only || !model.desc.has_softmax();
    meta.fused_enabled = cfg.use_fused;
    meta.ot_mode = static_cast<u8>(cfg.ot_mode);
    return meta;
}

// ---- execution plan ----

struct PlanStep {
    enum Kind : u8 { Linear, GcBlock, Softmax, Argmax } kind;
    // Linear
    size_t layer_idx = 0;
    Shape in_shape{}, out_shape{};
    u32 sw = 0, sh = 0, c0 = 0, c1 = 0;
    // GcBlock
    u32 n_in = 0, n_out = 0;
    bool has_relu = false, has_pool = false, fused = false;
    bool from_linear = true;  // entering at scale 2^{2 fb} (rescale needed)
    u32 pool_k = 1, pool_w = 0, pool_h = 0;
    Shape block_in_shape{};
    bool meanpool_after = false;
    Shape meanpool_out{};
    Shape gc_out_shape{};  // shape of the block's share output
    std::string name;
};

inline std::vector<PlanStep> build_plan(const ModelMeta& meta) {
    std::vector<PlanStep> plan;
    Shape s = meta.input;
    size_t i = 0;
    int block_no = 0;
    while (i < meta.layers.size()) {
        const PublicLayerMeta& l = meta.layers[i];
        if (l.category == 0) {  // linear
            PlanStep st;
            st.kind = PlanStep::Linear;
            st.layer_idx = i;
            st.in_shape = s;
            st.out_shape = l.out;
            st.sw = l.sw;
            st.sh = l.sh;
            st.c0 = l.c0;
            st.c1 = l.c1;
            st.name = "linear" + std::to_string(i);
            plan.push_back(st);
            s = l.out;
            ++i;
            continue;
        }
        if (l.category == 5) {  // softmax
            PlanStep st;
            st.kind = meta.argmax_only ? PlanStep::Argmax : PlanStep::Softmax;
            st.name = meta.argmax_only ? "argmax" : "softmax";
            plan.push_back(st);
            ++i;
            continue;
        }
        PlanStep st;
        st.kind = PlanStep::GcBlock;
        st.block_in_shape = s;
        st.n_in = static_cast<u32>(s.count());
        st.from_linear = plan.empty() ? false : plan.back().kind == PlanStep::Linear;
        st.name = "block" + std::to_string(block_no++);
        if (l.category == 4 && meta.fused_enabled) {
            st.fused = true;
            st.has_pool = true;
            st.pool_w = l.pool_w;
            st.pool_h = l.pool_h;
            st.pool_k = l.pool_w * l.pool_h;
            s = l.out;
            ++i;
        } else if (l.category == 4) {  // fused layer executed as ReLU then pool
            st.has_relu = true;
            st.has_pool = true;
            st.pool_w = l.pool_w;
            st.pool_h = l.pool_h;
            st.pool_k = l.pool_w * l.pool_h;
            s = l.out;
            ++i;
        } else if (l.category == 1) {  // relu, possibly followed by maxpool
            st.has_relu = true;
            ++i;
            s = l.out;
            if (i < meta.layers.size() && meta.layers[i].category == 2) {
                st.has_pool = true;
                st.pool_w = meta.layers[i].pool_w;
                st.pool_h = meta.layers[i].pool_h;
                st.pool_k = st.pool_w * st.pool_h;
                s = meta.layers[i].out;
                ++i;
            }
        } else if (l.category == 3) {  // meanpool: reshare then local means
            st.meanpool_after = true;
            st.pool_w = l.pool_w;
            st.pool_h = l.pool_h;
            st.meanpool_out = l.out;
            s = l.out;
            ++i;
        } else {
            throw Error(ErrorCode::Protocol, "maxpool without a preceding relu");
        }
        st.gc_out_shape = st.meanpool_after ? st.block_in_shape : s;
        st.n_out = static_cast<u32>(st.gc_out_shape.count());
        plan.push_back(st);
    }
    if (plan.empty() || (plan.back().kind != PlanStep::Softmax && plan.back().kind != PlanStep::Argmax)) {
        PlanStep st;
        st.kind = PlanStep::Argmax;
        st.name = "argmax";
        plan.push_back(st);
    }
    return plan;
}

// GC block circuit: preprocess, rescale, optional ReLU/pooling, reshare.
// Inputs: client share (Evaluator), server share (Garbler), server -r'
// (Garbler). Output: the client's fresh share.
struct BlockCircuit {
    CircuitGraph c;
    u32 n_in = 0, n_out = 0;
    bool biased = false;  // reshare constant carries the un-biasing
};

inline BlockCircuit build_block_circuit(const PlanStep& st, u64 p, unsigned rescale_shift) {
    BlockCircuit bc;
    bc.n_in = st.n_in;
    bc.n_out = st.n_out;
    bc.biased = st.fused;
    CircuitGraph& c = bc.c;
    u32 xc = c.add_input(Party::Evaluator, kLayerWordBits, st.n_in);
    u32 xs = c.add_input(Party::Garbler, kLayerWordBits, st.n_in);
    u32 z = c.add_input(Party::Garbler, kLayerWordBits, st.n_out);
    u32 y = build_preprocess(c, xc, xs, p);
    if (st.from_linear || st.fused) y = build_rescale(c, y, p, st.from_linear ? rescale_shift : 0, st.fused);
    if (st.fused) {
        y = build_region_max(c, y, st.pool_k);
        y = build_relu_biased(c, y, p);
    } else {
        if (st.has_relu) y = build_relu(c, y, p);
        if (st.has_pool) y = build_region_max(c, y, st.pool_k);
    }
    c.mark_output(build_reshare(c, y, z, p), Party::Evaluator);
    return bc;
}

// Oblivious argmax over the raw logit shares; only the client learns t.
inline CircuitGraph argmax_circuit(u32 K, u64 p) {
    CircuitGraph c;
    std::vector<u32> xc(K), xs(K);
    for (u32 k = 0; k < K; ++k) {
        xc[k] = c.add_input(Party::Evaluator, kLayerWordBits, 1);
        xs[k] = c.add_input(Party::Garbler, kLayerWordBits, 1);
    }
    const u32 idxw = std::max(1u, bit_length(K - 1));
    u32 best = 0, besti = c.constant(0, idxw, 1);
    for (u32 k = 0; k < K; ++k) {
        u32 y = build_preprocess(c, xc[k], xs[k], p);
        u32 t = c.add(y, c.constant(p / 2, kLayerWordBits, 1));
        u32 gt2 = c.gt(t, c.constant(p - 1, kLayerWordBits, 1));
        u32 biased = c.mux(c.sub(t, c.constant(p, kLayerWordBits, 1)), t, gt2);
        if (k == 0) {
            best = biased;
        } else {
            u32 gt = c.gt(biased, best);
            best = c.mux(biased, best, gt);
            besti = c.mux(c.constant(k, idxw, 1), besti, gt);
        }
    }
    c.mark_output(besti, Party::Evaluator);
    return c;
}

// ---- frame/session helpers ----

class Session {
public:
    Session(Channel& ch, bool is_client) : ch_(ch), is_client_(is_client) {
        start_ = std::chrono::steady_clock::now();
    }

    void send(FrameType t, const std::vector<u8>& payload) {
        digest_frame(is_client_ ? 'C' : 'S', t, payload);
        write_frame(ch_, t, payload);
        ++frames_;
    }

    std::vector<u8> expect(FrameType t) {
        auto payload = expect_frame(ch_, t);
        digest_frame(is_client_ ? 'S' : 'C', t, payload);
        ++frames_;
        return payload;
    }

    void fail(ErrorCode code, const std::string& msg) {
        send_error(ch_, code, msg);
        throw Error(code, msg);
    }

    // phase transition: everything so far was setup
    void begin_online() {
        setup_bytes_sent_ = ch_.bytes_sent();
        setup_bytes_received_ = ch_.bytes_received();
        setup_frames_ = frames_;
        online_start_ = std::chrono::steady_clock::now();
    }

    void finish(Transcript& t) {
        auto now = std::chrono::steady_clock::now();
        t.setup_bytes_sent = setup_bytes_sent_;
        t.setup_bytes_received = setup_bytes_received_;
        t.online_bytes_sent = ch_.bytes_sent() - setup_bytes_sent_;
        t.online_bytes_received = ch_.bytes_received() - setup_bytes_received_;
        t.setup_frames = setup_frames_;
        t.online_frames = frames_ - setup_frames_;
        t.setup_ms = std::chrono::duration<double, std::milli>(online_start_ - start_).count();
        t.online_ms = std::chrono::duration<double, std::milli>(now - online_start_).count();
        std::vector<u8> d(digest_.begin(), digest_.end());
        t.stream_digest = sha256(d);
    }

    Channel& channel() { return ch_; }

private:
    void digest_frame(char dir, FrameType t, const std::vector<u8>& payload) {
        digest_.push_back(static_cast<u8>(dir));
        digest_.push_back(static_cast<u8>(t));
        Seed32 h = sha256(payload);
        digest_.insert(digest_.end(), h.begin(), h.end());
    }

    Channel& ch_;
    bool is_client_;
    std::vector<u8> digest_;
    u64 frames_ = 0, setup_frames_ = 0;
    u64 setup_bytes_sent_ = 0, setup_bytes_received_ = 0;
    std::chrono::steady_clock::time_point start_, online_start_;
};

// ---- ciphertext batch serialization ----

inline std::vector<u8> serialize_freq_tensor(const HeContext& he, const EncryptedFreqTensor& t) {
    std::vector<u8> out;
    put_u32(out, t.pack.sw);
    put_u32(out, t.pack.sh);
    put_u32(out, t.pack.channels);
    put_u32(out, static_cast<u32>(t.real_cts.size()));
    for (const auto& ct : t.real_cts) {
        auto b = he.serialize(ct);
        out.insert(out.end(), b.begin(), b.end());
    }
    for (const auto& ct : t.imag_cts) {
        auto b = he.serialize(ct);
        out.insert(out.end(), b.begin(), b.end());
    }
    return out;
}

inline EncryptedFreqTensor deserialize_freq_tensor(const HeContext& he, ByteReader& r) {
    EncryptedFreqTensor t;
    u32 sw = r.u32le(), sh = r.u32le(), channels = r.u32le();
    t.pack = PackingDescriptor::make(sw, sh, channels, he.params().n);
    u32 groups = r.u32le();
    check(groups == t.pack.group_count, ErrorCode::Protocol, "group count mismatch");
    for (u32 g = 0; g < groups; ++g) t.real_cts.push_back(he.deserialize(r));
    for (u32 g = 0; g < groups; ++g) t.imag_cts.push_back(he.deserialize(r));
    return t;
}

// public key travels as two ring elements, same coefficient encoding
inline std::vector<u8> serialize_public_key(const HeContext& he, const PublicKey& pk) {
    std::vector<u8> out;
    Seed32 h = he.params().hash();
    out.insert(out.end(), h.begin(), h.end());
    put_u32(out, 2);
    for (const RnsPoly* c : {&pk.b, &pk.a})
        for (const auto& limb : c->limbs)
            for (u64 v : limb) put_u64(out, v);
    return out;
}

inline PublicKey deserialize_public_key(const HeContext& he, ByteReader& r) {
    Seed32 h = he.params().hash();
    auto got = r.bytes(32);
    check(std::equal(h.begin(), h.end(), got.begin()), ErrorCode::Protocol,
          "public key params hash mismatch");
    check(r.u32le() == 2, ErrorCode::Protocol, "bad public key component count");
    PublicKey pk;
    pk.b = RnsPoly::zero(he.params());
    pk.a = RnsPoly::zero(he.params());
    for (RnsPoly* c : {&pk.b, &pk.a})
        for (size_t li = 0; li < he.params().qs.size(); ++li)
            for (u32 i = 0; i < he.params().n; ++i) {
                u64 v = r.u64le();
                check(v < he.params().qs[li], ErrorCode::Protocol, "coefficient out of range");
                c->limbs[li][i] = v;
            }
    return pk;
}

}  // namespace falcon
