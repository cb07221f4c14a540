#pragma once

#include <array>

#include <openssl/evp.h>

#include "falcon/circuit.hpp"
#include "falcon/rng.hpp"

namespace falcon {

struct Block {
    u64 lo = 0, hi = 0;

    Block operator^(const Block& o) const { return {lo ^ o.lo, hi ^ o.hi}; }
    Block& operator^=(const Block& o) {
        lo ^= o.lo;
        hi ^= o.hi;
        return *this;
    }
    bool operator==(const Block& o) const { return lo == o.lo && hi == o.hi; }
    bool lsb() const { return lo & 1; }
};

// GF(2^128) doubling, used to separate the two hash operands.
inline Block gf_double(Block x) {
    u64 carry = x.hi >> 63;
    x.hi = (x.hi << 1) | (x.lo >> 63);
    x.lo <<= 1;
    if (carry) x.lo ^= 0x87;
    return x;
}

// Fixed-key AES permutation hash: H(a,b,t) = pi(k) ^ k with k = 2a ^ 4b ^ t.
class FixedKeyHash {
public:
    FixedKeyHash() {
        static const u8 key[16] = {0x46, 0x41, 0x4c, 0x43, 0x4f, 0x4e, 0x2d, 0x46,
                                   0x4b, 0x48, 0x41, 0x53, 0x48, 0x2d, 0x76, 0x31};
        ctx_ = EVP_CIPHER_CTX_new();
        check(ctx_ != nullptr, ErrorCode::Crypto, "EVP ctx alloc failed");
        check(EVP_EncryptInit_ex(ctx_, EVP_aes_128_ecb(), nullptr, key, nullptr) == 1,
              ErrorCode::Crypto, "AES init failed");
        EVP_CIPHER_CTX_set_padding(ctx_, 0);
    }
    ~FixedKeyHash() { EVP_CIPHER_CTX_free(ctx_); }
    FixedKeyHash(const FixedKeyHash&) = delete;
    FixedKeyHash& operator=(const FixedKeyHash&) = delete;

    Block operator()(const Block& a, const Block& b, u64 tweak) const {
        Block k = gf_double(a) ^ gf_double(gf_double(b));
        k.lo ^= tweak;
        u8 in[16], out[16];
        std::memcpy(in, &k.lo, 8);
        std::memcpy(in + 8, &k.hi, 8);
        int outl = 0;
        check(EVP_EncryptUpdate(ctx_, out, &outl, in, 16) == 1 && outl == 16, ErrorCode::Crypto,
              "AES update failed");
        Block r;
        std::memcpy(&r.lo, out, 8);
        std::memcpy(&r.hi, out + 8, 8);
        return r ^ k;
    }

private:
    EVP_CIPHER_CTX* ctx_;
};

// One bit of output decode information.
struct OutputBitDecode {
    bool is_const = false;
    bool const_val = false;
    u8 color = 0;  // lsb(label0) ^ neg, for evaluator-decoded bits
};

// Everything the evaluator receives: per-AND tables, the garbler's active
// input labels, and decode colors for evaluator-visible output bits.
// Free-XOR means XOR ops contribute no table entries.
struct GarbledMaterial {
    Seed32 circuit_hash{};
    std::vector<std::array<Block, 4>> tables;
    std::vector<Block> garbler_input_labels;
    std::vector<OutputBitDecode> eval_output_decode;

    std::vector<u8> serialize() const {
        std::vector<u8> out(circuit_hash.begin(), circuit_hash.end());
        put_u32(out, static_cast<u32>(tables.size()));
        for (const auto& t : tables)
            for (const Block& b : t) {
                put_u64(out, b.lo);
                put_u64(out, b.hi);
            }
        put_u32(out, static_cast<u32>(garbler_input_labels.size()));
        for (const Block& b : garbler_input_labels) {
            put_u64(out, b.lo);
            put_u64(out, b.hi);
        }
        put_u32(out, static_cast<u32>(eval_output_decode.size()));
        for (const auto& d : eval_output_decode)
            out.push_back(static_cast<u8>((d.is_const ? 4 : 0) | (d.const_val ? 2 : 0) | d.color));
        return out;
    }

    static GarbledMaterial deserialize(ByteReader& r) {
        GarbledMaterial m;
        auto h = r.bytes(32);
        std::copy(h.begin(), h.end(), m.circuit_hash.begin());
        u32 nt = r.u32le();
        m.tables.resize(nt);
        for (auto& t : m.tables)
            for (Block& b : t) {
                b.lo = r.u64le();
                b.hi = r.u64le();
            }
        u32 ng = r.u32le();
        m.garbler_input_labels.resize(ng);
        for (Block& b : m.garbler_input_labels) {
            b.lo = r.u64le();
            b.hi = r.u64le();
        }
        u32 nd = r.u32le();
        m.eval_output_decode.resize(nd);
        for (auto& d : m.eval_output_decode) {
            u8 f = r.bytes(1)[0];
            d.is_const = f & 4;
            d.const_val = f & 2;
            d.color = f & 1;
        }
        return m;
    }
};

// Garbler-side secrets: the global offset and label0 for every wire.
struct GarblerState {
    Block delta;
    std::vector<Block> label0;
};

namespace detail {

inline Block ref_label0(const GarblerState& st, const BitRef& r) {
    Block l = st.label0[r.wire];
    if (r.neg) l ^= st.delta;
    return l;
}

// Flattened wire ids of a party's input bits, in declaration order.
inline std::vector<u32> party_input_wires(const CircuitGraph& c, Party party) {
    std::vector<u32> wires;
    for (const IoDecl& d : c.inputs()) {
        if (d.party != party) continue;
        const Bundle& b = c.bundle(d.bundle);
        for (const BitRef& ref : b.bits) wires.push_back(ref.wire);
    }
    return wires;
}

// Flattened input bits of a value assignment, matching party_input_wires order.
inline std::vector<bool> party_input_bits(const CircuitGraph& c, Party party,
                                          const std::vector<std::vector<u64>>& values) {
    std::vector<bool> bits;
    size_t vi = 0;
    for (const IoDecl& d : c.inputs()) {
        const Bundle& b = c.bundle(d.bundle);
        if (d.party == party) {
            check(vi < values.size(), ErrorCode::BadArgument, "missing input values");
            check(values[vi].size() == b.simd, ErrorCode::BadArgument, "wrong SIMD length");
            for (u32 s = 0; s < b.simd; ++s)
                for (u32 i = 0; i < b.width; ++i) bits.push_back((values[vi][s] >> i) & 1);
            ++vi;
        }
    }
    check(vi == values.size(), ErrorCode::BadArgument, "extra input values");
    return bits;
}

}  // namespace detail

// Deterministic garbling of the whole circuit from a seed.
inline std::pair<GarbledMaterial, GarblerState> garble(const CircuitGraph& c, const Seed32& seed) {
    FixedKeyHash H;
    Rng rng(seed);
    GarblerState st;
    st.delta.lo = rng.next_u64() | 1;  // color bit of delta must be 1
    st.delta.hi = rng.next_u64();
    st.label0.resize(c.num_wires());
    for (u32 w = 0; w < c.num_wires(); ++w) {
        if (!c.wire_is_input(w)) continue;
        st.label0[w].lo = rng.next_u64();
        st.label0[w].hi = rng.next_u64();
    }

    GarbledMaterial m;
    m.circuit_hash = c.hash();
    u64 tweak = 0;
    for (const BitOp& op : c.ops()) {
        Block a0 = detail::ref_label0(st, op.a);
        Block b0 = detail::ref_label0(st, op.b);
        if (op.kind == BitOp::XOR) {
            st.label0[op.out] = a0 ^ b0;
            continue;
        }
        Block c0{rng.next_u64(), rng.next_u64()};
        st.label0[op.out] = c0;
        std::array<Block, 4> table;
        for (int va = 0; va < 2; ++va) {
            for (int vb = 0; vb < 2; ++vb) {
                Block la = va ? a0 ^ st.delta : a0;
                Block lb = vb ? b0 ^ st.delta : b0;
                Block out = (va & vb) ? c0 ^ st.delta : c0;
                int row = (la.lsb() ? 2 : 0) | (lb.lsb() ? 1 : 0);
                table[row] = H(la, lb, tweak) ^ out;
            }
        }
        m.tables.push_back(table);
        ++tweak;
    }

    for (const IoDecl& d : c.outputs()) {
        if (d.party != Party::Evaluator) continue;
        const Bundle& b = c.bundle(d.bundle);
        for (const BitRef& r : b.bits) {
            OutputBitDecode dec;
            if (r.is_const) {
                dec.is_const = true;
                dec.const_val = r.const_val;
            } else {
                dec.color = static_cast<u8>(st.label0[r.wire].lsb() ^ r.neg);
            }
            m.eval_output_decode.push_back(dec);
        }
    }
    return {std::move(m), std::move(st)};
}

// Active labels for the garbler's own inputs, in flattened declaration order.
inline std::vector<Block> garbler_active_labels(const CircuitGraph& c, const GarblerState& st,
                                                const std::vector<std::vector<u64>>& values) {
    auto wires = detail::party_input_wires(c, Party::Garbler);
    auto bits = detail::party_input_bits(c, Party::Garbler, values);
    check(wires.size() == bits.size(), ErrorCode::BadArgument, "garbler input size mismatch");
    std::vector<Block> labels(wires.size());
    for (size_t i = 0; i < wires.size(); ++i)
        labels[i] = bits[i] ? st.label0[wires[i]] ^ st.delta : st.label0[wires[i]];
    return labels;
}

// (label0, label1) pairs for the evaluator's input wires, for the OT sender.
inline std::vector<std::pair<Block, Block>> evaluator_label_pairs(const CircuitGraph& c,
                                                                  const GarblerState& st) {
    auto wires = detail::party_input_wires(c, Party::Evaluator);
    std::vector<std::pair<Block, Block>> pairs(wires.size());
    for (size_t i = 0; i < wires.size(); ++i)
        pairs[i] = {st.label0[wires[i]], st.label0[wires[i]] ^ st.delta};
    return pairs;
}

// Evaluator-side pass over the ops; returns the active label of every wire.
inline std::vector<Block> evaluate_garbled(const CircuitGraph& c, const GarbledMaterial& m,
                                           const std::vector<Block>& garbler_labels,
                                           const std::vector<Block>& evaluator_labels) {
    FixedKeyHash H;
    std::vector<Block> act(c.num_wires());
    auto gw = detail::party_input_wires(c, Party::Garbler);
    auto ew = detail::party_input_wires(c, Party::Evaluator);
    check(garbler_labels.size() == gw.size(), ErrorCode::Protocol, "bad garbler label count");
    check(evaluator_labels.size() == ew.size(), ErrorCode::Protocol, "bad evaluator label count");
    for (size_t i = 0; i < gw.size(); ++i) act[gw[i]] = garbler_labels[i];
    for (size_t i = 0; i < ew.size(); ++i) act[ew[i]] = evaluator_labels[i];

    u64 tweak = 0;
    size_t tidx = 0;
    for (const BitOp& op : c.ops()) {
        Block la = act[op.a.wire];
        Block lb = act[op.b.wire];
        if (op.kind == BitOp::XOR) {
            act[op.out] = la ^ lb;
            continue;
        }
        check(tidx < m.tables.size(), ErrorCode::Protocol, "garbled table underrun");
        int row = (la.lsb() ? 2 : 0) | (lb.lsb() ? 1 : 0);
        act[op.out] = m.tables[tidx][row] ^ H(la, lb, tweak);
        ++tweak;
        ++tidx;
    }
    return act;
}

// Decode the evaluator's declared outputs from active labels.
inline std::vector<std::vector<u64>> decode_evaluator_outputs(const CircuitGraph& c,
                                                              const GarbledMaterial& m,
                                                              const std::vector<Block>& act) {
    std::vector<std::vector<u64>> out;
    size_t di = 0;
    for (const IoDecl& d : c.outputs()) {
        if (d.party != Party::Evaluator) continue;
        const Bundle& b = c.bundle(d.bundle);
        std::vector<u64> vals(b.simd, 0);
        for (u32 s = 0; s < b.simd; ++s)
            for (u32 i = 0; i < b.width; ++i) {
                check(di < m.eval_output_decode.size(), ErrorCode::Protocol, "decode map underrun");
                const OutputBitDecode& dec = m.eval_output_decode[di++];
                const BitRef& r = b.bits[static_cast<size_t>(s) * b.width + i];
                bool v;
                if (dec.is_const) {
                    v = dec.const_val;
                } else {
                    v = act[r.wire].lsb() ^ (dec.color != 0);
                }
                if (v) vals[s] |= u64(1) << i;
            }
        out.push_back(std::move(vals));
    }
    return out;
}

// Active labels for the garbler's declared outputs (sent back by the evaluator).
inline std::vector<Block> collect_garbler_output_labels(const CircuitGraph& c,
                                                        const std::vector<Block>& act) {
    std::vector<Block> out;
    for (const IoDecl& d : c.outputs()) {
        if (d.party != Party::Garbler) continue;
        const Bundle& b = c.bundle(d.bundle);
        for (const BitRef& r : b.bits)
            if (!r.is_const) out.push_back(act[r.wire]);
    }
    return out;
}

// Garbler-side decode of its own outputs from returned labels.
inline std::vector<std::vector<u64>> decode_garbler_outputs(const CircuitGraph& c,
                                                            const GarblerState& st,
                                                            const std::vector<Block>& labels) {
    std::vector<std::vector<u64>> out;
    size_t li = 0;
    for (const IoDecl& d : c.outputs()) {
        if (d.party != Party::Garbler) continue;
        const Bundle& b = c.bundle(d.bundle);
        std::vector<u64> vals(b.simd, 0);
        for (u32 s = 0; s < b.simd; ++s)
            for (u32 i = 0; i < b.width; ++i) {
                const BitRef& r = b.bits[static_cast<size_t>(s) * b.width + i];
                bool v;
                if (r.is_const) {
                    v = r.const_val;
                } else {
                    check(li < labels.size(), ErrorCode::Protocol, "output label underrun");
                    Block l = labels[li++];
                    if (l == st.label0[r.wire]) {
                        v = r.neg;
                    } else if (l == (st.label0[r.wire] ^ st.delta)) {
                        v = !r.neg;
                    } else {
                        throw Error(ErrorCode::Protocol, "invalid output label");
                    }
                }
                if (v) vals[s] |= u64(1) << i;
            }
        out.push_back(std::move(vals));
    }
    return out;
}

}  // namespace falcon
