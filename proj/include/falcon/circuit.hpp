#pragma once

#include <map>
#include <string>
#include <vector>

#include "falcon/common.hpp"
#include "falcon/rng.hpp"

namespace falcon {

// Boolean circuits over SIMD wire bundles with the gate set
// {ADD, SUB, GT, MUX, MUL, CONST, SUBSET}. Widths are capped at 64 bits.
//
// Two levels coexist: the gate graph (what gate_count and the circuit hash
// see) and a bit-level expansion into XOR/AND wires (what the cleartext
// evaluator and the garbler consume). Shifts, extensions and bit slices are
// zero-cost rewiring on bundles, not gates.

enum class Party : u8 { Garbler = 0, Evaluator = 1 };

enum class GateKind : u8 { ADD = 1, SUB, GT, MUX, MUL, CONST, SUBSET };

inline const char* gate_kind_name(GateKind k) {
    switch (k) {
        case GateKind::ADD: return "ADD";
        case GateKind::SUB: return "SUB";
        case GateKind::GT: return "GT";
        case GateKind::MUX: return "MUX";
        case GateKind::MUL: return "MUL";
        case GateKind::CONST: return "CONST";
        case GateKind::SUBSET: return "SUBSET";
    }
    return "?";
}

// Reference to a boolean wire, a negated wire, or a constant bit.
struct BitRef {
    u32 wire = 0;
    bool neg = false;
    bool is_const = false;
    bool const_val = false;

    static BitRef constant(bool v) { return BitRef{0, false, true, v}; }
    static BitRef of(u32 w, bool neg = false) { return BitRef{w, neg, false, false}; }
};

struct BitOp {
    enum Kind : u8 { XOR, AND } kind;
    BitRef a, b;
    u32 out;
};

struct Bundle {
    u32 id = 0;
    u32 width = 0;
    u32 simd = 0;
    // slot-major: bits[slot * width + bit]
    std::vector<BitRef> bits;
};

struct GateRec {
    GateKind kind;
    std::vector<u32> in_bundles;
    u32 out_bundle;   // first output bundle for SUBSET
    u32 width;
    u32 simd;         // SIMD length of the operands
    u64 const_val = 0;
    u32 subset_k = 0;
};

struct IoDecl {
    u32 bundle;
    Party party;
};

// Cost in the paper's accounting units: SIMD(N) entries per bundle length,
// plus SubsetGate units. A GT feeding a MUX that selects between the same two
// operands is a fused compare-select and counts once.
struct CostReport {
    std::map<u64, u64> simd_units;  // N -> units
    u64 subset_units = 0;
    std::map<std::string, u64> raw_counts;

    bool operator==(const CostReport& o) const {
        return simd_units == o.simd_units && subset_units == o.subset_units;
    }

    CostReport& add_simd(u64 n, u64 units) {
        if (units) simd_units[n] += units;
        return *this;
    }

    CostReport& add_subset(u64 units) {
        subset_units += units;
        return *this;
    }

    CostReport operator+(const CostReport& o) const {
        CostReport r = *this;
        for (auto& [n, u] : o.simd_units) r.simd_units[n] += u;
        r.subset_units += o.subset_units;
        for (auto& [k, v] : o.raw_counts) r.raw_counts[k] += v;
        return r;
    }

    // Total with SIMD(N) weighted by N (used for transcript deltas).
    u64 weighted_total() const {
        u64 t = 0;
        for (auto& [n, u] : simd_units) t += n * u;
        return t;
    }

    std::string to_string() const {
        std::string s;
        for (auto& [n, u] : simd_units) {
            if (!s.empty()) s += " + ";
            s += std::to_string(u) + "*SIMD(" + std::to_string(n) + ")";
        }
        if (subset_units) {
            if (!s.empty()) s += " + ";
            s += std::to_string(subset_units) + "*Subset";
        }
        return s.empty() ? "0" : s;
    }
};

class CircuitGraph {
public:
    // ---- construction ----

    u32 add_input(Party party, u32 width, u32 simd) {
        u32 b = new_bundle(width, simd);
        auto& bits = bundles_[b].bits;
        for (auto& ref : bits) ref = BitRef::of(new_input_wire(party));
        inputs_.push_back({b, party});
        return b;
    }

    u32 constant(u64 value, u32 width, u32 simd) {
        check_width(width);
        u32 b = new_bundle(width, simd);
        auto& bits = bundles_[b].bits;
        for (u32 s = 0; s < simd; ++s)
            for (u32 i = 0; i < width; ++i)
                bits[static_cast<size_t>(s) * width + i] = BitRef::constant((value >> i) & 1);
        gates_.push_back({GateKind::CONST, {}, b, width, simd, value, 0});
        return b;
    }

    u32 add(u32 a, u32 b) { return add_sub(a, b, false); }
    u32 sub(u32 a, u32 b) { return add_sub(a, b, true); }

    u32 gt(u32 a, u32 b) {
        auto [w, n] = match(a, b);
        u32 out = new_bundle(1, n);
        for (u32 s = 0; s < n; ++s) {
            // a > b  <=>  no carry out of b + ~a + 1
            BitRef c = BitRef::constant(true);
            for (u32 i = 0; i < w; ++i) {
                BitRef x = bit(b, s, i);
                BitRef y = bnot(bit(a, s, i));
                BitRef xc = bxor(x, c), yc = bxor(y, c);
                c = bxor(band(xc, yc), c);
            }
            bundles_[out].bits[s] = bnot(c);
        }
        gates_.push_back({GateKind::GT, {a, b}, out, w, n, 0, 0});
        return out;
    }

    // returns a if sel == 1 else b
    u32 mux(u32 a, u32 b, u32 sel) {
        auto [w, n] = match(a, b);
        check(bundles_[sel].width == 1 && bundles_[sel].simd == n, ErrorCode::BadArgument,
              "mux selector must be a width-1 bundle of matching SIMD length");
        u32 out = new_bundle(w, n);
        for (u32 s = 0; s < n; ++s) {
            BitRef sl = bit(sel, s, 0);
            for (u32 i = 0; i < w; ++i) {
                BitRef av = bit(a, s, i), bv = bit(b, s, i);
                bundles_[out].bits[static_cast<size_t>(s) * w + i] =
                    bxor(band(sl, bxor(av, bv)), bv);
            }
        }
        gates_.push_back({GateKind::MUX, {a, b, sel}, out, w, n, 0, 0});
        return out;
    }

    // truncating modular product; callers widen operands first if they need
    // the full product
    u32 mul(u32 a, u32 b) {
        auto [w, n] = match(a, b);
        u32 out = new_bundle(w, n);
        for (u32 s = 0; s < n; ++s) {
            std::vector<BitRef> acc(w, BitRef::constant(false));
            for (u32 j = 0; j < w; ++j) {
                BitRef bj = bit(b, s, j);
                std::vector<BitRef> row(w - j);
                for (u32 i = 0; i + j < w; ++i) row[i] = band(bj, bit(a, s, i));
                // acc[j..] += row
                BitRef c = BitRef::constant(false);
                for (u32 i = 0; i + j < w; ++i) {
                    BitRef x = acc[i + j], y = row[i];
                    BitRef xc = bxor(x, c), yc = bxor(y, c);
                    acc[i + j] = bxor(xc, y);
                    if (i + j + 1 < w) c = bxor(band(xc, yc), c);
                }
            }
            for (u32 i = 0; i < w; ++i) bundles_[out].bits[static_cast<size_t>(s) * w + i] = acc[i];
        }
        gates_.push_back({GateKind::MUL, {a, b}, out, w, n, 0, 0});
        return out;
    }

    // Regroups a length-N bundle into k bundles of length N/k by pooling
    // region: output j holds elements j, k+j, 2k+j, ...
    std::vector<u32> subset(u32 a, u32 k) {
        u32 w = bundles_[a].width, n_in = bundles_[a].simd;
        check(k >= 1 && n_in % k == 0, ErrorCode::BadArgument, "subset: k must divide N");
        u32 n_out = n_in / k;
        std::vector<u32> outs;
        for (u32 j = 0; j < k; ++j) {
            u32 b = new_bundle(w, n_out);
            for (u32 r = 0; r < n_out; ++r)
                for (u32 i = 0; i < w; ++i)
                    bundles_[b].bits[static_cast<size_t>(r) * w + i] =
                        bundles_[a].bits[(static_cast<size_t>(r) * k + j) * w + i];
            outs.push_back(b);
        }
        gates_.push_back({GateKind::SUBSET, {a}, outs[0], w, n_in, 0, k});
        return outs;
    }

    // ---- zero-cost rewiring ----

    u32 zext(u32 a, u32 new_width) {
        u32 ow = bundles_[a].width, n = bundles_[a].simd;
        check(new_width >= ow, ErrorCode::BadArgument, "zext narrows");
        u32 b = new_bundle(new_width, n);
        for (u32 s = 0; s < n; ++s)
            for (u32 i = 0; i < new_width; ++i)
                bundles_[b].bits[static_cast<size_t>(s) * new_width + i] =
                    i < ow ? bit(a, s, i) : BitRef::constant(false);
        return b;
    }

    u32 trunc(u32 a, u32 new_width) {
        u32 ow = bundles_[a].width, n = bundles_[a].simd;
        check(new_width <= ow, ErrorCode::BadArgument, "trunc widens");
        u32 b = new_bundle(new_width, n);
        for (u32 s = 0; s < n; ++s)
            for (u32 i = 0; i < new_width; ++i)
                bundles_[b].bits[static_cast<size_t>(s) * new_width + i] = bit(a, s, i);
        return b;
    }

    u32 shr_logical(u32 a, u32 shift) {
        u32 w = bundles_[a].width, n = bundles_[a].simd;
        u32 b = new_bundle(w, n);
        for (u32 s = 0; s < n; ++s)
            for (u32 i = 0; i < w; ++i)
                bundles_[b].bits[static_cast<size_t>(s) * w + i] =
                    i + shift < w ? bit(a, s, i + shift) : BitRef::constant(false);
        return b;
    }

    // two's-complement arithmetic shift (sign bit replicates)
    u32 shr_arith(u32 a, u32 shift) {
        u32 w = bundles_[a].width, n = bundles_[a].simd;
        u32 b = new_bundle(w, n);
        for (u32 s = 0; s < n; ++s)
            for (u32 i = 0; i < w; ++i)
                bundles_[b].bits[static_cast<size_t>(s) * w + i] =
                    i + shift < w ? bit(a, s, i + shift) : bit(a, s, w - 1);
        return b;
    }

    // ---- declarations ----

    void mark_output(u32 bundle, Party party) { outputs_.push_back({bundle, party}); }

    // ---- cleartext backend ----

    // inputs: per declared input bundle (in declaration order) a vector of
    // simd values. Returns values for every declared output, in order.
    std::vector<std::vector<u64>> eval(const std::vector<std::vector<u64>>& inputs) const {
        check(inputs.size() == inputs_.size(), ErrorCode::BadArgument, "wrong input bundle count");
        std::vector<u8> wires(num_wires_, 0);
        for (size_t k = 0; k < inputs_.size(); ++k) {
            const Bundle& b = bundles_[inputs_[k].bundle];
            check(inputs[k].size() == b.simd, ErrorCode::BadArgument, "wrong SIMD length");
            for (u32 s = 0; s < b.simd; ++s) {
                u64 mask = b.width == 64 ? ~0ull : (1ull << b.width) - 1;
                u64 v = inputs[k][s] & mask;
                for (u32 i = 0; i < b.width; ++i)
                    wires[b.bits[static_cast<size_t>(s) * b.width + i].wire] = (v >> i) & 1;
            }
        }
        for (const BitOp& op : ops_) {
            bool a = ref_val(op.a, wires), b = ref_val(op.b, wires);
            wires[op.out] = op.kind == BitOp::XOR ? (a ^ b) : (a & b);
        }
        std::vector<std::vector<u64>> out;
        for (const IoDecl& d : outputs_) out.push_back(read_bundle(d.bundle, wires));
        return out;
    }

    std::vector<u64> read_bundle(u32 bundle, const std::vector<u8>& wires) const {
        const Bundle& b = bundles_[bundle];
        std::vector<u64> vals(b.simd, 0);
        for (u32 s = 0; s < b.simd; ++s)
            for (u32 i = 0; i < b.width; ++i)
                if (ref_val(b.bits[static_cast<size_t>(s) * b.width + i], wires))
                    vals[s] |= u64(1) << i;
        return vals;
    }

    // ---- accounting ----

    CostReport gate_count() const {
        CostReport r;
        // fused compare-select: GT whose result selects between its own operands
        std::vector<bool> fused(gates_.size(), false);
        std::map<u32, size_t> producer;  // out bundle -> gate index
        for (size_t i = 0; i < gates_.size(); ++i) producer[gates_[i].out_bundle] = i;
        for (size_t i = 0; i < gates_.size(); ++i) {
            const GateRec& g = gates_[i];
            if (g.kind != GateKind::MUX) continue;
            auto it = producer.find(g.in_bundles[2]);
            if (it == producer.end()) continue;
            const GateRec& sel = gates_[it->second];
            if (sel.kind != GateKind::GT) continue;
            bool same = (sel.in_bundles[0] == g.in_bundles[0] && sel.in_bundles[1] == g.in_bundles[1]) ||
                        (sel.in_bundles[0] == g.in_bundles[1] && sel.in_bundles[1] == g.in_bundles[0]);
            if (same) fused[it->second] = true;
        }
        for (size_t i = 0; i < gates_.size(); ++i) {
            const GateRec& g = gates_[i];
            r.raw_counts[gate_kind_name(g.kind)]++;
            switch (g.kind) {
                case GateKind::CONST: break;
                case GateKind::SUBSET: r.add_subset(1); break;
                default:
                    if (!fused[i]) r.add_simd(g.simd, 1);
            }
        }
        return r;
    }

    // ---- structure access ----

    u32 width_of(u32 bundle) const { return bundles_[bundle].width; }
    u32 simd_of(u32 bundle) const { return bundles_[bundle].simd; }
    const std::vector<IoDecl>& inputs() const { return inputs_; }
    const std::vector<IoDecl>& outputs() const { return outputs_; }
    const std::vector<GateRec>& gates() const { return gates_; }
    const std::vector<BitOp>& ops() const { return ops_; }
    const Bundle& bundle(u32 id) const { return bundles_[id]; }
    u32 num_wires() const { return num_wires_; }
    Party wire_party(u32 w) const { return wire_party_[w]; }
    bool wire_is_input(u32 w) const { return wire_is_input_[w]; }

    u64 and_gate_count() const {
        u64 n = 0;
        for (const BitOp& op : ops_)
            if (op.kind == BitOp::AND) ++n;
        return n;
    }

    Seed32 hash() const {
        std::vector<u8> buf;
        for (const GateRec& g : gates_) {
            buf.push_back(static_cast<u8>(g.kind));
            put_u32(buf, g.width);
            put_u32(buf, g.simd);
            put_u32(buf, g.out_bundle);
            put_u64(buf, g.const_val);
            put_u32(buf, g.subset_k);
            for (u32 b : g.in_bundles) put_u32(buf, b);
        }
        for (const IoDecl& d : inputs_) {
            put_u32(buf, d.bundle);
            buf.push_back(static_cast<u8>(d.party));
        }
        for (const IoDecl& d : outputs_) {
            put_u32(buf, d.bundle);
            buf.push_back(static_cast<u8>(d.party));
        }
        put_u32(buf, num_wires_);
        put_u32(buf, static_cast<u32>(ops_.size()));
        return sha256(buf);
    }

private:
    static void check_width(u32 w) {
        check(w >= 1 && w <= 64, ErrorCode::BadArgument, "bundle width must be in [1, 64]");
    }

    u32 new_bundle(u32 width, u32 simd) {
        check_width(width);
        check(simd >= 1, ErrorCode::BadArgument, "SIMD length must be >= 1");
        Bundle b;
        b.id = static_cast<u32>(bundles_.size());
        b.width = width;
        b.simd = simd;
        b.bits.resize(static_cast<size_t>(width) * simd);
        bundles_.push_back(std::move(b));
        return bundles_.back().id;
    }

    u32 new_input_wire(Party party) {
        wire_party_.push_back(party);
        wire_is_input_.push_back(true);
        return num_wires_++;
    }

    u32 new_internal_wire() {
        wire_party_.push_back(Party::Garbler);
        wire_is_input_.push_back(false);
        return num_wires_++;
    }

    BitRef bit(u32 bundle, u32 slot, u32 i) const {
        const Bundle& b = bundles_[bundle];
        return b.bits[static_cast<size_t>(slot) * b.width + i];
    }

    std::pair<u32, u32> match(u32 a, u32 b) const {
        check(bundles_[a].width == bundles_[b].width, ErrorCode::BadArgument, "width mismatch");
        check(bundles_[a].simd == bundles_[b].simd, ErrorCode::BadArgument, "SIMD length mismatch");
        return {bundles_[a].width, bundles_[a].simd};
    }

    static bool ref_val(const BitRef& r, const std::vector<u8>& wires) {
        if (r.is_const) return r.const_val;
        return (wires[r.wire] != 0) != r.neg;
    }

    BitRef bnot(BitRef a) {
        if (a.is_const) return BitRef::constant(!a.const_val);
        a.neg = !a.neg;
        return a;
    }

    BitRef bxor(BitRef a, BitRef b) {
        if (a.is_const) return a.const_val ? bnot(b) : b;
        if (b.is_const) return b.const_val ? bnot(a) : a;
        if (a.wire == b.wire) return BitRef::constant(a.neg != b.neg);
        u32 w = new_internal_wire();
        ops_.push_back({BitOp::XOR, a, b, w});
        return BitRef::of(w);
    }

    BitRef band(BitRef a, BitRef b) {
        if (a.is_const) return a.const_val ? b : BitRef::constant(false);
        if (b.is_const) return b.const_val ? a : BitRef::constant(false);
        if (a.wire == b.wire) return a.neg == b.neg ? a : BitRef::constant(false);
        u32 w = new_internal_wire();
        ops_.push_back({BitOp::AND, a, b, w});
        return BitRef::of(w);
    }

    u32 add_sub(u32 a, u32 b, bool is_sub) {
        auto [w, n] = match(a, b);
        u32 out = new_bundle(w, n);
        for (u32 s = 0; s < n; ++s) {
            BitRef c = BitRef::constant(is_sub);
            for (u32 i = 0; i < w; ++i) {
                BitRef x = bit(a, s, i);
                BitRef y = is_sub ? bnot(bit(b, s, i)) : bit(b, s, i);
                BitRef xc = bxor(x, c), yc = bxor(y, c);
                bundles_[out].bits[static_cast<size_t>(s) * w + i] = bxor(xc, y);
                if (i + 1 < w) c = bxor(band(xc, yc), c);
            }
        }
        gates_.push_back({is_sub ? GateKind::SUB : GateKind::ADD, {a, b}, out, w, n, 0, 0});
        return out;
    }

    std::vector<Bundle> bundles_;
    std::vector<GateRec> gates_;
    std::vector<BitOp> ops_;
    std::vector<IoDecl> inputs_, outputs_;
    std::vector<Party> wire_party_;
    std::vector<bool> wire_is_input_;
    u32 num_wires_ = 0;
};

}  // namespace falcon
