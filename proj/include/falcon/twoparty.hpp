#pragma once

#include "falcon/ot.hpp"

namespace falcon {

// One garbled execution of a circuit between two connected parties.
//
// Sequence: hash exchange, tables + garbler labels, evaluator labels via OT,
// evaluation, garbler-output labels returned. Each party gets exactly the
// outputs declared for it; a hash mismatch aborts before any material flows.
//
// `own_inputs` holds one value vector per input bundle declared for `role`,
// in declaration order. The result holds one value vector per output bundle
// declared for `role`, in declaration order.

struct TwoPartyStats {
    u64 and_gates = 0;
    u64 ot_count = 0;
};

inline std::vector<std::vector<u64>> run_two_party(Party role, const CircuitGraph& circuit,
                                                   const std::vector<std::vector<u64>>& own_inputs,
                                                   Channel& ch, const ObliviousTransferConfig& ot,
                                                   const Seed32& seed, TwoPartyStats* stats = nullptr) {
    ot.validate();
    Seed32 local_hash = circuit.hash();

    if (role == Party::Garbler) {
        write_frame(ch, FrameType::GcTables, {local_hash.begin(), local_hash.end()});
        auto ack = expect_frame(ch, FrameType::ShareMsg);
        if (ack.size() != 32 || !std::equal(local_hash.begin(), local_hash.end(), ack.begin())) {
            send_error(ch, ErrorCode::Protocol, "circuit hash mismatch");
            throw Error(ErrorCode::Protocol, "circuit hash mismatch");
        }

        auto [material, state] = garble(circuit, derive_seed(seed, "garble"));
        material.garbler_input_labels = garbler_active_labels(circuit, state, own_inputs);
        write_frame(ch, FrameType::GcTables, material.serialize());

        auto pairs = evaluator_label_pairs(circuit, state);
        Rng ot_rng(derive_seed(seed, "ot"));
        ot_send(ch, pairs, ot, ot_rng);

        auto ret = expect_frame(ch, FrameType::ShareMsg);
        ByteReader r(ret);
        u32 nl = r.u32le();
        std::vector<Block> labels(nl);
        for (Block& b : labels) {
            b.lo = r.u64le();
            b.hi = r.u64le();
        }
        if (stats) {
            stats->and_gates = circuit.and_gate_count();
            stats->ot_count = pairs.size();
        }
        return decode_garbler_outputs(circuit, state, labels);
    }

    // evaluator
    auto hash_frame = expect_frame(ch, FrameType::GcTables);
    if (hash_frame.size() != 32 || !std::equal(local_hash.begin(), local_hash.end(), hash_frame.begin())) {
        send_error(ch, ErrorCode::Protocol, "circuit hash mismatch");
        throw Error(ErrorCode::Protocol, "circuit hash mismatch");
    }
    write_frame(ch, FrameType::ShareMsg, {local_hash.begin(), local_hash.end()});

    auto mat_bytes = expect_frame(ch, FrameType::GcTables);
    ByteReader mr(mat_bytes);
    GarbledMaterial material = GarbledMaterial::deserialize(mr);
    check(std::equal(local_hash.begin(), local_hash.end(), material.circuit_hash.begin()),
          ErrorCode::Protocol, "garbled material hash mismatch");

    auto choice_bits = detail::party_input_bits(circuit, Party::Evaluator, own_inputs);
    Rng ot_rng(derive_seed(seed, "ot"));
    std::vector<Block> my_labels = ot_receive(ch, choice_bits, ot, ot_rng);

    auto act = evaluate_garbled(circuit, material, material.garbler_input_labels, my_labels);
    auto outputs = decode_evaluator_outputs(circuit, material, act);

    auto back = collect_garbler_output_labels(circuit, act);
    std::vector<u8> ret;
    put_u32(ret, static_cast<u32>(back.size()));
    for (const Block& b : back) {
        put_u64(ret, b.lo);
        put_u64(ret, b.hi);
    }
    write_frame(ch, FrameType::ShareMsg, ret);
    if (stats) {
        stats->and_gates = circuit.and_gate_count();
        stats->ot_count = choice_bits.size();
    }
    return outputs;
}

}  // namespace falcon
