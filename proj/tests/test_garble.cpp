#include <catch2/catch_amalgamated.hpp>

#include <thread>

#include "falcon/layers.hpp"
#include "falcon/twoparty.hpp"

using namespace falcon;

namespace {

// Runs garbler and evaluator over a loopback pair; returns (garbler outs, evaluator outs).
std::pair<std::vector<std::vector<u64>>, std::vector<std::vector<u64>>> run_both(
    const CircuitGraph& cg, const CircuitGraph& ce, const std::vector<std::vector<u64>>& gin,
    const std::vector<std::vector<u64>>& ein, OtMode mode, u64 seed = 42) {
    auto [cha, chb] = LoopbackChannel::make_pair();
    ObliviousTransferConfig ot{mode, mode == OtMode::InsecureDealer};
    std::vector<std::vector<u64>> gout, eout;
    std::exception_ptr gexc, eexc;
    std::thread tg([&] {
        try {
            gout = run_two_party(Party::Garbler, cg, gin, *cha, ot, seed_from_u64(seed));
        } catch (...) {
            gexc = std::current_exception();
            cha->close();
        }
    });
    std::thread te([&] {
        try {
            eout = run_two_party(Party::Evaluator, ce, ein, *chb, ot, seed_from_u64(seed + 1));
        } catch (...) {
            eexc = std::current_exception();
            chb->close();
        }
    });
    tg.join();
    te.join();
    if (gexc) std::rethrow_exception(gexc);
    if (eexc) std::rethrow_exception(eexc);
    return {gout, eout};
}

CircuitGraph random_circuit(Rng& rng, u32 width, u32 simd, int depth) {
    CircuitGraph c;
    std::vector<u32> pool;
    pool.push_back(c.add_input(Party::Garbler, width, simd));
    pool.push_back(c.add_input(Party::Evaluator, width, simd));
    pool.push_back(c.add_input(Party::Garbler, width, simd));
    pool.push_back(c.add_input(Party::Evaluator, width, simd));
    std::vector<u32> sels;
    for (int i = 0; i < depth; ++i) {
        u32 a = pool[rng.uniform(pool.size())];
        u32 b = pool[rng.uniform(pool.size())];
        switch (rng.uniform(5)) {
            case 0: pool.push_back(c.add(a, b)); break;
            case 1: pool.push_back(c.sub(a, b)); break;
            case 2: sels.push_back(c.gt(a, b)); break;
            case 3:
                if (!sels.empty()) {
                    pool.push_back(c.mux(a, b, sels[rng.uniform(sels.size())]));
                } else {
                    pool.push_back(c.add(a, b));
                }
                break;
            case 4: pool.push_back(c.mul(a, b)); break;
        }
    }
    c.mark_output(pool.back(), Party::Evaluator);
    c.mark_output(pool[pool.size() / 2], Party::Garbler);
    if (!sels.empty()) c.mark_output(sels.back(), Party::Evaluator);
    return c;
}

}  // namespace

TEST_CASE("garbling is deterministic for a fixed seed") {
    CircuitGraph c;
    u32 a = c.add_input(Party::Garbler, 8, 2);
    u32 b = c.add_input(Party::Evaluator, 8, 2);
    c.mark_output(c.add(a, b), Party::Evaluator);
    auto [m1, s1] = garble(c, seed_from_u64(7));
    auto [m2, s2] = garble(c, seed_from_u64(7));
    CHECK(m1.serialize() == m2.serialize());
    auto [m3, s3] = garble(c, seed_from_u64(8));
    CHECK(m1.serialize() != m3.serialize());
}

TEST_CASE("one-gate ADD circuit garbles and evaluates") {
    CircuitGraph c;
    u32 a = c.add_input(Party::Garbler, 8, 1);
    u32 b = c.add_input(Party::Evaluator, 8, 1);
    c.mark_output(c.add(a, b), Party::Evaluator);
    auto [gout, eout] = run_both(c, c, {{3}}, {{4}}, OtMode::InsecureDealer);
    CHECK(gout.empty());
    REQUIRE(eout.size() == 1);
    CHECK(eout[0][0] == 7);
}

TEST_CASE("free-XOR: garbled table count equals AND count") {
    CircuitGraph c;
    u32 a = c.add_input(Party::Garbler, 16, 3);
    u32 b = c.add_input(Party::Evaluator, 16, 3);
    c.mark_output(c.add(a, b), Party::Evaluator);
    c.mark_output(c.gt(a, b), Party::Evaluator);
    auto [m, st] = garble(c, seed_from_u64(9));
    CHECK(m.tables.size() == c.and_gate_count());
}

TEST_CASE("garbled evaluation equals the cleartext backend on random circuits") {
    Rng rng(seed_from_u64(22));
    for (int trial = 0; trial < 6; ++trial) {
        u32 width = 4 + (u32)rng.uniform(12);
        auto c = random_circuit(rng, width, 2, 50);
        for (int run = 0; run < 4; ++run) {
            std::vector<std::vector<u64>> gin, ein, all;
            for (const IoDecl& d : c.inputs()) {
                std::vector<u64> v(c.simd_of(d.bundle));
                for (auto& x : v) x = rng.next_u64() & ((1ull << width) - 1);
                all.push_back(v);
                (d.party == Party::Garbler ? gin : ein).push_back(v);
            }
            auto want = c.eval(all);
            auto [gout, eout] = run_both(c, c, gin, ein,
                                         trial % 2 ? OtMode::BaseOt : OtMode::InsecureDealer);
            // outputs() order: garbler picks its own, evaluator its own
            size_t gi = 0, ei = 0;
            for (size_t i = 0; i < c.outputs().size(); ++i) {
                if (c.outputs()[i].party == Party::Garbler) {
                    CHECK(gout.at(gi++) == want[i]);
                } else {
                    CHECK(eout.at(ei++) == want[i]);
                }
            }
        }
    }
}

TEST_CASE("base OT delivers exactly the chosen labels") {
    Rng rng(seed_from_u64(23));
    std::vector<std::pair<Block, Block>> pairs(64);
    std::vector<bool> choices(64);
    for (size_t i = 0; i < pairs.size(); ++i) {
        pairs[i] = {Block{rng.next_u64(), rng.next_u64()}, Block{rng.next_u64(), rng.next_u64()}};
        choices[i] = rng.next_bit();
    }
    auto [cha, chb] = LoopbackChannel::make_pair();
    ObliviousTransferConfig ot{OtMode::BaseOt, false};
    std::vector<Block> got;
    std::thread ts([&] {
        Rng r2(seed_from_u64(24));
        ot_send(*cha, pairs, ot, r2);
    });
    std::thread tr([&] {
        Rng r3(seed_from_u64(25));
        got = ot_receive(*chb, choices, ot, r3);
    });
    ts.join();
    tr.join();
    for (size_t i = 0; i < pairs.size(); ++i)
        CHECK(got[i] == (choices[i] ? pairs[i].second : pairs[i].first));
}

TEST_CASE("dealer mode requires the explicit unsafe flag") {
    ObliviousTransferConfig bad{OtMode::InsecureDealer, false};
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("circuit hash mismatch aborts the session with no partial output") {
    CircuitGraph cg;
    u32 a = cg.add_input(Party::Garbler, 8, 1);
    u32 b = cg.add_input(Party::Evaluator, 8, 1);
    cg.mark_output(cg.add(a, b), Party::Evaluator);

    CircuitGraph ce;
    a = ce.add_input(Party::Garbler, 8, 1);
    b = ce.add_input(Party::Evaluator, 8, 1);
    ce.mark_output(ce.sub(a, b), Party::Evaluator);  // different circuit

    CHECK_THROWS_AS(run_both(cg, ce, {{3}}, {{4}}, OtMode::InsecureDealer), Error);
}

TEST_CASE("a party never receives decodings for undeclared wires") {
    CircuitGraph c;
    u32 a = c.add_input(Party::Garbler, 8, 1);
    u32 b = c.add_input(Party::Evaluator, 8, 1);
    u32 s = c.add(a, b);
    u32 d = c.sub(a, b);
    c.mark_output(s, Party::Evaluator);
    c.mark_output(d, Party::Garbler);
    auto [m, st] = garble(c, seed_from_u64(10));
    // decode map covers exactly the evaluator-declared bits
    CHECK(m.eval_output_decode.size() == 8);
    u64 evaluator_bits = 0;
    for (const IoDecl& dd : c.outputs())
        if (dd.party == Party::Evaluator)
            evaluator_bits += static_cast<u64>(c.bundle(dd.bundle).bits.size());
    CHECK(m.eval_output_decode.size() == evaluator_bits);
}

TEST_CASE("two-party preprocessing of zero vectors yields zeros") {
    auto c = preprocess_shares_circuit(4, kDefaultPlainModulus);
    std::vector<u64> zeros(4, 0);
    auto [gout, eout] = run_both(c, c, {zeros}, {zeros}, OtMode::BaseOt);
    REQUIRE(eout.size() == 1);
    CHECK(eout[0] == zeros);
}

TEST_CASE("garbled preprocessing matches cleartext on random shares") {
    auto c = preprocess_shares_circuit(4, kDefaultPlainModulus);
    Rng rng(seed_from_u64(26));
    for (int t = 0; t < 5; ++t) {
        std::vector<u64> a(4), b(4);
        for (auto& v : a) v = rng.uniform(kDefaultPlainModulus);
        for (auto& v : b) v = rng.uniform(kDefaultPlainModulus);
        auto want = c.eval({a, b});
        auto [gout, eout] = run_both(c, c, {b}, {a}, OtMode::InsecureDealer);
        CHECK(eout[0] == c.eval({a, b})[0]);
    }
}
