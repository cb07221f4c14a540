#pragma once

#include <map>

#include "falcon/protocol.hpp"

namespace falcon {

// ---- wire payloads for the handshake ----

namespace detail_proto {

inline std::vector<u8> hello_payload() {
    std::vector<u8> out;
    put_u32(out, kProtocolVersion);
    return out;
}

struct ClientParams {
    Seed32 params_hash{};
    u32 frac_bits = 0;
    u8 flags = 0;  // bit0 argmax_only, bit1 unfused, bit2 dealer OT
    u32 softmax_l = 0;
    u32 exp_frac_bits = 0;
};

inline std::vector<u8> client_params_payload(const ClientParams& cp, const std::vector<u8>& pk) {
    std::vector<u8> out(cp.params_hash.begin(), cp.params_hash.end());
    put_u32(out, cp.frac_bits);
    out.push_back(cp.flags);
    put_u32(out, cp.softmax_l);
    put_u32(out, cp.exp_frac_bits);
    out.insert(out.end(), pk.begin(), pk.end());
    return out;
}

// PlaneTransform instances are immutable; shared per geometry.
class TransformCache {
public:
    explicit TransformCache(u64 p) : p_(p) {}
    const PlaneTransform& get(u32 sw, u32 sh) {
        auto key = std::make_pair(sw, sh);
        auto it = cache_.find(key);
        if (it == cache_.end())
            it = cache_.emplace(key, std::make_shared<PlaneTransform>(p_, sw, sh)).first;
        return *it->second;
    }

private:
    u64 p_;
    std::map<std::pair<u32, u32>, std::shared_ptr<PlaneTransform>> cache_;
};

inline std::vector<u64> permute(const std::vector<u64>& v, const std::vector<u32>& order) {
    std::vector<u64> out(order.size());
    for (size_t i = 0; i < order.size(); ++i) out[i] = v[order[i]];
    return out;
}

}  // namespace detail_proto

// =====================================================================
// server
// =====================================================================

inline Transcript serve_session(Channel& ch, const QuantizedModel& model, SessionConfig cfg) {
    HeContext he(cfg.he);
    Session ses(ch, /*is_client=*/false);
    Transcript tr;
    const u64 p = cfg.he.p;
    const unsigned fb = model.desc.frac_bits;

    try {
        // HELLO
        {
            auto hello = ses.expect(FrameType::Hello);
            ByteReader r(hello);
            if (r.u32le() != kProtocolVersion)
                ses.fail(ErrorCode::Protocol, "protocol version mismatch");
            ses.send(FrameType::Hello, detail_proto::hello_payload());
        }

        // PARAMS: the client's hash must match ours; its mode requests are
        // adopted, except insecure OT needs our explicit consent.
        PublicKey client_pk;
        {
            auto pbytes = ses.expect(FrameType::Params);
            ByteReader r(pbytes);
            auto got = r.bytes(32);
            Seed32 want = cfg.he.hash();
            if (!std::equal(want.begin(), want.end(), got.begin()))
                ses.fail(ErrorCode::Protocol, "HE parameter hash mismatch");
            u32 cf = r.u32le();
            if (cf != fb) ses.fail(ErrorCode::Protocol, "frac_bits mismatch");
            u8 flags = r.bytes(1)[0];
            cfg.argmax_only = cfg.argmax_only || (flags & 1);
            cfg.use_fused = cfg.use_fused && !(flags & 2);
            if (flags & 4) {
                if (!cfg.allow_insecure_ot)
                    ses.fail(ErrorCode::Protocol, "insecure OT refused by server policy");
                cfg.ot_mode = OtMode::InsecureDealer;
            } else {
                cfg.ot_mode = OtMode::BaseOt;
                cfg.allow_insecure_ot = false;
            }
            u32 l = r.u32le();
            if (l) cfg.softmax_l = l;
            u32 e = r.u32le();
            if (e) cfg.exp_frac_bits = e;
            client_pk = deserialize_public_key(he, r);
            std::vector<u8> reply(want.begin(), want.end());
            put_u32(reply, fb);
            ses.send(FrameType::Params, reply);
        }

        ModelMeta meta = make_model_meta(model, cfg);
        ses.send(FrameType::ModelMeta, meta.serialize());
        auto plan = build_plan(meta);

        // ---- setup: transforms, masks, shares, circuits, garbling ----
        detail_proto::TransformCache transforms(p);
        Rng mask_rng(derive_seed(cfg.seed, "server-masks"));
        Rng reshare_rng(derive_seed(cfg.seed, "server-reshare"));

        struct LinearState {
            ConvPlan plan;
            FilterTransforms filters;
            MaskRecord masks;
            std::vector<u64> share;  // scale 2^{2 fb}, with bias
        };
        struct GcUnit {
            CircuitGraph circuit;
            GarbledMaterial material;
            GarblerState state;
            std::vector<std::pair<Block, Block>> ot_pairs;
            std::string name;
        };
        std::map<size_t, LinearState> linear_states;    // plan index -> state
        std::vector<std::pair<size_t, GcUnit>> gc_units;  // (plan index, unit)
        std::map<size_t, std::vector<u64>> gc_shares;     // plan index -> share after block

        // walk the plan, tracking the server's running share
        std::vector<u64> server_share(meta.input.count(), 0);
        // softmax randomness (setup)
        std::vector<u64> soft_rprime, soft_mask;

        for (size_t pi = 0; pi < plan.size(); ++pi) {
            const PlanStep& st = plan[pi];
            if (st.kind == PlanStep::Linear) {
                const LayerSpec& l = model.desc.layers[st.layer_idx];
                LinearState ls;
                ls.plan = l.kind == LayerKind::FC
                              ? fc_to_conv(st.in_shape, l.l_i, l.l_o, p)
                              : make_conv_plan(st.in_shape, l.f_w, l.f_h, l.k, false, p);
                const PlaneTransform& tf = transforms.get(ls.plan.sw, ls.plan.sh);
                ls.filters = make_filter_transforms(ls.plan, model.q[st.layer_idx].weights,
                                                    model.q[st.layer_idx].bias, p, tf);
                ls.masks = sample_conv_masks(mask_rng, ls.plan, p);
                ls.share = conv_server_share_from_masks(ls.masks, ls.filters, fb, p);
                server_share = ls.share;
                linear_states.emplace(pi, std::move(ls));
            } else if (st.kind == PlanStep::GcBlock) {
                GcUnit u;
                u.name = st.name;
                auto bc = build_block_circuit(st, p, fb);
                u.circuit = std::move(bc.c);
                // fresh output mask r'; z = -r' (minus the bias constant on
                // the biased path)
                std::vector<u64> rprime(st.n_out), z(st.n_out);
                for (u32 i = 0; i < st.n_out; ++i) {
                    rprime[i] = reshare_rng.uniform(p);
                    u64 neg = rprime[i] == 0 ? 0 : p - rprime[i];
                    z[i] = bc.biased ? sub_mod(neg, p / 2, p) : neg;
                }
                // garbler inputs: xs (possibly permuted for pooling), z
                std::vector<u64> xs = server_share;
                if (st.has_pool || st.fused)
                    xs = detail_proto::permute(xs, pool_flatten_order(st.block_in_shape, st.pool_w, st.pool_h));
                auto [material, state] = garble(u.circuit, derive_seed(cfg.seed, "garble:" + st.name));
                material.garbler_input_labels = garbler_active_labels(u.circuit, state, {xs, z});
                u.ot_pairs = evaluator_label_pairs(u.circuit, state);
                u.material = std::move(material);
                u.state = std::move(state);
                ses.send(FrameType::GcTables, u.material.serialize());
                tr.per_circuit.push_back({u.name, u.circuit.gate_count()});
                tr.gc_cost = tr.gc_cost + u.circuit.gate_count();
                tr.gc_and_gates += u.circuit.and_gate_count();
                gc_units.emplace_back(pi, std::move(u));
                // the server's share after the block is r' (then local means)
                server_share = rprime;
                if (st.meanpool_after) {
                    AdditiveShareTensor t{st.block_in_shape, server_share, Party::Garbler};
                    server_share = mean_pool_local(t, st.pool_w, st.pool_h, p).data;
                }
                gc_shares[pi] = server_share;
            } else if (st.kind == PlanStep::Softmax) {
                // step-3 circuit
                GcUnit u3;
                u3.name = "softmax.renormalize";
                auto rc = argmax_renormalize_circuit(meta.K, p, meta.m, fb);
                u3.circuit = std::move(rc.circuit);
                soft_rprime.resize(meta.K);
                soft_mask.resize(meta.K);
                std::vector<std::vector<u64>> ginputs;
                for (u32 k = 0; k < meta.K; ++k) ginputs.push_back({server_share[k]});
                for (u32 k = 0; k < meta.K; ++k) {
                    soft_rprime[k] = reshare_rng.uniform(meta.m + 1);
                }
                for (u32 k = 0; k < meta.K; ++k) ginputs.push_back({soft_rprime[k]});
                for (u32 k = 0; k < meta.K; ++k) {
                    soft_mask[k] = reshare_rng.uniform(2);
                    ginputs.push_back({soft_mask[k]});
                }
                auto [m3, s3] = garble(u3.circuit, derive_seed(cfg.seed, "garble:renormalize"));
                m3.garbler_input_labels = garbler_active_labels(u3.circuit, s3, ginputs);
                u3.ot_pairs = evaluator_label_pairs(u3.circuit, s3);
                u3.material = std::move(m3);
                u3.state = std::move(s3);
                ses.send(FrameType::GcTables, u3.material.serialize());
                tr.per_circuit.push_back({u3.name, u3.circuit.gate_count()});
                tr.gc_cost = tr.gc_cost + u3.circuit.gate_count();
                tr.gc_and_gates += u3.circuit.and_gate_count();
                gc_units.emplace_back(pi, std::move(u3));

                // step-4 circuit
                GcUnit u4;
                u4.name = "softmax.denominator";
                auto dc = denominator_circuit(meta.K, meta.m, meta.exp_frac_bits);
                u4.circuit = std::move(dc.circuit);
                std::vector<std::vector<u64>> g4;
                for (u32 k = 0; k < meta.K; ++k) {
                    g4.push_back({local_exp(soft_rprime[k] % (meta.m + 1), meta.exp_frac_bits)});
                    g4.push_back({soft_mask[k]});
                }
                auto [m4, s4] = garble(u4.circuit, derive_seed(cfg.seed, "garble:denominator"));
                m4.garbler_input_labels = garbler_active_labels(u4.circuit, s4, g4);
                u4.ot_pairs = evaluator_label_pairs(u4.circuit, s4);
                u4.material = std::move(m4);
                u4.state = std::move(s4);
                ses.send(FrameType::GcTables, u4.material.serialize());
                tr.per_circuit.push_back({u4.name, u4.circuit.gate_count()});
                tr.gc_cost = tr.gc_cost + u4.circuit.gate_count();
                tr.gc_and_gates += u4.circuit.and_gate_count();
                gc_units.emplace_back(pi, std::move(u4));
            } else {  // Argmax
                GcUnit u;
                u.name = "argmax";
                u.circuit = argmax_circuit(meta.K, p);
                std::vector<std::vector<u64>> ginputs;
                for (u32 k = 0; k < meta.K; ++k) ginputs.push_back({server_share[k]});
                auto [m2, s2] = garble(u.circuit, derive_seed(cfg.seed, "garble:argmax"));
                m2.garbler_input_labels = garbler_active_labels(u.circuit, s2, ginputs);
                u.ot_pairs = evaluator_label_pairs(u.circuit, s2);
                u.material = std::move(m2);
                u.state = std::move(s2);
                ses.send(FrameType::GcTables, u.material.serialize());
                tr.per_circuit.push_back({u.name, u.circuit.gate_count()});
                tr.gc_cost = tr.gc_cost + u.circuit.gate_count();
                tr.gc_and_gates += u.circuit.and_gate_count();
                gc_units.emplace_back(pi, std::move(u));
            }
        }

        // ---- online ----
        ses.begin_online();
        Rng enc_rng(derive_seed(cfg.seed, "server-enc"));
        Rng ot_rng(derive_seed(cfg.seed, "server-ot"));
        size_t gc_cursor = 0;
        auto ot_cfg = cfg.ot_config();
        bool first_linear = true;
        std::vector<u64> online_share(meta.input.count(), 0);

        for (size_t pi = 0; pi < plan.size(); ++pi) {
            const PlanStep& st = plan[pi];
            if (st.kind == PlanStep::Linear) {
                LinearState& ls = linear_states.at(pi);
                const PlaneTransform& tf = transforms.get(ls.plan.sw, ls.plan.sh);
                auto up = ses.expect(FrameType::CtUp);
                ByteReader r(up);
                EncryptedFreqTensor ect = deserialize_freq_tensor(he, r);
                if (!first_linear) {
                    // the client encrypted only its share; add ours
                    add_share_to_ct(he, ect, online_share, ls.plan, tf);
                }
                first_linear = false;
                auto out = conv_server_with_masks(he, client_pk, enc_rng, ect, ls.filters, tf,
                                                  ls.masks, fb);
                std::vector<u8> down;
                put_u32(down, ls.plan.k);
                put_u32(down, ect.pack.group_count);
                for (u32 j = 0; j < ls.plan.k; ++j)
                    for (u32 g = 0; g < ect.pack.group_count; ++g) {
                        auto b = he.serialize(out.real_cts[j][g]);
                        down.insert(down.end(), b.begin(), b.end());
                        b = he.serialize(out.imag_cts[j][g]);
                        down.insert(down.end(), b.begin(), b.end());
                    }
                ses.send(FrameType::CtDown, down);
                online_share = ls.share;
            } else {
                while (gc_cursor < gc_units.size() && gc_units[gc_cursor].first == pi) {
                    GcUnit& u = gc_units[gc_cursor].second;
                    ot_send(ses.channel(), u.ot_pairs, ot_cfg, ot_rng);
                    tr.ot_count += u.ot_pairs.size();
                    ++gc_cursor;
                }
                if (st.kind == PlanStep::GcBlock) online_share = gc_shares.at(pi);
            }
        }

        std::vector<u8> result;
        result.push_back(meta.argmax_only ? 0 : 1);
        ses.send(FrameType::Result, result);
        ses.expect(FrameType::Bye);
    } catch (...) {
        ses.finish(tr);
        tr.he_ops = he.counter();
        throw;
    }
    ses.finish(tr);
    tr.he_ops = he.counter();
    return tr;
}

// =====================================================================
// client
// =====================================================================

struct ClientResult {
    SecurePrediction prediction;
    Transcript transcript;
    std::vector<u64> logits_share;          // client share of the raw logits
    std::vector<u64> logits_server_hidden;  // empty; logits stay shared
};

inline ClientResult run_client(Channel& ch, const ImageQ& image, SessionConfig cfg) {
    HeContext he(cfg.he);
    Session ses(ch, /*is_client=*/true);
    ClientResult res;
    Transcript& tr = res.transcript;
    const u64 p = cfg.he.p;

    auto kp = he.keygen(derive_seed(cfg.seed, "keygen"));
    Rng enc_rng(derive_seed(cfg.seed, "client-enc"));
    Rng ot_rng(derive_seed(cfg.seed, "client-ot"));

    try {
        ses.send(FrameType::Hello, detail_proto::hello_payload());
        {
            auto hello = ses.expect(FrameType::Hello);
            ByteReader r(hello);
            check(r.u32le() == kProtocolVersion, ErrorCode::Protocol, "protocol version mismatch");
        }

        {
            detail_proto::ClientParams cp;
            cp.params_hash = cfg.he.hash();
            cp.frac_bits = cfg.frac_bits;
            cp.flags = static_cast<u8>((cfg.argmax_only ? 1 : 0) | (cfg.use_fused ? 0 : 2) |
                                       (cfg.ot_mode == OtMode::InsecureDealer ? 4 : 0));
            cp.softmax_l = cfg.softmax_l;
            cp.exp_frac_bits = cfg.exp_frac_bits;
            ses.send(FrameType::Params,
                     detail_proto::client_params_payload(cp, serialize_public_key(he, kp.pub)));
            auto reply = ses.expect(FrameType::Params);
            ByteReader r(reply);
            auto got = r.bytes(32);
            Seed32 want = cfg.he.hash();
            check(std::equal(want.begin(), want.end(), got.begin()), ErrorCode::Protocol,
                  "server HE parameter hash mismatch");
            check(r.u32le() == cfg.frac_bits, ErrorCode::Protocol, "server frac_bits mismatch");
        }

        ModelMeta meta;
        {
            auto mbytes = ses.expect(FrameType::ModelMeta);
            ByteReader r(mbytes);
            meta = ModelMeta::deserialize(r);
        }
        check(meta.input == image.shape, ErrorCode::BadArgument,
              "image shape does not match the advertised model input");
        auto plan = build_plan(meta);

        // ---- setup: build circuits, receive garbled material ----
        detail_proto::TransformCache transforms(p);
        struct GcClientUnit {
            CircuitGraph circuit;
            GarbledMaterial material;
            std::string name;
        };
        std::vector<std::pair<size_t, GcClientUnit>> gc_units;
        for (size_t pi = 0; pi < plan.size(); ++pi) {
            const PlanStep& st = plan[pi];
            auto receive_unit = [&](CircuitGraph&& circuit, const std::string& name) {
                GcClientUnit u;
                u.circuit = std::move(circuit);
                auto bytes = ses.expect(FrameType::GcTables);
                ByteReader r(bytes);
                u.material = GarbledMaterial::deserialize(r);
                Seed32 want = u.circuit.hash();
                if (!std::equal(want.begin(), want.end(), u.material.circuit_hash.begin()))
                    ses.fail(ErrorCode::Protocol, "circuit hash mismatch in " + name);
                u.name = name;
                gc_units.emplace_back(pi, std::move(u));
            };
            if (st.kind == PlanStep::GcBlock) {
                receive_unit(std::move(build_block_circuit(st, p, meta.frac_bits).c), st.name);
            } else if (st.kind == PlanStep::Softmax) {
                receive_unit(std::move(argmax_renormalize_circuit(meta.K, p, meta.m, meta.frac_bits).circuit),
                             "softmax.renormalize");
                receive_unit(std::move(denominator_circuit(meta.K, meta.m, meta.exp_frac_bits).circuit),
                             "softmax.denominator");
            } else if (st.kind == PlanStep::Argmax) {
                receive_unit(argmax_circuit(meta.K, p), "argmax");
            }
        }
        for (auto& [pi, u] : gc_units) {
            tr.per_circuit.push_back({u.name, u.circuit.gate_count()});
            tr.gc_cost = tr.gc_cost + u.circuit.gate_count();
            tr.gc_and_gates += u.circuit.and_gate_count();
        }

        // ---- online ----
        ses.begin_online();
        auto ot_cfg = cfg.ot_config();
        std::vector<u64> share;  // client's current share, scale 2^fb
        share.reserve(image.data.size());
        for (i64 v : image.data) share.push_back(from_signed(v, p));
        Shape cur_shape = meta.input;
        size_t gc_cursor = 0;
        u32 result_t = 0;
        std::optional<double> result_p;

        for (size_t pi = 0; pi < plan.size(); ++pi) {
            const PlanStep& st = plan[pi];
            if (st.kind == PlanStep::Linear) {
                ConvPlan plan_lite;
                plan_lite.in = st.in_shape;
                plan_lite.out = st.out_shape;
                plan_lite.k = st.out_shape.c;
                plan_lite.sw = st.sw;
                plan_lite.sh = st.sh;
                plan_lite.c0 = st.c0;
                plan_lite.c1 = st.c1;
                const PlaneTransform& tf = transforms.get(st.sw, st.sh);
                auto ect = encrypt_tensor_for_conv(he, kp.pub, enc_rng, share, plan_lite, tf);
                ses.send(FrameType::CtUp, serialize_freq_tensor(he, ect));

                auto down = ses.expect(FrameType::CtDown);
                ByteReader r(down);
                u32 k = r.u32le(), groups = r.u32le();
                check(k == st.out_shape.c && groups == ect.pack.group_count, ErrorCode::Protocol,
                      "unexpected conv reply geometry");
                ConvServerOutput srv;
                srv.real_cts.resize(k);
                srv.imag_cts.resize(k);
                for (u32 j = 0; j < k; ++j)
                    for (u32 g = 0; g < groups; ++g) {
                        srv.real_cts[j].push_back(he.deserialize(r));
                        srv.imag_cts[j].push_back(he.deserialize(r));
                    }
                share = conv_client_combine(he, kp.secret, srv, ect.pack, plan_lite, tf);
                cur_shape = st.out_shape;
                res.logits_share = share;
            } else if (st.kind == PlanStep::GcBlock) {
                GcClientUnit& u = gc_units[gc_cursor++].second;
                std::vector<u64> xin = share;
                if (st.has_pool || st.fused)
                    xin = detail_proto::permute(
                        xin, pool_flatten_order(st.block_in_shape, st.pool_w, st.pool_h));
                auto bits = detail::party_input_bits(u.circuit, Party::Evaluator, {xin});
                auto labels = ot_receive(ses.channel(), bits, ot_cfg, ot_rng);
                tr.ot_count += labels.size();
                auto act = evaluate_garbled(u.circuit, u.material, u.material.garbler_input_labels,
                                            labels);
                share = decode_evaluator_outputs(u.circuit, u.material, act)[0];
                cur_shape = st.gc_out_shape;
                if (st.meanpool_after) {
                    AdditiveShareTensor t{st.block_in_shape, share, Party::Evaluator};
                    auto pooled = mean_pool_local(t, st.pool_w, st.pool_h, p);
                    share = pooled.data;
                    cur_shape = pooled.shape;
                }
            } else if (st.kind == PlanStep::Softmax) {
                // step 3
                GcClientUnit& u3 = gc_units[gc_cursor++].second;
                std::vector<std::vector<u64>> in3;
                for (u32 kk = 0; kk < meta.K; ++kk) in3.push_back({share[kk]});
                auto bits3 = detail::party_input_bits(u3.circuit, Party::Evaluator, in3);
                auto labels3 = ot_receive(ses.channel(), bits3, ot_cfg, ot_rng);
                tr.ot_count += labels3.size();
                auto act3 = evaluate_garbled(u3.circuit, u3.material, u3.material.garbler_input_labels,
                                             labels3);
                auto out3 = decode_evaluator_outputs(u3.circuit, u3.material, act3);
                result_t = static_cast<u32>(out3[0][0]);
                std::vector<u64> cshare(meta.K), fshare(meta.K);
                for (u32 kk = 0; kk < meta.K; ++kk) {
                    cshare[kk] = out3[1 + 2 * kk][0];
                    fshare[kk] = out3[2 + 2 * kk][0];
                }
                // step 4
                GcClientUnit& u4 = gc_units[gc_cursor++].second;
                std::vector<std::vector<u64>> in4;
                for (u32 kk = 0; kk < meta.K; ++kk) {
                    in4.push_back({local_exp(cshare[kk] % (meta.m + 1), meta.exp_frac_bits)});
                    in4.push_back({fshare[kk]});
                }
                auto bits4 = detail::party_input_bits(u4.circuit, Party::Evaluator, in4);
                auto labels4 = ot_receive(ses.channel(), bits4, ot_cfg, ot_rng);
                tr.ot_count += labels4.size();
                auto act4 = evaluate_garbled(u4.circuit, u4.material, u4.material.garbler_input_labels,
                                             labels4);
                u64 denominator = decode_evaluator_outputs(u4.circuit, u4.material, act4)[0][0];
                result_p = probability(denominator, meta.m, meta.exp_frac_bits);
            } else {  // Argmax
                GcClientUnit& u = gc_units[gc_cursor++].second;
                std::vector<std::vector<u64>> in;
                for (u32 kk = 0; kk < meta.K; ++kk) in.push_back({share[kk]});
                auto bits = detail::party_input_bits(u.circuit, Party::Evaluator, in);
                auto labels = ot_receive(ses.channel(), bits, ot_cfg, ot_rng);
                tr.ot_count += labels.size();
                auto act = evaluate_garbled(u.circuit, u.material, u.material.garbler_input_labels,
                                            labels);
                result_t = static_cast<u32>(decode_evaluator_outputs(u.circuit, u.material, act)[0][0]);
            }
        }

        auto result = ses.expect(FrameType::Result);
        check(!result.empty(), ErrorCode::Protocol, "empty RESULT frame");
        bool with_p = result[0] != 0;
        ses.send(FrameType::Bye, {});
        res.prediction.t = result_t;
        if (with_p) res.prediction.probability = result_p;
        tr.result_t = result_t;
        tr.result_probability = res.prediction.probability;
    } catch (...) {
        ses.finish(tr);
        tr.he_ops = he.counter();
        throw;
    }
    ses.finish(tr);
    tr.he_ops = he.counter();
    return res;
}

// =====================================================================
// entry points
// =====================================================================

// Loopback execution: byte-identical protocol behavior over an in-memory
// duplex channel. Returns the client's view plus a merged transcript.
inline std::pair<ClientResult, Transcript> run_inprocess(const QuantizedModel& model,
                                                         const ImageQ& image,
                                                         const SessionConfig& server_cfg,
                                                         const SessionConfig& client_cfg) {
    auto [server_ch, client_ch] = LoopbackChannel::make_pair();
    Transcript server_tr;
    std::exception_ptr server_exc;
    std::thread server([&] {
        try {
            server_tr = serve_session(*server_ch, model, server_cfg);
        } catch (...) {
            server_exc = std::current_exception();
            server_ch->close();
        }
    });
    ClientResult res;
    std::exception_ptr client_exc;
    try {
        res = run_client(*client_ch, image, client_cfg);
    } catch (...) {
        client_exc = std::current_exception();
        client_ch->close();
    }
    server.join();
    if (client_exc) std::rethrow_exception(client_exc);
    if (server_exc) std::rethrow_exception(server_exc);

    Transcript merged = res.transcript;
    merged.he_ops += server_tr.he_ops;
    return {std::move(res), std::move(merged)};
}

// Networked prediction.
inline ClientResult predict(const ImageQ& image, const std::string& host, std::uint16_t port,
                            const SessionConfig& cfg) {
    auto ch = TcpChannel::connect(host, port);
    return run_client(*ch, image, cfg);
}

// Accepts sessions until the listener is shut down. Each connection gets an
// independent session on its own thread.
inline void serve(TcpListener& listener, const QuantizedModel& model, const SessionConfig& cfg,
                  std::function<void(const Transcript&)> on_session = {},
                  std::atomic<bool>* stop = nullptr) {
    std::vector<std::thread> workers;
    while (!stop || !stop->load()) {
        std::unique_ptr<TcpChannel> ch;
        try {
            ch = listener.accept();
        } catch (const Error&) {
            break;  // listener shut down
        }
        workers.emplace_back([&model, cfg, on_session, c = std::shared_ptr<TcpChannel>(ch.release())] {
            try {
                Transcript t = serve_session(*c, model, cfg);
                if (on_session) on_session(t);
            } catch (const std::exception&) {
                // session failures are isolated; the channel closes with it
            }
        });
    }
    for (auto& w : workers) w.join();
}

}  // namespace falcon
