// falcon: two-party secure CNN inference.
//
//   serve         host a model for encrypted predictions
//   predict       classify a private image against a remote model
//   predict-plain cleartext reference run (oracle)
//   bench         loopback benchmark with transcript accounting
//   verify-bound  randomized check of the softmax threshold bound
//   gen-model     generate a toy model + sample image

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "falcon/session.hpp"

using namespace falcon;

namespace {

Seed32 seed_from_cli(u64 seed_arg) {
    if (const char* env = std::getenv("FALCON_SEED"))
        return seed_from_u64(std::strtoull(env, nullptr, 10));
    if (seed_arg) return seed_from_u64(seed_arg);
    return random_seed();
}

std::pair<std::string, std::uint16_t> parse_addr(const std::string& addr) {
    auto colon = addr.find_last_of(':');
    check(colon != std::string::npos, ErrorCode::BadArgument, "address must be host:port");
    return {addr.substr(0, colon), static_cast<std::uint16_t>(std::stoul(addr.substr(colon + 1)))};
}

void print_transcript_summary(const Transcript& t) {
    std::cout << "  setup:  " << t.setup_ms << " ms, " << (t.setup_bytes_sent + t.setup_bytes_received)
              << " bytes, " << t.setup_frames << " frames\n";
    std::cout << "  online: " << t.online_ms << " ms, "
              << (t.online_bytes_sent + t.online_bytes_received) << " bytes, " << t.online_frames
              << " frames\n";
    std::cout << "  he ops: " << t.he_ops.mults_pt << " SIMDMul, "
              << (t.he_ops.adds_ct + t.he_ops.adds_pt) << " SIMDAdd, " << t.he_ops.rotations
              << " rotations\n";
    std::cout << "  gc:     " << t.gc_cost.to_string() << " (" << t.gc_and_gates << " AND gates, "
              << t.ot_count << " OTs)\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"falcon: FFT-domain two-party secure CNN inference"};
    app.require_subcommand(1);

    // ---- serve ----
    auto* serve_cmd = app.add_subcommand("serve", "host a model for encrypted predictions");
    std::string serve_model, listen_addr = "0.0.0.0:7700";
    u64 serve_seed = 0;
    bool serve_argmax = false, serve_insecure = false;
    serve_cmd->add_option("--model", serve_model, "model manifest path")->required();
    serve_cmd->add_option("--listen", listen_addr, "listen address host:port");
    serve_cmd->add_flag("--argmax-only", serve_argmax, "never disclose probabilities");
    serve_cmd->add_flag("--insecure-ot", serve_insecure, "permit dealer OT (testing only)");
    serve_cmd->add_option("--seed", serve_seed, "deterministic randomness seed");

    // ---- predict ----
    auto* predict_cmd = app.add_subcommand("predict", "classify a private image remotely");
    std::string predict_input, connect_addr = "127.0.0.1:7700";
    u64 predict_seed = 0;
    u32 accuracy_l = 2;
    bool predict_argmax = false, predict_insecure = false;
    predict_cmd->add_option("--input", predict_input, "image path")->required();
    predict_cmd->add_option("--connect", connect_addr, "server address host:port");
    predict_cmd->add_option("--accuracy", accuracy_l, "softmax accuracy exponent l (error 10^-l)");
    predict_cmd->add_flag("--argmax-only", predict_argmax, "request the label only");
    predict_cmd->add_flag("--insecure-ot", predict_insecure, "use dealer OT (testing only)");
    predict_cmd->add_option("--seed", predict_seed, "deterministic randomness seed");

    // ---- predict-plain ----
    auto* plain_cmd = app.add_subcommand("predict-plain", "cleartext reference prediction");
    std::string plain_model, plain_input;
    plain_cmd->add_option("--model", plain_model, "model manifest path")->required();
    plain_cmd->add_option("--input", plain_input, "image path")->required();

    // ---- bench ----
    auto* bench_cmd = app.add_subcommand("bench", "loopback benchmark with transcripts");
    std::string bench_model, bench_input, report_path;
    u64 bench_seed = 1;
    bool bench_fused = false, bench_unfused = false;
    bench_cmd->add_option("--model", bench_model, "model manifest path")->required();
    bench_cmd->add_option("--input", bench_input, "image path")->required();
    bench_cmd->add_option("--report", report_path, "write the transcript CSV here");
    bench_cmd->add_flag("--fused", bench_fused, "fused maxpool+relu pipeline (default)");
    bench_cmd->add_flag("--unfused", bench_unfused, "expand fused layers to relu+maxpool");
    bench_cmd->add_option("--seed", bench_seed, "deterministic randomness seed");

    // ---- verify-bound ----
    auto* vb_cmd = app.add_subcommand("verify-bound", "randomized softmax threshold check");
    u32 vb_k = 10, vb_l = 2;
    u64 vb_trials = 10000, vb_seed = 1;
    vb_cmd->add_option("--K", vb_k, "class count")->required();
    vb_cmd->add_option("--l", vb_l, "accuracy exponent")->required();
    vb_cmd->add_option("--trials", vb_trials, "random logit vectors to test");
    vb_cmd->add_option("--seed", vb_seed, "sweep seed");

    // ---- gen-model ----
    auto* gen_cmd = app.add_subcommand("gen-model", "generate a toy model and sample image");
    std::string gen_out = "toy.model", gen_image;
    u64 gen_seed = 1;
    u32 gen_side = 8, gen_classes = 4, gen_l = 2;
    bool gen_unfused = false;
    gen_cmd->add_option("--out", gen_out, "manifest output path");
    gen_cmd->add_option("--image", gen_image, "also write a sample image here");
    gen_cmd->add_option("--seed", gen_seed, "generation seed");
    gen_cmd->add_option("--side", gen_side, "input side length");
    gen_cmd->add_option("--classes", gen_classes, "class count");
    gen_cmd->add_option("--accuracy", gen_l, "softmax accuracy exponent");
    gen_cmd->add_flag("--unfused", gen_unfused, "emit relu+maxpool instead of the fused layer");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*serve_cmd) {
            auto model = load_model(serve_model);
            auto [host, port] = parse_addr(listen_addr);
            SessionConfig cfg;
            cfg.frac_bits = model.desc.frac_bits;
            cfg.argmax_only = serve_argmax;
            cfg.allow_insecure_ot = serve_insecure;
            cfg.seed = seed_from_cli(serve_seed);
            TcpListener listener(port, host);
            std::cout << "serving " << serve_model << " on " << host << ":" << listener.port()
                      << "\n";
            serve(listener, model, cfg, [](const Transcript& t) {
                std::cout << "session complete\n";
                print_transcript_summary(t);
            });
        } else if (*predict_cmd) {
            auto img = load_image(predict_input);
            auto [host, port] = parse_addr(connect_addr);
            SessionConfig cfg;
            cfg.argmax_only = predict_argmax;
            cfg.softmax_l = accuracy_l;
            cfg.ot_mode = predict_insecure ? OtMode::InsecureDealer : OtMode::BaseOt;
            cfg.allow_insecure_ot = predict_insecure;
            cfg.seed = seed_from_cli(predict_seed);
            auto res = predict(img, host, port, cfg);
            std::cout << "class: " << res.prediction.t << "\n";
            if (res.prediction.probability)
                std::cout << "probability: " << *res.prediction.probability << "\n";
            print_transcript_summary(res.transcript);
        } else if (*plain_cmd) {
            auto model = load_model(plain_model);
            auto img = load_image(plain_input);
            const double scale = std::exp2(static_cast<double>(model.desc.frac_bits));
            ImageF f{img.shape, {}};
            for (i64 v : img.data) f.data.push_back(v / scale);
            auto plain = plain_forward(dequantize(model), f);
            auto fixed = fixed_point_forward(model, img);
            std::cout << "class: " << plain.t << " (plain), " << fixed.t << " (fixed point)\n";
            std::cout << "probability: " << plain.probability << " (plain), " << fixed.probability
                      << " (fixed point, drop rule)\n";
            std::cout << "logits:";
            for (double v : plain.logits) std::cout << " " << v;
            std::cout << "\n";
        } else if (*bench_cmd) {
            auto model = load_model(bench_model);
            auto img = load_image(bench_input);
            SessionConfig scfg, ccfg;
            scfg.frac_bits = ccfg.frac_bits = model.desc.frac_bits;
            scfg.seed = derive_seed(seed_from_cli(bench_seed), "server");
            ccfg.seed = derive_seed(seed_from_cli(bench_seed), "client");
            scfg.allow_insecure_ot = ccfg.allow_insecure_ot = true;
            ccfg.ot_mode = OtMode::InsecureDealer;
            ccfg.use_fused = !bench_unfused;
            scfg.use_fused = !bench_unfused;
            auto [res, tr] = run_inprocess(model, img, scfg, ccfg);
            std::cout << (bench_unfused ? "unfused" : "fused") << " pipeline\n";
            std::cout << "class: " << res.prediction.t;
            if (res.prediction.probability)
                std::cout << ", probability " << *res.prediction.probability;
            std::cout << "\n";
            print_transcript_summary(tr);
            if (!report_path.empty()) {
                std::ofstream rf(report_path, std::ios::trunc);
                rf << transcript_report(tr);
                std::cout << "report written to " << report_path << "\n";
            }
        } else if (*vb_cmd) {
            u32 m = threshold_m(vb_l, vb_k);
            std::cout << "K=" << vb_k << " l=" << vb_l << " m=" << m << " (bound "
                      << raw_threshold_bound(vb_l, vb_k) << ")\n";
            Rng rng(seed_from_cli(vb_seed));
            double worst = 0;
            for (u64 t = 0; t < vb_trials; ++t) {
                std::vector<double> logits(vb_k);
                for (auto& v : logits) v = rng.uniform_real(-20.0, 120.0);
                worst = std::max(worst, softmax_oracle(logits, vb_l, m).gap);
            }
            double budget = std::pow(10.0, -static_cast<double>(vb_l));
            std::cout << "max |p_t - p_t'| over " << vb_trials << " trials: " << worst
                      << " (budget " << budget << ")\n";
            std::cout << (worst <= budget ? "PASS" : "FAIL") << "\n";
            return worst <= budget ? 0 : 1;
        } else if (*gen_cmd) {
            auto m = make_toy_model(seed_from_u64(gen_seed), gen_side, gen_classes, !gen_unfused,
                                    true, gen_l);
            auto qm = quantize(m, kDefaultFracBits);
            save_model(qm, gen_out);
            std::cout << "model written to " << gen_out << " (+ .weights sidecar)\n";
            if (!gen_image.empty()) {
                auto img = quantize_image(make_toy_image(seed_from_u64(gen_seed + 1), m.input),
                                          kDefaultFracBits);
                save_image(img, gen_image);
                std::cout << "image written to " << gen_image << "\n";
            }
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
