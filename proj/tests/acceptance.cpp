// Acceptance suite: runs every criterion at its stated tolerance and prints
// one pass/fail line per criterion. Exit code = number of failed criteria.
//
// The heavy criteria share one full-size training run (criterion 5); the
// strategy ablation (criterion 7) trains four smaller models of its own.

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "dubengine/metrics.hpp"
#include "dubengine/sample.hpp"
#include "dubengine/sha256.hpp"
#include "dubengine/train.hpp"
#include "dubengine/world.hpp"

using namespace dubengine;
namespace fs = std::filesystem;

namespace {

struct Harness {
    int failed = 0;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    double elapsed() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }

    void report(int idx, const std::string& name, bool ok, const std::string& detail) {
        std::printf("[%s] criterion %d: %s -- %s (t=%.0fs)\n", ok ? "PASS" : "FAIL", idx,
                    name.c_str(), detail.c_str(), elapsed());
        std::fflush(stdout);
        if (!ok) ++failed;
    }
};

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof(buf), f, ap);
    va_end(ap);
    return buf;
}

double now_s() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

// ---------------------------------------------------------------------------
// 1. Arithmetic golden suite
// ---------------------------------------------------------------------------
void criterion1(Harness& h) {
    double t0 = now_s();
    bool ok = true;
    std::string why;
    try {
        ok &= pixel_to_latent(9) == 3;
        ok &= latent_to_pixel(3) == 9;
        ok &= pixel_to_latent(81) == 21;
        ok &= latent_to_pixel(21) == 81;
        for (int n = 1; n <= 10000 && ok; n += 4) ok &= latent_to_pixel(pixel_to_latent(n)) == n;
        ChunkPlan p153 = build_chunk_plan(153);
        ok &= p153.chunk_count() == 2 &&
              p153.chunks[1].emit_px_end - p153.chunks[1].emit_px_start == 72;
        ChunkPlan p81 = build_chunk_plan(81);
        ok &= p81.chunk_count() == 1 && p81.chunks[0].context_source == ContextSource::none;
        ChunkPlan p200 = build_chunk_plan(200);
        ok &= p200.chunk_count() == 3 && p200.chunks[2].px_start == 119 &&
              p200.chunks[2].px_end == 200 && p200.chunks[2].emit_px_start == 153;
        FrameArithmetic a;
        ok &= a.new_pixels_per_chunk() == 72 && a.t_c() == 3;
    } catch (const std::exception& e) {
        ok = false;
        why = e.what();
    }
    double dt = now_s() - t0;
    ok &= dt < 1.0;
    h.report(1, "arithmetic golden suite", ok, why.empty() ? fmt("runtime %.3fs", dt) : why);
}

// ---------------------------------------------------------------------------
// 2. Conditioning assembly
// ---------------------------------------------------------------------------
void criterion2(Harness& h) {
    double t0 = now_s();
    bool ok = true;
    std::string why;
    try {
        Rng rng(3);
        Mat<float> x_t(18, 12), x_ctx(3, 12);
        rng.fill_normal(x_t.data.data(), x_t.size());
        rng.fill_normal(x_ctx.data.data(), x_ctx.size());
        std::vector<float> ref(12);
        rng.fill_normal(ref.data(), ref.size());
        auto b = assemble_conditioning(x_t, x_ctx, ref, 1);
        ok &= b.z.rows == 21 && b.z.cols == 25;
        ok &= b.mask_sum() == 1.0;
        for (int i = 0; i < b.z.rows && ok; ++i)
            for (int j = 0; j < 12; ++j)
                if (i == 0)
                    ok &= b.z.at(0, 12 + j) == ref[j];
                else
                    ok &= b.z.at(i, 12 + j) == 0.f;
        for (int t = 1; t <= 40 && ok; ++t) {
            int c = 1 + rng.below(16);
            int m_ch = 1 + rng.below(4);
            int t_ctx = rng.below(4);
            Mat<float> xt(t, c), xc(t_ctx, c);
            rng.fill_normal(xt.data.data(), xt.size());
            std::vector<float> r2(c, 0.5f);
            auto bb = assemble_conditioning(xt, xc, r2, m_ch);
            ok &= bb.z.rows == t + t_ctx && bb.z.cols == 2 * c + m_ch;
            ok &= bb.mask_sum() == static_cast<double>(m_ch);
        }
    } catch (const std::exception& e) {
        ok = false;
        why = e.what();
    }
    double dt = now_s() - t0;
    ok &= dt < 5.0;
    h.report(2, "Eq.3 conditioning assembly", ok, why.empty() ? fmt("runtime %.3fs", dt) : why);
}

// ---------------------------------------------------------------------------
// 3. Flow-matching correctness
// ---------------------------------------------------------------------------
void criterion3(Harness& h) {
    double t0 = now_s();
    bool ok = true;
    std::string why;
    int checked = 0;
    double worst = 0;
    try {
        ModelConfig cfg;
        cfg.c_lat = 5;
        cfg.d_audio = 4;
        cfg.audio_window = 1;
        cfg.d_ref = 12;
        cfg.width = 32;
        cfg.depth = 2;
        cfg.heads = 4;
        VelocityModel<double> model(cfg, 11);

        Rng rng(23);
        const int t_ctx = 2, t = 4;
        Mat<double> x0(t, cfg.c_lat), x_ctx(t_ctx, cfg.c_lat), noise(t, cfg.c_lat);
        rng.fill_normal(x0.data.data(), x0.size());
        rng.fill_normal(x_ctx.data.data(), x_ctx.size());
        rng.fill_normal(noise.data.data(), noise.size());
        std::vector<double> ref(cfg.c_lat);
        rng.fill_normal(ref.data(), ref.size());
        Mat<double> audio(t_ctx + t, cfg.d_audio_tok());
        rng.fill_normal(audio.data.data(), audio.size());
        const double tv = 0.37;

        ModelParams<double> grads;
        grads.resize(cfg);
        grads.zero();
        fm_loss_backward(model, x0, x_ctx, ref, audio, tv, noise, grads);

        std::vector<Mat<double>*> pmats, gmats;
        model.p.visit([&](const std::string&, Mat<double>& m) { pmats.push_back(&m); });
        grads.visit([&](const std::string&, Mat<double>& m) { gmats.push_back(&m); });
        int64_t total = model.count_params();
        const double eps = 1e-3;
        Rng pick(31);
        while (checked < 64) {
            int64_t off = static_cast<int64_t>(pick.next_u64() % static_cast<uint64_t>(total));
            size_t mi = 0;
            while (off >= static_cast<int64_t>(pmats[mi]->size())) {
                off -= static_cast<int64_t>(pmats[mi]->size());
                ++mi;
            }
            double* pv = &pmats[mi]->data[static_cast<size_t>(off)];
            double analytic = gmats[mi]->data[static_cast<size_t>(off)];
            double keep = *pv;
            *pv = keep + eps;
            double lp = fm_loss(model, x0, x_ctx, ref, audio, tv, noise, cfg.m_ch);
            *pv = keep - eps;
            double lm = fm_loss(model, x0, x_ctx, ref, audio, tv, noise, cfg.m_ch);
            *pv = keep;
            double numeric = (lp - lm) / (2 * eps);
            double denom = std::max(std::abs(analytic), std::abs(numeric));
            if (denom >= 1e-9) {
                double rel = std::abs(analytic - numeric) / denom;
                worst = std::max(worst, rel);
                ok &= rel < 1e-2;
            } else {
                ok &= std::abs(analytic - numeric) < 1e-9;
            }
            ++checked;
        }

        // interpolant endpoints are exact
        auto b0 = build_fm_bundle(x0, x_ctx, ref, audio, 0.0, noise, 1);
        ok &= b0.noisy_state().data == x0.data;
        auto b1 = build_fm_bundle(x0, x_ctx, ref, audio, 1.0, noise, 1);
        ok &= b1.noisy_state().data == noise.data;

        // the oracle minimizer reaches exactly zero
        struct Oracle {
            Mat<double> target;
            int t_ctx;
            Mat<double> forward(const ConditioningBundle<double>& b, double) const {
                Mat<double> out(b.tokens(), b.c_lat);
                for (int i = 0; i < target.rows; ++i)
                    for (int c = 0; c < target.cols; ++c) out.at(t_ctx + i, c) = target.at(i, c);
                return out;
            }
        } oracle;
        oracle.t_ctx = t_ctx;
        oracle.target = Mat<double>(t, cfg.c_lat);
        for (size_t i = 0; i < oracle.target.data.size(); ++i)
            oracle.target.data[i] = x0.data[i] - noise.data[i];
        ok &= fm_loss(oracle, x0, x_ctx, ref, audio, tv, noise) == 0.0;
    } catch (const std::exception& e) {
        ok = false;
        why = e.what();
    }
    double dt = now_s() - t0;
    ok &= dt < 120.0;
    h.report(3, "flow-matching correctness (64-param gradient check)", ok,
             why.empty() ? fmt("worst rel err %.2e over %d params, runtime %.1fs", worst, checked, dt)
                         : why);
}

// ---------------------------------------------------------------------------
// 4. ODE solver oracle
// ---------------------------------------------------------------------------
void criterion4(Harness& h) {
    double t0 = now_s();
    bool ok = true;
    std::string why;
    double r1 = 0, r2 = 0;
    try {
        const double a = -0.8;
        Mat<double> init(1, 1);
        init.at(0, 0) = 1.7;
        const double exact = std::exp(a) * init.at(0, 0);
        auto run = [&](int steps) {
            Mat<double> x_t(1, 1), ctx(1, 1);
            std::vector<double> ref(1, 0.0);
            auto bundle = assemble_conditioning(x_t, ctx, ref, 1);
            bundle.audio_tokens = Mat<double>(2, 1);
            auto field = [&](const ConditioningBundle<double>& b, double) {
                Mat<double> st = b.noisy_state();
                Mat<double> v(b.tokens(), 1);
                v.at(b.noisy_lo(), 0) = a * st.at(0, 0);
                return v;
            };
            Rng rng(1);
            return std::abs(ode_solve(field, bundle, steps, rng, 1.0, &init).at(0, 0) - exact);
        };
        double e10 = run(10), e20 = run(20), e40 = run(40);
        r1 = e10 / e20;
        r2 = e20 / e40;
        ok &= r1 > 1.6 && r1 < 2.4 && r2 > 1.6 && r2 < 2.4;
    } catch (const std::exception& e) {
        ok = false;
        why = e.what();
    }
    double dt = now_s() - t0;
    ok &= dt < 10.0;
    h.report(4, "ODE solver halving on a linear field", ok,
             why.empty()
                 ? fmt("err ratios %.2f, %.2f (target 2 +/- 20%%), runtime %.2fs", r1, r2, dt)
                 : why);
}

// ---------------------------------------------------------------------------
// 5. Training viability (shared model for criteria 6 and 8)
// ---------------------------------------------------------------------------
struct SharedModel {
    VelocityModel<float> model;
    bool ready = false;
};

void criterion5(Harness& h, SharedModel& shared) {
    double t0 = now_s();
    bool ok = true;
    std::string why;
    double ratio = 0, sync_mean = 0, sync_min = 1e9;
    try {
        Dataset ds = build_dataset(16, 405, 42);
        TrainConfig tc;  // defaults: width 128, depth 4, steps 2000, batch 8, m3
        tc.seed = 1;
        fs::path out = fs::temp_directory_path() / "dub_acceptance_train";
        TrainResult r = train(ds, tc, out, &shared.model);
        shared.ready = true;
        ratio = r.final_smoothed / r.initial_smoothed;
        ok &= ratio < 0.5;

        for (int i = 0; i < 8; ++i) {
            ClipRecord src = build_clip(405, derive_seed(900, i), i, 8, 25.0);
            AudioTrack audio = gen_audio(405, derive_seed(901, i));
            DubRequest req = make_dub_request(src.latent, audio);
            SamplerConfig sc;
            sc.seed = derive_seed(902, i);
            LatentVideo dubbed = dub_streaming(req, shared.model, sc);
            double s = sync_score(dubbed, audio);
            sync_mean += s / 8;
            sync_min = std::min(sync_min, s);
        }
        ok &= sync_mean >= 0.6;
    } catch (const std::exception& e) {
        ok = false;
        why = e.what();
    }
    double dt = now_s() - t0;
    ok &= dt <= 1800.0;
    h.report(5, "training viability (loss halves, held-out sync >= 0.6)", ok,
             why.empty() ? fmt("loss ratio %.3f (<0.5), sync mean %.3f min %.3f, runtime %.0fs",
                               ratio, sync_mean, sync_min, dt)
                         : why);
}

// ---------------------------------------------------------------------------
// 6. I2V error accumulation and FL2V boundary jerk (paired seeds)
// ---------------------------------------------------------------------------
void criterion6(Harness& h, SharedModel& shared) {
    bool ok = true;
    std::string why;
    const int n = 12;
    int drift_wins = 0, jerk_wins = 0;
    double dmean_s = 0, dmean_i = 0, jmean_s = 0, jmean_f = 0, p_drift = 1, p_jerk = 1;
    try {
        if (!shared.ready) throw DataError("criterion 5 training unavailable");
        for (int i = 0; i < n; ++i) {
            ClipRecord src = build_clip(729, derive_seed(910, i), i, 8, 25.0);  // 10 chunks
            AudioTrack audio = gen_audio(729, derive_seed(911, i));
            DubRequest req = make_dub_request(src.latent, audio);
            SamplerConfig sc;
            sc.seed = derive_seed(912, i);
            LatentVideo s_out = dub_streaming(req, shared.model, sc);
            LatentVideo i_out = dub_i2v(req, shared.model, sc);
            LatentVideo f_out = dub_fl2v(req, shared.model, sc);
            DubReport rs = evaluate_dub(s_out, src.latent, audio, req.plan);
            DubReport ri = evaluate_dub(i_out, src.latent, audio, req.plan);
            DubReport rf = evaluate_dub(f_out, src.latent, audio, req.plan);
            dmean_s += rs.identity_drift_mean / n;
            dmean_i += ri.identity_drift_mean / n;
            jmean_s += *rs.boundary_jerk_ratio / n;
            jmean_f += *rf.boundary_jerk_ratio / n;
            drift_wins += ri.identity_drift_mean > rs.identity_drift_mean;
            jerk_wins += *rf.boundary_jerk_ratio > *rs.boundary_jerk_ratio;
        }
        p_drift = sign_test_p(drift_wins, n);
        p_jerk = sign_test_p(jerk_wins, n);
        ok &= dmean_i > dmean_s && p_drift < 0.05;
        ok &= jmean_f > jmean_s && p_jerk < 0.05;
    } catch (const std::exception& e) {
        ok = false;
        why = e.what();
    }
    h.report(6, "I2V drift / FL2V jerk exceed streaming (sign test p<0.05)", ok,
             why.empty() ? fmt("drift i2v %.4f > s %.4f (%d/%d, p=%.4f); jerk fl2v %.2f > s %.2f "
                               "(%d/%d, p=%.4f)",
                               dmean_i, dmean_s, drift_wins, n, p_drift, jmean_f, jmean_s,
                               jerk_wins, n, p_jerk)
                         : why);
}

// ---------------------------------------------------------------------------
// 7. Reference-strategy ablation (Table-3 structure, directional)
// ---------------------------------------------------------------------------
void criterion7(Harness& h) {
    bool ok = true;
    std::string why;
    double ctrl[4] = {0}, drift[4] = {0}, sync[4] = {0};
    try {
        Dataset ds = build_dataset(16, 405, 42);
        const RefStrategyKind kinds[4] = {RefStrategyKind::m0, RefStrategyKind::m1,
                                          RefStrategyKind::m2, RefStrategyKind::m3};
        std::vector<VelocityModel<float>> models(4);
        for (int s = 0; s < 4; ++s) {
            TrainConfig tc;
            tc.steps = 1500;
            tc.seed = 1;  // identical init and data order across strategies
            tc.model.width = 64;
            tc.strategy.kind = kinds[s];
            fs::path out = fs::temp_directory_path() /
                           (std::string("dub_acceptance_ablate_") + strategy_name(kinds[s]));
            train(ds, tc, out, &models[s]);
        }
        const int n = 8;
        for (int i = 0; i < n; ++i) {
            ClipRecord src = build_clip(729, derive_seed(930, i), i, 8, 25.0);
            AudioTrack audio = gen_audio(729, derive_seed(931, i));
            DubRequest req = make_dub_request(src.latent, audio);
            for (int s = 0; s < 4; ++s) {
                SamplerConfig sc;
                sc.seed = derive_seed(932, i);  // paired across strategies
                LatentVideo out = dub_streaming(req, models[s], sc);
                DubReport rep = evaluate_dub(out, src.latent, audio, req.plan);
                ctrl[s] += rep.control_strength_mean / n;
                drift[s] += rep.identity_drift_mean / n;
                sync[s] += rep.sync_corr / n;
            }
        }
        ok &= ctrl[1] > ctrl[3];    // m1 replicates harder than m3
        ok &= drift[2] > drift[3];  // m2 drifts more than m3
        ok &= sync[3] >= sync[1];   // m3 syncs at least as well as m1
    } catch (const std::exception& e) {
        ok = false;
        why = e.what();
    }
    h.report(7, "strategy ablation directions (m1 vs m3 control, m2 vs m3 drift, sync)", ok,
             why.empty() ? fmt("ctrl m1 %.4f vs m3 %.4f; drift m2 %.4f vs m3 %.4f; sync m3 %.3f "
                               "vs m1 %.3f",
                               ctrl[1], ctrl[3], drift[2], drift[3], sync[3], sync[1])
                         : why);
}

// ---------------------------------------------------------------------------
// 8. SDEdit camera property
// ---------------------------------------------------------------------------
void criterion8(Harness& h, SharedModel& shared) {
    bool ok = true;
    std::string why;
    const double t0s[5] = {0.2, 0.4, 0.6, 0.8, 1.0};
    double cam[5] = {0, 0, 0, 0, 0};
    try {
        if (!shared.ready) throw DataError("criterion 5 training unavailable");
        const int n = 20;
        for (int i = 0; i < n; ++i) {
            ClipRecord src = build_clip(225, derive_seed(920, i), i, 8, 25.0);
            AudioTrack audio = gen_audio(225, derive_seed(921, i));
            DubRequest req = make_dub_request(src.latent, audio);
            for (int k = 0; k < 5; ++k) {
                SamplerConfig sc;
                sc.seed = derive_seed(922, i);
                sc.sdedit_t0 = t0s[k];
                LatentVideo out = dub_streaming(req, shared.model, sc);
                cam[k] += camera_error(out, src.latent) / n;
            }
        }
        for (int k = 1; k < 5; ++k) ok &= cam[k] >= cam[k - 1];

        // t0 = 0 returns the source exactly
        ClipRecord src = build_clip(225, derive_seed(920, 0), 0, 8, 25.0);
        AudioTrack audio = gen_audio(225, derive_seed(921, 0));
        DubRequest req = make_dub_request(src.latent, audio);
        SamplerConfig sc;
        sc.sdedit_t0 = 0.0;
        LatentVideo out = dub_streaming(req, shared.model, sc);
        ok &= out.frames.data == src.latent.frames.data;
    } catch (const std::exception& e) {
        ok = false;
        why = e.what();
    }
    h.report(8, "SDEdit camera error non-decreasing in t0; t0=0 copies source", ok,
             why.empty() ? fmt("camera error by t0: %.4f %.4f %.4f %.4f %.4f", cam[0], cam[1],
                               cam[2], cam[3], cam[4])
                         : why);
}

// ---------------------------------------------------------------------------
// 9. End-to-end determinism through the CLI
// ---------------------------------------------------------------------------
int run_cli(const std::string& args, const fs::path& log) {
    std::string cmd = std::string(DUB_ENGINE_BINARY) + " " + args + " > " + log.string() + " 2>&1";
    int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

void criterion9(Harness& h) {
    bool ok = true;
    std::string why;
    try {
        fs::path root = fs::temp_directory_path() / "dub_acceptance_cli";
        fs::remove_all(root);
        fs::create_directories(root);
        json cfg;
        cfg["seed"] = 21;
        cfg["world"] = {{"n_clips", 3}, {"clip_len", 165}, {"d_audio", 8}, {"fps", 25.0}};
        cfg["model"] = {{"width", 32},  {"depth", 2},        {"heads", 4},
                        {"d_ref", 16},  {"audio_window", 1}, {"m_ch", 1}};
        cfg["train"] = {{"steps", 40},
                        {"batch_size", 4},
                        {"learning_rate", 3e-4},
                        {"strategy", "m3"},
                        {"log_every", 10}};
        cfg["sample"] = {{"ode_steps", 5}, {"mode", "streaming"}, {"seed", 77}};
        fs::path log = root / "cli.log";

        auto run_all = [&](const std::string& tag) {
            fs::path out = root / tag;
            json c = cfg;
            c["out_dir"] = out.string();
            fs::path cpath = root / (tag + ".json");
            write_text_file(cpath, c.dump(2));
            if (run_cli("generate-data --config " + cpath.string(), log) != 0)
                throw DataError("generate-data failed: " + read_text_file(log));
            if (run_cli("train --config " + cpath.string(), log) != 0)
                throw DataError("train failed: " + read_text_file(log));
            if (run_cli("dub --config " + cpath.string() + " --checkpoint " +
                            (out / "checkpoint.bin").string() + " --source " +
                            (out / "dataset.bin").string() + " --source-index 0 --audio " +
                            (out / "dataset.bin").string() + " --audio-index 1 --out " +
                            (out / "dub").string(),
                        log) != 0)
                throw DataError("dub failed: " + read_text_file(log));
            std::vector<std::string> hashes;
            for (const char* f : {"dataset.bin", "checkpoint.bin", "train_log.jsonl"})
                hashes.push_back(sha256_file((out / f).string()));
            for (const char* f :
                 {"dub/dub_output.bin", "dub/dub_report.json", "dub/run_summary.json"})
                hashes.push_back(sha256_file((out / f).string()));
            return hashes;
        };
        auto h1 = run_all("run_a");
        auto h2 = run_all("run_b");
        ok &= h1 == h2;
        if (!ok) why = "artifact hashes differ between identical runs";
    } catch (const std::exception& e) {
        ok = false;
        why = e.what();
    }
    h.report(9, "bitwise determinism of dataset, checkpoint and reports via the CLI", ok,
             why.empty() ? "6 artifacts hashed identically across reruns" : why);
}

}  // namespace

int main() {
    std::printf("dubengine acceptance suite\n");
    Harness h;
    SharedModel shared;
    criterion1(h);
    criterion2(h);
    criterion3(h);
    criterion4(h);
    criterion5(h, shared);
    criterion6(h, shared);
    criterion7(h);
    criterion8(h, shared);
    criterion9(h);
    std::printf("%d/9 criteria passed\n", 9 - h.failed);
    return h.failed;
}
