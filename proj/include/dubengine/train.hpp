#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "dubengine/core.hpp"
#include "dubengine/model.hpp"
#include "dubengine/rng.hpp"
#include "dubengine/world.hpp"

namespace dubengine {

// ---------------------------------------------------------------------------
// Flow-matching convention used across the engine:
//   t = 0 is data, t = 1 is noise,
//   x_t = (1 - t) * x0 + t * noise,
//   regression target = (x0 - noise),
//   sampling integrates x <- x + (t_cur - t_next) * v from t_start down to 0.
// The loss covers noisy-span positions only; context positions stay clean.
// ---------------------------------------------------------------------------

enum class RefStrategyKind { m0, m1, m2, m3 };

inline const char* strategy_name(RefStrategyKind k) {
    switch (k) {
        case RefStrategyKind::m0: return "m0";
        case RefStrategyKind::m1: return "m1";
        case RefStrategyKind::m2: return "m2";
        default: return "m3";
    }
}

inline RefStrategyKind strategy_from_name(const std::string& s) {
    if (s == "m0") return RefStrategyKind::m0;
    if (s == "m1") return RefStrategyKind::m1;
    if (s == "m2") return RefStrategyKind::m2;
    if (s == "m3") return RefStrategyKind::m3;
    throw ConfigError("unknown reference strategy: " + s + " (expected m0|m1|m2|m3)");
}

struct ReferenceStrategy {
    RefStrategyKind kind = RefStrategyKind::m3;
    int near_radius_px = 25;  // ~1 s at 25 fps
    int far_min_px = 125;     // ~5 s

    void validate() const {
        check_config(near_radius_px >= 1 && far_min_px >= 1, "strategy radii must be >= 1");
        check_config(near_radius_px < far_min_px, "near_radius_px must be < far_min_px");
    }
};

struct TrainConfig {
    int steps = 2000;
    int batch_size = 8;
    double learning_rate = 3e-4;
    uint64_t seed = 1;
    ReferenceStrategy strategy;
    double context_dropout_prob = 0.1;
    int log_every = 50;
    double grad_clip = 1.0;
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
    double divergence_threshold = 1e3;
    ModelConfig model;
    FrameArithmetic arith;

    void validate() const {
        check_config(steps >= 0, "steps must be >= 0");
        check_config(batch_size >= 1, "batch_size must be >= 1");
        check_config(learning_rate > 0, "learning_rate must be > 0");
        check_config(context_dropout_prob >= 0 && context_dropout_prob <= 1,
                     "context_dropout_prob must be in [0,1]");
        check_config(log_every >= 1, "log_every must be >= 1");
        check_config(grad_clip > 0, "grad_clip must be > 0");
        strategy.validate();
        model.validate();
        arith.validate();
    }
};

// ---------------------------------------------------------------------------
// Training-window and reference sampling
// ---------------------------------------------------------------------------

struct WindowSample {
    Mat<float> x_context;  // [t_c x C]; all zeros when zero_context
    bool zero_context = false;
    Mat<float> x0;  // [t x C]
    int window_start_px = 0;
    std::pair<int, int> chunk_span_px{0, 0};
};

inline WindowSample sample_training_window(const ClipRecord& clip, const FrameArithmetic& arith,
                                           double dropout_prob, Rng& rng) {
    const int n_px = clip.audio.pixel_frames();
    const int stride = arith.temporal_stride;
    if (n_px < arith.chunk_pixel_len)
        throw DataError("clip of " + std::to_string(n_px) + " px frames is too short for a " +
                        std::to_string(arith.chunk_pixel_len) + "-frame training window");
    const int n_starts = (n_px - arith.chunk_pixel_len) / stride + 1;
    const int s = stride * rng.below(n_starts);
    const int l0 = s / stride;
    const int t_c = arith.t_c();
    const int t_all = arith.chunk_latent_len();

    WindowSample w;
    w.window_start_px = s;
    w.chunk_span_px = {s, s + arith.chunk_pixel_len};
    w.x_context = clip.latent.frames.slice_rows(l0, l0 + t_c);
    w.x0 = clip.latent.frames.slice_rows(l0 + t_c, l0 + t_all);
    if (rng.uniform() < dropout_prob) {
        w.zero_context = true;
        w.x_context.zero();
    }
    return w;
}

// Reference position sampling, at pixel granularity. Distances are measured
// in pixel frames from the chunk span boundary; the returned index maps to
// its covering latent frame when the factor vector is extracted.
inline int sample_reference(const ReferenceStrategy& strategy, int clip_len_px,
                            std::pair<int, int> span, Rng& rng) {
    strategy.validate();
    const int s = span.first, e = span.second;
    check_data(s >= 0 && s < e && e <= clip_len_px, "chunk span outside clip");
    switch (strategy.kind) {
        case RefStrategyKind::m0:
            return s + rng.below(e - s);
        case RefStrategyKind::m1:
            return rng.below(2) == 0 ? s : e - 1;
        case RefStrategyKind::m2: {
            const int left = std::max(0, s - strategy.far_min_px);          // [0, left)
            const int right_lo = e + strategy.far_min_px;                   // [right_lo, clip)
            const int right = std::max(0, clip_len_px - right_lo);
            if (left + right == 0)
                throw DataError(
                    "M2 reference sampling infeasible: no frame farther than " +
                    std::to_string(strategy.far_min_px) + " px from chunk span [" +
                    std::to_string(s) + "," + std::to_string(e) + ") in a clip of " +
                    std::to_string(clip_len_px) + " frames; use longer clips");
            int u = rng.below(left + right);
            return u < left ? u : right_lo + (u - left);
        }
        case RefStrategyKind::m3:
        default: {
            const int left_lo = std::max(0, s - strategy.near_radius_px);  // [left_lo, s)
            const int left = s - left_lo;
            const int right_hi = std::min(clip_len_px, e + strategy.near_radius_px);  // [e, right_hi)
            const int right = std::max(0, right_hi - e);
            if (left + right == 0)
                throw DataError("M3 reference sampling infeasible: chunk span covers the clip");
            int u = rng.below(left + right);
            return u < left ? left_lo + u : e + (u - left);
        }
    }
}

inline std::vector<float> reference_frame_at(const LatentVideo& video, int pixel_index,
                                             int stride = 4) {
    int lat = covering_latent(pixel_index, stride);
    check_data(lat < video.latent_frames(), "reference pixel index beyond clip");
    const float* r = video.frames.row(lat);
    return std::vector<float>(r, r + video.channels());
}

// ---------------------------------------------------------------------------
// Flow-matching loss
// ---------------------------------------------------------------------------

template <typename T>
ConditioningBundle<T> build_fm_bundle(const Mat<T>& x0, const Mat<T>& x_context,
                                      const std::vector<T>& x_ref, const Mat<T>& audio_tokens,
                                      T t, const Mat<T>& noise, int m_ch) {
    check_data(noise.same_shape(x0), "noise shape must match x0");
    check_data(t >= T(0) && t <= T(1), "flow time t must be in [0,1]");
    Mat<T> x_t(x0.rows, x0.cols);
    for (size_t i = 0; i < x_t.data.size(); ++i)
        x_t.data[i] = (T(1) - t) * x0.data[i] + t * noise.data[i];
    ConditioningBundle<T> b = assemble_conditioning(x_t, x_context, x_ref, m_ch);
    check_data(audio_tokens.rows == b.tokens(), "audio tokens must cover context + noisy span");
    b.audio_tokens = audio_tokens;
    return b;
}

template <typename M, typename T>
T fm_loss(const M& model, const Mat<T>& x0, const Mat<T>& x_context, const std::vector<T>& x_ref,
          const Mat<T>& audio_tokens, T t, const Mat<T>& noise, int m_ch = 1) {
    ConditioningBundle<T> b = build_fm_bundle(x0, x_context, x_ref, audio_tokens, t, noise, m_ch);
    Mat<T> v = model.forward(b, t);
    if (!v.all_finite()) throw NumericError("fm_loss: non-finite velocity output");
    const int t_ctx = b.t_ctx;
    double acc = 0;
    for (int i = 0; i < x0.rows; ++i)
        for (int c = 0; c < x0.cols; ++c) {
            T d = v.at(t_ctx + i, c) - (x0.at(i, c) - noise.at(i, c));
            acc += static_cast<double>(d) * d;
        }
    return static_cast<T>(acc / (static_cast<double>(x0.rows) * x0.cols));
}

// Fused loss + parameter gradients (mean-squared error over the noisy span).
template <typename T>
T fm_loss_backward(const VelocityModel<T>& model, const Mat<T>& x0, const Mat<T>& x_context,
                   const std::vector<T>& x_ref, const Mat<T>& audio_tokens, T t,
                   const Mat<T>& noise, ModelParams<T>& grads) {
    ConditioningBundle<T> b =
        build_fm_bundle(x0, x_context, x_ref, audio_tokens, t, noise, model.cfg.m_ch);
    ForwardCache<T> cache;
    Mat<T> v = model.forward(b, t, &cache);
    if (!v.all_finite()) throw NumericError("fm loss: non-finite velocity output");
    const int t_ctx = b.t_ctx;
    const T norm = T(1) / static_cast<T>(static_cast<double>(x0.rows) * x0.cols);
    Mat<T> d_out(v.rows, v.cols);
    double acc = 0;
    for (int i = 0; i < x0.rows; ++i)
        for (int c = 0; c < x0.cols; ++c) {
            T target = x0.at(i, c) - noise.at(i, c);
            T d = v.at(t_ctx + i, c) - target;
            acc += static_cast<double>(d) * d;
            d_out.at(t_ctx + i, c) = T(2) * d * norm;
        }
    model.backward(cache, d_out, grads);
    return static_cast<T>(acc * norm);
}

// ---------------------------------------------------------------------------
// Adam optimizer
// ---------------------------------------------------------------------------

template <typename T>
struct AdamState {
    ModelParams<T> m, v;
    int64_t step = 0;

    explicit AdamState(const ModelConfig& cfg) {
        m.resize(cfg);
        v.resize(cfg);
        m.zero();
        v.zero();
    }
};

template <typename T>
double grad_global_norm(ModelParams<T>& grads) {
    double acc = 0;
    grads.visit([&](const std::string&, Mat<T>& g) {
        for (T x : g.data) acc += static_cast<double>(x) * x;
    });
    return std::sqrt(acc);
}

template <typename T>
void adam_update(ModelParams<T>& params, ModelParams<T>& grads, AdamState<T>& st,
                 const TrainConfig& cfg) {
    st.step += 1;
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
    const double lr = cfg.learning_rate;

    std::vector<Mat<T>*> ps, gs, ms, vs;
    params.visit([&](const std::string&, Mat<T>& m) { ps.push_back(&m); });
    grads.visit([&](const std::string&, Mat<T>& m) { gs.push_back(&m); });
    st.m.visit([&](const std::string&, Mat<T>& m) { ms.push_back(&m); });
    st.v.visit([&](const std::string&, Mat<T>& m) { vs.push_back(&m); });
    for (size_t k = 0; k < ps.size(); ++k) {
        T* p = ps[k]->data.data();
        T* g = gs[k]->data.data();
        T* m = ms[k]->data.data();
        T* v = vs[k]->data.data();
        const size_t n = ps[k]->data.size();
        for (size_t i = 0; i < n; ++i) {
            double gi = g[i];
            double mi = b1 * m[i] + (1 - b1) * gi;
            double vi = b2 * v[i] + (1 - b2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            p[i] -= static_cast<T>(lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.adam_eps));
        }
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainResult {
    std::vector<double> losses;  // one entry per step
    double initial_smoothed = 0;
    double final_smoothed = 0;
    int64_t param_count = 0;
};

inline TrainResult train(const Dataset& ds, const TrainConfig& cfg,
                         const std::filesystem::path& out_dir,
                         VelocityModel<float>* model_out = nullptr) {
    cfg.validate();
    if (cfg.steps > 0) check_data(!ds.clips.empty(), "training requires a non-empty dataset");
    check_config(cfg.model.c_lat == ds.c_lat, "model c_lat must match dataset");
    check_config(cfg.model.d_audio == ds.d_audio, "model d_audio must match dataset");

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    std::ofstream log(out_dir / "train_log.jsonl", std::ios::trunc);
    if (!log) throw DataError("cannot open training log in " + out_dir.string());

    VelocityModel<float> model(cfg.model, derive_seed(cfg.seed, 0x141217));
    ModelParams<float> grads;
    grads.resize(cfg.model);
    AdamState<float> adam(cfg.model);

    const int t_c = cfg.arith.t_c();
    const int t_all = cfg.arith.chunk_latent_len();
    TrainResult result;
    result.param_count = model.count_params();

    for (int step = 1; step <= cfg.steps; ++step) {
        grads.zero();
        double loss_acc = 0;
        for (int item = 0; item < cfg.batch_size; ++item) {
            Rng rng(derive_seed(cfg.seed, 0x57E9, static_cast<uint64_t>(step),
                                static_cast<uint64_t>(item)));
            const ClipRecord& clip = ds.clips[rng.below(static_cast<int>(ds.clips.size()))];
            WindowSample w = sample_training_window(clip, cfg.arith, cfg.context_dropout_prob, rng);
            int ref_px = sample_reference(cfg.strategy, clip.audio.pixel_frames(), w.chunk_span_px,
                                          rng);
            std::vector<float> ref =
                reference_frame_at(clip.latent, ref_px, cfg.arith.temporal_stride);
            AudioTrack slice = slice_audio(clip.audio, w.chunk_span_px.first, w.chunk_span_px.second);
            Mat<float> tokens =
                align_audio(slice, t_all, cfg.model.audio_window, cfg.arith.temporal_stride);
            if (w.zero_context)
                for (int i = 0; i < t_c; ++i)
                    std::fill(tokens.row(i), tokens.row(i) + tokens.cols, 0.f);

            float t = static_cast<float>(rng.uniform());
            Mat<float> noise(w.x0.rows, w.x0.cols);
            rng.fill_normal(noise.data.data(), noise.data.size());

            loss_acc += fm_loss_backward(model, w.x0, w.x_context, ref, tokens, t, noise, grads);
        }
        double loss = loss_acc / cfg.batch_size;
        result.losses.push_back(loss);
        if (!std::isfinite(loss) || loss > cfg.divergence_threshold)
            throw NumericError("training diverged at step " + std::to_string(step) +
                               " (loss=" + std::to_string(loss) + ")");

        float scale = 1.f / static_cast<float>(cfg.batch_size);
        grads.visit([&](const std::string&, Mat<float>& g) {
            for (auto& x : g.data) x *= scale;
        });
        double norm = grad_global_norm(grads);
        if (norm > cfg.grad_clip) {
            float clip_scale = static_cast<float>(cfg.grad_clip / norm);
            grads.visit([&](const std::string&, Mat<float>& g) {
                for (auto& x : g.data) x *= clip_scale;
            });
        }
        adam_update(model.p, grads, adam, cfg);

        if (step % cfg.log_every == 0 || step == cfg.steps) {
            json line = {{"step", step},
                         {"loss", loss},
                         {"lr", cfg.learning_rate},
                         {"strategy", strategy_name(cfg.strategy.kind)},
                         {"seed", cfg.seed}};
            log << line.dump() << "\n";
            log.flush();
        }
    }

    const int window = std::min<int>(100, static_cast<int>(result.losses.size()));
    if (window > 0) {
        double a = 0, b = 0;
        for (int i = 0; i < window; ++i) {
            a += result.losses[i];
            b += result.losses[result.losses.size() - 1 - i];
        }
        result.initial_smoothed = a / window;
        result.final_smoothed = b / window;
    }

    save_checkpoint(out_dir / "checkpoint.bin", model, cfg.steps, cfg.seed);
    if (model_out) *model_out = std::move(model);
    return result;
}

}  // namespace dubengine
