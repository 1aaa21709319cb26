#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "dubengine/core.hpp"
#include "dubengine/model.hpp"
#include "dubengine/rng.hpp"
#include "dubengine/train.hpp"

namespace dubengine {

enum class DubMode { streaming, i2v, fl2v };

inline const char* dub_mode_name(DubMode m) {
    switch (m) {
        case DubMode::streaming: return "streaming";
        case DubMode::i2v: return "i2v";
        default: return "fl2v";
    }
}

inline DubMode dub_mode_from_name(const std::string& s) {
    if (s == "streaming") return DubMode::streaming;
    if (s == "i2v") return DubMode::i2v;
    if (s == "fl2v") return DubMode::fl2v;
    throw ConfigError("unknown dub mode: " + s + " (expected streaming|i2v|fl2v)");
}

struct SamplerConfig {
    int ode_steps = 20;
    DubMode mode = DubMode::streaming;
    std::optional<double> sdedit_t0;  // t0 = 0 copies the source through unchanged
    uint64_t seed = 0;

    void validate() const {
        check_config(ode_steps >= 1, "ode_steps must be >= 1");
        if (sdedit_t0)
            check_config(*sdedit_t0 >= 0.0 && *sdedit_t0 <= 1.0, "sdedit_t0 must be in [0,1]");
    }
};

struct DubRequest {
    LatentVideo source_video;
    AudioTrack new_audio;
    ChunkPlan plan;

    void validate() const {
        int stride = plan.arith.temporal_stride;
        check_data(new_audio.pixel_frames() == source_video.pixel_frames(stride),
                   "audio length must equal source video pixel length");
        check_data(plan.total_pixel_frames == new_audio.pixel_frames(),
                   "chunk plan does not match the request length");
        check_data(!plan.chunks.empty(), "empty chunk plan");
        check_data(plan.fully_latent_aligned(),
                   "chunk plan is not latent-aligned; request length must be 1 (mod stride)");
    }
};

// ---------------------------------------------------------------------------
// Explicit Euler ODE sampling on a uniform grid from t_start down to 0, using
// the engine-wide convention (velocity points from noise toward data, update
// x <- x + (t_cur - t_next) * v). Context positions in the bundle are never
// touched; only the noisy span is integrated.
// ---------------------------------------------------------------------------

template <typename Field, typename T>
Mat<T> ode_solve(Field&& velocity_fn, ConditioningBundle<T>& cond, int steps, Rng& rng,
                 double t_start = 1.0, const Mat<T>* init = nullptr) {
    check_config(steps >= 1, "ode_solve needs steps >= 1");
    check_config(t_start > 0.0 && t_start <= 1.0, "t_start must be in (0,1]");
    Mat<T> x(cond.t_noisy, cond.c_lat);
    if (init) {
        check_data(init->rows == cond.t_noisy && init->cols == cond.c_lat,
                   "ode init state shape mismatch");
        x = *init;
    } else {
        rng.fill_normal(x.data.data(), x.data.size());
    }
    for (int i = 0; i < steps; ++i) {
        T t_cur = static_cast<T>(t_start * (steps - i) / steps);
        T t_next = static_cast<T>(t_start * (steps - i - 1) / steps);
        cond.set_noisy_state(x);
        Mat<T> v = velocity_fn(cond, t_cur);
        check_data(v.rows == cond.tokens() && v.cols == cond.c_lat,
                   "velocity field output shape mismatch");
        T h = t_cur - t_next;
        for (int r = 0; r < cond.t_noisy; ++r)
            axpy(h, v.row(cond.noisy_lo() + r), x.row(r), cond.c_lat);
        if (!x.all_finite())
            throw NumericError("ODE integration produced non-finite state at step " +
                               std::to_string(i));
    }
    cond.set_noisy_state(x);
    return x;
}

// SDEdit initialization: mix the clean source chunk with fresh noise at scale
// t0, then integrate from t_start = t0 instead of 1.
template <typename T>
Mat<T> sdedit_init(const Mat<T>& source_chunk, double t0, Rng& rng) {
    check_config(t0 > 0.0 && t0 <= 1.0, "sdedit t0 must be in (0,1] (0 is copy-through)");
    Mat<T> init(source_chunk.rows, source_chunk.cols);
    rng.fill_normal(init.data.data(), init.data.size());
    for (size_t i = 0; i < init.data.size(); ++i)
        init.data[i] = static_cast<T>((1.0 - t0) * source_chunk.data[i] + t0 * init.data[i]);
    return init;
}

// ---------------------------------------------------------------------------
// Chunked long-sequence dubbing.
//
//   streaming: context = trailing latent frames of the already-emitted output,
//              reference = source keyframe at the chunk start.
//   i2v:       like streaming, but from chunk 1 on the reference is the last
//              generated frame instead of a source keyframe.
//   fl2v:      no context carry-over; every chunk is conditioned on the source
//              frames at both span ends (second marked slot in z2/m).
//
// Chunk 0 (and every fl2v chunk) runs in zero-context mode: the context block
// is all zeros, its audio rows are zeroed, and the noisy span covers the whole
// chunk. Per-chunk noise derives from (seed, chunk index), so later chunks do
// not perturb earlier ones.
// ---------------------------------------------------------------------------

struct ChunkTrace {
    int chunk_index = 0;
    Mat<float> context;
    bool zero_context = false;
    int reference_pixel_index = 0;  // -1 when the reference is a generated frame
    double mask_sum = 0;
    int tokens = 0;
    int emit_lat_start = 0, emit_lat_end = 0;
};

struct DubTrace {
    std::vector<ChunkTrace> chunks;
};

inline LatentVideo dub(const DubRequest& req, const VelocityModel<float>& model,
                       const SamplerConfig& config, DubTrace* trace = nullptr) {
    config.validate();
    req.validate();
    const ChunkPlan& plan = req.plan;
    const int stride = plan.arith.temporal_stride;
    const int t_c = plan.arith.t_c();
    const int c_lat = req.source_video.channels();
    check_data(c_lat == model.cfg.c_lat, "model/source channel mismatch");
    check_data(req.new_audio.features.cols == model.cfg.d_audio, "model/audio feature dim mismatch");

    LatentVideo out;
    out.fps_pixel = req.source_video.fps_pixel;

    if (config.sdedit_t0 && *config.sdedit_t0 == 0.0) {
        out.frames = req.source_video.frames;  // degenerate preservation
        return out;
    }

    const int l_total = pixel_to_latent(plan.total_pixel_frames, stride);
    out.frames = Mat<float>(l_total, c_lat);

    int prev_emit_end = 0;
    for (size_t k = 0; k < plan.chunks.size(); ++k) {
        const ChunkSpec& ch = plan.chunks[k];
        Rng rng(derive_seed(config.seed, 0xD0B, k));

        const int span_lat = ch.lat_end - ch.lat_start;
        const bool sentinel =
            (config.mode == DubMode::fl2v) || (ch.context_source == ContextSource::none);

        Mat<float> x_ctx(t_c, c_lat);
        int noisy_lat_lo;
        if (sentinel) {
            noisy_lat_lo = ch.lat_start;
        } else {
            x_ctx = out.frames.slice_rows(ch.lat_start, ch.lat_start + t_c);
            noisy_lat_lo = ch.lat_start + t_c;
        }
        const int t_noisy = ch.lat_end - noisy_lat_lo;

        std::vector<float> ref;
        int ref_px = ch.reference_pixel_index;
        if (config.mode == DubMode::i2v && k > 0) {
            const float* r = out.frames.row(prev_emit_end - 1);
            ref.assign(r, r + c_lat);
            ref_px = -1;
        } else {
            ref = reference_frame_at(req.source_video, ref_px, stride);
        }

        Mat<float> x_t(t_noisy, c_lat);
        ConditioningBundle<float> bundle = assemble_conditioning(x_t, x_ctx, ref, model.cfg.m_ch);
        if (config.mode == DubMode::fl2v)
            apply_end_reference(bundle,
                                reference_frame_at(req.source_video, ch.px_end - 1, stride));

        AudioTrack slice = slice_audio(req.new_audio, ch.px_start, ch.px_end);
        Mat<float> span_tokens = align_audio(slice, span_lat, model.cfg.audio_window, stride);
        Mat<float> audio_full(bundle.tokens(), span_tokens.cols);
        if (sentinel) {
            audio_full.set_rows(t_c, span_tokens);  // zero pre-roll rows
        } else {
            audio_full = span_tokens;
        }
        bundle.audio_tokens = std::move(audio_full);

        std::optional<Mat<float>> init;
        double t_start = 1.0;
        if (config.sdedit_t0) {
            t_start = *config.sdedit_t0;
            init = sdedit_init(req.source_video.frames.slice_rows(noisy_lat_lo, ch.lat_end),
                               t_start, rng);
        }

        auto field = [&](const ConditioningBundle<float>& b, float t) {
            return model.forward(b, t);
        };
        Mat<float> x_hat;
        try {
            x_hat = ode_solve(field, bundle, config.ode_steps, rng, t_start,
                              init ? &*init : nullptr);
        } catch (const NumericError& e) {
            throw NumericError("chunk " + std::to_string(k) + ": " + e.what());
        }

        for (int i = ch.emit_lat_start; i < ch.emit_lat_end; ++i)
            std::memcpy(out.frames.row(i), x_hat.row(i - noisy_lat_lo),
                        static_cast<size_t>(c_lat) * sizeof(float));
        prev_emit_end = ch.emit_lat_end;

        if (trace) {
            ChunkTrace tr;
            tr.chunk_index = static_cast<int>(k);
            tr.context = x_ctx;
            tr.zero_context = sentinel;
            tr.reference_pixel_index = ref_px;
            tr.mask_sum = bundle.mask_sum();
            tr.tokens = bundle.tokens();
            tr.emit_lat_start = ch.emit_lat_start;
            tr.emit_lat_end = ch.emit_lat_end;
            trace->chunks.push_back(std::move(tr));
        }
    }
    return out;
}

inline LatentVideo dub_streaming(const DubRequest& req, const VelocityModel<float>& model,
                                 SamplerConfig config, DubTrace* trace = nullptr) {
    config.mode = DubMode::streaming;
    return dub(req, model, config, trace);
}

inline LatentVideo dub_i2v(const DubRequest& req, const VelocityModel<float>& model,
                           SamplerConfig config, DubTrace* trace = nullptr) {
    config.mode = DubMode::i2v;
    return dub(req, model, config, trace);
}

inline LatentVideo dub_fl2v(const DubRequest& req, const VelocityModel<float>& model,
                            SamplerConfig config, DubTrace* trace = nullptr) {
    config.mode = DubMode::fl2v;
    return dub(req, model, config, trace);
}

inline DubRequest make_dub_request(const LatentVideo& source, const AudioTrack& audio,
                                   const FrameArithmetic& arith = {}) {
    DubRequest req;
    req.source_video = source;
    req.new_audio = audio;
    req.plan = build_chunk_plan(audio.pixel_frames(), arith);
    req.validate();
    return req;
}

}  // namespace dubengine
