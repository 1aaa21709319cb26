#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "dubengine/core.hpp"
#include "dubengine/io.hpp"
#include "dubengine/png.hpp"
#include "dubengine/rng.hpp"

namespace dubengine {

// Synthetic "talking actor" world. Ground-truth latent factors are generated
// directly, so audio-motion sync, identity constancy and camera trajectories
// are exactly measurable on every clip.

struct AudioTrack {
    Mat<float> features;          // [N_pixel x D_audio]
    std::vector<float> envelope;  // [N_pixel], in [0, 1]
    double fps = 25.0;

    int pixel_frames() const { return static_cast<int>(envelope.size()); }
};

struct ActorSpec {
    std::array<float, 4> identity_code{1.f, 0.f, 0.f, 0.f};  // unit 4-vector
    int head_lag = 3;                // pixel frames of audio-to-head delay
    float gesture_threshold = 0.7f;  // envelope level that triggers a gesture
    float gesture_decay = 0.85f;     // per-latent-frame spike decay

    void validate() const {
        double n = 0;
        for (float v : identity_code) n += static_cast<double>(v) * v;
        check_config(std::abs(std::sqrt(n) - 1.0) <= 1e-6, "identity_code must be unit norm");
        check_config(head_lag >= 0, "head_lag must be >= 0");
        check_config(gesture_threshold > 0 && gesture_threshold < 1, "gesture_threshold in (0,1)");
        check_config(gesture_decay > 0 && gesture_decay < 1, "gesture_decay in (0,1)");
    }
};

enum class CameraKind { static_shot, pan, piecewise_smooth };

inline const char* camera_kind_name(CameraKind k) {
    switch (k) {
        case CameraKind::static_shot: return "static";
        case CameraKind::pan: return "pan";
        default: return "piecewise-smooth";
    }
}

inline CameraKind camera_kind_from_name(const std::string& s) {
    if (s == "static") return CameraKind::static_shot;
    if (s == "pan") return CameraKind::pan;
    if (s == "piecewise-smooth") return CameraKind::piecewise_smooth;
    throw DataError("unknown camera kind: " + s);
}

struct CameraTrajectory {
    Mat<float> offsets;  // [N_pixel x 2]
    CameraKind kind = CameraKind::static_shot;
};

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

inline AudioTrack gen_audio(int duration_frames, uint64_t seed, int d_audio = 8, double fps = 25.0) {
    check_data(duration_frames >= 1, "audio duration must be >= 1 frame");
    Rng rng(derive_seed(seed, 0xA0D10));

    AudioTrack track;
    track.fps = fps;
    track.envelope.resize(duration_frames);

    // Envelope: normalized sum of slow sinusoids plus emphasis bumps, clipped to [0,1].
    int n_sin = 3 + rng.below(4);
    std::vector<double> amp(n_sin), omega(n_sin), phase(n_sin);
    double amp_total = 0;
    for (int i = 0; i < n_sin; ++i) {
        amp[i] = rng.uniform(0.3, 1.0);
        omega[i] = 2.0 * M_PI * rng.uniform(0.4, 2.2) / fps;  // 0.4..2.2 Hz
        phase[i] = rng.uniform(0.0, 2.0 * M_PI);
        amp_total += amp[i];
    }
    int n_bumps = 1 + duration_frames / 60 + rng.below(3);
    std::vector<double> bump_c(n_bumps), bump_s(n_bumps), bump_a(n_bumps);
    for (int i = 0; i < n_bumps; ++i) {
        bump_c[i] = rng.uniform(0.0, duration_frames);
        bump_s[i] = rng.uniform(2.0, 6.0);
        bump_a[i] = rng.uniform(0.2, 0.55);
    }
    for (int f = 0; f < duration_frames; ++f) {
        double s = 0;
        for (int i = 0; i < n_sin; ++i) s += amp[i] * std::sin(omega[i] * f + phase[i]);
        double e = 0.5 + 0.5 * s / amp_total;
        for (int i = 0; i < n_bumps; ++i) {
            double d = (f - bump_c[i]) / bump_s[i];
            e += bump_a[i] * std::exp(-0.5 * d * d);
        }
        track.envelope[f] = static_cast<float>(std::min(1.0, std::max(0.0, e)));
    }

    // Features: random projection of [envelope, derivative, phase features].
    // The projection is a fixed property of the world, shared by every clip;
    // a per-clip code would make the features undecodable across clips.
    const int d_raw = 6;
    Rng proj_rng(derive_seed(0xFEA7C0DE, static_cast<uint64_t>(d_audio)));
    Mat<double> proj(d_audio, d_raw);
    for (auto& v : proj.data) v = proj_rng.normal() / std::sqrt(static_cast<double>(d_raw));
    track.features = Mat<float>(duration_frames, d_audio);
    for (int f = 0; f < duration_frames; ++f) {
        int fp = std::min(f + 1, duration_frames - 1);
        int fm = std::max(f - 1, 0);
        double denv = (track.envelope[fp] - track.envelope[fm]) * 0.5;
        double raw[d_raw] = {track.envelope[f],
                             denv * 4.0,
                             std::sin(2.0 * M_PI * f / 40.0),
                             std::cos(2.0 * M_PI * f / 40.0),
                             std::sin(2.0 * M_PI * f / 17.0),
                             std::cos(2.0 * M_PI * f / 17.0)};
        for (int d = 0; d < d_audio; ++d)
            track.features.at(f, d) = static_cast<float>(dot(proj.row(d), raw, d_raw));
    }
    return track;
}

inline CameraTrajectory make_camera(int n_pixel, CameraKind kind, uint64_t seed) {
    check_data(n_pixel >= 1, "camera trajectory needs >= 1 frame");
    Rng rng(derive_seed(seed, 0xCA3E7A));
    CameraTrajectory cam;
    cam.kind = kind;
    cam.offsets = Mat<float>(n_pixel, 2);
    switch (kind) {
        case CameraKind::static_shot: {
            float x = static_cast<float>(rng.uniform(-0.5, 0.5));
            float y = static_cast<float>(rng.uniform(-0.5, 0.5));
            for (int f = 0; f < n_pixel; ++f) {
                cam.offsets.at(f, 0) = x;
                cam.offsets.at(f, 1) = y;
            }
            break;
        }
        case CameraKind::pan: {
            double x0 = rng.uniform(-0.8, 0.8), y0 = rng.uniform(-0.8, 0.8);
            double x1 = rng.uniform(-0.8, 0.8), y1 = rng.uniform(-0.8, 0.8);
            for (int f = 0; f < n_pixel; ++f) {
                double a = (n_pixel == 1) ? 0.0 : static_cast<double>(f) / (n_pixel - 1);
                cam.offsets.at(f, 0) = static_cast<float>(x0 + a * (x1 - x0));
                cam.offsets.at(f, 1) = static_cast<float>(y0 + a * (y1 - y0));
            }
            break;
        }
        case CameraKind::piecewise_smooth: {
            int n_ctrl = 4 + rng.below(3);
            Mat<double> ctrl(n_ctrl, 2);
            for (auto& v : ctrl.data) v = rng.uniform(-0.8, 0.8);
            for (int f = 0; f < n_pixel; ++f) {
                double pos = (n_pixel == 1) ? 0.0
                                            : static_cast<double>(f) * (n_ctrl - 1) / (n_pixel - 1);
                int seg = std::min(static_cast<int>(pos), n_ctrl - 2);
                double a = pos - seg;
                double w = 0.5 - 0.5 * std::cos(M_PI * a);  // cosine ease between knots
                for (int c = 0; c < 2; ++c)
                    cam.offsets.at(f, c) =
                        static_cast<float>(ctrl.at(seg, c) + w * (ctrl.at(seg + 1, c) - ctrl.at(seg, c)));
            }
            break;
        }
    }
    return cam;
}

// Factor construction:
//   mouth   = envelope mean-pooled per latent step (sync correlation 1 by construction)
//   head    = envelope delayed by head_lag, through two one-pole low-passes
//   gesture = decaying 2-d spikes triggered when the pooled envelope crosses the threshold
//   identity, style = constant; camera = pooled trajectory
inline LatentVideo simulate_actor(const AudioTrack& audio, const ActorSpec& actor,
                                  const CameraTrajectory& camera, uint64_t seed, int stride = 4) {
    actor.validate();
    const int n_px = audio.pixel_frames();
    if ((n_px - 1) % stride != 0)
        throw DataError("audio length " + std::to_string(n_px) +
                        " is not aligned: need n == 1 (mod " + std::to_string(stride) + ")");
    check_data(camera.offsets.rows == n_px, "camera trajectory length mismatch");
    const int t_lat = pixel_to_latent(n_px, stride);

    LatentVideo video;
    video.fps_pixel = audio.fps;
    video.frames = Mat<float>(t_lat, factor::count);

    std::vector<float> mouth = pool_to_latent(audio.envelope, stride);

    // Head: lag then two low-pass filters at pixel rate, pooled to latent rate.
    const double alpha[2] = {0.88, 0.96};
    Mat<float> head_px(n_px, 2);
    for (int c = 0; c < 2; ++c) {
        double y = audio.envelope[0];
        for (int f = 0; f < n_px; ++f) {
            double lagged = audio.envelope[std::max(0, f - actor.head_lag)];
            y = alpha[c] * y + (1.0 - alpha[c]) * lagged;
            head_px.at(f, c) = static_cast<float>(y);
        }
    }
    Mat<float> head = pool_rows_to_latent(head_px, stride);

    // Gestures at latent rate: onset when pooled envelope crosses the threshold.
    Rng gesture_rng(derive_seed(seed, 0x6E5));
    double gx = 0, gy = 0;
    std::vector<float> gesture(static_cast<size_t>(t_lat) * 2, 0.f);
    float prev = 0.f;
    for (int i = 0; i < t_lat; ++i) {
        gx *= actor.gesture_decay;
        gy *= actor.gesture_decay;
        bool onset = mouth[i] > actor.gesture_threshold &&
                     (i == 0 || prev <= actor.gesture_threshold);
        if (onset) {
            double angle = gesture_rng.uniform(0.0, 2.0 * M_PI);
            gx += std::cos(angle);
            gy += std::sin(angle);
        }
        prev = mouth[i];
        gesture[static_cast<size_t>(i) * 2] = static_cast<float>(gx);
        gesture[static_cast<size_t>(i) * 2 + 1] = static_cast<float>(gy);
    }

    Mat<float> cam_lat = pool_rows_to_latent(camera.offsets, stride);

    Rng style_rng(derive_seed(seed, 0x57A1E));
    float style = static_cast<float>(style_rng.uniform(0.0, 1.0));

    for (int i = 0; i < t_lat; ++i) {
        float* r = video.frames.row(i);
        r[factor::mouth] = mouth[i];
        r[factor::head] = head.at(i, 0);
        r[factor::head + 1] = head.at(i, 1);
        r[factor::gesture] = gesture[static_cast<size_t>(i) * 2];
        r[factor::gesture + 1] = gesture[static_cast<size_t>(i) * 2 + 1];
        for (int c = 0; c < 4; ++c) r[factor::identity + c] = actor.identity_code[c];
        r[factor::camera] = cam_lat.at(i, 0);
        r[factor::camera + 1] = cam_lat.at(i, 1);
        r[factor::style] = style;
    }
    return video;
}

// ---------------------------------------------------------------------------
// Renderer: 64x64 RGB per latent frame, for eyeballing runs.
// ---------------------------------------------------------------------------

namespace render_detail {

inline void hsv_to_rgb(double h, double s, double v, uint8_t rgb[3]) {
    h = h - std::floor(h);
    double r, g, b;
    int i = static_cast<int>(h * 6.0);
    double f = h * 6.0 - i;
    double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
    switch (i % 6) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
    rgb[0] = static_cast<uint8_t>(std::lround(255 * r));
    rgb[1] = static_cast<uint8_t>(std::lround(255 * g));
    rgb[2] = static_cast<uint8_t>(std::lround(255 * b));
}

}  // namespace render_detail

constexpr int kRenderSize = 64;

inline std::vector<uint8_t> render_frame_rgb(const float* factors) {
    const int W = kRenderSize;
    std::vector<uint8_t> img(static_cast<size_t>(W) * W * 3);

    double style = factors[factor::style];
    uint8_t bg = static_cast<uint8_t>(std::lround(90 + 80 * std::min(1.0, std::max(0.0, style))));
    for (size_t i = 0; i < img.size(); ++i) img[i] = bg;

    const float* id = factors + factor::identity;
    double hue = std::atan2(id[1], id[0]) / (2.0 * M_PI) + 0.5;
    double sat = 0.55 + 0.35 * std::min(1.0, std::max(0.0, (id[2] + 1.0) * 0.5));
    double val = 0.70 + 0.25 * std::min(1.0, std::max(0.0, (id[3] + 1.0) * 0.5));
    uint8_t disc[3];
    render_detail::hsv_to_rgb(hue, sat, val, disc);

    double cx = 32.0 + 10.0 * factors[factor::camera] + 5.0 * factors[factor::head];
    double cy = 30.0 + 10.0 * factors[factor::camera + 1] + 5.0 * factors[factor::head + 1];
    const double radius = 13.0;
    cx = std::min(static_cast<double>(W) - radius - 1, std::max(radius + 1, cx));
    cy = std::min(static_cast<double>(W) - radius - 1, std::max(radius + 1, cy));

    for (int y = 0; y < W; ++y)
        for (int x = 0; x < W; ++x) {
            double dx = x - cx, dy = y - cy;
            if (dx * dx + dy * dy <= radius * radius) {
                uint8_t* px = img.data() + (static_cast<size_t>(y) * W + x) * 3;
                px[0] = disc[0];
                px[1] = disc[1];
                px[2] = disc[2];
            }
        }

    // Mouth: ellipse height proportional to the mouth factor; zero height draws nothing.
    double mb = 4.0 * factors[factor::mouth];
    if (mb > 0) {
        double mcx = cx, mcy = cy + 5.0, ma = 6.0;
        for (int y = 0; y < W; ++y)
            for (int x = 0; x < W; ++x) {
                double ex = (x - mcx) / ma, ey = (y - mcy) / mb;
                if (ex * ex + ey * ey <= 1.0) {
                    uint8_t* px = img.data() + (static_cast<size_t>(y) * W + x) * 3;
                    px[0] = 40;
                    px[1] = 12;
                    px[2] = 12;
                }
            }
    }
    return img;
}

inline std::vector<std::filesystem::path> render(const LatentVideo& video,
                                                 const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create render directory: " + out_dir.string());
    std::vector<std::filesystem::path> paths;
    for (int i = 0; i < video.latent_frames(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%05d.png", i);
        std::filesystem::path p = out_dir / name;
        write_png_rgb(p, render_frame_rgb(video.frames.row(i)), kRenderSize, kRenderSize);
        paths.push_back(p);
    }
    return paths;
}

// ---------------------------------------------------------------------------
// Dataset container.
// ---------------------------------------------------------------------------

struct ClipRecord {
    AudioTrack audio;
    LatentVideo latent;
    ActorSpec actor;
    CameraTrajectory camera;
    uint64_t clip_seed = 0;
};

struct Dataset {
    int d_audio = 8;
    int c_lat = factor::count;
    double fps = 25.0;
    uint64_t seed = 0;
    int clip_len_px = 0;
    std::vector<ClipRecord> clips;
};

inline ClipRecord build_clip(int clip_len, uint64_t clip_seed, int clip_index, int d_audio,
                             double fps, int stride = 4) {
    ClipRecord rec;
    rec.clip_seed = clip_seed;
    rec.audio = gen_audio(clip_len, derive_seed(clip_seed, 1), d_audio, fps);
    Rng id_rng(derive_seed(clip_seed, 2));
    double norm = 0;
    std::array<double, 4> id{};
    do {
        norm = 0;
        for (int c = 0; c < 4; ++c) {
            id[c] = id_rng.normal();
            norm += id[c] * id[c];
        }
        norm = std::sqrt(norm);
    } while (norm < 1e-8);
    // Normalize in float so the stored code is unit norm after the cast.
    std::array<float, 4> idf{};
    for (int c = 0; c < 4; ++c) idf[c] = static_cast<float>(id[c]);
    float fnorm = std::sqrt(idf[0] * idf[0] + idf[1] * idf[1] + idf[2] * idf[2] + idf[3] * idf[3]);
    for (int c = 0; c < 4; ++c) rec.actor.identity_code[c] = idf[c] / fnorm;
    rec.camera = make_camera(clip_len, static_cast<CameraKind>(clip_index % 3),
                             derive_seed(clip_seed, 3));
    rec.latent = simulate_actor(rec.audio, rec.actor, rec.camera, derive_seed(clip_seed, 4), stride);
    return rec;
}

inline Dataset build_dataset(int n_clips, int clip_len, uint64_t seed, int d_audio = 8,
                             double fps = 25.0, int stride = 4) {
    check_data(n_clips >= 0, "n_clips must be >= 0");
    FrameArithmetic arith;
    if ((clip_len - 1) % stride != 0)
        throw DataError("clip_len must be 1 (mod " + std::to_string(stride) + ")");
    check_data(clip_len >= 2 * arith.chunk_pixel_len,
               "clip_len must be >= 2 chunks so far/near reference distances exist");
    Dataset ds;
    ds.d_audio = d_audio;
    ds.fps = fps;
    ds.seed = seed;
    ds.clip_len_px = clip_len;
    ds.clips.reserve(n_clips);
    for (int k = 0; k < n_clips; ++k)
        ds.clips.push_back(build_clip(clip_len, derive_seed(seed, 0xC11D, k), k, d_audio, fps, stride));
    return ds;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    BlockWriter bw;
    json records = json::array();
    for (const auto& rec : ds.clips) {
        json r;
        r["clip_seed"] = rec.clip_seed;
        r["pixel_frames"] = rec.audio.pixel_frames();
        r["latent_frames"] = rec.latent.latent_frames();
        r["camera_kind"] = camera_kind_name(rec.camera.kind);
        r["actor"] = json{{"identity_code", rec.actor.identity_code},
                          {"head_lag", rec.actor.head_lag},
                          {"gesture_threshold", rec.actor.gesture_threshold},
                          {"gesture_decay", rec.actor.gesture_decay}};
        json blocks;
        uint64_t off = bw.add_mat(rec.audio.features);
        blocks["audio_features"] = bw.block_meta(off, rec.audio.features.rows, rec.audio.features.cols);
        off = bw.add_vec(rec.audio.envelope);
        blocks["envelope"] = bw.block_meta(off, rec.audio.pixel_frames(), 1);
        off = bw.add_mat(rec.latent.frames);
        blocks["latent"] = bw.block_meta(off, rec.latent.frames.rows, rec.latent.frames.cols);
        off = bw.add_mat(rec.camera.offsets);
        blocks["camera_offsets"] = bw.block_meta(off, rec.camera.offsets.rows, 2);
        r["blocks"] = blocks;
        records.push_back(r);
    }
    json header;
    header["schema_version"] = 1;
    header["kind"] = "dubengine.dataset";
    header["n_records"] = ds.clips.size();
    header["c_lat"] = ds.c_lat;
    header["d_audio"] = ds.d_audio;
    header["fps"] = ds.fps;
    header["seed"] = ds.seed;
    header["clip_len_px"] = ds.clip_len_px;
    header["factor_layout"] = json{{"mouth", {factor::mouth, factor::mouth + 1}},
                                   {"head", {factor::head, factor::head + factor::head_dims}},
                                   {"gesture", {factor::gesture, factor::gesture + factor::gesture_dims}},
                                   {"identity", {factor::identity, factor::identity + factor::identity_dims}},
                                   {"camera", {factor::camera, factor::camera + factor::camera_dims}},
                                   {"style", {factor::style, factor::style + 1}}};
    header["records"] = records;
    write_container(path, header, bw.payload);
}

inline void make_dataset(int n_clips, int clip_len, uint64_t seed, const std::filesystem::path& path,
                         int d_audio = 8, double fps = 25.0) {
    save_dataset(build_dataset(n_clips, clip_len, seed, d_audio, fps), path);
}

inline void save_latent_video(const LatentVideo& video, const std::filesystem::path& path,
                              const json& meta = json::object()) {
    BlockWriter bw;
    uint64_t off = bw.add_mat(video.frames);
    json header;
    header["schema_version"] = 1;
    header["kind"] = "dubengine.latent";
    header["fps"] = video.fps_pixel;
    header["latent_frames"] = video.latent_frames();
    header["c_lat"] = video.channels();
    header["blocks"] = json{{"latent", bw.block_meta(off, video.frames.rows, video.frames.cols)}};
    header["meta"] = meta;
    write_container(path, header, bw.payload);
}

inline LatentVideo load_latent_video(const std::filesystem::path& path, json* meta = nullptr) {
    Container c = read_container(path);
    if (c.header.value("kind", "") != "dubengine.latent")
        throw DataError("not a latent video container: " + path.string());
    LatentVideo v;
    v.fps_pixel = c.header.at("fps").get<double>();
    v.frames = c.read_mat(c.header.at("blocks").at("latent"));
    if (meta) *meta = c.header.value("meta", json::object());
    return v;
}

inline Dataset load_dataset(const std::filesystem::path& path) {
    Container c = read_container(path);
    if (c.header.value("kind", "") != "dubengine.dataset")
        throw DataError("not a dataset container: " + path.string());
    Dataset ds;
    ds.c_lat = c.header.at("c_lat").get<int>();
    ds.d_audio = c.header.at("d_audio").get<int>();
    ds.fps = c.header.at("fps").get<double>();
    ds.seed = c.header.at("seed").get<uint64_t>();
    ds.clip_len_px = c.header.at("clip_len_px").get<int>();
    for (const auto& r : c.header.at("records")) {
        ClipRecord rec;
        rec.clip_seed = r.at("clip_seed").get<uint64_t>();
        const json& blocks = r.at("blocks");
        rec.audio.features = c.read_mat(blocks.at("audio_features"));
        rec.audio.envelope = c.read_vec(blocks.at("envelope"));
        rec.audio.fps = ds.fps;
        rec.latent.frames = c.read_mat(blocks.at("latent"));
        rec.latent.fps_pixel = ds.fps;
        rec.camera.offsets = c.read_mat(blocks.at("camera_offsets"));
        rec.camera.kind = camera_kind_from_name(r.at("camera_kind").get<std::string>());
        const json& a = r.at("actor");
        auto idc = a.at("identity_code").get<std::array<float, 4>>();
        rec.actor.identity_code = idc;
        rec.actor.head_lag = a.at("head_lag").get<int>();
        rec.actor.gesture_threshold = a.at("gesture_threshold").get<float>();
        rec.actor.gesture_decay = a.at("gesture_decay").get<float>();
        ds.clips.push_back(std::move(rec));
    }
    return ds;
}

}  // namespace dubengine
