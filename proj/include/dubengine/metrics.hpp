#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "dubengine/core.hpp"
#include "dubengine/io.hpp"
#include "dubengine/world.hpp"

namespace dubengine {

// Latent-factor analogues of the usual dubbing metrics: sync correlation
// instead of SyncNet, identity distance instead of CSIM, boundary jerk for
// inter-chunk smoothness, replication similarity for control strength and
// camera distance for trajectory preservation. All pure and deterministic.

inline double pearson(const double* a, const double* b, int n) {
    if (n < 2) return 0.0;
    double ma = 0, mb = 0;
    for (int i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sa = 0, sb = 0, sab = 0;
    for (int i = 0; i < n; ++i) {
        double da = a[i] - ma, db = b[i] - mb;
        sa += da * da;
        sb += db * db;
        sab += da * db;
    }
    if (sa <= 1e-18 * n || sb <= 1e-18 * n) return 0.0;
    return sab / std::sqrt(sa * sb);
}

struct SyncResult {
    double score = 0;
    bool degenerate = false;  // zero-variance input
    int best_lag = 0;
};

// Max Pearson correlation between the latent-rate audio envelope and the
// mouth factor over lags |l| <= max_lag.
inline SyncResult sync_score_ex(const LatentVideo& video, const AudioTrack& audio,
                                int max_lag = 2, int stride = 4) {
    check_data(audio.pixel_frames() == video.pixel_frames(stride),
               "sync_score: audio/video length mismatch");
    std::vector<float> envf = pool_to_latent(audio.envelope, stride);
    const int t = video.latent_frames();
    std::vector<double> env(envf.begin(), envf.end());
    std::vector<double> mouth(t);
    for (int i = 0; i < t; ++i) mouth[i] = video.frames.at(i, factor::mouth);

    auto variance = [](const std::vector<double>& v) {
        double m = 0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        double s = 0;
        for (double x : v) s += (x - m) * (x - m);
        return s / static_cast<double>(v.size());
    };
    SyncResult res;
    if (variance(env) <= 1e-18 || variance(mouth) <= 1e-18) {
        res.degenerate = true;
        return res;
    }
    double best = -2.0;
    for (int lag = -max_lag; lag <= max_lag; ++lag) {
        int lo = std::max(0, -lag);
        int hi = std::min(t, t - lag);
        if (hi - lo < 3) continue;
        std::vector<double> a, b;
        a.reserve(hi - lo);
        b.reserve(hi - lo);
        for (int i = lo; i < hi; ++i) {
            a.push_back(env[i]);
            b.push_back(mouth[i + lag]);
        }
        double c = pearson(a.data(), b.data(), static_cast<int>(a.size()));
        if (c > best) {
            best = c;
            res.best_lag = lag;
        }
    }
    res.score = best;
    return res;
}

inline double sync_score(const LatentVideo& video, const AudioTrack& audio, int max_lag = 2,
                         int stride = 4) {
    return sync_score_ex(video, audio, max_lag, stride).score;
}

// Per-frame Euclidean distance of the identity dims to a reference identity.
inline std::pair<double, double> identity_drift(const LatentVideo& video,
                                                const float* ref_identity) {
    double mean = 0, mx = 0;
    const int t = video.latent_frames();
    check_data(t >= 1, "identity_drift on empty video");
    for (int i = 0; i < t; ++i) {
        double d2 = 0;
        for (int c = 0; c < factor::identity_dims; ++c) {
            double d = static_cast<double>(video.frames.at(i, factor::identity + c)) -
                       static_cast<double>(ref_identity[c]);
            d2 += d * d;
        }
        double d = std::sqrt(d2);
        mean += d;
        mx = std::max(mx, d);
    }
    return {mean / t, mx};
}

inline double second_diff_norm(const Mat<float>& x, int i) {
    double s = 0;
    for (int c = 0; c < x.cols; ++c) {
        double d = static_cast<double>(x.at(i + 1, c)) - 2.0 * x.at(i, c) + x.at(i - 1, c);
        s += d * d;
    }
    return std::sqrt(s);
}

// Mean second-difference norm at chunk-boundary latent indices divided by the
// same statistic over interior indices. 1.0 means seams are as smooth as the
// interior.
inline double boundary_jerk(const LatentVideo& video, const ChunkPlan& plan) {
    if (plan.chunks.size() < 2)
        throw DataError("boundary_jerk is undefined for single-chunk plans");
    check_data(plan.fully_latent_aligned(), "boundary_jerk needs a latent-aligned plan");
    const int t = video.latent_frames();
    check_data(t == pixel_to_latent(plan.total_pixel_frames, plan.arith.temporal_stride),
               "boundary_jerk: video length does not match plan");
    std::vector<bool> is_boundary(t, false);
    int n_valid = 0;
    for (size_t k = 1; k < plan.chunks.size(); ++k) {
        int b = plan.chunks[k].emit_lat_start;
        if (b >= 1 && b <= t - 2) {
            is_boundary[b] = true;
            ++n_valid;
        }
    }
    check_data(n_valid >= 1, "boundary_jerk: no interior chunk boundary to evaluate");
    double bsum = 0, isum = 0;
    int bcnt = 0, icnt = 0;
    for (int i = 1; i <= t - 2; ++i) {
        double s = second_diff_norm(video.frames, i);
        if (is_boundary[i]) {
            bsum += s;
            ++bcnt;
        } else {
            isum += s;
            ++icnt;
        }
    }
    check_data(icnt >= 1, "boundary_jerk: no interior indices");
    double interior = isum / icnt;
    if (interior <= 1e-12) return bsum / bcnt <= 1e-12 ? 1.0 : INFINITY;
    return (bsum / bcnt) / interior;
}

// Replication similarity s = exp(-||video[idx] - ref||). 1 means the frame
// reproduces the reference exactly, 0 means free motion.
inline double control_strength(const LatentVideo& video, const std::vector<float>& ref_frame,
                               int ref_latent_index) {
    check_data(ref_latent_index >= 0 && ref_latent_index < video.latent_frames(),
               "control_strength index out of range");
    check_data(static_cast<int>(ref_frame.size()) == video.channels(),
               "control_strength reference dim mismatch");
    double d2 = 0;
    for (int c = 0; c < video.channels(); ++c) {
        double d = static_cast<double>(video.frames.at(ref_latent_index, c)) -
                   static_cast<double>(ref_frame[c]);
        d2 += d * d;
    }
    return std::exp(-std::sqrt(d2));
}

// Mean per-frame Euclidean distance between camera dims.
inline double camera_error(const LatentVideo& video, const LatentVideo& source) {
    check_data(video.latent_frames() == source.latent_frames(),
               "camera_error: length mismatch");
    double acc = 0;
    for (int i = 0; i < video.latent_frames(); ++i) {
        double d2 = 0;
        for (int c = 0; c < factor::camera_dims; ++c) {
            double d = static_cast<double>(video.frames.at(i, factor::camera + c)) -
                       static_cast<double>(source.frames.at(i, factor::camera + c));
            d2 += d * d;
        }
        acc += std::sqrt(d2);
    }
    return acc / video.latent_frames();
}

// ---------------------------------------------------------------------------
// Aggregate report
// ---------------------------------------------------------------------------

struct DubReport {
    double sync_corr = 0;
    bool sync_degenerate = false;
    double identity_drift_mean = 0;
    double identity_drift_max = 0;
    std::optional<double> boundary_jerk_ratio;  // absent for single-chunk runs
    double control_strength_mean = 0;
    double camera_error_mean = 0;
    std::vector<double> per_chunk_control_strength;
    std::vector<double> per_chunk_identity_drift;

    json to_json() const {
        json j;
        j["sync_corr"] = sync_corr;
        j["sync_degenerate"] = sync_degenerate;
        j["identity_drift_mean"] = identity_drift_mean;
        j["identity_drift_max"] = identity_drift_max;
        if (boundary_jerk_ratio)
            j["boundary_jerk_ratio"] = *boundary_jerk_ratio;
        else
            j["boundary_jerk_ratio"] = nullptr;
        j["control_strength"] = control_strength_mean;
        j["camera_error"] = camera_error_mean;
        j["per_chunk_control_strength"] = per_chunk_control_strength;
        j["per_chunk_identity_drift"] = per_chunk_identity_drift;
        return j;
    }
};

inline DubReport evaluate_dub(const LatentVideo& output, const LatentVideo& source,
                              const AudioTrack& audio, const ChunkPlan& plan, int max_lag = 2) {
    const int stride = plan.arith.temporal_stride;
    DubReport rep;
    SyncResult sync = sync_score_ex(output, audio, max_lag, stride);
    rep.sync_corr = sync.score;
    rep.sync_degenerate = sync.degenerate;

    const float* ref_id = source.frames.row(0) + factor::identity;
    auto [dmean, dmax] = identity_drift(output, ref_id);
    rep.identity_drift_mean = dmean;
    rep.identity_drift_max = dmax;

    if (plan.chunks.size() >= 2) {
        try {
            rep.boundary_jerk_ratio = boundary_jerk(output, plan);
        } catch (const DataError&) {
            rep.boundary_jerk_ratio = std::nullopt;
        }
    }

    double ctrl_acc = 0;
    for (const auto& ch : plan.chunks) {
        std::vector<float> ref(source.frames.row(covering_latent(ch.reference_pixel_index, stride)),
                               source.frames.row(covering_latent(ch.reference_pixel_index, stride)) +
                                   source.channels());
        double s = control_strength(output, ref, ch.emit_lat_start);
        rep.per_chunk_control_strength.push_back(s);
        ctrl_acc += s;

        double chunk_drift = 0;
        int n = 0;
        for (int i = ch.emit_lat_start; i < ch.emit_lat_end; ++i) {
            double d2 = 0;
            for (int c = 0; c < factor::identity_dims; ++c) {
                double d = static_cast<double>(output.frames.at(i, factor::identity + c)) -
                           static_cast<double>(ref_id[c]);
                d2 += d * d;
            }
            chunk_drift += std::sqrt(d2);
            ++n;
        }
        rep.per_chunk_identity_drift.push_back(n > 0 ? chunk_drift / n : 0.0);
    }
    rep.control_strength_mean = ctrl_acc / static_cast<double>(plan.chunks.size());
    rep.camera_error_mean = camera_error(output, source);
    return rep;
}

// ---------------------------------------------------------------------------
// Batch CSV output (one row per run) and a small sign test used by the
// paired-seed comparisons.
// ---------------------------------------------------------------------------

struct RunRow {
    std::string mode;
    std::string strategy;
    uint64_t seed = 0;
    DubReport report;
};

inline std::string csv_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

inline std::string run_csv_header() {
    return "mode,strategy,seed,sync,identity_drift_mean,identity_drift_max,boundary_jerk,"
           "control_strength,camera_error";
}

inline std::string run_csv_row(const RunRow& r) {
    std::string out = r.mode + "," + r.strategy + "," + std::to_string(r.seed);
    out += "," + csv_number(r.report.sync_corr);
    out += "," + csv_number(r.report.identity_drift_mean);
    out += "," + csv_number(r.report.identity_drift_max);
    out += "," + (r.report.boundary_jerk_ratio ? csv_number(*r.report.boundary_jerk_ratio)
                                               : std::string("nan"));
    out += "," + csv_number(r.report.control_strength_mean);
    out += "," + csv_number(r.report.camera_error_mean);
    return out;
}

// One-sided sign test: probability of >= k successes out of n under p = 1/2.
inline double sign_test_p(int k, int n) {
    check_data(n >= 1 && k >= 0 && k <= n, "bad sign test arguments");
    double p = 0;
    for (int i = k; i <= n; ++i) {
        double logc = std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0);
        p += std::exp(logc - n * std::log(2.0));
    }
    return std::min(1.0, p);
}

}  // namespace dubengine
