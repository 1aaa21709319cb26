#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dubengine/common.hpp"
#include "dubengine/mat.hpp"

namespace dubengine {

// ---------------------------------------------------------------------------
// Frame arithmetic.
//
// Pixel-frame timeline runs at 25 fps. Latent frame 0 covers pixel frame 0,
// latent frame i >= 1 covers pixel frames [stride*i - stride + 1, stride*i].
// A clip of n pixel frames is latent-representable iff n == 1 (mod stride).
// ---------------------------------------------------------------------------

struct FrameArithmetic {
    int temporal_stride = 4;   // pixel frames per latent step
    int chunk_pixel_len = 81;  // pixel frames per generation chunk
    int context_pixel_len = 9; // trailing pixel frames carried between chunks

    void validate() const {
        check_config(temporal_stride >= 1, "temporal_stride must be >= 1");
        check_config(chunk_pixel_len % temporal_stride == 1,
                     "chunk_pixel_len must be 1 mod temporal_stride");
        check_config(context_pixel_len % temporal_stride == 1 && context_pixel_len >= 1,
                     "context_pixel_len must be stride*(t_c-1)+1 for t_c >= 1");
        check_config(context_pixel_len < chunk_pixel_len,
                     "context_pixel_len must be smaller than chunk_pixel_len");
    }

    int t_c() const { return (context_pixel_len - 1) / temporal_stride + 1; }
    int chunk_latent_len() const { return (chunk_pixel_len - 1) / temporal_stride + 1; }
    int new_pixels_per_chunk() const { return chunk_pixel_len - context_pixel_len; }
};

inline int pixel_to_latent(int n_pixel, int stride = 4) {
    check_data(n_pixel >= 1, "pixel frame count must be >= 1");
    if ((n_pixel - 1) % stride != 0)
        throw DataError("pixel length " + std::to_string(n_pixel) +
                        " is not aligned: need n == 1 (mod " + std::to_string(stride) + ")");
    return (n_pixel - 1) / stride + 1;
}

inline int latent_to_pixel(int t_lat, int stride = 4) {
    check_data(t_lat >= 1, "latent frame count must be >= 1");
    return stride * (t_lat - 1) + 1;
}

// Latent frame whose pooling window contains pixel frame p.
inline int covering_latent(int pixel_index, int stride = 4) {
    check_data(pixel_index >= 0, "pixel index must be >= 0");
    return (pixel_index + stride - 1) / stride;
}

// Mean-pool a pixel-rate signal to latent rate using the covering windows.
template <typename T>
std::vector<T> pool_to_latent(const std::vector<T>& pixel_values, int stride = 4) {
    int n = static_cast<int>(pixel_values.size());
    int t_lat = pixel_to_latent(n, stride);
    std::vector<T> out(t_lat);
    out[0] = pixel_values[0];
    for (int i = 1; i < t_lat; ++i) {
        double acc = 0;
        for (int p = stride * i - stride + 1; p <= stride * i; ++p) acc += pixel_values[p];
        out[i] = static_cast<T>(acc / stride);
    }
    return out;
}

template <typename T>
Mat<T> pool_rows_to_latent(const Mat<T>& pixel_rows, int stride = 4) {
    int t_lat = pixel_to_latent(pixel_rows.rows, stride);
    Mat<T> out(t_lat, pixel_rows.cols);
    for (int c = 0; c < pixel_rows.cols; ++c) out.at(0, c) = pixel_rows.at(0, c);
    for (int i = 1; i < t_lat; ++i)
        for (int c = 0; c < pixel_rows.cols; ++c) {
            double acc = 0;
            for (int p = stride * i - stride + 1; p <= stride * i; ++p) acc += pixel_rows.at(p, c);
            out.at(i, c) = static_cast<T>(acc / stride);
        }
    return out;
}

// ---------------------------------------------------------------------------
// Latent video: one factor vector per latent frame.
// ---------------------------------------------------------------------------

namespace factor {
constexpr int mouth = 0;
constexpr int head = 1;       // 2 dims
constexpr int gesture = 3;    // 2 dims
constexpr int identity = 5;   // 4 dims
constexpr int camera = 9;     // 2 dims
constexpr int style = 11;
constexpr int head_dims = 2;
constexpr int gesture_dims = 2;
constexpr int identity_dims = 4;
constexpr int camera_dims = 2;
constexpr int count = 12;
}  // namespace factor

struct LatentVideo {
    Mat<float> frames;  // [T_lat x C_lat]
    double fps_pixel = 25.0;

    int latent_frames() const { return frames.rows; }
    int channels() const { return frames.cols; }
    int pixel_frames(int stride = 4) const { return latent_to_pixel(frames.rows, stride); }
};

// ---------------------------------------------------------------------------
// Chunk plan.
// ---------------------------------------------------------------------------

enum class ContextSource { none, previous_output };

struct ChunkSpec {
    int px_start = 0, px_end = 0;          // [start, end)
    int lat_start = 0, lat_end = 0;        // valid iff latent_aligned
    bool latent_aligned = false;
    ContextSource context_source = ContextSource::none;
    int reference_pixel_index = 0;         // first pixel frame of the span
    int emit_px_start = 0, emit_px_end = 0;   // non-discarded output span
    int emit_lat_start = 0, emit_lat_end = 0; // valid iff latent_aligned
};

struct ChunkPlan {
    std::vector<ChunkSpec> chunks;
    int total_pixel_frames = 0;
    FrameArithmetic arith;

    size_t chunk_count() const { return chunks.size(); }
    bool fully_latent_aligned() const {
        for (const auto& c : chunks)
            if (!c.latent_aligned) return false;
        return true;
    }
};

// Chunk 0 covers [0, chunk); chunk k >= 1 starts at k * new_pixels. The final
// chunk is right-aligned to end exactly at total; any overlap beyond the
// context window is generated again and discarded from the output.
inline ChunkPlan build_chunk_plan(int total_pixel_frames, const FrameArithmetic& arith = {}) {
    arith.validate();
    const int chunk = arith.chunk_pixel_len;
    const int fresh = arith.new_pixels_per_chunk();
    const int stride = arith.temporal_stride;
    if (total_pixel_frames < chunk)
        throw DataError("input of " + std::to_string(total_pixel_frames) +
                        " pixel frames is shorter than one chunk (" + std::to_string(chunk) + ")");

    ChunkPlan plan;
    plan.total_pixel_frames = total_pixel_frames;
    plan.arith = arith;

    int n_chunks = 1 + (total_pixel_frames - chunk + fresh - 1) / fresh;
    int emitted_px = 0;
    for (int k = 0; k < n_chunks; ++k) {
        ChunkSpec c;
        if (k == n_chunks - 1 && k > 0) {
            c.px_start = total_pixel_frames - chunk;
            c.px_end = total_pixel_frames;
        } else {
            c.px_start = k * fresh;
            c.px_end = c.px_start + chunk;
        }
        c.context_source = (k == 0) ? ContextSource::none : ContextSource::previous_output;
        c.reference_pixel_index = c.px_start;
        c.emit_px_start = (k == 0) ? 0 : std::max(emitted_px, c.px_start + arith.context_pixel_len);
        c.emit_px_end = c.px_end;
        c.latent_aligned = (c.px_start % stride == 0) && ((c.px_end - 1) % stride == 0);
        if (c.latent_aligned) {
            c.lat_start = c.px_start / stride;
            c.lat_end = (c.px_end - 1) / stride + 1;
            c.emit_lat_start = (k == 0) ? 0 : covering_latent(c.emit_px_start, stride);
            c.emit_lat_end = c.lat_end;
        }
        emitted_px = c.emit_px_end;
        plan.chunks.push_back(c);
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Conditioning assembly.
//
// Channel layout is [z1 | z2 | m]:
//   z1 = temporal concat of context frames and the noisy latent,
//   z2 = the reference frame at temporal slot 0, zeros elsewhere,
//   m  = ones at slot 0, zeros elsewhere, replicated to m_ch channels.
// ---------------------------------------------------------------------------

template <typename T>
struct ConditioningBundle {
    Mat<T> z;             // [(t_ctx + t_noisy) x (2*c_lat + m_ch)]
    Mat<T> audio_tokens;  // [(t_ctx + t_noisy) x d_tok], filled by the caller
    std::vector<T> ref_frame;
    int c_lat = 0;
    int m_ch = 1;
    int t_ctx = 0;
    int t_noisy = 0;

    int tokens() const { return t_ctx + t_noisy; }
    int noisy_lo() const { return t_ctx; }
    int noisy_hi() const { return t_ctx + t_noisy; }

    // View of x_t inside z1.
    Mat<T> noisy_state() const {
        Mat<T> out(t_noisy, c_lat);
        for (int i = 0; i < t_noisy; ++i)
            for (int c = 0; c < c_lat; ++c) out.at(i, c) = z.at(t_ctx + i, c);
        return out;
    }

    void set_noisy_state(const Mat<T>& x) {
        check_data(x.rows == t_noisy && x.cols == c_lat, "noisy state shape mismatch");
        for (int i = 0; i < t_noisy; ++i)
            for (int c = 0; c < c_lat; ++c) z.at(t_ctx + i, c) = x.at(i, c);
    }

    double mask_sum() const {
        double s = 0;
        for (int i = 0; i < z.rows; ++i)
            for (int c = 2 * c_lat; c < z.cols; ++c) s += static_cast<double>(z.at(i, c));
        return s;
    }
};

template <typename T>
ConditioningBundle<T> assemble_conditioning(const Mat<T>& x_t, const Mat<T>& x_context,
                                            const std::vector<T>& x_ref, int m_ch) {
    check_data(x_t.rows >= 1, "noisy region must have at least one frame");
    check_config(m_ch >= 1, "m_ch must be >= 1");
    const int c = x_t.cols;
    if (x_context.rows > 0 && x_context.cols != c)
        throw DataError("context/noisy channel mismatch in conditioning assembly");
    if (static_cast<int>(x_ref.size()) != c)
        throw DataError("reference frame channel mismatch in conditioning assembly");

    ConditioningBundle<T> b;
    b.c_lat = c;
    b.m_ch = m_ch;
    b.t_ctx = x_context.rows;
    b.t_noisy = x_t.rows;
    const int t_total = b.tokens();
    b.z = Mat<T>(t_total, 2 * c + m_ch);
    b.ref_frame = x_ref;

    // z1
    for (int i = 0; i < b.t_ctx; ++i)
        for (int j = 0; j < c; ++j) b.z.at(i, j) = x_context.at(i, j);
    for (int i = 0; i < b.t_noisy; ++i)
        for (int j = 0; j < c; ++j) b.z.at(b.t_ctx + i, j) = x_t.at(i, j);
    // z2: reference copy at slot 0
    for (int j = 0; j < c; ++j) b.z.at(0, c + j) = x_ref[j];
    // m: ones at slot 0
    for (int j = 0; j < m_ch; ++j) b.z.at(0, 2 * c + j) = T(1);
    return b;
}

// Second marked reference slot at the last temporal position (FL2V-style
// conditioning reuses the training-time channel format).
template <typename T>
void apply_end_reference(ConditioningBundle<T>& b, const std::vector<T>& ref_end) {
    check_data(static_cast<int>(ref_end.size()) == b.c_lat,
               "end reference channel mismatch");
    int last = b.tokens() - 1;
    check_data(last > 0, "bundle too short for an end reference");
    for (int j = 0; j < b.c_lat; ++j) b.z.at(last, b.c_lat + j) = ref_end[j];
    for (int j = 0; j < b.m_ch; ++j) b.z.at(last, 2 * b.c_lat + j) = T(1);
}

}  // namespace dubengine
