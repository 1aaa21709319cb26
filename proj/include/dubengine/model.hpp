#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "dubengine/core.hpp"
#include "dubengine/io.hpp"
#include "dubengine/rng.hpp"
#include "dubengine/world.hpp"

namespace dubengine {

// ---------------------------------------------------------------------------
// Velocity field estimator: a small transformer over latent-frame tokens.
// Input is the channel-concatenated conditioning tensor [z1|z2|m]; each block
// runs temporal self-attention, audio cross-attention, reference
// cross-attention and a feed-forward, all pre-norm residual.
//
// Forward and backward are written out by hand; the backward pass is verified
// against central finite differences in the test suite.
// ---------------------------------------------------------------------------

struct ModelConfig {
    int c_lat = 12;
    int m_ch = 1;
    int d_audio = 8;
    int audio_window = 2;  // latent frames of audio context on each side
    int d_ref = 64;
    int width = 128;
    int depth = 4;
    int heads = 4;

    int in_channels() const { return 2 * c_lat + m_ch; }
    int d_audio_tok() const { return d_audio * (2 * audio_window + 1); }
    int head_dim() const { return width / heads; }

    void validate() const {
        check_config(c_lat >= 1 && m_ch >= 1 && d_audio >= 1 && d_ref >= 1, "bad model dims");
        check_config(audio_window >= 0, "audio_window must be >= 0");
        check_config(width >= 2 && heads >= 1 && width % heads == 0,
                     "width must be a positive multiple of heads");
        check_config(depth >= 0, "depth must be >= 0");
    }

    json to_json() const {
        return json{{"c_lat", c_lat},   {"m_ch", m_ch},     {"d_audio", d_audio},
                    {"audio_window", audio_window}, {"d_ref", d_ref}, {"width", width},
                    {"depth", depth},   {"heads", heads}};
    }

    static ModelConfig from_json(const json& j) {
        ModelConfig c;
        c.c_lat = j.at("c_lat").get<int>();
        c.m_ch = j.at("m_ch").get<int>();
        c.d_audio = j.at("d_audio").get<int>();
        c.audio_window = j.at("audio_window").get<int>();
        c.d_ref = j.at("d_ref").get<int>();
        c.width = j.at("width").get<int>();
        c.depth = j.at("depth").get<int>();
        c.heads = j.at("heads").get<int>();
        c.validate();
        return c;
    }
};

// ---------------------------------------------------------------------------
// Audio-to-latent alignment: latent frame i mean-pools the pixel frames it
// covers, then concatenates the pooled vectors of latent frames
// [i-window, i+window] with edge clamping.
// ---------------------------------------------------------------------------

inline Mat<float> align_audio(const AudioTrack& audio, int latent_len, int window, int stride = 4) {
    check_data(latent_len >= 1 && window >= 0, "bad align_audio arguments");
    int need_px = latent_to_pixel(latent_len, stride);
    if (audio.pixel_frames() != need_px)
        throw DataError("align_audio: audio covers " + std::to_string(audio.pixel_frames()) +
                        " pixel frames, latent length " + std::to_string(latent_len) + " needs " +
                        std::to_string(need_px));
    Mat<float> pooled = pool_rows_to_latent(audio.features, stride);
    const int d = audio.features.cols;
    Mat<float> out(latent_len, d * (2 * window + 1));
    for (int i = 0; i < latent_len; ++i)
        for (int k = -window; k <= window; ++k) {
            int src = std::min(latent_len - 1, std::max(0, i + k));
            std::memcpy(out.row(i) + static_cast<size_t>(k + window) * d, pooled.row(src),
                        static_cast<size_t>(d) * sizeof(float));
        }
    return out;
}

inline AudioTrack slice_audio(const AudioTrack& audio, int px_start, int px_end) {
    check_data(px_start >= 0 && px_end <= audio.pixel_frames() && px_start < px_end,
               "audio slice out of range");
    AudioTrack out;
    out.fps = audio.fps;
    out.envelope.assign(audio.envelope.begin() + px_start, audio.envelope.begin() + px_end);
    out.features = audio.features.slice_rows(px_start, px_end);
    return out;
}

// ---------------------------------------------------------------------------
// Parameter containers
// ---------------------------------------------------------------------------

template <typename T>
struct LinearP {
    Mat<T> w;  // [out x in]
    Mat<T> b;  // [1 x out]

    void resize(int out, int in) {
        w = Mat<T>(out, in);
        b = Mat<T>(1, out);
    }
};

template <typename T>
struct LayerNormP {
    Mat<T> g;  // [1 x n]
    Mat<T> b;  // [1 x n]

    void resize(int n) {
        g = Mat<T>(1, n);
        b = Mat<T>(1, n);
    }
};

template <typename T>
struct AttnP {
    LinearP<T> q, k, v, o;
};

template <typename T>
struct BlockP {
    LayerNormP<T> ln1, ln2, ln3, ln4;
    AttnP<T> self_attn, audio_attn, ref_attn;
    LinearP<T> ff1, ff2;
};

template <typename T>
struct ModelParams {
    LinearP<T> in_proj;
    LinearP<T> time1, time2;
    LinearP<T> ref_proj;
    std::vector<BlockP<T>> blocks;
    LayerNormP<T> final_ln;
    LinearP<T> out_proj;

    template <typename F>
    void visit(F&& f) {
        auto lin = [&](const std::string& n, LinearP<T>& l) {
            f(n + ".w", l.w);
            f(n + ".b", l.b);
        };
        auto ln = [&](const std::string& n, LayerNormP<T>& l) {
            f(n + ".g", l.g);
            f(n + ".b", l.b);
        };
        auto attn = [&](const std::string& n, AttnP<T>& a) {
            lin(n + ".wq", a.q);
            lin(n + ".wk", a.k);
            lin(n + ".wv", a.v);
            lin(n + ".wo", a.o);
        };
        lin("in_proj", in_proj);
        lin("time1", time1);
        lin("time2", time2);
        lin("ref_proj", ref_proj);
        for (size_t i = 0; i < blocks.size(); ++i) {
            std::string p = "block" + std::to_string(i);
            ln(p + ".ln1", blocks[i].ln1);
            attn(p + ".self", blocks[i].self_attn);
            ln(p + ".ln2", blocks[i].ln2);
            attn(p + ".audio", blocks[i].audio_attn);
            ln(p + ".ln3", blocks[i].ln3);
            attn(p + ".ref", blocks[i].ref_attn);
            ln(p + ".ln4", blocks[i].ln4);
            lin(p + ".ff1", blocks[i].ff1);
            lin(p + ".ff2", blocks[i].ff2);
        }
        ln("final_ln", final_ln);
        lin("out_proj", out_proj);
    }

    void resize(const ModelConfig& cfg) {
        const int w = cfg.width;
        in_proj.resize(w, cfg.in_channels());
        time1.resize(w, w);
        time2.resize(w, w);
        ref_proj.resize(cfg.d_ref, cfg.c_lat);
        blocks.resize(cfg.depth);
        for (auto& blk : blocks) {
            blk.ln1.resize(w);
            blk.ln2.resize(w);
            blk.ln3.resize(w);
            blk.ln4.resize(w);
            for (auto* a : {&blk.self_attn, &blk.audio_attn, &blk.ref_attn}) {
                a->q.resize(w, w);
                a->o.resize(w, w);
            }
            blk.self_attn.k.resize(w, w);
            blk.self_attn.v.resize(w, w);
            blk.audio_attn.k.resize(w, cfg.d_audio_tok());
            blk.audio_attn.v.resize(w, cfg.d_audio_tok());
            blk.ref_attn.k.resize(w, cfg.d_ref);
            blk.ref_attn.v.resize(w, cfg.d_ref);
            blk.ff1.resize(4 * w, w);
            blk.ff2.resize(w, 4 * w);
        }
        final_ln.resize(w);
        out_proj.resize(cfg.c_lat, w);
    }

    void zero() {
        visit([](const std::string&, Mat<T>& m) { m.zero(); });
    }

    int64_t total_size() {
        int64_t n = 0;
        visit([&](const std::string&, Mat<T>& m) { n += static_cast<int64_t>(m.size()); });
        return n;
    }
};

// ---------------------------------------------------------------------------
// Fixed sinusoidal embeddings (positions and the flow time).
// ---------------------------------------------------------------------------

template <typename T>
void sincos_embedding(double pos, int dim, T* out) {
    int half = dim / 2;
    for (int j = 0; j < half; ++j) {
        double freq = std::exp(-std::log(10000.0) * j / half);
        out[j] = static_cast<T>(std::sin(pos * freq));
        out[half + j] = static_cast<T>(std::cos(pos * freq));
    }
    if (dim % 2) out[dim - 1] = T(0);
}

// ---------------------------------------------------------------------------
// Layer primitives
// ---------------------------------------------------------------------------

namespace nn {

template <typename T>
void linear_fwd(const Mat<T>& x, const LinearP<T>& p, Mat<T>& y) {
    const int out = p.w.rows, in = p.w.cols;
    y = Mat<T>(x.rows, out);
    for (int m = 0; m < x.rows; ++m) {
        const T* xr = x.row(m);
        T* yr = y.row(m);
        for (int n = 0; n < out; ++n) yr[n] = dot(xr, p.w.row(n), in) + p.b.at(0, n);
    }
}

// accumulates into gw/gb; accumulates dx when dx != nullptr
template <typename T>
void linear_bwd(const Mat<T>& x, const LinearP<T>& p, const Mat<T>& dy, LinearP<T>& g,
                Mat<T>* dx) {
    const int out = p.w.rows, in = p.w.cols;
    for (int m = 0; m < x.rows; ++m) {
        const T* dyr = dy.row(m);
        const T* xr = x.row(m);
        for (int n = 0; n < out; ++n) {
            T d = dyr[n];
            if (d != T(0)) axpy(d, xr, g.w.row(n), in);
            g.b.at(0, n) += d;
        }
        if (dx) {
            T* dxr = dx->row(m);
            for (int n = 0; n < out; ++n) {
                T d = dyr[n];
                if (d != T(0)) axpy(d, p.w.row(n), dxr, in);
            }
        }
    }
}

template <typename T>
struct LnCache {
    Mat<T> xhat;
    std::vector<T> rstd;
};

template <typename T>
void layernorm_fwd(const Mat<T>& x, const LayerNormP<T>& p, Mat<T>& y, LnCache<T>& c) {
    const int n = x.cols;
    const T eps = T(1e-5);
    y = Mat<T>(x.rows, n);
    c.xhat = Mat<T>(x.rows, n);
    c.rstd.resize(x.rows);
    for (int m = 0; m < x.rows; ++m) {
        const T* xr = x.row(m);
        T mu = T(0);
        for (int i = 0; i < n; ++i) mu += xr[i];
        mu /= T(n);
        T var = T(0);
        for (int i = 0; i < n; ++i) {
            T d = xr[i] - mu;
            var += d * d;
        }
        var /= T(n);
        T rstd = T(1) / std::sqrt(var + eps);
        c.rstd[m] = rstd;
        T* xh = c.xhat.row(m);
        T* yr = y.row(m);
        for (int i = 0; i < n; ++i) {
            xh[i] = (xr[i] - mu) * rstd;
            yr[i] = p.g.at(0, i) * xh[i] + p.b.at(0, i);
        }
    }
}

// accumulates into g, adds input gradient into dx
template <typename T>
void layernorm_bwd(const LnCache<T>& c, const LayerNormP<T>& p, const Mat<T>& dy, LayerNormP<T>& g,
                   Mat<T>& dx) {
    const int n = c.xhat.cols;
    std::vector<T> dxhat(n);
    for (int m = 0; m < c.xhat.rows; ++m) {
        const T* dyr = dy.row(m);
        const T* xh = c.xhat.row(m);
        T m1 = T(0), m2 = T(0);
        for (int i = 0; i < n; ++i) {
            dxhat[i] = dyr[i] * p.g.at(0, i);
            g.g.at(0, i) += dyr[i] * xh[i];
            g.b.at(0, i) += dyr[i];
            m1 += dxhat[i];
            m2 += dxhat[i] * xh[i];
        }
        m1 /= T(n);
        m2 /= T(n);
        T* dxr = dx.row(m);
        for (int i = 0; i < n; ++i) dxr[i] += c.rstd[m] * (dxhat[i] - m1 - xh[i] * m2);
    }
}

template <typename T>
T silu(T x) {
    T s = T(1) / (T(1) + std::exp(-x));
    return x * s;
}

template <typename T>
T silu_grad(T x) {
    T s = T(1) / (T(1) + std::exp(-x));
    return s * (T(1) + x * (T(1) - s));
}

template <typename T>
struct AttnCache {
    Mat<T> xq;                   // [Tq x W] query-side input
    Mat<T> xk;                   // [Tk x Dk] key/value-side input
    Mat<T> q, k, v;              // [T x W]
    std::vector<Mat<T>> probs;   // per head [Tq x Tk]
    Mat<T> concat;               // [Tq x W] heads concatenated, pre-output
};

// Multi-head attention. When add_key_pos, sinusoidal position embeddings are
// added to the projected keys and a per-head diagonal distance bias keeps
// attention near the aligned position (used for audio tokens, which carry no
// position of their own). The bias is constant, so backward is unaffected.
template <typename T>
void attention_fwd(const Mat<T>& xq, const Mat<T>& xk, const AttnP<T>& p, int heads,
                   bool add_key_pos, Mat<T>& y, AttnCache<T>& c) {
    const int w = p.q.w.rows;
    const int dh = w / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    c.xq = xq;
    c.xk = xk;
    linear_fwd(xq, p.q, c.q);
    linear_fwd(xk, p.k, c.k);
    linear_fwd(xk, p.v, c.v);
    if (add_key_pos) {
        std::vector<T> pos(w);
        for (int i = 0; i < c.k.rows; ++i) {
            sincos_embedding(static_cast<double>(i), w, pos.data());
            axpy(T(1), pos.data(), c.k.row(i), w);
        }
    }
    const int tq = xq.rows, tk = xk.rows;
    c.probs.assign(heads, Mat<T>());
    c.concat = Mat<T>(tq, w);
    for (int h = 0; h < heads; ++h) {
        Mat<T>& probs = c.probs[h];
        probs = Mat<T>(tq, tk);
        const int off = h * dh;
        const T slope = add_key_pos ? T(std::pow(2.0, -(h + 1))) : T(0);
        for (int i = 0; i < tq; ++i) {
            T* pr = probs.row(i);
            T mx = -std::numeric_limits<T>::infinity();
            for (int j = 0; j < tk; ++j) {
                pr[j] = dot(c.q.row(i) + off, c.k.row(j) + off, dh) * scale -
                        slope * std::abs(i - j);
                mx = std::max(mx, pr[j]);
            }
            T sum = T(0);
            for (int j = 0; j < tk; ++j) {
                pr[j] = std::exp(pr[j] - mx);
                sum += pr[j];
            }
            T inv = T(1) / sum;
            T* out = c.concat.row(i) + off;
            for (int j = 0; j < tk; ++j) {
                pr[j] *= inv;
                axpy(pr[j], c.v.row(j) + off, out, dh);
            }
        }
    }
    linear_fwd(c.concat, p.o, y);
}

// dxq is accumulated; dxk accumulated when non-null.
template <typename T>
void attention_bwd(const AttnCache<T>& c, const AttnP<T>& p, int heads, const Mat<T>& dy,
                   AttnP<T>& g, Mat<T>& dxq, Mat<T>* dxk) {
    const int w = p.q.w.rows;
    const int dh = w / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    const int tq = c.xq.rows, tk = c.xk.rows;

    Mat<T> dconcat(tq, w);
    linear_bwd(c.concat, p.o, dy, g.o, &dconcat);

    Mat<T> dq(tq, w), dk(tk, w), dv(tk, w);
    std::vector<T> dprobs(tk), dlogits(tk);
    for (int h = 0; h < heads; ++h) {
        const Mat<T>& probs = c.probs[h];
        const int off = h * dh;
        for (int i = 0; i < tq; ++i) {
            const T* da = dconcat.row(i) + off;
            const T* pr = probs.row(i);
            T dot_pp = T(0);
            for (int j = 0; j < tk; ++j) {
                dprobs[j] = dot(da, c.v.row(j) + off, dh);
                axpy(pr[j], da, dv.row(j) + off, dh);
                dot_pp += dprobs[j] * pr[j];
            }
            for (int j = 0; j < tk; ++j) dlogits[j] = pr[j] * (dprobs[j] - dot_pp);
            for (int j = 0; j < tk; ++j) {
                T dl = dlogits[j] * scale;
                if (dl != T(0)) {
                    axpy(dl, c.k.row(j) + off, dq.row(i) + off, dh);
                    axpy(dl, c.q.row(i) + off, dk.row(j) + off, dh);
                }
            }
        }
    }
    linear_bwd(c.xq, p.q, dq, g.q, &dxq);
    linear_bwd(c.xk, p.k, dk, g.k, dxk);  // key position embedding is constant
    linear_bwd(c.xk, p.v, dv, g.v, dxk);
}

}  // namespace nn

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

template <typename T>
struct BlockCache {
    nn::LnCache<T> ln1c, ln2c, ln3c, ln4c;
    nn::AttnCache<T> self_c, audio_c, ref_c;
    Mat<T> ff_in, ff_h, ff_a;
};

template <typename T>
struct ForwardCache {
    Mat<T> z;
    Mat<T> audio;
    std::vector<T> ref_frame;
    Mat<T> t_feat;          // [1 x W]
    Mat<T> time_h, time_a;  // [1 x W]
    Mat<T> temb;            // [1 x W]
    Mat<T> ref_emb;         // [1 x d_ref]
    std::vector<BlockCache<T>> blocks;
    nn::LnCache<T> final_c;
    Mat<T> final_n;
};

template <typename T>
struct VelocityModel {
    ModelConfig cfg;
    ModelParams<T> p;

    VelocityModel() = default;

    VelocityModel(const ModelConfig& config, uint64_t seed) : cfg(config) {
        cfg.validate();
        p.resize(cfg);
        Rng rng(derive_seed(seed, 0x1217));
        auto init_linear = [&](LinearP<T>& l, double gain) {
            double std = gain / std::sqrt(static_cast<double>(l.w.cols));
            for (auto& v : l.w.data) v = static_cast<T>(rng.normal() * std);
            l.b.zero();
        };
        init_linear(p.in_proj, 1.0);
        init_linear(p.time1, 1.0);
        init_linear(p.time2, 1.0);
        init_linear(p.ref_proj, 1.0);
        for (auto& blk : p.blocks) {
            for (auto* l : {&blk.ln1, &blk.ln2, &blk.ln3, &blk.ln4}) {
                l->g.fill(T(1));
                l->b.zero();
            }
            for (auto* a : {&blk.self_attn, &blk.audio_attn, &blk.ref_attn}) {
                init_linear(a->q, 1.0);
                init_linear(a->k, 1.0);
                init_linear(a->v, 1.0);
                init_linear(a->o, 0.5);
            }
            init_linear(blk.ff1, 1.0);
            init_linear(blk.ff2, 0.5);
        }
        p.final_ln.g.fill(T(1));
        p.final_ln.b.zero();
        init_linear(p.out_proj, 0.1);
    }

    int64_t count_params() const { return const_cast<ModelParams<T>&>(p).total_size(); }

    Mat<T> reference_embedding(const std::vector<T>& ref_frame) const {
        check_data(static_cast<int>(ref_frame.size()) == cfg.c_lat, "reference frame dim mismatch");
        Mat<T> in(1, cfg.c_lat);
        for (int i = 0; i < cfg.c_lat; ++i) in.at(0, i) = ref_frame[i];
        Mat<T> out;
        nn::linear_fwd(in, p.ref_proj, out);
        return out;
    }

    // Returns velocity estimates at every temporal position [tokens x c_lat].
    Mat<T> forward(const ConditioningBundle<T>& b, T t, ForwardCache<T>* cache = nullptr) const {
        check_data(b.z.cols == cfg.in_channels(), "conditioning channel mismatch");
        check_data(b.audio_tokens.rows == b.z.rows && b.audio_tokens.cols == cfg.d_audio_tok(),
                   "audio token shape mismatch");
        check_data(std::isfinite(static_cast<double>(t)), "flow time must be finite");
        ForwardCache<T> local;
        ForwardCache<T>& c = cache ? *cache : local;
        const int w = cfg.width;
        const int tokens = b.z.rows;

        c.z = b.z;
        c.audio = b.audio_tokens;
        c.ref_frame = b.ref_frame;

        Mat<T> x;
        nn::linear_fwd(c.z, p.in_proj, x);
        std::vector<T> pos(w);
        for (int i = 0; i < tokens; ++i) {
            sincos_embedding(static_cast<double>(i), w, pos.data());
            axpy(T(1), pos.data(), x.row(i), w);
        }

        c.t_feat = Mat<T>(1, w);
        sincos_embedding(static_cast<double>(t) * 1000.0, w, c.t_feat.row(0));
        nn::linear_fwd(c.t_feat, p.time1, c.time_h);
        c.time_a = Mat<T>(1, w);
        for (int i = 0; i < w; ++i) c.time_a.at(0, i) = nn::silu(c.time_h.at(0, i));
        nn::linear_fwd(c.time_a, p.time2, c.temb);
        for (int i = 0; i < tokens; ++i) axpy(T(1), c.temb.row(0), x.row(i), w);

        c.ref_emb = reference_embedding(b.ref_frame);

        c.blocks.assign(cfg.depth, BlockCache<T>());
        for (int bi = 0; bi < cfg.depth; ++bi) {
            const BlockP<T>& blk = p.blocks[bi];
            BlockCache<T>& bc = c.blocks[bi];
            Mat<T> n, out;

            nn::layernorm_fwd(x, blk.ln1, n, bc.ln1c);
            nn::attention_fwd(n, n, blk.self_attn, cfg.heads, false, out, bc.self_c);
            for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += out.data[i];

            nn::layernorm_fwd(x, blk.ln2, n, bc.ln2c);
            nn::attention_fwd(n, c.audio, blk.audio_attn, cfg.heads, true, out, bc.audio_c);
            for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += out.data[i];

            nn::layernorm_fwd(x, blk.ln3, n, bc.ln3c);
            nn::attention_fwd(n, c.ref_emb, blk.ref_attn, cfg.heads, false, out, bc.ref_c);
            for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += out.data[i];

            nn::layernorm_fwd(x, blk.ln4, bc.ff_in, bc.ln4c);
            nn::linear_fwd(bc.ff_in, blk.ff1, bc.ff_h);
            bc.ff_a = Mat<T>(bc.ff_h.rows, bc.ff_h.cols);
            for (size_t i = 0; i < bc.ff_h.data.size(); ++i)
                bc.ff_a.data[i] = nn::silu(bc.ff_h.data[i]);
            nn::linear_fwd(bc.ff_a, blk.ff2, out);
            for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += out.data[i];
        }

        nn::layernorm_fwd(x, p.final_ln, c.final_n, c.final_c);
        Mat<T> y;
        nn::linear_fwd(c.final_n, p.out_proj, y);
        if (!y.all_finite()) throw NumericError("velocity model forward produced non-finite values");
        return y;
    }

    // Accumulates parameter gradients for d(loss)/d(output) into grads.
    void backward(const ForwardCache<T>& c, const Mat<T>& d_out, ModelParams<T>& grads) const {
        const int w = cfg.width;
        const int tokens = c.z.rows;

        Mat<T> d_final_n(tokens, w);
        nn::linear_bwd(c.final_n, p.out_proj, d_out, grads.out_proj, &d_final_n);
        Mat<T> dx(tokens, w);
        nn::layernorm_bwd(c.final_c, p.final_ln, d_final_n, grads.final_ln, dx);

        Mat<T> d_ref_emb(1, cfg.d_ref);
        for (int bi = cfg.depth - 1; bi >= 0; --bi) {
            const BlockP<T>& blk = p.blocks[bi];
            BlockP<T>& gblk = grads.blocks[bi];
            const BlockCache<T>& bc = c.blocks[bi];

            // feed-forward
            {
                Mat<T> d_ff_a(bc.ff_a.rows, bc.ff_a.cols);
                nn::linear_bwd(bc.ff_a, blk.ff2, dx, gblk.ff2, &d_ff_a);
                Mat<T> d_ff_h(bc.ff_h.rows, bc.ff_h.cols);
                for (size_t i = 0; i < d_ff_h.data.size(); ++i)
                    d_ff_h.data[i] = d_ff_a.data[i] * nn::silu_grad(bc.ff_h.data[i]);
                Mat<T> d_n(tokens, w);
                nn::linear_bwd(bc.ff_in, blk.ff1, d_ff_h, gblk.ff1, &d_n);
                nn::layernorm_bwd(bc.ln4c, blk.ln4, d_n, gblk.ln4, dx);
            }
            // reference cross-attention
            {
                Mat<T> d_n(tokens, w);
                nn::attention_bwd(bc.ref_c, blk.ref_attn, cfg.heads, dx, gblk.ref_attn, d_n,
                                  &d_ref_emb);
                nn::layernorm_bwd(bc.ln3c, blk.ln3, d_n, gblk.ln3, dx);
            }
            // audio cross-attention (audio tokens are constants)
            {
                Mat<T> d_n(tokens, w);
                nn::attention_bwd(bc.audio_c, blk.audio_attn, cfg.heads, dx, gblk.audio_attn, d_n,
                                  static_cast<Mat<T>*>(nullptr));
                nn::layernorm_bwd(bc.ln2c, blk.ln2, d_n, gblk.ln2, dx);
            }
            // self-attention: query and key/value share the normed input
            {
                Mat<T> d_n(tokens, w);
                nn::attention_bwd(bc.self_c, blk.self_attn, cfg.heads, dx, gblk.self_attn, d_n,
                                  &d_n);
                nn::layernorm_bwd(bc.ln1c, blk.ln1, d_n, gblk.ln1, dx);
            }
        }

        // time embedding was added to every token
        {
            Mat<T> dtemb(1, w);
            for (int i = 0; i < tokens; ++i) axpy(T(1), dx.row(i), dtemb.row(0), w);
            Mat<T> d_time_a(1, w);
            nn::linear_bwd(c.time_a, p.time2, dtemb, grads.time2, &d_time_a);
            Mat<T> d_time_h(1, w);
            for (int i = 0; i < w; ++i)
                d_time_h.at(0, i) = d_time_a.at(0, i) * nn::silu_grad(c.time_h.at(0, i));
            nn::linear_bwd(c.t_feat, p.time1, d_time_h, grads.time1, static_cast<Mat<T>*>(nullptr));
        }

        nn::linear_bwd(c.z, p.in_proj, dx, grads.in_proj, static_cast<Mat<T>*>(nullptr));

        // reference projection, fed by every block's cross-attention
        {
            Mat<T> ref_in(1, cfg.c_lat);
            for (int i = 0; i < cfg.c_lat; ++i) ref_in.at(0, i) = c.ref_frame[i];
            nn::linear_bwd(ref_in, p.ref_proj, d_ref_emb, grads.ref_proj, static_cast<Mat<T>*>(nullptr));
        }
    }
};

// ---------------------------------------------------------------------------
// Checkpoints: JSON header + named float32 parameter blocks.
// ---------------------------------------------------------------------------

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const VelocityModel<T>& model,
                     int64_t step, uint64_t seed) {
    BlockWriter bw;
    json params = json::array();
    const_cast<ModelParams<T>&>(model.p).visit([&](const std::string& name, Mat<T>& m) {
        uint64_t off = bw.add_mat(m);
        json meta = bw.block_meta(off, m.rows, m.cols);
        meta["name"] = name;
        params.push_back(meta);
    });
    json header;
    header["schema_version"] = 1;
    header["kind"] = "dubengine.checkpoint";
    header["arch"] = model.cfg.to_json();
    header["step"] = step;
    header["seed"] = seed;
    header["params"] = params;
    write_container(path, header, bw.payload);
}

template <typename T>
VelocityModel<T> load_checkpoint(const std::filesystem::path& path, int64_t* step = nullptr,
                                 uint64_t* seed = nullptr) {
    Container c = read_container(path);
    if (c.header.value("kind", "") != "dubengine.checkpoint")
        throw DataError("not a checkpoint container: " + path.string());
    VelocityModel<T> model;
    model.cfg = ModelConfig::from_json(c.header.at("arch"));
    model.p.resize(model.cfg);
    if (step) *step = c.header.at("step").get<int64_t>();
    if (seed) *seed = c.header.at("seed").get<uint64_t>();
    std::map<std::string, json> by_name;
    for (const auto& meta : c.header.at("params")) by_name[meta.at("name")] = meta;
    size_t used = 0;
    model.p.visit([&](const std::string& name, Mat<T>& m) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw DataError("checkpoint missing parameter: " + name);
        Mat<float> f = c.read_mat(it->second);
        if (f.rows != m.rows || f.cols != m.cols)
            throw DataError("checkpoint parameter shape mismatch: " + name);
        m = f.template cast<T>();
        ++used;
    });
    if (used != by_name.size()) throw DataError("checkpoint has unexpected extra parameters");
    return model;
}

}  // namespace dubengine
