#include <catch2/catch_amalgamated.hpp>

#include "dubengine/model.hpp"
#include "dubengine/sample.hpp"
#include "dubengine/train.hpp"
#include "dubengine/world.hpp"

using namespace dubengine;

namespace {

template <typename T>
ConditioningBundle<T> random_bundle(const ModelConfig& cfg, int t_ctx, int t_noisy, Rng& rng) {
    Mat<T> x_t(t_noisy, cfg.c_lat), x_ctx(t_ctx, cfg.c_lat);
    rng.fill_normal(x_t.data.data(), x_t.size());
    rng.fill_normal(x_ctx.data.data(), x_ctx.size());
    std::vector<T> ref(cfg.c_lat);
    rng.fill_normal(ref.data(), ref.size());
    auto b = assemble_conditioning(x_t, x_ctx, ref, cfg.m_ch);
    b.audio_tokens = Mat<T>(b.tokens(), cfg.d_audio_tok());
    rng.fill_normal(b.audio_tokens.data.data(), b.audio_tokens.size());
    return b;
}

// Tiny trained model shared by the sensitivity tests.
struct TinyFixture {
    ModelConfig cfg;
    Dataset ds;
    VelocityModel<float> model;
};

const TinyFixture& tiny_trained() {
    static TinyFixture* fx = [] {
        auto* f = new TinyFixture;
        f->cfg.width = 32;
        f->cfg.depth = 2;
        f->cfg.heads = 4;
        f->cfg.audio_window = 1;
        f->cfg.d_ref = 16;
        f->ds = build_dataset(4, 165, 99);
        TrainConfig tc;
        tc.model = f->cfg;
        tc.steps = 150;
        tc.batch_size = 4;
        tc.seed = 7;
        train(f->ds, tc, std::filesystem::temp_directory_path() / "dub_tiny_fixture", &f->model);
        return f;
    }();
    return *fx;
}

}  // namespace

TEST_CASE("align_audio shapes and pooling") {
    AudioTrack a = gen_audio(9, 42);
    Mat<float> t0 = align_audio(a, 3, 0);
    CHECK(t0.rows == 3);
    CHECK(t0.cols == 8);

    Mat<float> t2 = align_audio(a, 3, 2);
    CHECK(t2.cols == 40);  // 8 * (2*2+1)

    // token 0 pools only pixel 0; token 1 pools pixels 1..4
    Mat<float> pooled = pool_rows_to_latent(a.features);
    for (int c = 0; c < 8; ++c) CHECK(t0.at(0, c) == pooled.at(0, c));
    for (int c = 0; c < 8; ++c) CHECK(t0.at(1, c) == pooled.at(1, c));

    AudioTrack constant;
    constant.envelope.assign(9, 0.5f);
    constant.features = Mat<float>(9, 8);
    constant.features.fill(1.25f);
    Mat<float> tok = align_audio(constant, 3, 2);
    for (int i = 1; i < tok.rows; ++i)
        for (int c = 0; c < tok.cols; ++c) CHECK(tok.at(i, c) == tok.at(0, c));

    CHECK_THROWS_AS(align_audio(a, 5, 0), DataError);
}

TEST_CASE("forward pass: shape and bitwise determinism") {
    ModelConfig cfg;
    cfg.c_lat = 6;
    cfg.d_audio = 4;
    cfg.audio_window = 1;
    cfg.d_ref = 16;
    cfg.width = 32;
    cfg.depth = 2;
    cfg.heads = 4;
    VelocityModel<float> model(cfg, 5);

    Rng rng(17);
    auto b = random_bundle<float>(cfg, 2, 5, rng);
    Mat<float> v1 = model.forward(b, 0.3f);
    Mat<float> v2 = model.forward(b, 0.3f);
    CHECK(v1.rows == 7);
    CHECK(v1.cols == 6);
    CHECK(v1.data == v2.data);

    VelocityModel<float> other(cfg, 6);
    Mat<float> v3 = other.forward(b, 0.3f);
    CHECK(l2_diff(v1, v3) > 0);
}

TEST_CASE("parameter count: golden value and monotonicity") {
    ModelConfig cfg;  // width 128, depth 4, heads 4, c_lat 12, d_audio 8, window 2, d_ref 64
    VelocityModel<float> model(cfg, 1);
    CHECK(model.count_params() == 1206860);

    ModelConfig d0 = cfg;
    d0.depth = 0;
    VelocityModel<float> m0(d0, 1);
    // input/output projections plus the always-present time MLP, reference
    // projection and final layer norm
    CHECK(m0.count_params() == 3328 + 2 * 16512 + 832 + 256 + 1548);

    ModelConfig wide = cfg;
    wide.width = 256;
    VelocityModel<float> mw(wide, 1);
    CHECK(mw.count_params() > model.count_params());
}

TEST_CASE("analytic gradients match central finite differences") {
    ModelConfig cfg;
    cfg.c_lat = 5;
    cfg.m_ch = 1;
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
    int checked = 0;
    while (checked < 64) {
        int64_t idx = static_cast<int64_t>(pick.next_u64() % static_cast<uint64_t>(total));
        int64_t off = idx;
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
        if (denom < 1e-9) {
            CHECK(std::abs(analytic - numeric) < 1e-9);  // dead parameters stay dead
        } else {
            CHECK(std::abs(analytic - numeric) / denom < 1e-2);
        }
        ++checked;
    }
}

TEST_CASE("zeroing audio tokens changes the output of a trained model") {
    const TinyFixture& fx = tiny_trained();
    const ClipRecord& clip = fx.ds.clips[0];
    FrameArithmetic arith;
    Rng rng(1);
    WindowSample w = sample_training_window(clip, arith, 0.0, rng);
    std::vector<float> ref = reference_frame_at(clip.latent, w.chunk_span_px.first);
    AudioTrack slice = slice_audio(clip.audio, w.chunk_span_px.first, w.chunk_span_px.second);
    Mat<float> tokens = align_audio(slice, 21, fx.cfg.audio_window);

    Mat<float> noise(w.x0.rows, w.x0.cols);
    Rng nrng(2);
    nrng.fill_normal(noise.data.data(), noise.size());
    auto b = build_fm_bundle(w.x0, w.x_context, ref, tokens, 0.5f, noise, fx.cfg.m_ch);
    Mat<float> v1 = fx.model.forward(b, 0.5f);

    b.audio_tokens.zero();
    Mat<float> v2 = fx.model.forward(b, 0.5f);
    CHECK(l2_diff(v1, v2) > 1e-6);
}

TEST_CASE("positional encoding breaks permutation equivariance") {
    const TinyFixture& fx = tiny_trained();
    Rng rng(3);
    auto b = random_bundle<float>(fx.cfg, 3, 6, rng);
    Mat<float> out = fx.model.forward(b, 0.4f);

    // Swap two noisy frames (z rows and audio rows together).
    auto swap_rows = [](Mat<float>& m, int a, int bb) {
        for (int c = 0; c < m.cols; ++c) std::swap(m.at(a, c), m.at(bb, c));
    };
    auto permuted = b;
    swap_rows(permuted.z, 4, 7);
    swap_rows(permuted.audio_tokens, 4, 7);
    Mat<float> out_p = fx.model.forward(permuted, 0.4f);

    Mat<float> out_swapped = out;
    swap_rows(out_swapped, 4, 7);
    CHECK(l2_diff(out_p, out_swapped) > 1e-6);
}

TEST_CASE("reference swap moves the denoised identity dims") {
    const TinyFixture& fx = tiny_trained();
    const ClipRecord& a = fx.ds.clips[0];
    const ClipRecord& b = fx.ds.clips[1];

    auto run = [&](const ClipRecord& ref_clip) {
        Mat<float> x_t(18, fx.cfg.c_lat), x_ctx(3, fx.cfg.c_lat);
        x_ctx = a.latent.frames.slice_rows(0, 3);
        std::vector<float> ref = reference_frame_at(ref_clip.latent, 0);
        auto bundle = assemble_conditioning(x_t, x_ctx, ref, fx.cfg.m_ch);
        AudioTrack slice = slice_audio(a.audio, 0, 81);
        bundle.audio_tokens = align_audio(slice, 21, fx.cfg.audio_window);
        Rng rng(5);
        auto field = [&](const ConditioningBundle<float>& bb, float t) {
            return fx.model.forward(bb, t);
        };
        return ode_solve(field, bundle, 5, rng);
    };
    Mat<float> xa = run(a);
    Mat<float> xb = run(b);
    double id_l2 = 0;
    for (int i = 0; i < xa.rows; ++i)
        for (int c = factor::identity; c < factor::identity + factor::identity_dims; ++c) {
            double d = xa.at(i, c) - xb.at(i, c);
            id_l2 += d * d;
        }
    CHECK(std::sqrt(id_l2) > 1e-6);
}

TEST_CASE("checkpoint round trip is exact for float models") {
    ModelConfig cfg;
    cfg.width = 16;
    cfg.depth = 1;
    cfg.heads = 2;
    cfg.c_lat = 6;
    cfg.d_audio = 4;
    cfg.audio_window = 0;
    cfg.d_ref = 8;
    VelocityModel<float> model(cfg, 77);

    auto dir = std::filesystem::temp_directory_path() / "dub_ckpt_test";
    std::filesystem::create_directories(dir);
    save_checkpoint(dir / "a.bin", model, 123, 99);
    int64_t step = 0;
    uint64_t seed = 0;
    VelocityModel<float> loaded = load_checkpoint<float>(dir / "a.bin", &step, &seed);
    CHECK(step == 123);
    CHECK(seed == 99);
    save_checkpoint(dir / "b.bin", loaded, 123, 99);
    CHECK(read_text_file(dir / "a.bin") == read_text_file(dir / "b.bin"));

    Rng rng(7);
    auto b = random_bundle<float>(cfg, 1, 3, rng);
    Mat<float> v1 = model.forward(b, 0.25f);
    Mat<float> v2 = loaded.forward(b, 0.25f);
    CHECK(v1.data == v2.data);

    LatentVideo lv;
    lv.frames = Mat<float>(2, 6);
    save_latent_video(lv, dir / "lat.bin");
    CHECK_THROWS_AS(load_checkpoint<float>(dir / "lat.bin"), DataError);
}
