#include <doctest.h>

#include <cmath>

#include "fd_util.hpp"
#include "psinger/model.hpp"
#include "psinger/pinyin.hpp"
#include "psinger/rng.hpp"
#include "psinger/synthetic.hpp"

using namespace psinger;
using ad::Var;

namespace {

Config small_cfg() {
    Config cfg = Config::defaults();
    cfg.set_override("model.hidden", "16");
    cfg.set_override("model.encoder_layers", "2");
    cfg.set_override("model.visual_channels", "2");
    cfg.set_override("audio.lip_size", "12");
    return cfg;
}

Tensor rand_mel(size_t frames, uint64_t seed) {
    Rng rng(seed);
    Tensor t({frames, 80});
    for (auto& v : t.data) v = rng.uniform(-11.5, 4.0);
    return t;
}

Tensor rand_lips(size_t m, size_t side, uint64_t seed) {
    Rng rng(seed);
    Tensor t({m, side, side});
    for (auto& v : t.data) v = rng.uniform();
    return t;
}

}  // namespace

TEST_CASE("encode_phonemes: shape n x H, default depth, non-degenerate") {
    Config cfg = Config::defaults();
    CHECK(cfg.integer("model.encoder_layers") == 4);
    CHECK(cfg.hidden() == 256);

    Config small = small_cfg();
    nn::ParamStore ps;
    nn::Ctx c(ps, false, 0);
    Var one = model::encode_phonemes(c, small, {5});
    CHECK(one->value.shape == std::vector<size_t>{1, 16});

    std::vector<int> ids = {3, 9, 22, 40};
    Var a = model::encode_phonemes(c, small, ids);
    CHECK(a->value.shape == std::vector<size_t>{4, 16});

    // permuting two distinct phonemes changes the output rows
    std::vector<int> perm = {9, 3, 22, 40};
    nn::Ctx c2(ps, false, 0);
    Var b = model::encode_phonemes(c2, small, perm);
    double diff = 0;
    for (size_t i = 0; i < a->value.numel(); ++i)
        diff = std::max(diff, std::abs(a->value.data[i] - b->value.data[i]));
    CHECK(diff > 1e-8);

    CHECK_THROWS(model::encode_phonemes(c, small, {int(PhonemeInventory::vocab_size())}));
    CHECK_THROWS(model::encode_phonemes(c, small, {-1}));
    CHECK_THROWS(model::encode_phonemes(c, small, {}));
}

TEST_CASE("encode_phonemes: padding id 0 embeds to exactly zero before positions") {
    Config small = small_cfg();
    nn::ParamStore ps;
    nn::Ctx c(ps, false, 0);
    (void)model::encode_phonemes(c, small, {0, 1});
    const nn::Param* emb = ps.find("phoneme.emb");
    REQUIRE(emb != nullptr);
    CHECK(emb->pad_row0);
    for (size_t j = 0; j < 16; ++j) CHECK(emb->value.data[j] == 0.0);
    // non-padding rows are not zero
    double mag = 0;
    for (size_t j = 0; j < 16; ++j) mag += std::abs(emb->value.data[16 + j]);
    CHECK(mag > 0);
}

TEST_CASE("encode_pitch: 46-row table, REST is a learned row, deterministic") {
    Config small = small_cfg();
    nn::ParamStore ps;
    nn::Ctx c(ps, false, 0);
    Var pf = model::encode_pitch(c, small, {57, kRestPitch, 36, 79});
    CHECK(pf->value.shape == std::vector<size_t>{4, 16});
    CHECK(ps.find("pitch.emb")->value.shape == std::vector<size_t>{46, 16});

    // REST row is learned (nonzero), distinct from pitched rows
    double rest_mag = 0;
    for (size_t j = 0; j < 16; ++j) rest_mag += std::abs(pf->value.at2(1, j));
    CHECK(rest_mag > 0);

    nn::Ctx c2(ps, false, 0);
    Var pf2 = model::encode_pitch(c2, small, {57, kRestPitch, 36, 79});
    CHECK(pf->value.data == pf2->value.data);

    CHECK_THROWS(model::encode_pitch(c, small, {35}));
    CHECK_THROWS(model::encode_pitch(c, small, {80}));
    CHECK(model::pitch_row(36) == 1);
    CHECK(model::pitch_row(79) == 44);
    CHECK(model::pitch_row(kRestPitch) == 45);
}

TEST_CASE("combine_content: elementwise sum with oracle") {
    Rng rng(4);
    Tensor ta({5, 7}), tb({5, 7});
    for (auto& v : ta.data) v = rng.normal();
    for (auto& v : tb.data) v = rng.normal();
    Var a = ad::constant(ta), b = ad::constant(tb);
    Var cf = model::combine_content(a, b);
    Var cf_swapped = model::combine_content(b, a);
    for (size_t i = 0; i < ta.numel(); ++i) {
        CHECK(cf->value.data[i] == ta.data[i] + tb.data[i]);
        CHECK(cf_swapped->value.data[i] == cf->value.data[i]);
    }
    // additive identity
    Var z = ad::constant(Tensor::zeros({5, 7}));
    Var same = model::combine_content(a, z);
    CHECK(same->value.data == ta.data);
    // shape mismatch
    CHECK_THROWS(model::combine_content(a, ad::constant(Tensor::zeros({5, 8}))));
}

TEST_CASE("encode_speaker: unit norm, deterministic, rejects short references") {
    Config small = small_cfg();
    nn::ParamStore ps;
    Tensor mel = rand_mel(24, 7);
    nn::Ctx c(ps, false, 0);
    Var sf = model::encode_speaker(c, small, mel);
    CHECK(sf->value.shape == std::vector<size_t>{16});
    double norm = 0;
    for (double v : sf->value.data) norm += v * v;
    CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-6);

    nn::Ctx c2(ps, false, 0);
    Var sf2 = model::encode_speaker(c2, small, mel);
    CHECK(sf->value.data == sf2->value.data);

    CHECK_THROWS(model::encode_speaker(c, small, rand_mel(9, 1)));
}

TEST_CASE("encode_video: temporal preservation and spatial-size contract") {
    Config small = small_cfg();
    nn::ParamStore ps;
    for (size_t m : {1, 3, 7}) {
        nn::Ctx c(ps, false, 0);
        Var vf = model::encode_video(c, small, rand_lips(m, 12, m));
        CHECK(vf->value.shape == std::vector<size_t>{m, 16});
    }
    nn::Ctx c(ps, false, 0);
    CHECK_THROWS(model::encode_video(c, small, rand_lips(3, 10, 0)));
}

TEST_CASE("encode_video: constant input gives identical interior rows") {
    Config small = small_cfg();
    nn::ParamStore ps;
    nn::Ctx c(ps, false, 0);
    Tensor black({8, 12, 12});  // all zeros
    Var vf = model::encode_video(c, small, black);
    // temporal kernel 5 with same padding: frames 2..5 see identical context
    for (size_t r = 3; r <= 5; ++r)
        for (size_t j = 0; j < 16; ++j)
            CHECK(vf->value.at2(r, j) == doctest::Approx(vf->value.at2(2, j)).epsilon(1e-12));
    // boundary rows may differ from the interior (zero padding effects)
}

TEST_CASE("encode_video: finite-difference gradients through the full stack") {
    Config small = small_cfg();
    nn::ParamStore ps;
    Tensor lips = rand_lips(6, 12, 3);
    auto forward = [&](nn::Ctx& c) { return ad::sum(model::encode_video(c, small, lips)); };
    for (const char* pname : {"visual.front.w", "visual.res1.c1.w", "visual.proj.w"}) {
        CAPTURE(pname);
        CHECK(fd_param_check(ps, pname, forward, 12, hash_str(pname), 1e-5) < 1e-5);
    }
}

TEST_CASE("encoders: phoneme and speaker gradients match finite differences") {
    Config small = small_cfg();
    nn::ParamStore ps;
    std::vector<int> ids = {4, 17, 30};
    auto fwd_ph = [&](nn::Ctx& c) { return ad::sum(model::encode_phonemes(c, small, ids)); };
    CHECK(fd_param_check(ps, "phoneme.enc0.conv1.w", fwd_ph, 10, 21, 1e-5) < 1e-5);
    CHECK(fd_param_check(ps, "phoneme.emb", fwd_ph, 10, 22, 1e-5) < 1e-5);

    nn::ParamStore ps2;
    Tensor mel = rand_mel(12, 9);
    auto fwd_sp = [&](nn::Ctx& c) { return ad::sum(model::encode_speaker(c, small, mel)); };
    CHECK(fd_param_check(ps2, "speaker.rnn0.wh", fwd_sp, 10, 23, 1e-5) < 1e-5);
    CHECK(fd_param_check(ps2, "speaker.proj.w", fwd_sp, 10, 24, 1e-5) < 1e-5);
}
