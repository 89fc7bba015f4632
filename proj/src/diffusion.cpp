#include "psinger/diffusion.hpp"

#include <cmath>

namespace psinger::diffusion {

using ad::Var;
using nn::Ctx;
using nn::Init;

DiffusionSchedule::DiffusionSchedule(size_t T, double beta_min, double beta_max) {
    if (T < 1) throw std::runtime_error("diffusion: T must be >= 1");
    beta.assign(T + 1, 0.0);
    alpha.assign(T + 1, 1.0);
    alpha_bar.assign(T + 1, 1.0);
    for (size_t t = 1; t <= T; ++t) {
        beta[t] = T == 1 ? beta_min
                         : beta_min + (beta_max - beta_min) * double(t - 1) / double(T - 1);
        alpha[t] = 1.0 - beta[t];
        alpha_bar[t] = alpha_bar[t - 1] * alpha[t];
    }
}

Tensor mel_normalize(const Tensor& log_mel) {
    Tensor out = log_mel;
    const double lo = kLogMelMin, hi = kLogMelMax;
    for (auto& v : out.data) v = 2.0 * (v - lo) / (hi - lo) - 1.0;
    return out;
}

Tensor mel_denormalize(const Tensor& x) {
    Tensor out = x;
    const double lo = kLogMelMin, hi = kLogMelMax;
    for (auto& v : out.data) v = lo + (v + 1.0) * 0.5 * (hi - lo);
    return out;
}

Tensor q_sample(const Tensor& x0, const DiffusionSchedule& s, size_t t, const Tensor& noise) {
    if (t < 1 || t > s.T())
        throw std::runtime_error("q_sample: t = " + std::to_string(t) + " outside [1, " +
                                 std::to_string(s.T()) + "]");
    if (!x0.same_shape(noise)) throw ShapeError("q_sample: noise shape mismatch");
    double a = std::sqrt(s.alpha_bar[t]), b = std::sqrt(1.0 - s.alpha_bar[t]);
    Tensor out = x0;
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] = a * x0.data[i] + b * noise.data[i];
    return out;
}

namespace {

constexpr size_t kStepEmbDim = 128;

Tensor gauss_noise(std::vector<size_t> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = rng.normal();
    return t;
}

// per-layer projection of the sinusoidal step embedding, tiled over frames
Var step_cond(Ctx& c, const std::string& name, size_t t, size_t ch, size_t frames) {
    Var emb = ad::constant(nn::diffusion_step_embedding(t, kStepEmbDim));
    Var proj = nn::linear(c, name, ad::reshape(emb, {1, kStepEmbDim}), ch);
    return ad::tile_rows(ad::reshape(proj, {ch}), frames);
}

}  // namespace

Var mel_denoiser(Ctx& c, const Config& cfg, const Var& x_t, size_t t, const Var& cond) {
    if (x_t->value.rows() != cond->value.rows())
        throw ShapeError("mel_denoiser: condition length " +
                         std::to_string(cond->value.rows()) + " != frame count " +
                         std::to_string(x_t->value.rows()));
    size_t ch = size_t(cfg.integer("model.decoder_channels"));
    size_t layers = size_t(cfg.integer("model.decoder_layers"));
    size_t frames = x_t->value.rows();

    // frame positions disambiguate frames that share phoneme-level features
    Var pcond = ad::add(cond, ad::constant(nn::sinusoidal_positions(frames,
                                                                    cond->value.cols())));
    // enrich the conditioning before it is consumed: the raw features are
    // constant within a phoneme plus a smooth position code, and the per-frame
    // detail of the clean mel is only learnable from nonlinear mixtures of the
    // two. Two dilated layers with a residual keep the identity reachable.
    size_t cc = cond->value.cols();
    Var pre = ad::relu(nn::conv1d_p(c, "dec.pre0", pcond, 2 * cc, 3, 1));
    pcond = ad::add(pcond, nn::conv1d_p(c, "dec.pre1", pre, cc, 3, 2));
    Var x = nn::conv1d_p(c, "dec.in", x_t, ch, 1);
    Var skips;
    for (size_t l = 0; l < layers; ++l) {
        std::string name = "dec.layer" + std::to_string(l);
        size_t dilation = size_t(1) << (l % 4);  // 1, 2, 4, 8 cycle
        Var h = ad::add(x, step_cond(c, name + ".t", t, ch, frames));
        h = nn::conv1d_p(c, name + ".dil", h, 2 * ch, 3, dilation);
        h = ad::add(h, nn::conv1d_p(c, name + ".cond", pcond, 2 * ch, 1));
        Var gate = ad::mul(ad::tanh_(ad::slice_cols(h, 0, ch)),
                           ad::sigmoid(ad::slice_cols(h, ch, 2 * ch)));
        Var out = nn::conv1d_p(c, name + ".out", gate, 2 * ch, 1);
        x = ad::add(x, ad::slice_cols(out, 0, ch));
        Var skip = ad::slice_cols(out, ch, 2 * ch);
        skips = skips ? ad::add(skips, skip) : skip;
    }
    Var y = ad::relu(skips);
    y = ad::relu(nn::conv1d_p(c, "dec.post1", y, ch, 1));
    y = nn::conv1d_p(c, "dec.post2", y, 80, 1);
    // full-rank shortcut from the noisy input: the residual stream may be
    // narrower than the 80 mel bins, and white noise does not compress. Its
    // per-bin gain depends on the step: the share of x_t that is noise varies
    // with t, so a fixed linear map cannot serve all steps at once.
    Var emb = ad::reshape(ad::constant(nn::diffusion_step_embedding(t, kStepEmbDim)),
                          {1, kStepEmbDim});
    Var gain = ad::add_scalar(ad::reshape(nn::linear(c, "dec.skipg", emb, 80), {80}), 1.0);
    Var skip = ad::mul(nn::conv1d_p(c, "dec.skipx", x_t, 80, 1),
                       ad::tile_rows(gain, frames));
    // shared content head: the conditioning determines the clean mel, and the
    // optimal noise estimate is a step-dependent blend of it with x_t. A head
    // that bypasses the trunk is reinforced by the draws at every step, so it
    // converges far faster than per-step routes through the gated stack.
    Var ch0 = ad::relu(nn::conv1d_p(c, "dec.c0", pcond, ch, 3));
    Var x0h = nn::conv1d_p(c, "dec.c1", ch0, 80, 1);
    Var cgain = ad::reshape(nn::linear(c, "dec.skipc", emb, 80), {80});
    return ad::add(ad::add(y, skip), ad::mul(x0h, ad::tile_rows(cgain, frames)));
}

Var denoise_train_step(Ctx& c, const Config& cfg, const Tensor& x0_norm, const Var& cond,
                       const Var& sf, size_t t, const Tensor& noise) {
    DiffusionSchedule s(size_t(cfg.integer("diffusion.steps")), cfg.num("diffusion.beta_min"),
                        cfg.num("diffusion.beta_max"));
    Tensor x_t = q_sample(x0_norm, s, t, noise);
    size_t frames = x0_norm.rows();
    Var full_cond = ad::concat_cols(cond, ad::tile_rows(sf, frames));
    Var eps = mel_denoiser(c, cfg, ad::constant(std::move(x_t)), t, full_cond);
    return ad::mse(eps, ad::constant(noise));
}

Tensor decode_mel(Ctx& c, const Config& cfg, const Var& cond, const Var& sf, uint64_t seed) {
    DiffusionSchedule s(size_t(cfg.integer("diffusion.steps")), cfg.num("diffusion.beta_min"),
                        cfg.num("diffusion.beta_max"));
    size_t frames = cond->value.rows();
    Var full_cond = ad::concat_cols(cond, ad::tile_rows(sf, frames));
    Rng rng(Rng::derive(seed, 0xDECull));
    Tensor x = gauss_noise({frames, 80}, rng);
    for (size_t t = s.T(); t >= 1; --t) {
        Var eps = mel_denoiser(c, cfg, ad::constant(x), t, full_cond);
        double a = s.alpha[t], abar = s.alpha_bar[t], abar_prev = s.alpha_bar[t - 1];
        double var_t = t > 1 ? (1.0 - abar_prev) / (1.0 - abar) * s.beta[t] : 0.0;
        double sigma = std::sqrt(var_t);
        // x0-parameterized posterior mean; clamping x0 to the normalized mel
        // range keeps prediction errors from compounding across steps
        double c0 = std::sqrt(abar_prev) * s.beta[t] / (1.0 - abar);
        double cx = std::sqrt(a) * (1.0 - abar_prev) / (1.0 - abar);
        for (size_t i = 0; i < x.numel(); ++i) {
            double x0 = (x.data[i] - std::sqrt(1.0 - abar) * eps->value.data[i]) /
                        std::sqrt(abar);
            double mean = c0 * std::clamp(x0, -1.0, 1.0) + cx * x.data[i];
            x.data[i] = mean + (t > 1 ? sigma * rng.normal() : 0.0);
        }
    }
    return mel_denormalize(x);
}

std::vector<double> interp_log_f0(const std::vector<double>& f0_hz,
                                  const std::vector<uint8_t>& voiced) {
    if (f0_hz.size() != voiced.size()) throw ShapeError("interp_log_f0: length mismatch");
    size_t n = f0_hz.size();
    std::vector<double> out(n);
    long prev = -1;
    std::vector<size_t> vidx;
    for (size_t i = 0; i < n; ++i)
        if (voiced[i]) vidx.push_back(i);
    if (vidx.empty()) return std::vector<double>(n, std::log(220.0));
    for (size_t i = 0; i < n; ++i) {
        if (voiced[i]) {
            out[i] = std::log(f0_hz[i]);
            prev = long(i);
        } else {
            // find surrounding voiced frames
            auto it = std::lower_bound(vidx.begin(), vidx.end(), i);
            size_t right = it == vidx.end() ? vidx.back() : *it;
            size_t left = prev >= 0 ? size_t(prev) : right;
            double lv = std::log(f0_hz[left]), rv = std::log(f0_hz[right]);
            out[i] = left == right
                         ? lv
                         : lv + (rv - lv) * double(i - left) / double(right - left);
        }
    }
    return out;
}

namespace {

// shared trunk of the pitch denoiser: predicts noise on the standardized
// log-F0 signal, conditioned on frame features and the step embedding
Var pitch_denoiser(Ctx& c, const Config& cfg, const Var& sig, size_t t, const Var& frame_feat) {
    size_t ch = size_t(cfg.integer("model.pitch_channels"));
    size_t layers = size_t(cfg.integer("model.pitch_layers"));
    size_t frames = sig->value.rows();
    Var pfeat = ad::add(frame_feat, ad::constant(nn::sinusoidal_positions(
                                        frames, frame_feat->value.cols())));
    Var x = nn::conv1d_p(c, "pitchnet.in", sig, ch, 1);
    Var cond = nn::conv1d_p(c, "pitchnet.cond", pfeat, ch, 1);
    for (size_t l = 0; l < layers; ++l) {
        std::string name = "pitchnet.layer" + std::to_string(l);
        Var h = ad::add(x, step_cond(c, name + ".t", t, ch, frames));
        h = ad::add(h, cond);
        h = ad::gelu(nn::conv1d_p(c, name + ".conv", h, ch, 3, size_t(1) << (l % 4)));
        x = ad::add(x, h);
    }
    return nn::conv1d_p(c, "pitchnet.out", x, 1, 1);
}

Var uv_head(Ctx& c, const Var& frame_feat) {
    return ad::sigmoid(nn::conv1d_p(c, "pitchnet.uv", frame_feat, 1, 3));
}

}  // namespace

PitchLosses pitch_diffusion_train(Ctx& c, const Config& cfg, const Var& frame_feat,
                                  const Tensor& f0_std, const Tensor& uv, size_t t,
                                  const Tensor& noise) {
    if (f0_std.rows() != frame_feat->value.rows())
        throw ShapeError("pitch_diffusion_train: F0 length " + std::to_string(f0_std.rows()) +
                         " != frame count " + std::to_string(frame_feat->value.rows()));
    DiffusionSchedule s(size_t(cfg.integer("pitch.steps")), cfg.num("pitch.beta_min"),
                        cfg.num("pitch.beta_max"));
    Tensor x_t = q_sample(f0_std, s, t, noise);
    Var eps = pitch_denoiser(c, cfg, ad::constant(std::move(x_t)), t, frame_feat);
    PitchLosses out;
    out.noise_mse = ad::mse(eps, ad::constant(noise));
    out.uv_bce = ad::bce(uv_head(c, frame_feat), ad::constant(uv));
    return out;
}

F0Contour pitch_diffusion_sample(Ctx& c, const Config& cfg, const Var& frame_feat,
                                 const PitchStats& stats, uint64_t seed) {
    DiffusionSchedule s(size_t(cfg.integer("pitch.steps")), cfg.num("pitch.beta_min"),
                        cfg.num("pitch.beta_max"));
    size_t frames = frame_feat->value.rows();
    Rng rng(Rng::derive(seed, 0xF0ull));
    Tensor x = gauss_noise({frames, 1}, rng);
    for (size_t t = s.T(); t >= 1; --t) {
        Var eps = pitch_denoiser(c, cfg, ad::constant(x), t, frame_feat);
        double a = s.alpha[t], abar = s.alpha_bar[t];
        double coef = s.beta[t] / std::sqrt(1.0 - abar);
        double var_t = t > 1 ? (1.0 - s.alpha_bar[t - 1]) / (1.0 - abar) * s.beta[t] : 0.0;
        double sigma = std::sqrt(var_t);
        for (size_t i = 0; i < x.numel(); ++i) {
            double mean = (x.data[i] - coef * eps->value.data[i]) / std::sqrt(a);
            x.data[i] = mean + (t > 1 ? sigma * rng.normal() : 0.0);
        }
    }
    Var uv = uv_head(c, frame_feat);
    double thr = cfg.num("pitch.uv_threshold");
    F0Contour out;
    out.f0_hz.assign(frames, 0.0);
    out.voiced.assign(frames, 0);
    for (size_t i = 0; i < frames; ++i) {
        bool v = uv->value.data[i] >= thr;
        out.voiced[i] = v ? 1 : 0;
        if (v) out.f0_hz[i] = std::exp(x.data[i] * stats.stddev + stats.mean);
    }
    return out;
}

}  // namespace psinger::diffusion
