#pragma once

#include "psinger/audio.hpp"
#include "psinger/config.hpp"
#include "psinger/nn.hpp"

namespace psinger::diffusion {

// Linear-beta DDPM schedule; arrays are 1-based (index 0 unused, alpha_bar[0] = 1).
struct DiffusionSchedule {
    std::vector<double> beta, alpha, alpha_bar;
    DiffusionSchedule(size_t T, double beta_min, double beta_max);
    size_t T() const { return beta.size() - 1; }
};

// fixed affine map between the log-mel range [ln(1e-5), 5] and [-1, 1]
Tensor mel_normalize(const Tensor& log_mel);
Tensor mel_denormalize(const Tensor& x);

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise; t in [1, T]
Tensor q_sample(const Tensor& x0, const DiffusionSchedule& s, size_t t, const Tensor& noise);

// ---- mel decoder (gated dilated residual denoiser) ----

// predicted noise for x_t (F x 80) given per-frame conditioning (F x C)
ad::Var mel_denoiser(nn::Ctx& c, const Config& cfg, const ad::Var& x_t, size_t t,
                     const ad::Var& cond);

// one training step's reconstruction loss: MSE(denoiser(x_t), noise).
// x0_norm must already be normalized; sf is broadcast-concatenated to cond.
ad::Var denoise_train_step(nn::Ctx& c, const Config& cfg, const Tensor& x0_norm,
                           const ad::Var& cond, const ad::Var& sf, size_t t, const Tensor& noise);

// ancestral sampling from pure noise; returns F x 80 log-mel
Tensor decode_mel(nn::Ctx& c, const Config& cfg, const ad::Var& cond, const ad::Var& sf,
                  uint64_t seed);

// ---- pitch diffusion ----

// corpus-level statistics of interpolated log-F0, stored with checkpoints so
// inference can de-standardize without ground truth
struct PitchStats {
    double mean = 0.0;
    double stddev = 1.0;
};

// voiced log-F0 with unvoiced gaps linearly interpolated (constant
// extrapolation at the ends); all-unvoiced input comes back as log(220)
std::vector<double> interp_log_f0(const std::vector<double>& f0_hz,
                                  const std::vector<uint8_t>& voiced);

struct PitchLosses {
    ad::Var noise_mse;
    ad::Var uv_bce;
};

// f0_std: standardized interpolated log-F0, F x 1; uv: F x 1 in {0,1}
PitchLosses pitch_diffusion_train(nn::Ctx& c, const Config& cfg, const ad::Var& frame_feat,
                                  const Tensor& f0_std, const Tensor& uv, size_t t,
                                  const Tensor& noise);

// sample a contour; UV from the sigmoid head at threshold pitch.uv_threshold
F0Contour pitch_diffusion_sample(nn::Ctx& c, const Config& cfg, const ad::Var& frame_feat,
                                 const PitchStats& stats, uint64_t seed);

}  // namespace psinger::diffusion
