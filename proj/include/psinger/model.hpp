#pragma once

#include <atomic>

#include "psinger/config.hpp"
#include "psinger/manifest.hpp"
#include "psinger/nn.hpp"

// The synthesis network proper: the four modality encoders, the visual
// fusion module, and the duration/style predictors. The two diffusion
// networks (mel decoder, F0) live in diffusion.hpp.
namespace psinger::model {

namespace diag {
// how many times the fused visual feature was recomputed (should be 1 per
// forward pass regardless of the block count)
extern std::atomic<long long> vf_prime_evals;
}  // namespace diag

// Pitch table row for a MIDI value: rows 1..44 cover MIDI 36..79, row 45 is
// the rest token, row 0 is padding. Throws on out-of-range pitch.
size_t pitch_row(int midi);
constexpr size_t kPitchTableRows = 46;

// phoneme embedding (+ positions) through the self-attention/conv encoder
// stack; n x H
ad::Var encode_phonemes(nn::Ctx& c, const Config& cfg, const std::vector<int>& ids);

// learned pitch-table lookup; n x H
ad::Var encode_pitch(nn::Ctx& c, const Config& cfg, const std::vector<int>& midi);

// CF = TF + PF
ad::Var combine_content(const ad::Var& tf, const ad::Var& pf);

// recurrent reference encoder -> mean pool -> projection -> unit vector (H)
ad::Var encode_speaker(nn::Ctx& c, const Config& cfg, const Tensor& ref_mel);

// 3-D conv front end + per-frame residual stack; lips: m x 48 x 48 -> m x H
ad::Var encode_video(nn::Ctx& c, const Config& cfg, const Tensor& lips);

// down(GELU(up(x))); fusion-path adapters zero-init their down projection so
// the whole module starts as the identity
ad::Var adapter(nn::Ctx& c, const std::string& name, const ad::Var& x, bool zero_init_down);

// one progressive fusion step: cf + Adapter(LN(CA(SA(cf), SA(vf'))))
ad::Var fusion_block(nn::Ctx& c, const Config& cfg, const std::string& name, const ad::Var& cf_prev,
                     const ad::Var& vf_prime);

// vf' = adapter(vf) once, then K fusion blocks
ad::Var vcfm_forward(nn::Ctx& c, const Config& cfg, const ad::Var& cf, const ad::Var& vf);

// per-phoneme log-durations, n x 1
ad::Var predict_log_durations(nn::Ctx& c, const Config& cfg, const ad::Var& cf_fused);

// round(exp(log_d)) clamped to >= 1
std::vector<int> durations_from_log(const Tensor& log_d);

// row i repeated durations[i] times; throws if all durations are zero
ad::Var length_regulate(const ad::Var& cf_fused, const std::vector<int>& durations);

struct RvqResult {
    std::vector<std::vector<int>> codes;  // rows x books
    ad::Var z_q;                          // straight-through quantized latents
    ad::Var commit_loss;                  // scalar
};

// residual vector quantization against learned codebooks under `name`
RvqResult rvq_quantize(nn::Ctx& c, const Config& cfg, const std::string& name, const ad::Var& z);

struct StyleResult {
    ad::Var style_seq;  // F x H, aligned to frame_feat by cross-attention
    ad::Var commit_loss;
};

// reference mel -> conv latents -> RVQ bottleneck -> cross-attention with
// frame_feat queries
StyleResult style_extract(nn::Ctx& c, const Config& cfg, const ad::Var& ref_mel,
                          const ad::Var& frame_feat);

}  // namespace psinger::model
