#pragma once

#include <map>
#include <string>
#include <vector>

#include "psinger/config.hpp"
#include "psinger/diffusion.hpp"
#include "psinger/manifest.hpp"
#include "psinger/model.hpp"
#include "psinger/nn.hpp"

namespace psinger::training {

struct LossParts {
    double l_r = 0, l_d = 0, l_p = 0, l_c = 0, total = 0;
};

// weighted sum of the four loss terms; throws naming the term on NaN
ad::Var composite_loss(const Config& cfg, const ad::Var& l_r, const ad::Var& l_d,
                       const ad::Var& l_p, const ad::Var& l_c);

// linear warmup then inverse-sqrt decay
double lr_at(size_t step, double base_lr, size_t warmup);

// one Adam update over accumulated gradients (keyed by parameter name).
// lr_scale maps name prefixes to learning-rate multipliers (longest match
// wins); frozen params and pinned padding rows are skipped. Gradients are
// clipped to clip_norm in global norm beforehand.
void adam_step(nn::ParamStore& ps, const std::map<std::string, Tensor>& grads, size_t step,
               double base_lr, size_t warmup, double clip_norm,
               const std::map<std::string, double>& lr_scale = {});

// decoded feature files for one utterance
struct UttData {
    UtteranceRecord rec;
    Tensor mel;       // frames x 80 log-mel
    Tensor mel_norm;  // normalized to [-1, 1]
    Tensor f0;        // 2 x frames (hz, voiced)
    Tensor lips;      // m x h x w
    Tensor ref_mel;   // frames x 80 log-mel
};

UttData load_utt(const UtteranceRecord& rec, const std::string& base_dir);

// mean/std of interpolated log-F0 over the whole corpus (stored in
// checkpoints so sampling can de-standardize without ground truth)
diffusion::PitchStats corpus_pitch_stats(const std::vector<UttData>& data);

struct ForwardLosses {
    ad::Var l_r, l_d, l_p, l_c;
};

// full teacher-forced forward for one utterance. Diffusion timesteps and
// noises are drawn from draw_seed, so identical seeds give identical losses.
ForwardLosses forward_losses(nn::Ctx& c, const Config& cfg, const UttData& u,
                             const diffusion::PitchStats& stats, bool use_vcfm,
                             uint64_t draw_seed, const Tensor* vf_cache = nullptr);

struct TrainOptions {
    int stage = 1;             // 1, 2, or 0 = single-stage joint (ablation arm)
    std::string init_from;     // checkpoint dir (required for stage 2)
    std::string out_dir;       // checkpoints + train_log.jsonl
    size_t steps = 0;          // 0 = stage default from config
    uint64_t seed = 7;
};

struct TrainResult {
    LossParts final_loss;
    std::string checkpoint_dir;
    size_t steps_run = 0;
};

TrainResult train(const Config& cfg, const std::vector<UtteranceRecord>& records,
                  const std::string& data_dir, const TrainOptions& opt);

// instantiate every parameter the given mode uses so a checkpoint can be
// loaded into a fresh store (shapes depend only on the config)
void register_params(nn::ParamStore& ps, const Config& cfg, bool with_visual);

// checkpoint metadata (config + pitch stats + provenance)
std::string make_meta(const Config& cfg, int stage, size_t step,
                      const diffusion::PitchStats& stats);
diffusion::PitchStats stats_from_meta(const std::string& meta_json);
Config config_from_meta(const std::string& meta_json);

}  // namespace psinger::training
