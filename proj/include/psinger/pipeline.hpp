#pragma once

#include <string>
#include <vector>

#include "psinger/config.hpp"
#include "psinger/diffusion.hpp"
#include "psinger/training.hpp"

namespace psinger::pipeline {

// per-syllable note midi values expanded to the phoneme sequence of the
// lyric line (both phonemes of a syllable share its note; specials are rests)
struct AlignedInput {
    std::vector<int> phonemes;
    std::vector<int> pitches;
};
AlignedInput align_lyrics_pitches(const std::string& lyrics, const std::vector<int>& note_midi);

struct SynthesisInputs {
    std::vector<int> phonemes;
    std::vector<int> pitches;
    Tensor lips;     // m x h x w, required when fusion is enabled
    Tensor ref_mel;  // frames x 80 log-mel
};

struct SynthesisResult {
    Tensor mel;                  // F x 80 log-mel
    std::vector<int> durations;  // per phoneme, F = sum
    F0Contour f0;
};

// number of mel frames spanned by m video frames
size_t video_frame_budget(size_t video_frames, const Config& cfg);

// full duration-free pipeline: encoders -> fusion -> predicted durations ->
// length regulation -> pitch sampling -> style extraction -> mel diffusion.
// sync_scale rescales the predicted durations to the video frame budget by
// largest-remainder rounding. force_durations (evaluation only) replaces the
// predicted durations so outputs align with a ground-truth reference.
SynthesisResult synthesize(nn::ParamStore& ps, const Config& cfg,
                           const diffusion::PitchStats& stats, const SynthesisInputs& in,
                           bool use_vcfm, uint64_t seed, bool sync_scale = false,
                           const std::vector<int>* force_durations = nullptr);

// checkpoint directory -> ready-to-run state (params registered per the
// saved stage, then loaded)
struct LoadedModel {
    nn::ParamStore ps;
    Config cfg;
    diffusion::PitchStats stats;
    int stage = 1;
    bool use_vcfm = false;
};
LoadedModel load_model(const std::string& checkpoint_dir);

}  // namespace psinger::pipeline
