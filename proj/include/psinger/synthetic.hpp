#pragma once

#include <string>
#include <vector>

#include "psinger/audio.hpp"
#include "psinger/manifest.hpp"

namespace psinger {

// Deterministic desk-scale corpus: formant-model mels, piecewise-constant F0
// with vibrato, ellipse lip crops, per-speaker spectral tilt. Writes feature
// files under out_dir and returns the records (paths relative to out_dir).
// Per-utterance RNG streams are derived as hash(seed, utterance index), so
// generation order doesn't matter.
std::vector<UtteranceRecord> gen_synthetic_corpus(uint64_t seed, size_t n_utterances,
                                                  size_t n_speakers, const std::string& out_dir,
                                                  const AudioConfig& cfg = {});

// The mel row the formant model produces for one frame; exposed so tests and
// the corpus generator share a single definition.
std::vector<double> synth_mel_frame(int phoneme_id, int pitch_midi, double speaker_tilt,
                                    double noise, int mel_bins = 80);

}  // namespace psinger
