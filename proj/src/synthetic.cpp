#include "psinger/synthetic.hpp"

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "psinger/pinyin.hpp"
#include "psinger/rng.hpp"
#include "psinger/tensor.hpp"

namespace psinger {

namespace {

constexpr int kLipSize = 48;
constexpr double kLipFps = 25.0;
constexpr double kVibratoRateHz = 6.0;
constexpr double kVibratoDepthHz = 5.0;

// Mouth aperture in [0.05, 1]: specials nearly closed, otherwise a fixed
// per-phoneme value spread over the range.
double aperture_of(int phoneme_id) {
    if (PhonemeInventory::is_special(phoneme_id)) return 0.05;
    uint64_t h = Rng::derive(0xAA11, uint64_t(phoneme_id));
    return 0.15 + 0.85 * double(h % 1000) / 999.0;
}

void render_lip_frame(double* px, double aperture) {
    const double cx = kLipSize / 2.0, cy = kLipSize / 2.0;
    const double rx = 8.0 + 12.0 * aperture;  // horizontal semi-axis
    const double ry = 2.0 + 16.0 * aperture;  // vertical semi-axis
    for (int y = 0; y < kLipSize; ++y)
        for (int x = 0; x < kLipSize; ++x) {
            double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
            px[y * kLipSize + x] = dx * dx + dy * dy <= 1.0 ? 1.0 : 0.0;
        }
}

}  // namespace

std::vector<double> synth_mel_frame(int phoneme_id, int pitch_midi, double speaker_tilt,
                                    double noise, int mel_bins) {
    std::vector<double> row(static_cast<size_t>(mel_bins));
    bool rest = pitch_midi == kRestPitch;
    // two gaussian "formants": one tracks pitch, one tracks phoneme identity
    double c1 = rest ? 0.0 : 4.0 + 1.2 * double(pitch_midi - kPitchMin);
    double c2 = 18.0 + double((phoneme_id * 7) % 55);
    for (int b = 0; b < mel_bins; ++b) {
        double e = 0.0;
        if (!rest) {
            double d1 = (b - c1) / 5.0, d2 = (b - c2) / 8.0;
            e = std::exp(-0.5 * d1 * d1) + 0.6 * std::exp(-0.5 * d2 * d2);
            e *= std::exp(speaker_tilt * (double(b) / mel_bins - 0.5));
        }
        e = e * 0.2 + noise * (0.5 + 0.5 * std::sin(0.37 * b + phoneme_id));
        row[size_t(b)] = std::log(std::max(e, kMelFloor));
    }
    return row;
}

std::vector<UtteranceRecord> gen_synthetic_corpus(uint64_t seed, size_t n_utterances,
                                                  size_t n_speakers, const std::string& out_dir,
                                                  const AudioConfig& cfg) {
    if (n_utterances < 1) throw std::runtime_error("gen_synthetic_corpus: need n_utterances >= 1");
    if (n_speakers < 1) throw std::runtime_error("gen_synthetic_corpus: need n_speakers >= 1");
    std::filesystem::create_directories(out_dir);
    const double frame_sec = double(cfg.hop) / double(cfg.sample_rate);

    // one fixed reference mel per speaker (60 frames of a mid-range vowel)
    std::vector<double> tilt(n_speakers);
    for (size_t s = 0; s < n_speakers; ++s) {
        Rng rs(Rng::derive(seed, 0x5EEDull * (s + 1)));
        tilt[s] = rs.uniform(-2.0, 2.0);
        Tensor ref({60, size_t(cfg.mel_bins)});
        int vowel = PhonemeInventory::id_of("a");
        for (size_t fr = 0; fr < 60; ++fr) {
            auto row = synth_mel_frame(vowel, 57, tilt[s], 0.01 * rs.uniform(), cfg.mel_bins);
            std::copy(row.begin(), row.end(), ref.data.begin() + long(fr) * cfg.mel_bins);
        }
        save_tnsr(out_dir + "/spk" + std::to_string(s) + "_ref.tnsr", ref);
    }

    std::vector<UtteranceRecord> records(n_utterances);
    for (size_t u = 0; u < n_utterances; ++u) {
        Rng rng(Rng::derive(seed, u));
        UtteranceRecord rec;
        rec.id = "utt" + std::to_string(u);
        rec.speaker_id = int(rng.uniform_int(0, int(n_speakers) - 1));

        int n = rng.uniform_int(4, 12);
        for (int i = 0; i < n; ++i) {
            int pid = rng.uniform_int(1, int(PhonemeInventory::vocab_size()) - 1);
            rec.phonemes.push_back(pid);
            rec.pitches.push_back(PhonemeInventory::is_special(pid) ? kRestPitch
                                                                    : rng.uniform_int(50, 62));
            rec.gt_durations.push_back(rng.uniform_int(4, 24));
        }
        size_t frames = size_t(
            std::accumulate(rec.gt_durations.begin(), rec.gt_durations.end(), 0L));

        // per-frame phoneme/pitch lookup
        std::vector<int> frame_ph(frames), frame_pitch(frames);
        {
            size_t fr = 0;
            for (size_t i = 0; i < rec.phonemes.size(); ++i)
                for (int d = 0; d < rec.gt_durations[i]; ++d, ++fr) {
                    frame_ph[fr] = rec.phonemes[i];
                    frame_pitch[fr] = rec.pitches[i];
                }
        }

        Tensor mel({frames, size_t(cfg.mel_bins)});
        Tensor f0({2, frames});
        for (size_t fr = 0; fr < frames; ++fr) {
            auto row = synth_mel_frame(frame_ph[fr], frame_pitch[fr], tilt[size_t(rec.speaker_id)],
                                       0.01 * rng.uniform(), cfg.mel_bins);
            std::copy(row.begin(), row.end(), mel.data.begin() + long(fr) * cfg.mel_bins);
            if (frame_pitch[fr] != kRestPitch) {
                double t = double(fr) * frame_sec;
                f0.at2(0, fr) = midi_to_hz(frame_pitch[fr]) +
                                kVibratoDepthHz * std::sin(2.0 * M_PI * kVibratoRateHz * t);
                f0.at2(1, fr) = 1.0;
            }
        }

        size_t m = std::max<size_t>(1, size_t(std::lround(double(frames) * frame_sec * kLipFps)));
        Tensor lips({m, size_t(kLipSize), size_t(kLipSize)});
        for (size_t j = 0; j < m; ++j) {
            double t = (double(j) + 0.5) / kLipFps;
            size_t fr = std::min(frames - 1, size_t(t / frame_sec));
            render_lip_frame(lips.data.data() + j * kLipSize * kLipSize,
                             aperture_of(frame_ph[fr]));
        }

        rec.mel_path = rec.id + "_mel.tnsr";
        rec.f0_path = rec.id + "_f0.tnsr";
        rec.lip_path = rec.id + "_lips.tnsr";
        rec.ref_mel_path = "spk" + std::to_string(rec.speaker_id) + "_ref.tnsr";
        save_tnsr(out_dir + "/" + rec.mel_path, mel);
        save_tnsr(out_dir + "/" + rec.f0_path, f0);
        save_tnsr(out_dir + "/" + rec.lip_path, lips);
        records[u] = std::move(rec);
    }
    return records;
}

}  // namespace psinger
