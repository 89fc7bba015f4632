#pragma once

#include <complex>
#include <string>
#include <vector>

#include "psinger/tensor.hpp"

namespace psinger {

struct AudioConfig {
    int sample_rate = 48000;
    int fft = 1024;
    int hop = 256;
    int mel_bins = 80;
};

constexpr double kMelFloor = 1e-5;
constexpr double kLogMelMin = -11.512925464970229;  // ln(1e-5)
constexpr double kLogMelMax = 5.0;

// mono WAV, PCM-16 or IEEE float-32; sample rate must match cfg
std::vector<double> read_wav(const std::string& path, int expect_sample_rate);
void write_wav(const std::string& path, const std::vector<double>& samples, int sample_rate);

// in-place radix-2 FFT; size must be a power of two
void fft(std::vector<std::complex<double>>& a, bool inverse);

// mel filterbank, mel_bins x (fft/2 + 1), triangular bands on the mel scale
// spanning 0 .. sample_rate/2
std::vector<double> mel_filterbank(const AudioConfig& cfg);

// frames = 1 + floor((len - fft) / hop), no padding; natural-log amplitude
// clamped at kMelFloor; output frames x mel_bins
Tensor extract_mel(const std::vector<double>& samples, const AudioConfig& cfg);

size_t mel_frame_count(size_t samples, const AudioConfig& cfg);

// diagnostic-quality waveform reconstruction (mel pseudo-inverse + 64
// Griffin-Lim iterations)
std::vector<double> griffin_lim(const Tensor& log_mel, const AudioConfig& cfg, int iters = 64,
                                uint64_t seed = 0);

inline double midi_to_hz(double midi) { return 440.0 * std::pow(2.0, (midi - 69.0) / 12.0); }
inline double hz_to_midi(double hz) { return 69.0 + 12.0 * std::log2(hz / 440.0); }

struct F0Contour {
    std::vector<double> f0_hz;   // 0 where unvoiced
    std::vector<uint8_t> voiced;
};

// Normalized-autocorrelation F0 over a 40 ms window at mel-frame rate,
// search range 60-1200 Hz, voicing threshold 0.3.
F0Contour extract_f0(const std::vector<double>& samples, const AudioConfig& cfg);

}  // namespace psinger
