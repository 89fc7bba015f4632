#include "psinger/audio.hpp"

#include <cstdio>
#include <cstring>
#include <memory>

#include "psinger/rng.hpp"

namespace psinger {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

uint32_t rd_u32(const uint8_t* p) {
    return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}
uint16_t rd_u16(const uint8_t* p) { return uint16_t(p[0]) | uint16_t(p[1]) << 8; }

}  // namespace

std::vector<double> read_wav(const std::string& path, int expect_sample_rate) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw std::runtime_error("wav: cannot open " + path);
    std::fseek(f.get(), 0, SEEK_END);
    long sz = std::ftell(f.get());
    std::fseek(f.get(), 0, SEEK_SET);
    std::vector<uint8_t> buf(static_cast<size_t>(sz));
    if (std::fread(buf.data(), 1, buf.size(), f.get()) != buf.size())
        throw std::runtime_error("wav: short read on " + path);
    if (sz < 44 || std::memcmp(buf.data(), "RIFF", 4) || std::memcmp(buf.data() + 8, "WAVE", 4))
        throw std::runtime_error("wav: not a RIFF/WAVE file: " + path);

    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t rate = 0;
    const uint8_t* data = nullptr;
    uint32_t data_len = 0;
    size_t pos = 12;
    while (pos + 8 <= buf.size()) {
        uint32_t chunk_len = rd_u32(&buf[pos + 4]);
        if (!std::memcmp(&buf[pos], "fmt ", 4)) {
            format = rd_u16(&buf[pos + 8]);
            channels = rd_u16(&buf[pos + 10]);
            rate = rd_u32(&buf[pos + 12]);
            bits = rd_u16(&buf[pos + 22]);
        } else if (!std::memcmp(&buf[pos], "data", 4)) {
            data = &buf[pos + 8];
            data_len = chunk_len;
        }
        pos += 8 + chunk_len + (chunk_len & 1);
    }
    if (!data) throw std::runtime_error("wav: missing data chunk in " + path);
    if (channels != 1) throw std::runtime_error("wav: expected mono, got " +
                                                std::to_string(channels) + " channels: " + path);
    if (int(rate) != expect_sample_rate)
        throw std::runtime_error("wav: expected " + std::to_string(expect_sample_rate) +
                                 " Hz, got " + std::to_string(rate) + ": " + path);
    std::vector<double> out;
    if (format == 1 && bits == 16) {
        size_t n = data_len / 2;
        out.resize(n);
        for (size_t i = 0; i < n; ++i) {
            int16_t v = int16_t(rd_u16(data + 2 * i));
            out[i] = double(v) / 32768.0;
        }
    } else if (format == 3 && bits == 32) {
        size_t n = data_len / 4;
        out.resize(n);
        for (size_t i = 0; i < n; ++i) {
            uint32_t u = rd_u32(data + 4 * i);
            float fv;
            std::memcpy(&fv, &u, 4);
            out[i] = fv;
        }
    } else {
        throw std::runtime_error("wav: unsupported format (PCM-16 and float-32 only): " + path);
    }
    return out;
}

void write_wav(const std::string& path, const std::vector<double>& samples, int sample_rate) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw std::runtime_error("wav: cannot open for write: " + path);
    uint32_t data_len = uint32_t(samples.size() * 2);
    auto w32 = [&](uint32_t v) {
        uint8_t b[4] = {uint8_t(v), uint8_t(v >> 8), uint8_t(v >> 16), uint8_t(v >> 24)};
        std::fwrite(b, 1, 4, f.get());
    };
    auto w16 = [&](uint16_t v) {
        uint8_t b[2] = {uint8_t(v), uint8_t(v >> 8)};
        std::fwrite(b, 1, 2, f.get());
    };
    std::fwrite("RIFF", 1, 4, f.get());
    w32(36 + data_len);
    std::fwrite("WAVEfmt ", 1, 8, f.get());
    w32(16);
    w16(1);  // PCM
    w16(1);  // mono
    w32(uint32_t(sample_rate));
    w32(uint32_t(sample_rate * 2));
    w16(2);
    w16(16);
    std::fwrite("data", 1, 4, f.get());
    w32(data_len);
    for (double s : samples) {
        double c = std::clamp(s, -1.0, 1.0);
        w16(uint16_t(int16_t(std::lround(c * 32767.0))));
    }
}

void fft(std::vector<std::complex<double>>& a, bool inverse) {
    size_t n = a.size();
    if (n & (n - 1)) throw std::runtime_error("fft: size must be a power of two");
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        double ang = 2.0 * M_PI / double(len) * (inverse ? 1.0 : -1.0);
        std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0);
            for (size_t j = 0; j < len / 2; ++j) {
                auto u = a[i + j], v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
    if (inverse)
        for (auto& x : a) x /= double(n);
}

namespace {
double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }
}  // namespace

std::vector<double> mel_filterbank(const AudioConfig& cfg) {
    size_t bins = size_t(cfg.fft) / 2 + 1;
    size_t nmel = size_t(cfg.mel_bins);
    std::vector<double> fb(nmel * bins, 0.0);
    double fmax = double(cfg.sample_rate) / 2.0;
    double mel_lo = hz_to_mel(0.0), mel_hi = hz_to_mel(fmax);
    std::vector<double> centers(nmel + 2);
    for (size_t i = 0; i < nmel + 2; ++i)
        centers[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * double(i) / double(nmel + 1));
    for (size_t m = 0; m < nmel; ++m) {
        double lo = centers[m], c = centers[m + 1], hi = centers[m + 2];
        for (size_t b = 0; b < bins; ++b) {
            double f = double(b) * double(cfg.sample_rate) / double(cfg.fft);
            if (f > lo && f < c)
                fb[m * bins + b] = (f - lo) / (c - lo);
            else if (f >= c && f < hi)
                fb[m * bins + b] = (hi - f) / (hi - c);
        }
    }
    return fb;
}

size_t mel_frame_count(size_t samples, const AudioConfig& cfg) {
    if (samples < size_t(cfg.fft)) return 0;
    return 1 + (samples - size_t(cfg.fft)) / size_t(cfg.hop);
}

Tensor extract_mel(const std::vector<double>& samples, const AudioConfig& cfg) {
    size_t frames = mel_frame_count(samples.size(), cfg);
    if (frames == 0)
        throw std::runtime_error("extract_mel: input shorter than one FFT window");
    size_t bins = size_t(cfg.fft) / 2 + 1;
    auto fb = mel_filterbank(cfg);
    std::vector<double> window(size_t(cfg.fft));
    for (size_t i = 0; i < window.size(); ++i)
        window[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * double(i) / double(cfg.fft));
    Tensor mel({frames, size_t(cfg.mel_bins)});
    std::vector<std::complex<double>> buf(size_t(cfg.fft));
    for (size_t fr = 0; fr < frames; ++fr) {
        size_t off = fr * size_t(cfg.hop);
        for (size_t i = 0; i < size_t(cfg.fft); ++i) buf[i] = samples[off + i] * window[i];
        fft(buf, false);
        for (size_t m = 0; m < size_t(cfg.mel_bins); ++m) {
            double e = 0.0;
            for (size_t b = 0; b < bins; ++b) e += fb[m * bins + b] * std::abs(buf[b]);
            mel.at2(fr, m) = std::log(std::max(e, kMelFloor));
        }
    }
    return mel;
}

std::vector<double> griffin_lim(const Tensor& log_mel, const AudioConfig& cfg, int iters,
                                uint64_t seed) {
    size_t frames = log_mel.rows(), bins = size_t(cfg.fft) / 2 + 1;
    auto fb = mel_filterbank(cfg);
    // pseudo-inverse via normalized transpose
    std::vector<double> colsum(bins, 0.0);
    for (size_t m = 0; m < size_t(cfg.mel_bins); ++m)
        for (size_t b = 0; b < bins; ++b) colsum[b] += fb[m * bins + b];
    std::vector<double> mag(frames * bins, 0.0);
    for (size_t fr = 0; fr < frames; ++fr)
        for (size_t b = 0; b < bins; ++b) {
            double acc = 0.0;
            for (size_t m = 0; m < size_t(cfg.mel_bins); ++m)
                acc += fb[m * bins + b] * std::exp(log_mel.at2(fr, m));
            mag[fr * bins + b] = colsum[b] > 1e-8 ? acc / colsum[b] : 0.0;
        }

    size_t len = (frames - 1) * size_t(cfg.hop) + size_t(cfg.fft);
    std::vector<double> window(size_t(cfg.fft));
    for (size_t i = 0; i < window.size(); ++i)
        window[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * double(i) / double(cfg.fft));
    Rng rng(seed);
    std::vector<double> phase(frames * bins);
    for (auto& p : phase) p = rng.uniform(0.0, 2.0 * M_PI);

    std::vector<double> signal(len, 0.0);
    std::vector<std::complex<double>> buf(size_t(cfg.fft));
    for (int it = 0; it < iters; ++it) {
        // inverse STFT with current phases
        std::fill(signal.begin(), signal.end(), 0.0);
        std::vector<double> norm(len, 1e-12);
        for (size_t fr = 0; fr < frames; ++fr) {
            for (size_t b = 0; b < bins; ++b) {
                std::complex<double> v = std::polar(mag[fr * bins + b], phase[fr * bins + b]);
                buf[b] = v;
                if (b > 0 && b < bins - 1) buf[size_t(cfg.fft) - b] = std::conj(v);
            }
            fft(buf, true);
            size_t off = fr * size_t(cfg.hop);
            for (size_t i = 0; i < size_t(cfg.fft); ++i) {
                signal[off + i] += buf[i].real() * window[i];
                norm[off + i] += window[i] * window[i];
            }
        }
        for (size_t i = 0; i < len; ++i) signal[i] /= norm[i];
        // re-analyze to update phases
        for (size_t fr = 0; fr < frames; ++fr) {
            size_t off = fr * size_t(cfg.hop);
            for (size_t i = 0; i < size_t(cfg.fft); ++i) buf[i] = signal[off + i] * window[i];
            fft(buf, false);
            for (size_t b = 0; b < bins; ++b) phase[fr * bins + b] = std::arg(buf[b]);
        }
    }
    double peak = 1e-9;
    for (double s : signal) peak = std::max(peak, std::abs(s));
    if (peak > 1.0)
        for (auto& s : signal) s /= peak;
    return signal;
}

}  // namespace psinger
