#include <algorithm>

#include "psinger/audio.hpp"

namespace psinger {

F0Contour extract_f0(const std::vector<double>& samples, const AudioConfig& cfg) {
    size_t frames = mel_frame_count(samples.size(), cfg);
    if (frames == 0) throw std::runtime_error("extract_f0: input shorter than one FFT window");
    F0Contour out;
    out.f0_hz.assign(frames, 0.0);
    out.voiced.assign(frames, 0);

    const double sr = double(cfg.sample_rate);
    const size_t win = size_t(0.040 * sr);  // 40 ms
    const size_t lag_min = size_t(sr / 1200.0);
    const size_t lag_max = size_t(sr / 60.0);
    constexpr double voicing_threshold = 0.3;

    for (size_t fr = 0; fr < frames; ++fr) {
        // window centered on the mel frame center
        size_t center = fr * size_t(cfg.hop) + size_t(cfg.fft) / 2;
        size_t start = center > win / 2 ? center - win / 2 : 0;
        if (start + win + lag_max >= samples.size()) {
            if (samples.size() > win + lag_max)
                start = samples.size() - win - lag_max - 1;
            else
                break;
        }
        const double* x = samples.data() + start;
        double e0 = 0.0;
        for (size_t i = 0; i < win; ++i) e0 += x[i] * x[i];
        if (e0 < 1e-10) continue;  // silence

        double best_r = 0.0;
        size_t best_lag = 0;
        std::vector<double> rs(lag_max + 1, 0.0);
        for (size_t lag = lag_min; lag <= lag_max; ++lag) {
            double num = 0.0, el = 0.0;
            for (size_t i = 0; i < win; ++i) {
                num += x[i] * x[i + lag];
                el += x[i + lag] * x[i + lag];
            }
            double r = num / std::sqrt(e0 * el + 1e-300);
            rs[lag] = r;
            if (r > best_r) {
                best_r = r;
                best_lag = lag;
            }
        }
        if (best_r < voicing_threshold || best_lag == 0) continue;
        // parabolic refinement around the peak
        double lag = double(best_lag);
        if (best_lag > lag_min && best_lag < lag_max) {
            double a = rs[best_lag - 1], b = rs[best_lag], c = rs[best_lag + 1];
            double denom = a - 2.0 * b + c;
            if (std::abs(denom) > 1e-12) lag += 0.5 * (a - c) / denom;
        }
        out.f0_hz[fr] = sr / lag;
        out.voiced[fr] = 1;
    }
    return out;
}

}  // namespace psinger
