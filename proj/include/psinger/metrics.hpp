#pragma once

#include <string>
#include <vector>

#include "psinger/audio.hpp"
#include "psinger/tensor.hpp"

namespace psinger::metrics {

// log-mel (F x 80) -> 13 mel-cepstral coefficients per frame via DCT-II,
// with c0 (overall energy) dropped
Tensor mel_cepstra(const Tensor& log_mel, size_t n_coef = 13);

// dynamic time warping over a precomputed local-cost matrix; returns the
// aligned index pairs of the cheapest monotone path
std::vector<std::pair<size_t, size_t>> dtw_path(const Tensor& cost);

// mel cepstral distortion in dB: (10/ln10) * sqrt(2) * mean ||delta cep||
// over the DTW-aligned frame pairs
double mcd(const Tensor& mel_a, const Tensor& mel_b);

// fraction of frames with a voicing error, or both voiced and off by more
// than 50 cents
double ffe(const F0Contour& pred, const F0Contour& gt);

// dot product of unit-norm embeddings; throws on zero or non-unit input
double cos_sim(const std::vector<double>& a, const std::vector<double>& b);

struct UttEval {
    std::string id;
    double mcd_db = 0, ffe = 0, cos = 0;
};

struct EvalReport {
    std::vector<UttEval> utts;
    double mean_mcd = 0, mean_ffe = 0, mean_cos = 0;

    static EvalReport from_utts(std::vector<UttEval> utts);
    std::string to_json(const std::string& config_snapshot) const;
    // plain-text table; the lip-sync columns are carried as "n/a" because
    // they need a pretrained sync scorer this project does not ship
    std::string to_table() const;
};

}  // namespace psinger::metrics
