#include "psinger/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace psinger::metrics {

Tensor mel_cepstra(const Tensor& log_mel, size_t n_coef) {
    if (log_mel.rank() != 2 || log_mel.rows() == 0)
        throw std::runtime_error("mel_cepstra: need a non-empty frames x bins matrix");
    size_t frames = log_mel.rows(), bins = log_mel.cols();
    Tensor cep({frames, n_coef});
    for (size_t f = 0; f < frames; ++f)
        for (size_t k = 0; k < n_coef; ++k) {
            double acc = 0.0;
            // orthonormal DCT-II, coefficient k+1 (c0 dropped)
            for (size_t b = 0; b < bins; ++b)
                acc += log_mel.at2(f, b) *
                       std::cos(M_PI / double(bins) * (double(b) + 0.5) * double(k + 1));
            cep.at2(f, k) = acc * std::sqrt(2.0 / double(bins));
        }
    return cep;
}

std::vector<std::pair<size_t, size_t>> dtw_path(const Tensor& cost) {
    size_t n = cost.rows(), m = cost.cols();
    if (n == 0 || m == 0) throw std::runtime_error("dtw_path: empty cost matrix");
    constexpr double inf = std::numeric_limits<double>::infinity();
    Tensor acc({n, m}, inf);
    // 0 = diagonal, 1 = from above (i-1), 2 = from left (j-1)
    std::vector<uint8_t> from(n * m, 0);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) {
            double best = 0.0;
            uint8_t dir = 0;
            if (i > 0 && j > 0) {
                best = acc.at2(i - 1, j - 1);
                if (acc.at2(i - 1, j) < best) { best = acc.at2(i - 1, j); dir = 1; }
                if (acc.at2(i, j - 1) < best) { best = acc.at2(i, j - 1); dir = 2; }
            } else if (i > 0) {
                best = acc.at2(i - 1, j);
                dir = 1;
            } else if (j > 0) {
                best = acc.at2(i, j - 1);
                dir = 2;
            }
            acc.at2(i, j) = cost.at2(i, j) + best;
            from[i * m + j] = dir;
        }
    std::vector<std::pair<size_t, size_t>> path;
    size_t i = n - 1, j = m - 1;
    while (true) {
        path.emplace_back(i, j);
        if (i == 0 && j == 0) break;
        switch (from[i * m + j]) {
            case 0: --i; --j; break;
            case 1: --i; break;
            default: --j; break;
        }
    }
    std::reverse(path.begin(), path.end());
    return path;
}

double mcd(const Tensor& mel_a, const Tensor& mel_b) {
    if (mel_a.rank() != 2 || mel_b.rank() != 2 || mel_a.cols() != 80 || mel_b.cols() != 80)
        throw std::runtime_error("mcd: inputs must be frames x 80 log-mel");
    Tensor ca = mel_cepstra(mel_a), cb = mel_cepstra(mel_b);
    size_t n = ca.rows(), m = cb.rows(), d = ca.cols();
    Tensor cost({n, m});
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) {
            double acc = 0.0;
            for (size_t k = 0; k < d; ++k) {
                double diff = ca.at2(i, k) - cb.at2(j, k);
                acc += diff * diff;
            }
            cost.at2(i, j) = std::sqrt(acc);
        }
    auto path = dtw_path(cost);
    double mean = 0.0;
    for (auto [i, j] : path) mean += cost.at2(i, j);
    mean /= double(path.size());
    return 10.0 / std::log(10.0) * std::sqrt(2.0) * mean;
}

double ffe(const F0Contour& pred, const F0Contour& gt) {
    size_t n = gt.f0_hz.size();
    if (pred.f0_hz.size() != n || pred.voiced.size() != n || gt.voiced.size() != n)
        throw std::runtime_error("ffe: contour lengths differ");
    if (n == 0) throw std::runtime_error("ffe: empty contours");
    size_t errors = 0;
    for (size_t i = 0; i < n; ++i) {
        bool pv = pred.voiced[i] != 0, gv = gt.voiced[i] != 0;
        if (pv != gv) {
            ++errors;
        } else if (pv) {
            double cents = 1200.0 * std::log2(pred.f0_hz[i] / gt.f0_hz[i]);
            if (std::abs(cents) > 50.0) ++errors;
        }
    }
    return double(errors) / double(n);
}

double cos_sim(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty())
        throw std::runtime_error("cos_sim: dimension mismatch");
    double na = 0, nb = 0, dot = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        na += a[i] * a[i];
        nb += b[i] * b[i];
        dot += a[i] * b[i];
    }
    if (na < 1e-20 || nb < 1e-20) throw std::runtime_error("cos_sim: zero vector");
    if (std::abs(na - 1.0) > 1e-6 || std::abs(nb - 1.0) > 1e-6)
        throw std::runtime_error("cos_sim: inputs must be unit-norm");
    return dot;
}

EvalReport EvalReport::from_utts(std::vector<UttEval> utts) {
    EvalReport r;
    r.utts = std::move(utts);
    if (r.utts.empty()) return r;
    for (const auto& u : r.utts) {
        r.mean_mcd += u.mcd_db;
        r.mean_ffe += u.ffe;
        r.mean_cos += u.cos;
    }
    double n = double(r.utts.size());
    r.mean_mcd /= n;
    r.mean_ffe /= n;
    r.mean_cos /= n;
    return r;
}

std::string EvalReport::to_json(const std::string& config_snapshot) const {
    nlohmann::json j;
    j["count"] = utts.size();
    j["mean"] = {{"mcd_db", mean_mcd}, {"ffe", mean_ffe}, {"cos", mean_cos},
                 {"lse_c", nullptr},   {"lse_d", nullptr}};
    j["utterances"] = nlohmann::json::array();
    for (const auto& u : utts)
        j["utterances"].push_back(
            {{"id", u.id}, {"mcd_db", u.mcd_db}, {"ffe", u.ffe}, {"cos", u.cos}});
    if (!config_snapshot.empty()) j["config"] = nlohmann::json::parse(config_snapshot);
    return j.dump(2);
}

std::string EvalReport::to_table() const {
    std::ostringstream os;
    os << "id                    MCD(dB)     FFE     Cos   LSE-C   LSE-D\n";
    auto row = [&](const std::string& id, double m, double f, double c) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%-20s %8.3f %7.3f %7.3f     n/a     n/a\n", id.c_str(),
                      m, f, c);
        os << buf;
    };
    for (const auto& u : utts) row(u.id, u.mcd_db, u.ffe, u.cos);
    row("mean", mean_mcd, mean_ffe, mean_cos);
    return os.str();
}

}  // namespace psinger::metrics
