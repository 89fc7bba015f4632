#include "psinger/manifest.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "psinger/pinyin.hpp"
#include "psinger/tensor.hpp"

namespace psinger {

using nlohmann::json;

std::vector<UtteranceRecord> read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ManifestError("cannot open manifest: " + path);
    std::vector<UtteranceRecord> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ManifestError("manifest line " + std::to_string(lineno) + ": " + e.what());
        }
        UtteranceRecord r;
        try {
            r.id = j.at("id").get<std::string>();
            r.phonemes = j.at("phonemes").get<std::vector<int>>();
            r.pitches = j.at("pitches").get<std::vector<int>>();
            r.gt_durations = j.at("gt_durations").get<std::vector<int>>();
            r.mel_path = j.at("mel_path").get<std::string>();
            r.f0_path = j.at("f0_path").get<std::string>();
            r.lip_path = j.at("lip_path").get<std::string>();
            r.ref_mel_path = j.at("ref_mel_path").get<std::string>();
            r.speaker_id = j.at("speaker_id").get<int>();
        } catch (const json::exception& e) {
            throw ManifestError("manifest line " + std::to_string(lineno) + ": " + e.what());
        }
        validate_record(r);
        out.push_back(std::move(r));
    }
    return out;
}

void write_manifest(const std::string& path, const std::vector<UtteranceRecord>& records) {
    std::ofstream f(path);
    if (!f) throw ManifestError("cannot open manifest for write: " + path);
    for (const auto& r : records) {
        json j;
        j["id"] = r.id;
        j["phonemes"] = r.phonemes;
        j["pitches"] = r.pitches;
        j["gt_durations"] = r.gt_durations;
        j["mel_path"] = r.mel_path;
        j["f0_path"] = r.f0_path;
        j["lip_path"] = r.lip_path;
        j["ref_mel_path"] = r.ref_mel_path;
        j["speaker_id"] = r.speaker_id;
        f << j.dump() << "\n";
    }
}

void validate_record(const UtteranceRecord& rec) {
    auto fail = [&](const std::string& what) {
        throw ManifestError("record '" + rec.id + "': " + what);
    };
    size_t n = rec.phonemes.size();
    if (n == 0) fail("empty phoneme sequence");
    if (rec.pitches.size() != n)
        fail("pitch length " + std::to_string(rec.pitches.size()) + " != phoneme length " +
             std::to_string(n));
    if (rec.gt_durations.size() != n)
        fail("duration length " + std::to_string(rec.gt_durations.size()) +
             " != phoneme length " + std::to_string(n));
    for (int p : rec.phonemes)
        if (p < 1 || size_t(p) >= PhonemeInventory::vocab_size())
            fail("phoneme id out of range: " + std::to_string(p));
    for (int p : rec.pitches)
        if (p != kRestPitch && (p < kPitchMin || p > kPitchMax))
            fail("pitch out of range: " + std::to_string(p));
    for (int d : rec.gt_durations)
        if (d < 1) fail("non-positive duration: " + std::to_string(d));
}

void validate_record_files(const UtteranceRecord& rec, const std::string& base_dir) {
    validate_record(rec);
    auto resolve = [&](const std::string& p) {
        std::filesystem::path fp(p);
        if (fp.is_relative() && !base_dir.empty()) fp = std::filesystem::path(base_dir) / fp;
        return fp.string();
    };
    Tensor mel = load_tnsr(resolve(rec.mel_path));
    if (mel.rank() != 2 || mel.cols() != 80)
        throw ManifestError("record '" + rec.id + "': mel must be frames x 80, got " +
                            mel.shape_str());
    long total = std::accumulate(rec.gt_durations.begin(), rec.gt_durations.end(), 0L);
    if (size_t(total) != mel.rows())
        throw ManifestError("record '" + rec.id + "': durations sum to " + std::to_string(total) +
                            " but mel has " + std::to_string(mel.rows()) + " frames");
    Tensor f0 = load_tnsr(resolve(rec.f0_path));
    if (f0.rank() != 2 || f0.rows() != 2 || f0.cols() != mel.rows())
        throw ManifestError("record '" + rec.id + "': f0 must be 2 x " +
                            std::to_string(mel.rows()) + ", got " + f0.shape_str());
    Tensor lips = load_tnsr(resolve(rec.lip_path));
    if (lips.rank() != 3 || lips.dim(0) < 1)
        throw ManifestError("record '" + rec.id + "': lip frames must be m x h x w, got " +
                            lips.shape_str());
    Tensor ref = load_tnsr(resolve(rec.ref_mel_path));
    if (ref.rank() != 2 || ref.cols() != 80)
        throw ManifestError("record '" + rec.id + "': reference mel must be frames x 80, got " +
                            ref.shape_str());
}

std::vector<int> snap_durations(const std::vector<double>& weights, size_t total_frames) {
    if (weights.empty()) throw ManifestError("snap_durations: empty weights");
    double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (wsum <= 0.0) throw ManifestError("snap_durations: weights must have positive sum");
    std::vector<int> out(weights.size());
    std::vector<std::pair<double, size_t>> rem(weights.size());
    long assigned = 0;
    for (size_t i = 0; i < weights.size(); ++i) {
        double exact = weights[i] / wsum * double(total_frames);
        out[i] = int(std::floor(exact));
        assigned += out[i];
        rem[i] = {exact - std::floor(exact), i};
    }
    long leftover = long(total_frames) - assigned;
    std::stable_sort(rem.begin(), rem.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (long k = 0; k < leftover; ++k) out[rem[size_t(k)].second] += 1;
    return out;
}

}  // namespace psinger
