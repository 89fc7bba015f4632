#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace psinger {

// Pitch value used for rests (SIL/BR/SEP positions); sung pitches are MIDI
// numbers in [36, 79].
constexpr int kRestPitch = 0;
constexpr int kPitchMin = 36;
constexpr int kPitchMax = 79;

struct UtteranceRecord {
    std::string id;
    std::vector<int> phonemes;      // inventory ids, length n
    std::vector<int> pitches;       // MIDI or kRestPitch, length n
    std::vector<int> gt_durations;  // mel frames per phoneme, length n
    std::string mel_path;
    std::string f0_path;
    std::string lip_path;
    std::string ref_mel_path;
    int speaker_id = 0;
};

class ManifestError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// JSON-lines manifest, one record per line.
std::vector<UtteranceRecord> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<UtteranceRecord>& records);

// Structural checks that don't touch the filesystem: aligned lengths, valid
// phoneme ids, pitch range, positive durations.
void validate_record(const UtteranceRecord& rec);

// Full check: validate_record plus feature files exist, parse, and
// sum(gt_durations) equals the mel frame count. base_dir resolves relative
// feature paths.
void validate_record_files(const UtteranceRecord& rec, const std::string& base_dir);

// Largest-remainder rounding of non-negative weights to integer frame counts
// summing exactly to total_frames. Ties broken by lowest index.
std::vector<int> snap_durations(const std::vector<double>& weights, size_t total_frames);

}  // namespace psinger
