#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace psinger {

// Mandarin phoneme inventory: 21 initials + 35 finals (no "ueng") + the
// specials SIL (silence), BR (breath), SEP (rest token). Id 0 is padding.
class PhonemeInventory {
public:
    static const std::vector<std::string>& initials();  // 21
    static const std::vector<std::string>& finals();    // 35
    static const std::vector<std::string>& specials();  // SIL BR SEP

    static size_t vocab_size();  // symbols + padding slot
    static int id_of(const std::string& symbol);  // throws on unknown
    static std::optional<int> try_id_of(const std::string& symbol);
    static const std::string& symbol(int id);  // id >= 1
    static bool is_special(int id);
    static bool is_initial_id(int id);
};

struct PinyinEntry {
    std::string syllable;
    std::string initial;  // empty for zero-initial syllables
    std::string final;
};

class PinyinError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// The bundled initial/final decomposition table (data/pinyin_table.tsv).
const std::vector<PinyinEntry>& pinyin_table();

// Decompose a toneless lowercase pinyin syllable. Unknown syllables raise
// PinyinError listing the nearest valid syllables.
std::pair<std::optional<std::string>, std::string> pinyin_to_phonemes(const std::string& syllable);

// Phoneme id sequence for a whitespace-separated pinyin lyric line.
std::vector<int> lyrics_to_phoneme_ids(const std::string& lyrics);

}  // namespace psinger
