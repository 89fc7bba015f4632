#include "psinger/pinyin.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace psinger {

namespace {

const std::vector<std::string> kInitials = {"b",  "p",  "m", "f", "d", "t", "n",
                                            "l",  "g",  "k", "h", "j", "q", "x",
                                            "zh", "ch", "sh", "r", "z", "c", "s"};
const std::vector<std::string> kFinals = {
    "a",  "ai",  "an",  "ang",  "ao", "e",   "ei",  "en",  "eng", "er",  "i",  "ia",
    "ian", "iang", "iao", "ie",  "in", "ing", "iong", "iu", "o",   "ong", "ou", "u",
    "ua", "uai", "uan", "uang", "ui", "un",  "uo",  "v",   "van", "ve",  "vn"};
const std::vector<std::string> kSpecials = {"SIL", "BR", "SEP"};

std::map<std::string, int> build_ids() {
    std::map<std::string, int> ids;
    int next = 1;  // 0 reserved for padding
    for (const auto& s : kInitials) ids[s] = next++;
    for (const auto& s : kFinals) ids[s] = next++;
    for (const auto& s : kSpecials) ids[s] = next++;
    return ids;
}

const std::map<std::string, int>& id_map() {
    static const std::map<std::string, int> m = build_ids();
    return m;
}

const std::vector<std::string>& symbol_list() {
    static const std::vector<std::string> all = [] {
        std::vector<std::string> v;
        v.insert(v.end(), kInitials.begin(), kInitials.end());
        v.insert(v.end(), kFinals.begin(), kFinals.end());
        v.insert(v.end(), kSpecials.begin(), kSpecials.end());
        return v;
    }();
    return all;
}

std::string table_path() {
    const char* candidates[] = {"data/pinyin_table.tsv", PSINGER_DATA_DIR "/pinyin_table.tsv"};
    for (const char* p : candidates)
        if (std::filesystem::exists(p)) return p;
    throw PinyinError("pinyin table not found (looked for data/pinyin_table.tsv)");
}

size_t edit_distance(const std::string& a, const std::string& b) {
    std::vector<size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (size_t j = 1; j <= b.size(); ++j)
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1,
                               prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace

const std::vector<std::string>& PhonemeInventory::initials() { return kInitials; }
const std::vector<std::string>& PhonemeInventory::finals() { return kFinals; }
const std::vector<std::string>& PhonemeInventory::specials() { return kSpecials; }

size_t PhonemeInventory::vocab_size() { return symbol_list().size() + 1; }

int PhonemeInventory::id_of(const std::string& symbol) {
    auto it = id_map().find(symbol);
    if (it == id_map().end()) throw PinyinError("unknown phoneme symbol: " + symbol);
    return it->second;
}

std::optional<int> PhonemeInventory::try_id_of(const std::string& symbol) {
    auto it = id_map().find(symbol);
    if (it == id_map().end()) return std::nullopt;
    return it->second;
}

const std::string& PhonemeInventory::symbol(int id) {
    if (id < 1 || size_t(id) > symbol_list().size())
        throw PinyinError("phoneme id out of range: " + std::to_string(id));
    return symbol_list()[size_t(id) - 1];
}

bool PhonemeInventory::is_special(int id) {
    return size_t(id) > kInitials.size() + kFinals.size() && size_t(id) <= symbol_list().size();
}

bool PhonemeInventory::is_initial_id(int id) { return id >= 1 && size_t(id) <= kInitials.size(); }

const std::vector<PinyinEntry>& pinyin_table() {
    static const std::vector<PinyinEntry> table = [] {
        std::vector<PinyinEntry> t;
        std::ifstream f(table_path());
        std::string line;
        while (std::getline(f, line)) {
            if (line.empty() || line[0] == '#') continue;
            std::istringstream ss(line);
            PinyinEntry e;
            std::string ini;
            if (!(ss >> e.syllable >> ini >> e.final))
                throw PinyinError("malformed pinyin table line: " + line);
            e.initial = ini == "-" ? "" : ini;
            if (!PhonemeInventory::try_id_of(e.final) ||
                (!e.initial.empty() && !PhonemeInventory::try_id_of(e.initial)))
                throw PinyinError("pinyin table symbol outside inventory: " + line);
            t.push_back(std::move(e));
        }
        if (t.empty()) throw PinyinError("pinyin table is empty");
        return t;
    }();
    return table;
}

std::pair<std::optional<std::string>, std::string> pinyin_to_phonemes(
    const std::string& syllable) {
    for (const auto& e : pinyin_table())
        if (e.syllable == syllable)
            return {e.initial.empty() ? std::nullopt : std::make_optional(e.initial), e.final};
    // unknown: suggest nearest valid syllables
    std::vector<std::pair<size_t, std::string>> near;
    for (const auto& e : pinyin_table()) near.push_back({edit_distance(syllable, e.syllable), e.syllable});
    std::sort(near.begin(), near.end());
    std::string sug;
    for (size_t i = 0; i < std::min<size_t>(5, near.size()); ++i)
        sug += (i ? ", " : "") + near[i].second;
    throw PinyinError("not a valid pinyin syllable: '" + syllable + "' (did you mean: " + sug +
                      ")");
}

std::vector<int> lyrics_to_phoneme_ids(const std::string& lyrics) {
    std::istringstream ss(lyrics);
    std::string syl;
    std::vector<int> ids;
    while (ss >> syl) {
        if (auto sid = PhonemeInventory::try_id_of(syl); sid && PhonemeInventory::is_special(*sid)) {
            ids.push_back(*sid);
            continue;
        }
        auto [ini, fin] = pinyin_to_phonemes(syl);
        if (ini) ids.push_back(PhonemeInventory::id_of(*ini));
        ids.push_back(PhonemeInventory::id_of(fin));
    }
    return ids;
}

}  // namespace psinger
