#include "psinger/textgrid.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>

namespace psinger {

const TgTier* TextGrid::tier(const std::string& name) const {
    for (const auto& t : tiers)
        if (t.name == name) return &t;
    return nullptr;
}

namespace {

// UTF-16 -> UTF-8 per the BOM declared at the head of the file
std::string decode_utf16(const std::string& raw, bool big_endian) {
    std::string out;
    size_t n = raw.size() & ~size_t(1);
    auto unit = [&](size_t i) -> uint32_t {
        uint8_t a = uint8_t(raw[i]), b = uint8_t(raw[i + 1]);
        return big_endian ? (uint32_t(a) << 8 | b) : (uint32_t(b) << 8 | a);
    };
    for (size_t i = 2; i < n; i += 2) {
        uint32_t cp = unit(i);
        if (cp >= 0xD800 && cp <= 0xDBFF && i + 3 < n) {
            uint32_t lo = unit(i + 2);
            if (lo >= 0xDC00 && lo <= 0xDFFF) {
                cp = 0x10000 + ((cp - 0xD800) << 10) + (lo - 0xDC00);
                i += 2;
            }
        }
        if (cp < 0x80) {
            out += char(cp);
        } else if (cp < 0x800) {
            out += char(0xC0 | (cp >> 6));
            out += char(0x80 | (cp & 0x3F));
        } else if (cp < 0x10000) {
            out += char(0xE0 | (cp >> 12));
            out += char(0x80 | ((cp >> 6) & 0x3F));
            out += char(0x80 | (cp & 0x3F));
        } else {
            out += char(0xF0 | (cp >> 18));
            out += char(0x80 | ((cp >> 12) & 0x3F));
            out += char(0x80 | ((cp >> 6) & 0x3F));
            out += char(0x80 | (cp & 0x3F));
        }
    }
    return out;
}

struct Token {
    enum Kind { Str, Num, Exists } kind;
    std::string s;
    double num = 0.0;
    int line = 1;
};

// Praat long and short formats carry the same value stream once field labels,
// bracketed indices, and punctuation are stripped.
std::vector<Token> tokenize(const std::string& text) {
    std::vector<Token> toks;
    int line = 1;
    size_t i = 0, n = text.size();
    while (i < n) {
        char c = text[i];
        if (c == '\n') {
            ++line;
            ++i;
        } else if (c == '"') {
            Token t{Token::Str, "", 0.0, line};
            ++i;
            while (i < n) {
                if (text[i] == '"') {
                    if (i + 1 < n && text[i + 1] == '"') {  // escaped quote
                        t.s += '"';
                        i += 2;
                    } else {
                        ++i;
                        break;
                    }
                } else {
                    if (text[i] == '\n') ++line;
                    t.s += text[i++];
                }
            }
            toks.push_back(std::move(t));
        } else if (c == '[') {
            while (i < n && text[i] != ']') ++i;
            if (i < n) ++i;
        } else if (c == '<') {
            size_t j = i;
            while (j < n && text[j] != '>') ++j;
            std::string word = text.substr(i, j - i + 1);
            if (word == "<exists>") toks.push_back({Token::Exists, word, 0.0, line});
            i = j + 1;
        } else if ((c >= '0' && c <= '9') || c == '-' || c == '+' ||
                   (c == '.' && i + 1 < n && text[i + 1] >= '0' && text[i + 1] <= '9')) {
            size_t j = i;
            while (j < n && (std::isdigit((unsigned char)text[j]) || text[j] == '.' ||
                             text[j] == '-' || text[j] == '+' || text[j] == 'e' || text[j] == 'E'))
                ++j;
            toks.push_back({Token::Num, text.substr(i, j - i), std::stod(text.substr(i, j - i)),
                            line});
            i = j;
        } else {
            ++i;  // identifiers, '=', ':', '!' comments are structural noise
        }
    }
    return toks;
}

struct Cursor {
    const std::vector<Token>& toks;
    size_t pos = 0;
    int last_line() const { return toks.empty() ? 1 : toks[std::min(pos, toks.size() - 1)].line; }
    const Token& next(Token::Kind want, const char* what) {
        if (pos >= toks.size()) throw TextGridError(std::string("unexpected end of file, expected ") + what, last_line());
        const Token& t = toks[pos];
        if (t.kind != want)
            throw TextGridError(std::string("expected ") + what, t.line);
        ++pos;
        return t;
    }
    bool peek_exists() {
        if (pos < toks.size() && toks[pos].kind == Token::Exists) {
            ++pos;
            return true;
        }
        return false;
    }
};

}  // namespace

TextGrid parse_textgrid(const std::string& raw) {
    std::string text = raw;
    if (raw.size() >= 2 && uint8_t(raw[0]) == 0xFE && uint8_t(raw[1]) == 0xFF)
        text = decode_utf16(raw, true);
    else if (raw.size() >= 2 && uint8_t(raw[0]) == 0xFF && uint8_t(raw[1]) == 0xFE)
        text = decode_utf16(raw, false);
    else if (raw.size() >= 3 && uint8_t(raw[0]) == 0xEF && uint8_t(raw[1]) == 0xBB &&
             uint8_t(raw[2]) == 0xBF)
        text = raw.substr(3);

    auto toks = tokenize(text);
    Cursor c{toks};
    const Token& ft = c.next(Token::Str, "file type header");
    if (ft.s != "ooTextFile" && ft.s != "ooTextFile short")
        throw TextGridError("not a Praat text file (File type = \"" + ft.s + "\")", ft.line);
    const Token& oc = c.next(Token::Str, "object class header");
    if (oc.s != "TextGrid") throw TextGridError("object class is not TextGrid", oc.line);

    TextGrid tg;
    tg.xmin = c.next(Token::Num, "file xmin").num;
    tg.xmax = c.next(Token::Num, "file xmax").num;
    if (tg.xmax < tg.xmin) throw TextGridError("file xmax < xmin", c.last_line());
    c.peek_exists();  // "tiers? <exists>" flag; absent in tier-less grids
    size_t ntiers = size_t(c.next(Token::Num, "tier count").num);
    for (size_t ti = 0; ti < ntiers; ++ti) {
        const Token& cls = c.next(Token::Str, "tier class");
        if (cls.s != "IntervalTier")
            throw TextGridError("unsupported tier class \"" + cls.s + "\"", cls.line);
        TgTier tier;
        tier.name = c.next(Token::Str, "tier name").s;
        tier.xmin = c.next(Token::Num, "tier xmin").num;
        tier.xmax = c.next(Token::Num, "tier xmax").num;
        size_t nint = size_t(c.next(Token::Num, "interval count").num);
        double prev_end = tier.xmin;
        for (size_t ii = 0; ii < nint; ++ii) {
            TgInterval iv;
            const Token& t0 = c.next(Token::Num, "interval xmin");
            iv.xmin = t0.num;
            iv.xmax = c.next(Token::Num, "interval xmax").num;
            iv.label = c.next(Token::Str, "interval label").s;
            if (iv.xmax < iv.xmin)
                throw TextGridError("interval " + std::to_string(ii + 1) + " has xmax < xmin",
                                    t0.line);
            if (iv.xmin < prev_end - 1e-9)
                throw TextGridError("interval " + std::to_string(ii + 1) +
                                        " overlaps its predecessor",
                                    t0.line);
            prev_end = iv.xmax;
            tier.intervals.push_back(std::move(iv));
        }
        if (!tier.intervals.empty() && tier.intervals.back().xmax > tier.xmax + 1e-9)
            throw TextGridError("intervals exceed tier xmax in tier \"" + tier.name + "\"",
                                c.last_line());
        tg.tiers.push_back(std::move(tier));
    }
    return tg;
}

namespace {
std::string fmt_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char ch : s) {
        out += ch;
        if (ch == '"') out += '"';
    }
    return out + "\"";
}
}  // namespace

std::string serialize_textgrid(const TextGrid& tg) {
    std::ostringstream os;
    os << "File type = \"ooTextFile\"\nObject class = \"TextGrid\"\n\n";
    os << "xmin = " << fmt_num(tg.xmin) << " \nxmax = " << fmt_num(tg.xmax) << " \n";
    os << "tiers? <exists> \nsize = " << tg.tiers.size() << " \nitem []: \n";
    for (size_t ti = 0; ti < tg.tiers.size(); ++ti) {
        const TgTier& t = tg.tiers[ti];
        os << "    item [" << ti + 1 << "]:\n";
        os << "        class = \"IntervalTier\" \n";
        os << "        name = " << quote(t.name) << " \n";
        os << "        xmin = " << fmt_num(t.xmin) << " \n";
        os << "        xmax = " << fmt_num(t.xmax) << " \n";
        os << "        intervals: size = " << t.intervals.size() << " \n";
        for (size_t ii = 0; ii < t.intervals.size(); ++ii) {
            const TgInterval& iv = t.intervals[ii];
            os << "        intervals [" << ii + 1 << "]:\n";
            os << "            xmin = " << fmt_num(iv.xmin) << " \n";
            os << "            xmax = " << fmt_num(iv.xmax) << " \n";
            os << "            text = " << quote(iv.label) << " \n";
        }
    }
    return os.str();
}

}  // namespace psinger
