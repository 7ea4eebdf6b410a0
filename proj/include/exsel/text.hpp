#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace exsel::text {

/// Decodes UTF-8 into code points. Invalid bytes decode to U+FFFD.
inline std::vector<char32_t> decode_utf8(std::string_view s) {
    std::vector<char32_t> out;
    out.reserve(s.size());
    std::size_t i = 0;
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        char32_t cp = 0;
        std::size_t len = 0;
        if (c < 0x80) {
            cp = c;
            len = 1;
        } else if ((c >> 5) == 0x6) {
            cp = c & 0x1f;
            len = 2;
        } else if ((c >> 4) == 0xe) {
            cp = c & 0x0f;
            len = 3;
        } else if ((c >> 3) == 0x1e) {
            cp = c & 0x07;
            len = 4;
        } else {
            out.push_back(0xfffd);
            ++i;
            continue;
        }
        if (i + len > s.size()) {
            out.push_back(0xfffd);
            break;
        }
        bool ok = true;
        for (std::size_t k = 1; k < len; ++k) {
            const auto cc = static_cast<unsigned char>(s[i + k]);
            if ((cc >> 6) != 0x2) {
                ok = false;
                break;
            }
            cp = (cp << 6) | (cc & 0x3f);
        }
        if (!ok) {
            out.push_back(0xfffd);
            ++i;
            continue;
        }
        out.push_back(cp);
        i += len;
    }
    return out;
}

inline void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else {
        out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    }
}

inline bool is_space(char32_t c) {
    switch (c) {
        case 0x09: case 0x0a: case 0x0b: case 0x0c: case 0x0d: case 0x20:
        case 0x85: case 0xa0: case 0x1680: case 0x2028: case 0x2029:
        case 0x202f: case 0x205f: case 0x3000: case 0xfeff:
            return true;
        default:
            return c >= 0x2000 && c <= 0x200a;
    }
}

/// Punctuation and symbol code points that never belong to a word.
inline bool is_punct(char32_t c) {
    if (c < 0x80) {
        return (c >= 0x21 && c <= 0x2f) || (c >= 0x3a && c <= 0x40) || (c >= 0x5b && c <= 0x60) ||
               (c >= 0x7b && c <= 0x7e);
    }
    return (c >= 0xa1 && c <= 0xbf && c != 0xaa && c != 0xb2 && c != 0xb3 && c != 0xb5 && c != 0xb9 &&
            c != 0xba && c != 0xbc && c != 0xbd && c != 0xbe) ||
           c == 0xd7 || c == 0xf7 ||
           c == 0x037e || c == 0x0387 ||              // Greek question mark, ano teleia
           (c >= 0x055a && c <= 0x055f) ||            // Armenian
           c == 0x0589 || c == 0x05be || c == 0x05c0 || c == 0x05c3 ||
           c == 0x060c || c == 0x061b || c == 0x061f || c == 0x06d4 ||
           c == 0x0964 || c == 0x0965 || c == 0x0970 ||  // danda, double danda, abbreviation sign
           c == 0x0df4 || c == 0x0e4f || c == 0x0e5a || c == 0x0e5b ||
           c == 0x104a || c == 0x104b || c == 0x1c7e || c == 0x1c7f ||  // Myanmar, Ol Chiki
           (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x205e) ||
           (c >= 0x20a0 && c <= 0x20cf) ||            // currency
           (c >= 0x2190 && c <= 0x2bff) ||            // arrows, math operators, symbols
           (c >= 0x3001 && c <= 0x3003) || (c >= 0x3008 && c <= 0x3011) ||
           (c >= 0x3014 && c <= 0x301f) ||
           (c >= 0xfe10 && c <= 0xfe19) || (c >= 0xfe30 && c <= 0xfe6b) ||
           (c >= 0xff01 && c <= 0xff0f) || (c >= 0xff1a && c <= 0xff20) ||
           (c >= 0xff3b && c <= 0xff40) || (c >= 0xff5b && c <= 0xff65);
}

inline bool is_word_char(char32_t c) { return !is_space(c) && !is_punct(c) && c != 0; }

/// Simple case folding for the scripts with case: Latin, Greek, Cyrillic,
/// Armenian. Scripts without case (Brahmic, Ol Chiki, ...) pass through.
inline char32_t fold_case(char32_t c) {
    if (c >= 'A' && c <= 'Z') return c + 32;
    if (c < 0x80) return c;
    if ((c >= 0xc0 && c <= 0xde) && c != 0xd7) return c + 32;
    if (c >= 0x100 && c <= 0x17f) {
        if (c == 0x130) return 'i';
        if ((c >= 0x139 && c <= 0x148) || (c >= 0x179 && c <= 0x17e)) return (c % 2 == 1) ? c + 1 : c;
        if (c == 0x131 || c == 0x138 || c == 0x149 || c == 0x17f) return c;
        return (c % 2 == 0) ? c + 1 : c;
    }
    if (c >= 0x391 && c <= 0x3ab && c != 0x3a2) return c + 32;
    if (c >= 0x410 && c <= 0x42f) return c + 32;
    if (c >= 0x400 && c <= 0x40f) return c + 80;
    if (c >= 0x460 && c <= 0x4ff && c % 2 == 0 && !(c >= 0x482 && c <= 0x489) && c != 0x4c0) return c + 1;
    if (c >= 0x531 && c <= 0x556) return c + 48;
    return c;
}

/// Word segmentation: maximal runs of word characters, case-folded.
inline std::vector<std::string> tokenize(std::string_view s) {
    std::vector<std::string> tokens;
    std::string current;
    for (char32_t c : decode_utf8(s)) {
        if (is_word_char(c)) {
            append_utf8(current, fold_case(c));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

}  // namespace exsel::text
