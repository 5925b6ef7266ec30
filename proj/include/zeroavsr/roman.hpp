#pragma once

#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "zeroavsr/common.hpp"

namespace zeroavsr::roman {

struct UnknownToken : Error {
  UnknownToken(uint32_t cp, size_t pos)
      : Error("unknown token U+" + to_hex(cp) + " at position " + std::to_string(pos)),
        codepoint(cp),
        position(pos) {}
  uint32_t codepoint;
  size_t position;

 private:
  static std::string to_hex(uint32_t cp) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04X", cp);
    return buf;
  }
};

struct EmptyReference : Error {
  EmptyReference() : Error("reference is empty; error rate undefined") {}
};

// Fixed language-agnostic output vocabulary: 26 lowercase letters, space and
// apostrophe. Id 0 is reserved for the CTC blank and is never a member token;
// real tokens occupy ids 1..size().
class RomanAlphabet {
 public:
  static RomanAlphabet basic() {
    std::vector<uint32_t> t;
    for (char c = 'a'; c <= 'z'; ++c) t.push_back(uint32_t(c));
    t.push_back(uint32_t(' '));
    t.push_back(uint32_t('\''));
    return RomanAlphabet(std::move(t));
  }

  explicit RomanAlphabet(std::vector<uint32_t> tokens) : tokens_(std::move(tokens)) {
    for (size_t i = 0; i < tokens_.size(); ++i) to_id_[tokens_[i]] = int(i) + 1;
  }

  int size() const { return int(tokens_.size()); }
  int vocab_size() const { return size() + 1; }  // including blank
  static constexpr int blank_id() { return 0; }
  int space_id() const { return id_of(uint32_t(' ')); }

  bool contains(uint32_t cp) const { return to_id_.count(cp) != 0; }
  int id_of(uint32_t cp) const {
    auto it = to_id_.find(cp);
    return it == to_id_.end() ? -1 : it->second;
  }
  uint32_t token(int id) const { return tokens_.at(size_t(id) - 1); }

  std::string tokens_string() const {
    std::string s;
    for (uint32_t cp : tokens_) utf8_append(s, cp);
    return s;
  }

 private:
  std::vector<uint32_t> tokens_;
  std::unordered_map<uint32_t, int> to_id_;
};

// (grapheme transcript, roman transcript, language code) triple.
struct TextPair {
  std::string grapheme;
  std::string roman;
  std::string lang;
};

namespace detail {

// Canonical composition for the Latin base+combining-mark pairs this project
// emits and tests. Not a full Unicode NFC pass; see docs/normalization.md.
inline uint32_t compose(uint32_t base, uint32_t mark) {
  struct Entry {
    uint32_t base, mark, composed;
  };
  static const Entry table[] = {
      {'a', 0x300, 0xE0}, {'a', 0x301, 0xE1}, {'a', 0x302, 0xE2}, {'a', 0x303, 0xE3},
      {'a', 0x308, 0xE4}, {'a', 0x30A, 0xE5}, {'c', 0x327, 0xE7}, {'c', 0x301, 0x107},
      {'c', 0x30C, 0x10D}, {'e', 0x300, 0xE8}, {'e', 0x301, 0xE9}, {'e', 0x302, 0xEA},
      {'e', 0x308, 0xEB}, {'i', 0x300, 0xEC}, {'i', 0x301, 0xED}, {'i', 0x302, 0xEE},
      {'i', 0x308, 0xEF}, {'n', 0x303, 0xF1}, {'o', 0x300, 0xF2}, {'o', 0x301, 0xF3},
      {'o', 0x302, 0xF4}, {'o', 0x303, 0xF5}, {'o', 0x308, 0xF6}, {'u', 0x300, 0xF9},
      {'u', 0x301, 0xFA}, {'u', 0x302, 0xFB}, {'u', 0x308, 0xFC}, {'y', 0x301, 0xFD},
      {'s', 0x30C, 0x161}, {'z', 0x30C, 0x17E}, {'g', 0x306, 0x11F},
      {'A', 0x300, 0xC0}, {'A', 0x301, 0xC1}, {'A', 0x302, 0xC2}, {'A', 0x303, 0xC3},
      {'A', 0x308, 0xC4}, {'A', 0x30A, 0xC5}, {'C', 0x327, 0xC7}, {'E', 0x300, 0xC8},
      {'E', 0x301, 0xC9}, {'E', 0x302, 0xCA}, {'E', 0x308, 0xCB}, {'I', 0x300, 0xCC},
      {'I', 0x301, 0xCD}, {'I', 0x302, 0xCE}, {'I', 0x308, 0xCF}, {'N', 0x303, 0xD1},
      {'O', 0x300, 0xD2}, {'O', 0x301, 0xD3}, {'O', 0x302, 0xD4}, {'O', 0x303, 0xD5},
      {'O', 0x308, 0xD6}, {'U', 0x300, 0xD9}, {'U', 0x301, 0xDA}, {'U', 0x302, 0xDB},
      {'U', 0x308, 0xDC}, {'Y', 0x301, 0xDD}, {'S', 0x30C, 0x160}, {'Z', 0x30C, 0x17D},
      {'G', 0x306, 0x11E},
  };
  for (const auto& e : table)
    if (e.base == base && e.mark == mark) return e.composed;
  return 0;
}

inline uint32_t to_lower(uint32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 32;
  // Latin-1 supplement; 0xD7 is the multiplication sign, not a letter.
  if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 32;
  // Latin Extended-A pairs upper/lower codepoints.
  if (cp >= 0x100 && cp <= 0x177 && cp % 2 == 0) return cp + 1;
  if (cp == 0x178) return 0xFF;  // Y with diaeresis
  if (cp >= 0x179 && cp <= 0x17E && cp % 2 == 1) return cp + 1;
  // Greek capital letters (sigma maps to the non-final form).
  if (cp >= 0x391 && cp <= 0x3A9 && cp != 0x3A2) return cp + 32;
  if (cp >= 0x386 && cp <= 0x38F) {
    switch (cp) {
      case 0x386: return 0x3AC;
      case 0x388: return 0x3AD;
      case 0x389: return 0x3AE;
      case 0x38A: return 0x3AF;
      case 0x38C: return 0x3CC;
      case 0x38E: return 0x3CD;
      case 0x38F: return 0x3CE;
      default: return cp;
    }
  }
  // Cyrillic.
  if (cp >= 0x410 && cp <= 0x42F) return cp + 32;
  if (cp >= 0x400 && cp <= 0x40F) return cp + 80;
  return cp;
}

inline bool is_space(uint32_t cp) {
  return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\f' || cp == '\v' ||
         cp == 0xA0 || (cp >= 0x2000 && cp <= 0x200A) || cp == 0x2028 || cp == 0x2029 ||
         cp == 0x202F || cp == 0x205F || cp == 0x3000;
}

inline bool is_punct(uint32_t cp) {
  if (cp == '\'') return false;  // apostrophe survives normalization
  if (cp < 0x80)
    return (cp >= '!' && cp <= '/') || (cp >= ':' && cp <= '@') || (cp >= '[' && cp <= '`') ||
           (cp >= '{' && cp <= '~');
  static const std::unordered_set<uint32_t> extra = {
      0xA1,   0xBF,   0xAB,   0xBB,   0xA7,   0xB6,   0xB7,   0x2018, 0x201A, 0x201B,
      0x201C, 0x201D, 0x201E, 0x201F, 0x2026, 0x2010, 0x2011, 0x2012, 0x2013, 0x2014,
      0x2015, 0x2039, 0x203A, 0x2022, 0x2032, 0x2033, 0x203C, 0x2047, 0x2048, 0x2049,
      0x3001, 0x3002, 0x300C, 0x300D, 0x300E, 0x300F, 0x3008, 0x3009, 0x300A, 0x300B,
      0x3010, 0x3011, 0xFF01, 0xFF08, 0xFF09, 0xFF0C, 0xFF0E, 0xFF1A, 0xFF1B, 0xFF1F,
      0x060C, 0x061B, 0x061F, 0x0964, 0x0965,
  };
  return extra.count(cp) != 0;
}

}  // namespace detail

// Text normalization v1 (documented in docs/normalization.md): compose
// combining marks, lowercase, drop punctuation except the apostrophe
// (curly U+2019 folds to U+0027), collapse whitespace, trim. The language
// code is accepted for future per-language rules; v1 applies one rule set.
inline std::string normalize_text(const std::string& text, const std::string& /*lang*/ = "") {
  std::vector<uint32_t> cps = utf8_decode(text);

  std::vector<uint32_t> composed;
  composed.reserve(cps.size());
  for (uint32_t cp : cps) {
    if (!composed.empty() && cp >= 0x300 && cp <= 0x36F) {
      if (uint32_t c = detail::compose(composed.back(), cp)) {
        composed.back() = c;
        continue;
      }
    }
    composed.push_back(cp);
  }

  std::vector<uint32_t> out;
  out.reserve(composed.size());
  bool pending_space = false;
  for (uint32_t cp : composed) {
    if (cp == 0x2019) cp = '\'';
    cp = detail::to_lower(cp);
    if (detail::is_punct(cp)) continue;
    if (detail::is_space(cp)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(cp);
  }
  return utf8_encode(out);
}

inline std::vector<int> tokenize_roman(const std::string& text, const RomanAlphabet& alphabet) {
  std::vector<uint32_t> cps = utf8_decode(text);
  std::vector<int> ids;
  ids.reserve(cps.size());
  for (size_t i = 0; i < cps.size(); ++i) {
    const int id = alphabet.id_of(cps[i]);
    if (id < 0) throw UnknownToken(cps[i], i);
    ids.push_back(id);
  }
  return ids;
}

inline std::string detokenize_roman(const std::vector<int>& ids, const RomanAlphabet& alphabet) {
  std::string s;
  for (int id : ids) utf8_append(s, alphabet.token(id));
  return s;
}

// Levenshtein distance with unit costs, two-row iterative form.
template <class T>
size_t edit_distance(const std::vector<T>& hyp, const std::vector<T>& ref) {
  const size_t n = hyp.size(), m = ref.size();
  if (n == 0) return m;
  if (m == 0) return n;
  std::vector<size_t> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = j;
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= m; ++j) {
      const size_t sub = prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

inline size_t edit_distance(const std::string& hyp, const std::string& ref) {
  return edit_distance(utf8_decode(hyp), utf8_decode(ref));
}

inline std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> words;
  std::string cur;
  for (uint32_t cp : utf8_decode(s)) {
    if (detail::is_space(cp)) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      utf8_append(cur, cp);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

// Character error rate: codepoint-level distance over reference codepoint
// count (spaces included in the count).
inline double cer(const std::string& hyp, const std::string& ref) {
  const auto r = utf8_decode(ref);
  if (r.empty()) throw EmptyReference();
  return double(edit_distance(utf8_decode(hyp), r)) / double(r.size());
}

// Word error rate over whitespace-delimited tokens.
inline double wer(const std::string& hyp, const std::string& ref) {
  const auto r = split_words(ref);
  if (r.empty()) throw EmptyReference();
  return double(edit_distance(split_words(hyp), r)) / double(r.size());
}

}  // namespace zeroavsr::roman
