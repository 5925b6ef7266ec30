#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "zeroavsr/common.hpp"
#include "zeroavsr/mat.hpp"
#include "zeroavsr/roman.hpp"

namespace zeroavsr::corpus {

using json = nlohmann::json;

struct InfeasibleMapping : Error {
  explicit InfeasibleMapping(const std::string& msg) : Error("infeasible mapping: " + msg) {}
};
struct UnknownGrapheme : Error {
  UnknownGrapheme(const std::string& symbol, size_t pos)
      : Error("unknown grapheme '" + symbol + "' at position " + std::to_string(pos)),
        symbol(symbol),
        position(pos) {}
  std::string symbol;
  size_t position;
};
struct AmbiguousWord : Error {
  explicit AmbiguousWord(const std::string& w) : Error("ambiguous roman word: " + w) {}
};

// Synthetic language: a disjoint grapheme inventory, a deterministic
// grapheme-to-roman mapping drawn from a per-language phone subset, emission
// prototypes shared across every language built from the same alphabet, and
// a lexicon whose roman forms are unique so word-level de-romanization is
// well defined.
struct ToyLanguage {
  std::string lang;
  std::vector<uint32_t> graphemes;
  std::map<uint32_t, std::string> g2r;
  // roman codepoint -> (audio prototype, video prototype)
  std::map<uint32_t, std::pair<std::vector<float>, std::vector<float>>> phone_prototypes;
  std::vector<std::string> lexicon;  // grapheme words

  // Derived: roman form of each lexicon word and the inverse map.
  std::vector<std::string> lexicon_roman;
  std::unordered_map<std::string, std::string> roman_to_word;

  int d_audio() const { return phone_prototypes.empty() ? 0 : int(phone_prototypes.begin()->second.first.size()); }
  int d_video() const { return phone_prototypes.empty() ? 0 : int(phone_prototypes.begin()->second.second.size()); }
};

struct ManifestEntry {
  std::string id;
  std::string lang;
  double confidence = 1.0;
  std::string grapheme;
  std::string roman;
  int64_t n_frames = 0;
  std::string feature_ref;
};

struct Utterance {
  Mat<float> audio_feats;  // T x D_a
  Mat<float> video_feats;  // T x D_v
  roman::TextPair pair;
  std::string lang;
};

struct GenParams {
  int n_graphemes = 12;
  int d_audio = 16;
  int d_video = 16;
  int lexicon_size = 200;
  int word_len_min = 2, word_len_max = 6;
  int g2r_len_min = 1, g2r_len_max = 3;
  // Each language draws its roman expansions from this many of the 26
  // letters; partial coverage is what makes language diversity matter.
  int phone_subset = 16;
  int max_retries = 200;
  uint64_t prototype_seed = 0x70686f6e65ULL;  // shared across languages
};

inline std::string romanize(const std::string& grapheme, const ToyLanguage& lang);

namespace detail {

// Prototypes depend only on (alphabet, dims, prototype_seed) so that every
// language generated against the same alphabet shares one phone inventory.
inline std::map<uint32_t, std::pair<std::vector<float>, std::vector<float>>>
shared_prototypes(const roman::RomanAlphabet& alphabet, const GenParams& p) {
  uint64_t h = fnv1a64(alphabet.tokens_string());
  h = fnv1a64(&p.d_audio, sizeof(p.d_audio), h);
  h = fnv1a64(&p.d_video, sizeof(p.d_video), h);
  h = fnv1a64(&p.prototype_seed, sizeof(p.prototype_seed), h);
  Rng rng(h);
  std::map<uint32_t, std::pair<std::vector<float>, std::vector<float>>> protos;
  for (int id = 1; id <= alphabet.size(); ++id) {
    const uint32_t cp = alphabet.token(id);
    std::vector<float> a(p.d_audio), v(p.d_video);
    double na = 0, nv = 0;
    for (auto& x : a) {
      x = float(rng.gauss());
      na += double(x) * x;
    }
    for (auto& x : v) {
      x = float(rng.gauss());
      nv += double(x) * x;
    }
    // Unit RMS per entry keeps SNR bookkeeping simple.
    const float sa = float(1.0 / std::sqrt(std::max(na / p.d_audio, 1e-12)));
    const float sv = float(1.0 / std::sqrt(std::max(nv / p.d_video, 1e-12)));
    for (auto& x : a) x *= sa;
    for (auto& x : v) x *= sv;
    protos[cp] = {std::move(a), std::move(v)};
  }
  return protos;
}

}  // namespace detail

// Deterministic toy language. Distinct seeds yield disjoint grapheme blocks
// (carved out of the CJK unified range, which is case-stable under text
// normalization); phone prototypes are shared across seeds by construction.
inline ToyLanguage gen_language(uint64_t seed, const GenParams& params,
                                const roman::RomanAlphabet& alphabet) {
  if (params.n_graphemes < 2) throw Error("gen_language: need at least 2 graphemes");
  if (params.n_graphemes > 96) throw Error("gen_language: at most 96 graphemes per language");

  ToyLanguage lang;
  lang.lang = "syn" + std::to_string(seed);
  Rng rng(0x6c616e67ULL ^ (seed * 0x9e3779b97f4a7c15ULL));

  const uint32_t block = 0x4E00 + uint32_t(seed % 512) * 0x60;
  for (int i = 0; i < params.n_graphemes; ++i) lang.graphemes.push_back(block + uint32_t(i));

  lang.phone_prototypes = detail::shared_prototypes(alphabet, params);

  // Per-language phone subset (letters only; space always has a prototype).
  std::vector<uint32_t> letters;
  for (int id = 1; id <= alphabet.size(); ++id) {
    const uint32_t cp = alphabet.token(id);
    if (cp >= 'a' && cp <= 'z') letters.push_back(cp);
  }
  rng.shuffle(letters);
  const int subset = std::min<int>(params.phone_subset, int(letters.size()));
  letters.resize(size_t(subset));

  // Unique roman expansion per grapheme. The expansions collectively use
  // every letter of the language's phone subset whenever the total expansion
  // length allows; coverage is what the cross-lingual transfer experiments
  // hinge on, so it must not be left to chance.
  {
    std::vector<int> lens;
    int slots = 0;
    for (size_t i = 0; i < lang.graphemes.size(); ++i) {
      const int len = int(rng.uniform_int(params.g2r_len_min, params.g2r_len_max));
      lens.push_back(len);
      slots += len;
    }
    int attempts = 0;
    while (true) {
      if (++attempts > params.max_retries)
        throw InfeasibleMapping("could not find unique roman expansions for the graphemes");
      std::vector<uint32_t> pool;
      for (int i = 0; i < std::min(subset, slots); ++i) pool.push_back(letters[size_t(i)]);
      while (int(pool.size()) < slots)
        pool.push_back(letters[size_t(rng.uniform_int(0, subset - 1))]);
      rng.shuffle(pool);

      std::set<std::string> used;
      std::map<uint32_t, std::string> g2r;
      size_t cursor = 0;
      bool ok = true;
      for (size_t i = 0; i < lang.graphemes.size(); ++i) {
        std::string r;
        for (int k = 0; k < lens[i]; ++k) utf8_append(r, pool[cursor++]);
        if (!used.insert(r).second) {
          ok = false;
          break;
        }
        g2r[lang.graphemes[i]] = r;
      }
      if (ok) {
        lang.g2r = std::move(g2r);
        break;
      }
    }
  }

  // Lexicon with unique grapheme forms and unique roman forms.
  std::set<std::string> word_set, roman_set;
  int attempts = 0;
  while (int(lang.lexicon.size()) < params.lexicon_size) {
    if (++attempts > params.max_retries * params.lexicon_size)
      throw InfeasibleMapping("could not build an unambiguous lexicon of size " +
                              std::to_string(params.lexicon_size));
    const int len = int(rng.uniform_int(params.word_len_min, params.word_len_max));
    std::string w;
    for (int i = 0; i < len; ++i)
      utf8_append(w, lang.graphemes[size_t(rng.uniform_int(0, params.n_graphemes - 1))]);
    if (word_set.count(w)) continue;
    std::string r = romanize(w, lang);
    if (roman_set.count(r)) continue;
    word_set.insert(w);
    roman_set.insert(r);
    lang.lexicon.push_back(w);
    lang.lexicon_roman.push_back(r);
    lang.roman_to_word[r] = w;
  }
  return lang;
}

inline std::string romanize(const std::string& grapheme, const ToyLanguage& lang) {
  std::string out;
  const auto cps = utf8_decode(grapheme);
  for (size_t i = 0; i < cps.size(); ++i) {
    if (cps[i] == ' ') {
      out += ' ';
      continue;
    }
    auto it = lang.g2r.find(cps[i]);
    if (it == lang.g2r.end()) {
      std::string sym;
      utf8_append(sym, cps[i]);
      throw UnknownGrapheme(sym, i);
    }
    out += it->second;
  }
  return out;
}

// Lexicon-backed de-romanizer: per word, the unique lexicon entry whose
// roman form matches; words with no match pass through verbatim, mirroring
// how an LLM degrades on garbage input.
inline std::string deromanize_oracle(const std::string& roman, const ToyLanguage& lang) {
  std::string out;
  bool first = true;
  for (const auto& w : roman::split_words(roman)) {
    if (!first) out += ' ';
    first = false;
    auto it = lang.roman_to_word.find(w);
    out += (it == lang.roman_to_word.end()) ? w : it->second;
  }
  return out;
}

inline Utterance gen_utterance(const ToyLanguage& lang, int n_words, double noise_sigma,
                               uint64_t seed) {
  if (n_words < 1) throw Error("gen_utterance: n_words must be >= 1");
  if (noise_sigma < 0) throw Error("gen_utterance: noise_sigma must be >= 0");
  if (lang.lexicon.empty()) throw Error("gen_utterance: language has an empty lexicon");
  Rng rng(0x75747431ULL ^ (seed * 0xd1342543de82ef95ULL) ^ fnv1a64(lang.lang));

  std::string grapheme;
  for (int w = 0; w < n_words; ++w) {
    if (w) grapheme += ' ';
    grapheme += lang.lexicon[size_t(rng.uniform_int(0, int64_t(lang.lexicon.size()) - 1))];
  }
  const std::string roman = romanize(grapheme, lang);

  const int da = lang.d_audio(), dv = lang.d_video();
  std::vector<const std::pair<std::vector<float>, std::vector<float>>*> protos;
  for (uint32_t cp : utf8_decode(roman)) {
    auto it = lang.phone_prototypes.find(cp);
    if (it == lang.phone_prototypes.end()) throw Error("missing phone prototype");
    const int dur = int(rng.uniform_int(2, 5));
    for (int k = 0; k < dur; ++k) protos.push_back(&it->second);
  }

  Utterance utt;
  utt.lang = lang.lang;
  utt.pair = {grapheme, roman, lang.lang};
  utt.audio_feats = Mat<float>(int(protos.size()), da);
  utt.video_feats = Mat<float>(int(protos.size()), dv);
  for (int t = 0; t < int(protos.size()); ++t) {
    for (int j = 0; j < da; ++j)
      utt.audio_feats(t, j) = protos[size_t(t)]->first[size_t(j)] + float(noise_sigma * rng.gauss());
    for (int j = 0; j < dv; ++j)
      utt.video_feats(t, j) = protos[size_t(t)]->second[size_t(j)] + float(noise_sigma * rng.gauss());
  }
  return utt;
}

// Confidence-threshold filter over manifest records, order preserving.
inline std::vector<ManifestEntry> build_manifest(const std::vector<ManifestEntry>& entries,
                                                 double threshold) {
  if (threshold < 0.0 || threshold > 1.0) throw Error("build_manifest: threshold must be in [0,1]");
  std::vector<ManifestEntry> kept;
  for (const auto& e : entries)
    if (e.confidence >= threshold) kept.push_back(e);
  return kept;
}

// --------------------------- serialization --------------------------------

inline json to_json(const ManifestEntry& e) {
  return json{{"id", e.id},         {"lang", e.lang},
              {"confidence", e.confidence}, {"grapheme", e.grapheme},
              {"roman", e.roman},   {"n_frames", e.n_frames},
              {"feature_ref", e.feature_ref}};
}

inline ManifestEntry manifest_entry_from_json(const json& j) {
  ManifestEntry e;
  e.id = j.at("id").get<std::string>();
  e.lang = j.at("lang").get<std::string>();
  e.confidence = j.at("confidence").get<double>();
  e.grapheme = j.at("grapheme").get<std::string>();
  e.roman = j.at("roman").get<std::string>();
  e.n_frames = j.at("n_frames").get<int64_t>();
  e.feature_ref = j.at("feature_ref").get<std::string>();
  return e;
}

inline void write_manifest(const std::filesystem::path& path,
                           const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open manifest for writing: " + path.string());
  for (const auto& e : entries) out << to_json(e).dump() << "\n";
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open manifest: " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    entries.push_back(manifest_entry_from_json(json::parse(line)));
  }
  return entries;
}

// Per-utterance feature file: 8-byte header of two little-endian u32 (T, D)
// followed by row-major little-endian float32.
inline void write_features(const std::filesystem::path& path, const Mat<float>& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open feature file for writing: " + path.string());
  const uint32_t t = uint32_t(m.rows), d = uint32_t(m.cols);
  out.write(reinterpret_cast<const char*>(&t), 4);
  out.write(reinterpret_cast<const char*>(&d), 4);
  out.write(reinterpret_cast<const char*>(m.v.data()), std::streamsize(m.v.size() * 4));
}

inline Mat<float> read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open feature file: " + path.string());
  uint32_t t = 0, d = 0;
  in.read(reinterpret_cast<char*>(&t), 4);
  in.read(reinterpret_cast<char*>(&d), 4);
  if (!in) throw Error("truncated feature header: " + path.string());
  Mat<float> m{int(t), int(d)};
  in.read(reinterpret_cast<char*>(m.v.data()), std::streamsize(m.v.size() * 4));
  if (!in) throw Error("truncated feature payload: " + path.string());
  return m;
}

inline json to_json(const ToyLanguage& l) {
  json j;
  j["lang"] = l.lang;
  std::string gs;
  for (uint32_t g : l.graphemes) utf8_append(gs, g);
  j["graphemes"] = gs;
  json g2r = json::object();
  for (const auto& [g, r] : l.g2r) {
    std::string key;
    utf8_append(key, g);
    g2r[key] = r;
  }
  j["g2r"] = g2r;
  json protos = json::object();
  for (const auto& [cp, pv] : l.phone_prototypes) {
    std::string key;
    utf8_append(key, cp);
    protos[key] = json{{"audio", pv.first}, {"video", pv.second}};
  }
  j["phone_prototypes"] = protos;
  j["lexicon"] = l.lexicon;
  return j;
}

inline ToyLanguage language_from_json(const json& j) {
  ToyLanguage l;
  l.lang = j.at("lang").get<std::string>();
  l.graphemes = utf8_decode(j.at("graphemes").get<std::string>());
  for (const auto& [key, val] : j.at("g2r").items())
    l.g2r[utf8_decode(key)[0]] = val.get<std::string>();
  for (const auto& [key, val] : j.at("phone_prototypes").items())
    l.phone_prototypes[utf8_decode(key)[0]] = {val.at("audio").get<std::vector<float>>(),
                                               val.at("video").get<std::vector<float>>()};
  l.lexicon = j.at("lexicon").get<std::vector<std::string>>();
  for (const auto& w : l.lexicon) {
    std::string r = romanize(w, l);
    l.lexicon_roman.push_back(r);
    if (l.roman_to_word.count(r)) throw AmbiguousWord(r);
    l.roman_to_word[r] = w;
  }
  return l;
}

// Registry of every language a run knows about; the bridge vocabulary and the
// oracle backend are built from this.
struct LanguageSet {
  std::vector<ToyLanguage> languages;

  const ToyLanguage& by_code(const std::string& code) const {
    for (const auto& l : languages)
      if (l.lang == code) return l;
    throw Error("unknown language code: " + code);
  }
  bool has(const std::string& code) const {
    for (const auto& l : languages)
      if (l.lang == code) return true;
    return false;
  }
  std::vector<std::string> codes() const {
    std::vector<std::string> out;
    for (const auto& l : languages) out.push_back(l.lang);
    return out;
  }

  void save(const std::filesystem::path& path) const {
    json j = json::array();
    for (const auto& l : languages) j.push_back(to_json(l));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write language registry: " + path.string());
    out << j.dump(2) << "\n";
  }
  static LanguageSet load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read language registry: " + path.string());
    json j = json::parse(in);
    LanguageSet set;
    for (const auto& lj : j) set.languages.push_back(language_from_json(lj));
    return set;
  }
};

}  // namespace zeroavsr::corpus
