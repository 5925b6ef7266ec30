#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "zeroavsr/corpus.hpp"
#include "zeroavsr/romanizer.hpp"
#include "zeroavsr/trainer.hpp"

namespace zeroavsr::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error("config: " + msg) {}
};

// ----------------------------- corpus on disk ------------------------------

struct CorpusSpec {
  int n_languages = 5;
  corpus::GenParams gen;
  int words_min = 2, words_max = 3;
  double noise_sigma = 0.25;
  std::vector<std::pair<std::string, int>> splits = {{"train", 120}, {"valid", 20}, {"test", 60}};
  double confidence_noise = 0.02;     // confidence = 1 - |N(0, noise)|
  double confidence_threshold = 0.0;  // manifest filter
};

// Deterministic corpus layout:
//   languages.json
//   manifests/<lang>.<split>.jsonl
//   features/<id>.audio.bin / .video.bin
// Language seeds occupy a contiguous block derived from the run seed, which
// keeps grapheme inventories disjoint across the run's languages.
inline corpus::LanguageSet generate_corpus(const CorpusSpec& spec, uint64_t seed,
                                           const fs::path& out_dir) {
  if (spec.n_languages < 1) throw ConfigError("n_languages must be >= 1");
  if (spec.words_min < 1 || spec.words_max < spec.words_min)
    throw ConfigError("invalid words_per_utt range");
  const auto alphabet = roman::RomanAlphabet::basic();

  fs::create_directories(out_dir / "manifests");
  fs::create_directories(out_dir / "features");

  corpus::LanguageSet langs;
  const uint64_t base = (seed % 256) + 1;
  for (int i = 0; i < spec.n_languages; ++i)
    langs.languages.push_back(corpus::gen_language(base + uint64_t(i), spec.gen, alphabet));
  langs.save(out_dir / "languages.json");

  for (const auto& lang : langs.languages) {
    for (const auto& [split, count] : spec.splits) {
      std::vector<corpus::ManifestEntry> entries;
      for (int idx = 0; idx < count; ++idx) {
        const std::string id = lang.lang + "_" + split + "_" + std::to_string(idx);
        Rng rng(fnv1a64(id) ^ (seed * 0x9e3779b97f4a7c15ULL));
        const int n_words = int(rng.uniform_int(spec.words_min, spec.words_max));
        const auto utt = corpus::gen_utterance(lang, n_words, spec.noise_sigma, rng.next_u64());

        corpus::ManifestEntry e;
        e.id = id;
        e.lang = lang.lang;
        e.confidence = std::clamp(1.0 - std::abs(rng.gauss()) * spec.confidence_noise, 0.0, 1.0);
        e.grapheme = utt.pair.grapheme;
        e.roman = utt.pair.roman;
        e.n_frames = utt.audio_feats.rows;
        e.feature_ref = "features/" + id;
        corpus::write_features(out_dir / (e.feature_ref + ".audio.bin"), utt.audio_feats);
        corpus::write_features(out_dir / (e.feature_ref + ".video.bin"), utt.video_feats);
        entries.push_back(std::move(e));
      }
      const auto kept = corpus::build_manifest(entries, spec.confidence_threshold);
      corpus::write_manifest(out_dir / "manifests" / (lang.lang + "." + split + ".jsonl"), kept);
    }
  }
  return langs;
}

// ------------------------------- loaders -----------------------------------

inline std::vector<corpus::ManifestEntry> load_split_manifests(
    const fs::path& corpus_dir, const std::string& split,
    const std::vector<std::string>& languages) {
  std::vector<corpus::ManifestEntry> all;
  for (const auto& lang : languages) {
    const fs::path p = corpus_dir / "manifests" / (lang + "." + split + ".jsonl");
    if (!fs::exists(p)) throw ConfigError("missing manifest " + p.string());
    auto entries = corpus::read_manifest(p);
    all.insert(all.end(), entries.begin(), entries.end());
  }
  return all;
}

inline std::vector<corpus::Utterance> load_utterances(const fs::path& corpus_dir,
                                                      const std::string& split,
                                                      const std::vector<std::string>& languages) {
  std::vector<corpus::Utterance> out;
  for (const auto& e : load_split_manifests(corpus_dir, split, languages)) {
    corpus::Utterance utt;
    utt.audio_feats = corpus::read_features(corpus_dir / (e.feature_ref + ".audio.bin"));
    utt.video_feats = corpus::read_features(corpus_dir / (e.feature_ref + ".video.bin"));
    utt.pair = {e.grapheme, e.roman, e.lang};
    utt.lang = e.lang;
    out.push_back(std::move(utt));
  }
  return out;
}

inline std::vector<romanizer::TrainItem> to_roman_train_items(
    const std::vector<corpus::Utterance>& utts, const roman::RomanAlphabet& alphabet) {
  std::vector<romanizer::TrainItem> items;
  for (const auto& u : utts) {
    romanizer::TrainItem item;
    item.audio = u.audio_feats;
    item.video = u.video_feats;
    item.target = roman::tokenize_roman(u.pair.roman, alphabet);
    items.push_back(std::move(item));
  }
  return items;
}

template <class S>
std::vector<train::Task1Item<S>> to_task1_items(const std::vector<corpus::Utterance>& utts,
                                                const lm::ToyLM<S>& lm_model) {
  std::vector<train::Task1Item<S>> items;
  for (const auto& u : utts) {
    train::Task1Item<S> item;
    item.audio = u.audio_feats;
    item.video = u.video_feats;
    item.lang = u.lang;
    item.targets = lm_model.vocab.encode_text(u.pair.grapheme);
    items.push_back(std::move(item));
  }
  return items;
}

inline std::vector<roman::TextPair> load_text_pairs(const fs::path& corpus_dir,
                                                    const std::string& split,
                                                    const std::vector<std::string>& languages) {
  std::vector<roman::TextPair> pairs;
  for (const auto& e : load_split_manifests(corpus_dir, split, languages))
    pairs.push_back({e.grapheme, e.roman, e.lang});
  return pairs;
}

// ------------------------------ run outputs --------------------------------

inline void write_metrics_csv(const fs::path& path,
                              const std::vector<romanizer::MetricsRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write metrics: " + path.string());
  out << "step,task,loss,lr\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%lld,%s,%.8f,%.8g\n", static_cast<long long>(r.step),
                  r.task.c_str(), r.loss, r.lr);
    out << buf;
  }
}

inline void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
}

// ----------------------------- config handling -----------------------------

inline json load_config_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
}

// Dotted-key overrides: "a.b.c=value"; values parse as JSON scalars when
// possible and fall back to strings.
inline void apply_override(json& cfg, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override must look like key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &cfg;
  size_t start = 0;
  while (true) {
    const size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (part.empty()) throw ConfigError("empty key segment in override " + assignment);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

inline uint64_t config_hash(const json& cfg) { return fnv1a64(cfg.dump()); }

template <class T>
T get_or(const json& cfg, const std::string& key, const T& fallback) {
  if (!cfg.contains(key)) return fallback;
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for '" + key + "': " + e.what());
  }
}

template <class T>
T require(const json& cfg, const std::string& key) {
  if (!cfg.contains(key)) throw ConfigError("missing required key '" + key + "'");
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for '" + key + "': " + e.what());
  }
}

}  // namespace zeroavsr::pipeline
