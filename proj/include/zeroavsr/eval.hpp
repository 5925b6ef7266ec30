#pragma once

#include <atomic>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "zeroavsr/bridge.hpp"
#include "zeroavsr/common.hpp"
#include "zeroavsr/corpus.hpp"
#include "zeroavsr/ctc.hpp"
#include "zeroavsr/frontend.hpp"
#include "zeroavsr/roman.hpp"
#include "zeroavsr/romanizer.hpp"
#include "zeroavsr/trainer.hpp"

namespace zeroavsr::eval {

using romanizer::Modality;

struct LangRow {
  std::string lang;
  int n_utts = 0;
  double cer = 0.0;
  double wer = 0.0;
  int failures = 0;      // backend errors, excluded from the rates
  bool holdout = false;  // zero-shot row marker
};

// Per-language rows plus paper-convention aggregates: the unweighted mean of
// language rows, with and without a designated dominant language.
struct EvalReport {
  std::vector<LangRow> rows;
  std::string dominant_lang;
  uint64_t config_hash = 0;
  uint64_t seed = 0;
  std::string backend_kind;

  const LangRow* row(const std::string& lang) const {
    for (const auto& r : rows)
      if (r.lang == lang) return &r;
    return nullptr;
  }

  double avg_cer(bool include_dominant = true, bool include_holdout = true) const {
    return mean([](const LangRow& r) { return r.cer; }, include_dominant, include_holdout);
  }
  double avg_wer(bool include_dominant = true, bool include_holdout = true) const {
    return mean([](const LangRow& r) { return r.wer; }, include_dominant, include_holdout);
  }

  std::string to_csv() const {
    std::string out = "lang,n_utts,cer,wer,failures,holdout\n";
    char buf[160];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), "%s,%d,%.6f,%.6f,%d,%d\n", r.lang.c_str(), r.n_utts, r.cer,
                    r.wer, r.failures, r.holdout ? 1 : 0);
      out += buf;
    }
    std::snprintf(buf, sizeof(buf), "avg,,%.6f,%.6f,,\n", avg_cer(), avg_wer());
    out += buf;
    if (!dominant_lang.empty()) {
      std::snprintf(buf, sizeof(buf), "avg_wo_%s,,%.6f,%.6f,,\n", dominant_lang.c_str(),
                    avg_cer(false), avg_wer(false));
      out += buf;
    }
    return out;
  }

  std::string to_text() const {
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-10s %8s %10s %10s %6s\n", "lang", "n_utts", "cer", "wer",
                  "fail");
    out += buf;
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), "%-10s %8d %10.4f %10.4f %6d%s\n", r.lang.c_str(), r.n_utts,
                    r.cer, r.wer, r.failures, r.holdout ? "  [holdout]" : "");
      out += buf;
    }
    std::snprintf(buf, sizeof(buf), "%-10s %8s %10.4f %10.4f\n", "avg", "", avg_cer(), avg_wer());
    out += buf;
    if (!dominant_lang.empty()) {
      std::snprintf(buf, sizeof(buf), "%-10s %8s %10.4f %10.4f\n",
                    ("avg-" + dominant_lang).c_str(), "", avg_cer(false), avg_wer(false));
      out += buf;
    }
    return out;
  }

 private:
  template <class F>
  double mean(F field, bool include_dominant, bool include_holdout) const {
    double acc = 0;
    int n = 0;
    for (const auto& r : rows) {
      if (!include_dominant && r.lang == dominant_lang) continue;
      if (!include_holdout && r.holdout) continue;
      acc += field(r);
      ++n;
    }
    return n == 0 ? 0.0 : acc / n;
  }
};

// Per-utterance feature-space noise injection used by the sweeps.
struct NoiseSpec {
  frontend::NoiseKind kind = frontend::NoiseKind::White;
  double snr_db = 0.0;
  uint64_t seed = 0;
  const std::vector<const Mat<float>*>* competing_pool = nullptr;
};

inline Mat<float> apply_noise(const Mat<float>& audio, const NoiseSpec& spec, uint64_t utt_index) {
  Rng rng(spec.seed ^ (utt_index * 0x9e3779b97f4a7c15ULL));
  Mat<float> n = spec.kind == frontend::NoiseKind::Competing
                     ? frontend::make_feature_noise(spec.kind, audio.rows, audio.cols, rng,
                                                    *spec.competing_pool)
                     : frontend::make_feature_noise(spec.kind, audio.rows, audio.cols, rng);
  return frontend::mix_feature_noise(audio, n, spec.snr_db);
}

namespace detail {

struct Accum {
  int64_t cer_dist = 0, cer_len = 0;
  int64_t wer_dist = 0, wer_len = 0;
  int n = 0, failures = 0;
  bool holdout = false;

  void add(const std::string& hyp, const std::string& ref) {
    const auto rc = utf8_decode(ref);
    const auto hc = utf8_decode(hyp);
    cer_dist += int64_t(roman::edit_distance(hc, rc));
    cer_len += int64_t(rc.size());
    const auto rw = roman::split_words(ref);
    const auto hw = roman::split_words(hyp);
    wer_dist += int64_t(roman::edit_distance(hw, rw));
    wer_len += int64_t(rw.size());
    ++n;
  }
  LangRow to_row(const std::string& lang) const {
    LangRow r;
    r.lang = lang;
    r.n_utts = n;
    r.cer = cer_len == 0 ? 0.0 : double(cer_dist) / double(cer_len);
    r.wer = wer_len == 0 ? 0.0 : double(wer_dist) / double(wer_len);
    r.failures = failures;
    r.holdout = holdout;
    return r;
  }
};

inline EvalReport finalize(std::map<std::string, Accum>& acc, const std::string& dominant) {
  EvalReport rep;
  rep.dominant_lang = dominant;
  for (auto& [lang, a] : acc) rep.rows.push_back(a.to_row(lang));
  return rep;
}

}  // namespace detail

// Run fn(i) over [0, n) with at most `limit` worker threads; results land in
// index order so downstream aggregation stays deterministic.
inline void bounded_parallel_for(size_t n, int limit, const std::function<void(size_t)>& fn) {
  const int workers = std::max(1, std::min<int>(limit, int(n)));
  if (workers == 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  for (auto& t : pool) t.join();
}

struct CascadedOpts {
  Modality modality = Modality::AudioVisual;
  std::optional<NoiseSpec> noise;
  std::string dominant_lang;
  int max_in_flight = 4;  // backend fan-out bound
};

// Greedy romanizer decode -> de-romanizer backend -> normalized CER/WER.
// Backend failures are recorded per language and excluded from the rates.
template <class S>
EvalReport evaluate_cascaded(const romanizer::RomanizerModel<S>& rom,
                             bridge::Deromanizer& backend,
                             const std::vector<corpus::Utterance>& testset,
                             const CascadedOpts& opts = {}) {
  struct Slot {
    std::string hyp;
    bool failed = false;
  };
  std::vector<Slot> slots(testset.size());
  std::exception_ptr fatal;
  std::mutex fatal_mu;
  const int limit = backend.kind_name() == "remote-chat" ? opts.max_in_flight : 1;
  bounded_parallel_for(testset.size(), limit, [&](size_t i) {
    const auto& utt = testset[i];
    Mat<float> audio = utt.audio_feats;
    if (opts.noise) audio = apply_noise(audio, *opts.noise, i);
    const std::string roman_hyp = rom.transcribe(audio, utt.video_feats, opts.modality);
    try {
      slots[i].hyp = backend.deromanize(roman_hyp, utt.lang);
    } catch (const bridge::BackendUnreachable&) {
      // Infrastructure, not modeling: propagate so callers can exit loudly.
      std::lock_guard<std::mutex> lock(fatal_mu);
      if (!fatal) fatal = std::current_exception();
    } catch (const Error&) {
      slots[i].failed = true;  // per-utterance backend failure
    }
  });
  if (fatal) std::rethrow_exception(fatal);

  std::map<std::string, detail::Accum> acc;
  for (size_t i = 0; i < testset.size(); ++i) {
    auto& a = acc[testset[i].lang];
    if (slots[i].failed) {
      ++a.failures;
      continue;
    }
    a.add(roman::normalize_text(slots[i].hyp), roman::normalize_text(testset[i].pair.grapheme));
  }
  EvalReport rep = detail::finalize(acc, opts.dominant_lang);
  rep.backend_kind = backend.kind_name();
  return rep;
}

struct UnifiedOpts {
  Modality modality = Modality::AudioVisual;
  std::optional<NoiseSpec> noise;
  std::string dominant_lang;
  int beam_width = 2;
  double temperature = 0.3;
  int max_len = 160;
};

template <class S>
EvalReport evaluate_unified(const romanizer::RomanizerModel<S>& rom, bridge::Bridge<S>& br,
                            lm::ToyLM<S>& lm_model, const std::vector<corpus::Utterance>& testset,
                            const UnifiedOpts& opts = {}) {
  std::map<std::string, detail::Accum> acc;
  for (size_t i = 0; i < testset.size(); ++i) {
    const auto& utt = testset[i];
    Mat<float> audio = utt.audio_feats;
    if (opts.noise) audio = apply_noise(audio, *opts.noise, i);
    std::string hyp;
    try {
      hyp = bridge::unified_transcribe(rom, br, lm_model, audio, utt.video_feats, utt.lang,
                                       opts.modality, opts.beam_width, opts.temperature,
                                       opts.max_len);
    } catch (const Error&) {
      hyp.clear();  // decode failure scores as an empty hypothesis
    }
    acc[utt.lang].add(roman::normalize_text(hyp), roman::normalize_text(utt.pair.grapheme));
  }
  EvalReport rep = detail::finalize(acc, opts.dominant_lang);
  rep.backend_kind = "unified";
  return rep;
}

// Romanize then de-romanize ground-truth transcripts; CER against the
// original graphemes measures how reversible the roman representation is.
using TextFn = std::function<std::string(const std::string& text, const std::string& lang)>;

inline EvalReport reconstruction_test(const std::vector<roman::TextPair>& pairs,
                                      const TextFn& romanizer_fn, const TextFn& deromanizer_fn,
                                      const std::string& dominant = "") {
  std::map<std::string, detail::Accum> acc;
  for (const auto& p : pairs) {
    auto& a = acc[p.lang];
    try {
      const std::string roman = romanizer_fn(p.grapheme, p.lang);
      const std::string back = deromanizer_fn(roman, p.lang);
      a.add(roman::normalize_text(back), roman::normalize_text(p.grapheme));
    } catch (const Error&) {
      ++a.failures;
    }
  }
  EvalReport rep = detail::finalize(acc, dominant);
  rep.backend_kind = "reconstruction";
  return rep;
}

// --------------------------------- sweeps ----------------------------------

struct SweepRow {
  double snr_db = 0.0;
  Modality modality = Modality::AudioVisual;
  double cer = 0.0;
  double wer = 0.0;
};

// A "system" maps a (possibly noise-perturbed) utterance to a grapheme
// hypothesis under a modality mask.
using System =
    std::function<std::string(const corpus::Utterance&, Modality, const std::optional<NoiseSpec>&,
                              size_t utt_index)>;

template <class S>
System cascaded_system(const romanizer::RomanizerModel<S>& rom, bridge::Deromanizer& backend) {
  return [&rom, &backend](const corpus::Utterance& utt, Modality m,
                          const std::optional<NoiseSpec>& noise, size_t i) {
    Mat<float> audio = utt.audio_feats;
    if (noise) audio = apply_noise(audio, *noise, i);
    const std::string roman_hyp = rom.transcribe(audio, utt.video_feats, m);
    return backend.deromanize(roman_hyp, utt.lang);
  };
}

template <class S>
System unified_system(const romanizer::RomanizerModel<S>& rom, bridge::Bridge<S>& br,
                      lm::ToyLM<S>& lm_model, int beam_width = 2, double temperature = 0.3) {
  return [&rom, &br, &lm_model, beam_width, temperature](
             const corpus::Utterance& utt, Modality m, const std::optional<NoiseSpec>& noise,
             size_t i) {
    Mat<float> audio = utt.audio_feats;
    if (noise) audio = apply_noise(audio, *noise, i);
    return bridge::unified_transcribe(rom, br, lm_model, audio, utt.video_feats, utt.lang, m,
                                      beam_width, temperature);
  };
}

// Aggregate error at each (SNR, modality) grid point.
inline std::vector<SweepRow> noise_sweep(const System& system,
                                         const std::vector<corpus::Utterance>& testset,
                                         frontend::NoiseKind kind,
                                         const std::vector<double>& snr_list,
                                         const std::vector<Modality>& modalities,
                                         uint64_t seed = 0) {
  std::vector<const Mat<float>*> pool;
  for (const auto& u : testset) pool.push_back(&u.audio_feats);
  std::vector<SweepRow> rows;
  for (double snr : snr_list) {
    for (Modality m : modalities) {
      NoiseSpec spec;
      spec.kind = kind;
      spec.snr_db = snr;
      spec.seed = seed ^ fnv1a64(&snr, sizeof(snr));
      spec.competing_pool = &pool;
      detail::Accum a;
      for (size_t i = 0; i < testset.size(); ++i) {
        std::string hyp;
        try {
          hyp = system(testset[i], m, std::optional<NoiseSpec>(spec), i);
        } catch (const Error&) {
          hyp.clear();
        }
        a.add(roman::normalize_text(hyp), roman::normalize_text(testset[i].pair.grapheme));
      }
      const LangRow r = a.to_row("all");
      rows.push_back({snr, m, r.cer, r.wer});
    }
  }
  return rows;
}

inline std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
  std::string out = "snr_db,modality,cer,wer\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.1f,%s,%.6f,%.6f\n", r.snr_db,
                  romanizer::modality_name(r.modality), r.cer, r.wer);
    out += buf;
  }
  return out;
}

// --------------------------- zero-shot protocol ----------------------------

struct ZeroShotResult {
  EvalReport report;  // every language; the holdout row is flagged
  std::string holdout;
  double holdout_cer = 0.0;
  double seen_mean_cer = 0.0;  // unweighted mean over seen-language rows
  romanizer::RomanizerModel<float> model;
};

// Leave-one-language-out: train the romanizer on the speech of every
// language except the holdout, then evaluate the cascaded pipeline on all of
// them. De-romanization knowledge for the holdout comes from the backend
// (oracle or a Task-2-trained LM), mirroring text-only coverage.
inline ZeroShotResult zero_shot_protocol(
    const corpus::LanguageSet& langs, const std::string& holdout,
    const std::map<std::string, std::vector<romanizer::TrainItem>>& train_items,
    const std::vector<corpus::Utterance>& testset, const romanizer::RomanizerConfig& cfg,
    const romanizer::RomanizerTrainOpts& opts, bridge::Deromanizer& backend,
    const roman::RomanAlphabet& alphabet, const std::string& dominant = "") {
  if (!langs.has(holdout)) throw Error("holdout language not registered: " + holdout);

  std::vector<romanizer::TrainItem> seen_items;
  for (const auto& [lang, items] : train_items) {
    if (lang == holdout) continue;
    seen_items.insert(seen_items.end(), items.begin(), items.end());
  }

  ZeroShotResult res;
  res.holdout = holdout;
  res.model = romanizer::RomanizerModel<float>(cfg, alphabet, opts.seed);
  romanizer::train_romanizer(res.model, seen_items, opts);

  CascadedOpts copts;
  copts.dominant_lang = dominant;
  res.report = evaluate_cascaded(res.model, backend, testset, copts);
  res.report.seed = opts.seed;

  double seen_acc = 0;
  int seen_n = 0;
  for (auto& row : res.report.rows) {
    if (row.lang == holdout) {
      row.holdout = true;
      res.holdout_cer = row.cer;
    } else {
      seen_acc += row.cer;
      ++seen_n;
    }
  }
  res.seen_mean_cer = seen_n == 0 ? 0.0 : seen_acc / seen_n;
  return res;
}

// ------------------------------ error taxonomy -----------------------------

struct ErrorBreakdown {
  int mis_romanization = 0;  // predicted roman differs from ground truth
  int deromanization = 0;    // backend fails on the ground-truth roman
  int both = 0;
  int none = 0;
  int total() const { return mis_romanization + deromanization + both + none; }
};

template <class S>
ErrorBreakdown error_breakdown(const romanizer::RomanizerModel<S>& rom,
                               bridge::Deromanizer& backend,
                               const std::vector<corpus::Utterance>& testset) {
  ErrorBreakdown out;
  for (const auto& utt : testset) {
    const std::string pred_roman = rom.transcribe(utt.audio_feats, utt.video_feats);
    const bool mis = roman::normalize_text(pred_roman) != roman::normalize_text(utt.pair.roman);
    bool derom;
    try {
      derom = roman::normalize_text(backend.deromanize(utt.pair.roman, utt.lang)) !=
              roman::normalize_text(utt.pair.grapheme);
    } catch (const Error&) {
      derom = true;
    }
    if (mis && derom)
      ++out.both;
    else if (mis)
      ++out.mis_romanization;
    else if (derom)
      ++out.deromanization;
    else
      ++out.none;
  }
  return out;
}

}  // namespace zeroavsr::eval
