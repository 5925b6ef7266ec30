#include <catch2/catch_amalgamated.hpp>

#include "zeroavsr/eval.hpp"

using namespace zeroavsr;
using namespace zeroavsr::eval;

namespace {

corpus::LanguageSet make_langs(int n) {
  corpus::GenParams p;
  p.n_graphemes = 6;
  p.lexicon_size = 24;
  p.word_len_max = 3;
  corpus::LanguageSet set;
  for (uint64_t s = 1; s <= uint64_t(n); ++s)
    set.languages.push_back(corpus::gen_language(s, p, roman::RomanAlphabet::basic()));
  return set;
}

romanizer::RomanizerModel<float> tiny_rom(uint64_t seed = 3) {
  romanizer::RomanizerConfig c;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ffn = 16;
  c.d_audio_in = 16;
  c.d_video_in = 16;
  c.dropout = 0.0;
  return romanizer::RomanizerModel<float>(c, roman::RomanAlphabet::basic(), seed);
}

// Backend that returns the roman text untouched; reduces the cascaded
// pipeline to romanizer-only scoring.
struct IdentityBackend : bridge::Deromanizer {
  std::string deromanize(const std::string& roman, const std::string&) override {
    return roman;
  }
  std::string kind_name() const override { return "identity"; }
};

struct FailingBackend : bridge::Deromanizer {
  std::string fail_lang;
  explicit FailingBackend(std::string l) : fail_lang(std::move(l)) {}
  std::string deromanize(const std::string& roman, const std::string& lang) override {
    if (lang == fail_lang) throw bridge::BackendTimeout("injected");
    return roman;
  }
  std::string kind_name() const override { return "failing"; }
};

}  // namespace

TEST_CASE("report aggregates recompute from per-language rows") {
  EvalReport rep;
  rep.rows = {{"aaa", 10, 0.10, 0.20, 0, false},
              {"bbb", 10, 0.30, 0.40, 0, false},
              {"eng", 10, 0.02, 0.04, 0, false}};
  rep.dominant_lang = "eng";
  REQUIRE(rep.avg_cer() == Catch::Approx((0.10 + 0.30 + 0.02) / 3));
  REQUIRE(rep.avg_cer(false) == Catch::Approx((0.10 + 0.30) / 2));
  REQUIRE(rep.avg_wer(false) == Catch::Approx((0.20 + 0.40) / 2));

  const std::string csv = rep.to_csv();
  REQUIRE(csv.find("lang,n_utts,cer,wer,failures,holdout") == 0);
  REQUIRE(csv.find("avg_wo_eng") != std::string::npos);
  REQUIRE(rep.to_text().find("avg-eng") != std::string::npos);
}

TEST_CASE("cascaded evaluation with an identity backend reduces to romanizer CER") {
  const auto langs = make_langs(2);
  const auto rom = tiny_rom();
  std::vector<corpus::Utterance> testset;
  for (const auto& l : langs.languages)
    for (int i = 0; i < 4; ++i) {
      auto utt = corpus::gen_utterance(l, 1, 0.1, uint64_t(i));
      utt.pair.grapheme = utt.pair.roman;  // references are roman text
      testset.push_back(std::move(utt));
    }

  IdentityBackend backend;
  const EvalReport rep = evaluate_cascaded(rom, backend, testset);
  REQUIRE(rep.backend_kind == "identity");

  // Recompute romanizer-only rates by hand.
  std::map<std::string, std::pair<int64_t, int64_t>> acc;
  for (const auto& utt : testset) {
    const std::string hyp =
        roman::normalize_text(rom.transcribe(utt.audio_feats, utt.video_feats));
    const auto ref = utf8_decode(roman::normalize_text(utt.pair.roman));
    acc[utt.lang].first += int64_t(roman::edit_distance(utf8_decode(hyp), ref));
    acc[utt.lang].second += int64_t(ref.size());
  }
  for (const auto& row : rep.rows) {
    const auto& [dist, len] = acc[row.lang];
    REQUIRE(row.cer == Catch::Approx(double(dist) / double(len)));
    REQUIRE(row.n_utts == 4);
  }
}

TEST_CASE("backend failures are excluded from rates but counted") {
  const auto langs = make_langs(2);
  const auto rom = tiny_rom();
  std::vector<corpus::Utterance> testset;
  for (const auto& l : langs.languages)
    for (int i = 0; i < 3; ++i) testset.push_back(corpus::gen_utterance(l, 1, 0.1, uint64_t(i)));

  FailingBackend backend(langs.languages[0].lang);
  const EvalReport rep = evaluate_cascaded(rom, backend, testset);
  const LangRow* failed = rep.row(langs.languages[0].lang);
  REQUIRE(failed != nullptr);
  REQUIRE(failed->failures == 3);
  REQUIRE(failed->n_utts == 0);
  const LangRow* ok = rep.row(langs.languages[1].lang);
  REQUIRE(ok->failures == 0);
  REQUIRE(ok->n_utts == 3);
}

TEST_CASE("reconstruction test: oracle/oracle is exact, corruption shows up") {
  const auto langs = make_langs(3);
  std::vector<roman::TextPair> pairs;
  Rng rng(5);
  for (const auto& l : langs.languages)
    for (int i = 0; i < 20; ++i) {
      std::string g = l.lexicon[size_t(rng.next_u64() % l.lexicon.size())];
      if (rng.bernoulli(0.5)) g += " " + l.lexicon[size_t(rng.next_u64() % l.lexicon.size())];
      pairs.push_back({g, corpus::romanize(g, l), l.lang});
    }

  const TextFn romanize_fn = [&](const std::string& text, const std::string& lang) {
    return corpus::romanize(text, langs.by_code(lang));
  };
  const TextFn derom_fn = [&](const std::string& text, const std::string& lang) {
    return corpus::deromanize_oracle(text, langs.by_code(lang));
  };

  const EvalReport clean = reconstruction_test(pairs, romanize_fn, derom_fn);
  REQUIRE(clean.rows.size() == 3);
  for (const auto& row : clean.rows) REQUIRE(row.cer == 0.0);

  // Corrupt ~10% of roman characters before de-romanization.
  Rng crng(6);
  const TextFn corrupting = [&](const std::string& text, const std::string& lang) {
    std::string roman = corpus::romanize(text, langs.by_code(lang));
    for (auto& ch : roman)
      if (ch != ' ' && crng.bernoulli(0.10)) ch = ch == 'a' ? 'b' : 'a';
    return roman;
  };
  const EvalReport corrupted = reconstruction_test(pairs, corrupting, derom_fn);
  REQUIRE(corrupted.avg_cer() > 0.0);
}

TEST_CASE("noise sweep emits one row per (snr, modality) grid point") {
  const auto langs = make_langs(1);
  const auto rom = tiny_rom();
  std::vector<corpus::Utterance> testset;
  for (int i = 0; i < 3; ++i)
    testset.push_back(corpus::gen_utterance(langs.languages[0], 1, 0.1, uint64_t(i)));

  IdentityBackend backend;
  const auto system = cascaded_system(rom, backend);
  const auto rows = noise_sweep(system, testset, frontend::NoiseKind::White, {-5, 0, 5},
                                {Modality::AudioVisual, Modality::AudioOnly}, 7);
  REQUIRE(rows.size() == 6);
  REQUIRE(rows[0].snr_db == -5);
  REQUIRE(rows[0].modality == Modality::AudioVisual);
  REQUIRE(rows[1].modality == Modality::AudioOnly);
  const std::string csv = sweep_to_csv(rows);
  REQUIRE(csv.find("snr_db,modality,cer,wer") == 0);
  REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 7);
}

TEST_CASE("zero-shot protocol flags the holdout row and excludes it from the seen mean") {
  const auto langs = make_langs(3);
  const std::string holdout = langs.languages[2].lang;

  std::map<std::string, std::vector<romanizer::TrainItem>> train_items;
  std::vector<corpus::Utterance> testset;
  for (const auto& l : langs.languages) {
    for (int i = 0; i < 4; ++i) {
      const auto utt = corpus::gen_utterance(l, 1, 0.1, uint64_t(100 + i));
      romanizer::TrainItem item;
      item.audio = utt.audio_feats;
      item.video = utt.video_feats;
      item.target = roman::tokenize_roman(utt.pair.roman, roman::RomanAlphabet::basic());
      train_items[l.lang].push_back(std::move(item));
      testset.push_back(utt);
    }
  }

  romanizer::RomanizerConfig cfg;
  cfg.d_model = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ffn = 16;
  cfg.d_audio_in = 16;
  cfg.d_video_in = 16;
  romanizer::RomanizerTrainOpts opts;
  opts.steps = 3;
  opts.batch_size = 2;
  opts.seed = 9;
  opts.schedule.warmup_steps = 2;
  opts.schedule.hold_steps = 1;
  opts.schedule.decay_steps = 1;

  bridge::OracleBackend backend(&langs);
  const ZeroShotResult res = zero_shot_protocol(langs, holdout, train_items, testset, cfg, opts,
                                                backend, roman::RomanAlphabet::basic());
  REQUIRE(res.holdout == holdout);
  int flagged = 0;
  double seen_sum = 0;
  int seen_n = 0;
  for (const auto& row : res.report.rows) {
    if (row.holdout) {
      ++flagged;
      REQUIRE(row.lang == holdout);
      REQUIRE(row.cer == res.holdout_cer);
    } else {
      seen_sum += row.cer;
      ++seen_n;
    }
  }
  REQUIRE(flagged == 1);
  REQUIRE(res.seen_mean_cer == Catch::Approx(seen_sum / seen_n));
  REQUIRE(res.report.avg_cer(true, false) == Catch::Approx(res.seen_mean_cer));

  REQUIRE_THROWS(zero_shot_protocol(langs, "nope", train_items, testset, cfg, opts, backend,
                                    roman::RomanAlphabet::basic()));
}

TEST_CASE("error breakdown separates romanizer and de-romanizer failures") {
  const auto langs = make_langs(2);
  const auto rom = tiny_rom();
  std::vector<corpus::Utterance> testset;
  for (const auto& l : langs.languages)
    for (int i = 0; i < 3; ++i) testset.push_back(corpus::gen_utterance(l, 1, 0.1, uint64_t(i)));

  // Oracle backend never fails on ground-truth roman on synthetic data.
  bridge::OracleBackend oracle(&langs);
  const ErrorBreakdown with_oracle = error_breakdown(rom, oracle, testset);
  REQUIRE(with_oracle.deromanization == 0);
  REQUIRE(with_oracle.total() == int(testset.size()));

  // Inject a perfect romanizer by rewriting ground truth to the prediction:
  // mis-romanization must then be zero everywhere.
  std::vector<corpus::Utterance> injected = testset;
  for (auto& utt : injected)
    utt.pair.roman = rom.transcribe(utt.audio_feats, utt.video_feats);
  const ErrorBreakdown perfect_rom = error_breakdown(rom, oracle, injected);
  REQUIRE(perfect_rom.mis_romanization == 0);
  REQUIRE(perfect_rom.both == 0);
}

TEST_CASE("bounded_parallel_for covers every index exactly once") {
  std::vector<std::atomic<int>> counts(100);
  bounded_parallel_for(100, 4, [&](size_t i) { counts[i].fetch_add(1); });
  for (const auto& c : counts) REQUIRE(c.load() == 1);
}
