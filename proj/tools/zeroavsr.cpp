// zeroavsr: corpus generation, romanizer/LM/bridge training and evaluation
// for the zero-shot audio-visual speech recognition pipeline.
//
// Every command takes --config FILE --seed N --out DIR [--set key=value ...],
// writes the resolved config into the output directory before doing any work,
// and is rerun-stable: identical inputs and seed produce byte-identical
// outputs (live remote-backend calls excepted unless served from cache).
//
// Exit codes: 0 ok, 2 config error, 3 diverged loss, 4 backend unreachable.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "zeroavsr/eval.hpp"
#include "zeroavsr/http_transport.hpp"
#include "zeroavsr/model_io.hpp"
#include "zeroavsr/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace zeroavsr;
using pipeline::ConfigError;
using pipeline::get_or;
using pipeline::require;

namespace {

struct RunConfig {
  std::string config_path;
  uint64_t seed = 1;
  std::string out_dir;
  std::vector<std::string> overrides;
  json cfg;

  void resolve(const std::string& command) {
    cfg = pipeline::load_config_file(config_path);
    for (const auto& o : overrides) pipeline::apply_override(cfg, o);
    fs::create_directories(out_dir);
    json resolved = cfg;
    resolved["_run"] = {{"command", command}, {"seed", seed}};
    pipeline::write_text_file(fs::path(out_dir) / "config.resolved.json",
                              resolved.dump(2) + "\n");
  }
};

void add_common(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--config", rc.config_path, "JSON config file")->required();
  cmd->add_option("--seed", rc.seed, "run seed");
  cmd->add_option("--out", rc.out_dir, "output directory")->required();
  cmd->add_option("--set", rc.overrides, "dotted-key config overrides (key=value)");
}

std::vector<std::string> languages_or_all(const json& cfg, const std::string& key,
                                          const corpus::LanguageSet& langs) {
  auto listed = get_or<std::vector<std::string>>(cfg, key, {});
  if (listed.empty()) return langs.codes();
  for (const auto& l : listed)
    if (!langs.has(l)) throw ConfigError("unknown language '" + l + "' in " + key);
  return listed;
}

// ------------------------------- gen-corpus --------------------------------

int cmd_gen_corpus(RunConfig& rc) {
  const json& cfg = rc.cfg;
  pipeline::CorpusSpec spec;
  spec.n_languages = get_or(cfg, "n_languages", 5);
  spec.gen.n_graphemes = get_or(cfg, "n_graphemes", 12);
  spec.gen.d_audio = get_or(cfg, "d_audio", 16);
  spec.gen.d_video = get_or(cfg, "d_video", 16);
  spec.gen.lexicon_size = get_or(cfg, "lexicon_size", 200);
  if (cfg.contains("word_len")) {
    spec.gen.word_len_min = cfg.at("word_len").at(0).get<int>();
    spec.gen.word_len_max = cfg.at("word_len").at(1).get<int>();
  }
  if (cfg.contains("g2r_len")) {
    spec.gen.g2r_len_min = cfg.at("g2r_len").at(0).get<int>();
    spec.gen.g2r_len_max = cfg.at("g2r_len").at(1).get<int>();
  }
  spec.gen.phone_subset = get_or(cfg, "phone_subset", 16);
  if (cfg.contains("words_per_utt")) {
    spec.words_min = cfg.at("words_per_utt").at(0).get<int>();
    spec.words_max = cfg.at("words_per_utt").at(1).get<int>();
  }
  spec.noise_sigma = get_or(cfg, "noise_sigma", 0.25);
  spec.confidence_noise = get_or(cfg, "confidence_noise", 0.02);
  spec.confidence_threshold = get_or(cfg, "confidence_threshold", 0.0);
  if (cfg.contains("splits")) {
    spec.splits.clear();
    for (const auto& [name, count] : cfg.at("splits").items())
      spec.splits.emplace_back(name, count.get<int>());
    std::sort(spec.splits.begin(), spec.splits.end());
  }

  const auto langs = pipeline::generate_corpus(spec, rc.seed, rc.out_dir);
  std::printf("generated %zu languages into %s\n", langs.languages.size(), rc.out_dir.c_str());
  return 0;
}

// ----------------------------- training commands ---------------------------

romanizer::RomanizerConfig romanizer_config(const json& cfg, int d_audio, int d_video) {
  romanizer::RomanizerConfig c;
  const json m = cfg.contains("model") ? cfg.at("model") : json::object();
  c.d_model = get_or(m, "d_model", 64);
  c.n_layers = get_or(m, "n_layers", 4);
  c.n_heads = get_or(m, "n_heads", 4);
  c.d_ffn = get_or(m, "d_ffn", 256);
  c.dropout = get_or(m, "dropout", 0.1);
  c.use_positions = get_or(m, "use_positions", true);
  c.d_audio_in = d_audio;
  c.d_video_in = d_video;
  return c;
}

train::TriStageSchedule tri_stage_from(const json& cfg) {
  train::TriStageSchedule s;
  const json j = cfg.contains("schedule") ? cfg.at("schedule") : json::object();
  s.warmup_steps = get_or<int64_t>(j, "warmup", 10000);
  s.hold_steps = get_or<int64_t>(j, "hold", 40000);
  s.decay_steps = get_or<int64_t>(j, "decay", 50000);
  s.peak_lr = get_or(j, "peak_lr", 1e-4);
  s.init_scale = get_or(j, "init_scale", 0.01);
  s.final_scale = get_or(j, "final_scale", 0.01);
  const double scale = get_or(j, "scale", 1.0);
  s = s.scaled(scale);
  s.validate();
  return s;
}

train::CosineSchedule cosine_from(const json& cfg, int64_t default_total) {
  train::CosineSchedule s;
  const json j = cfg.contains("schedule") ? cfg.at("schedule") : json::object();
  s.warmup_steps = get_or<int64_t>(j, "warmup", 500);
  s.total_steps = get_or<int64_t>(j, "total", default_total);
  s.peak_lr = get_or(j, "peak_lr", 1e-4);
  s.validate();
  return s;
}

int cmd_train_romanizer(RunConfig& rc) {
  const json& cfg = rc.cfg;
  const fs::path corpus_dir = require<std::string>(cfg, "corpus_dir");
  const auto langs = corpus::LanguageSet::load(corpus_dir / "languages.json");
  const auto seen = languages_or_all(cfg, "languages", langs);
  const auto alphabet = roman::RomanAlphabet::basic();

  const auto utts = pipeline::load_utterances(corpus_dir, get_or<std::string>(cfg, "split", "train"), seen);
  if (utts.empty()) throw ConfigError("no training utterances for the selected languages");
  const auto items = pipeline::to_roman_train_items(utts, alphabet);

  romanizer::RomanizerModel<float> model(
      romanizer_config(cfg, utts[0].audio_feats.cols, utts[0].video_feats.cols), alphabet,
      rc.seed);

  romanizer::RomanizerTrainOpts opts;
  opts.steps = get_or<int64_t>(cfg, "steps", 1500);
  opts.batch_size = get_or(cfg, "batch_size", 8);
  opts.grad_accum = get_or(cfg, "grad_accum", 1);
  opts.seed = rc.seed;
  opts.log_interval = get_or(cfg, "log_interval", 50);
  opts.schedule = tri_stage_from(cfg);
  if (cfg.contains("noise")) {
    const json& n = cfg.at("noise");
    opts.noise.noise_prob = get_or(n, "prob", 0.25);
    opts.noise.snr_db = get_or(n, "snr_db", 0.0);
    opts.noise.modality_dropout_prob = get_or(n, "modality_dropout", 0.0);
  }

  const auto diag = romanizer::train_romanizer(model, items, opts);
  ckpt::save_romanizer(fs::path(rc.out_dir) / "romanizer.ckpt", model);
  pipeline::write_metrics_csv(fs::path(rc.out_dir) / "metrics.csv", diag.metrics);
  std::printf("romanizer trained: probe loss %.4f -> %.4f\n", diag.probe_loss_initial,
              diag.probe_loss_final);
  return 0;
}

int cmd_pretrain_lm(RunConfig& rc) {
  const json& cfg = rc.cfg;
  const fs::path corpus_dir = require<std::string>(cfg, "corpus_dir");
  const auto langs = corpus::LanguageSet::load(corpus_dir / "languages.json");
  const auto pairs = pipeline::load_text_pairs(
      corpus_dir, get_or<std::string>(cfg, "split", "train"), langs.codes());

  lm::ToyLMConfig c;
  const json m = cfg.contains("model") ? cfg.at("model") : json::object();
  c.d_model = get_or(m, "d_model", 64);
  c.n_layers = get_or(m, "n_layers", 4);
  c.n_heads = get_or(m, "n_heads", 4);
  c.d_ffn = get_or(m, "d_ffn", 256);
  c.dropout = get_or(m, "dropout", 0.0);
  c.tied_head = get_or(m, "tied_head", false);

  lm::ToyLM<float> model(c, lm::LmVocab(langs, roman::RomanAlphabet::basic()), rc.seed);
  lm::PretrainOpts opts;
  opts.steps = get_or<int64_t>(cfg, "steps", 800);
  opts.batch_size = get_or(cfg, "batch_size", 16);
  opts.seed = rc.seed;
  opts.log_interval = get_or(cfg, "log_interval", 50);
  opts.schedule = cosine_from(cfg, opts.steps);

  const auto metrics = lm::pretrain_toy_lm(model, pairs, opts);
  ckpt::save_toy_lm(fs::path(rc.out_dir) / "lm.ckpt", model);
  std::vector<romanizer::MetricsRow> rows;
  for (const auto& [step, loss] : metrics)
    rows.push_back({step, "pretrain", loss, opts.schedule.lr_at(step)});
  pipeline::write_metrics_csv(fs::path(rc.out_dir) / "metrics.csv", rows);
  std::printf("lm pretrained: final loss %.4f\n", metrics.back().second);
  return 0;
}

int cmd_train_bridge(RunConfig& rc) {
  const json& cfg = rc.cfg;
  const fs::path corpus_dir = require<std::string>(cfg, "corpus_dir");
  const auto langs = corpus::LanguageSet::load(corpus_dir / "languages.json");

  auto rom = ckpt::load_romanizer(require<std::string>(cfg, "romanizer_ckpt"));
  auto lm_model = ckpt::load_toy_lm(require<std::string>(cfg, "lm_ckpt"));

  const auto seen = require<std::vector<std::string>>(cfg, "seen_languages");
  for (const auto& l : seen)
    if (!langs.has(l)) throw ConfigError("unknown seen language '" + l + "'");
  // Languages whose speech feeds Task 1; overriding this beyond the seen set
  // is the "unseen leak" misconfiguration and is rejected before any step.
  const auto task1_langs = get_or<std::vector<std::string>>(cfg, "task1_languages", seen);

  const std::string split = get_or<std::string>(cfg, "split", "train");
  bridge::Bridge<float> br(rom.cfg.d_model, lm_model,
                           get_or(cfg.contains("lora") ? cfg.at("lora") : json::object(), "rank", 8),
                           get_or(cfg.contains("lora") ? cfg.at("lora") : json::object(), "alpha", 16.0),
                           rc.seed);

  train::BridgeTrainContext<float> ctx;
  ctx.rom = &rom;
  ctx.lm = &lm_model;
  ctx.bridge = &br;
  ctx.task1_items =
      pipeline::to_task1_items(pipeline::load_utterances(corpus_dir, split, task1_langs), lm_model);
  ctx.task2_pairs = pipeline::load_text_pairs(corpus_dir, split, langs.codes());
  ctx.seen_langs = seen;
  ctx.all_langs = langs.codes();
  ctx.batch_size = get_or(cfg, "batch_size", 8);
  ctx.grad_accum = get_or(cfg, "grad_accum", 1);
  const int64_t steps = get_or<int64_t>(cfg, "steps", 3000);
  ctx.schedule = cosine_from(cfg, steps);

  train::TrainState<float> state;
  state.rng.reseed(rc.seed ^ 0x627269646765ULL);
  const std::string state_path = (fs::path(rc.out_dir) / "bridge_state.ckpt").string();
  if (cfg.contains("resume")) {
    train::load_bridge_state(cfg.at("resume").get<std::string>(), ctx, state);
    std::printf("resumed bridge training at step %lld\n", static_cast<long long>(state.step));
  }

  const std::string mode = get_or<std::string>(cfg, "mode", "multitask");
  const int log_interval = get_or(cfg, "log_interval", 25);
  std::vector<romanizer::MetricsRow> metrics;
  if (mode == "multitask") {
    metrics = train::multitask_loop(ctx, state, get_or(cfg, "mix_ratio", 0.5), steps,
                                    log_interval, get_or<int64_t>(cfg, "checkpoint_every", 0),
                                    state_path);
  } else if (mode == "task1") {
    metrics = train::train_task1(ctx, state, steps, log_interval);
  } else if (mode == "task2") {
    metrics = train::train_task2(ctx, state, steps, log_interval);
  } else {
    throw ConfigError("mode must be multitask, task1 or task2");
  }

  train::save_bridge_state(state_path, ctx, state);
  ckpt::save_bridge(fs::path(rc.out_dir) / "bridge.ckpt", br, rom.cfg.d_model, lm_model.d_lm());
  pipeline::write_metrics_csv(fs::path(rc.out_dir) / "metrics.csv", metrics);
  std::printf("bridge trained for %lld steps (task1 ema %.4f, task2 ema %.4f)\n",
              static_cast<long long>(state.step), state.ema_task1, state.ema_task2);
  return 0;
}

// --------------------------------- eval ------------------------------------

std::unique_ptr<bridge::Deromanizer> make_backend(const json& cfg,
                                                  const corpus::LanguageSet& langs,
                                                  lm::ToyLM<float>* lm_model,
                                                  bridge::Bridge<float>* br) {
  const json b = cfg.contains("backend") ? cfg.at("backend") : json::object();
  const std::string kind = get_or<std::string>(b, "kind", "lexicon-oracle");
  if (kind == "lexicon-oracle") return std::make_unique<bridge::OracleBackend>(&langs);
  if (kind == "toy-lm") {
    if (!lm_model) throw ConfigError("toy-lm backend needs lm_ckpt");
    return std::make_unique<bridge::ToyLmBackend<float>>(
        lm_model, br ? &br->lora : nullptr, get_or(b, "beam_width", 1),
        get_or(b, "temperature", 1.0), get_or(b, "max_len", 160));
  }
  if (kind == "remote-chat") {
    bridge::RemoteSettings s;
    s.endpoint = require<std::string>(b, "endpoint");
    s.path = get_or<std::string>(b, "path", s.path);
    s.model = get_or<std::string>(b, "model", s.model);
    s.api_key_env = get_or<std::string>(b, "api_key_env", s.api_key_env);
    s.temperature = get_or(b, "temperature", 0.0);
    s.timeout_s = get_or(b, "timeout_s", 30);
    s.max_retries = get_or(b, "max_retries", 3);
    s.backoff_s = get_or(b, "backoff_s", 0.5);
    s.max_in_flight = get_or(b, "max_in_flight", 4);
    s.cache_path = get_or<std::string>(b, "cache_path", "");
    return std::make_unique<bridge::RemoteBackend>(s, langs.codes(),
                                                   bridge::make_http_transport(s));
  }
  throw ConfigError("backend kind must be lexicon-oracle, toy-lm or remote-chat");
}

romanizer::Modality modality_from(const std::string& name) {
  if (name == "AV") return romanizer::Modality::AudioVisual;
  if (name == "A") return romanizer::Modality::AudioOnly;
  if (name == "V") return romanizer::Modality::VideoOnly;
  throw ConfigError("modality must be AV, A or V");
}

frontend::NoiseKind noise_kind_from(const std::string& name) {
  if (name == "white") return frontend::NoiseKind::White;
  if (name == "pink") return frontend::NoiseKind::Pink;
  if (name == "competing") return frontend::NoiseKind::Competing;
  throw ConfigError("noise kind must be white, pink or competing");
}

int cmd_eval(RunConfig& rc) {
  const json& cfg = rc.cfg;
  const std::string mode = require<std::string>(cfg, "mode");
  const fs::path corpus_dir = require<std::string>(cfg, "corpus_dir");
  const auto langs = corpus::LanguageSet::load(corpus_dir / "languages.json");
  const auto eval_langs = languages_or_all(cfg, "languages", langs);
  const std::string split = get_or<std::string>(cfg, "split", "test");
  const std::string dominant = get_or<std::string>(cfg, "dominant_lang", "");
  const fs::path out_dir(rc.out_dir);

  std::optional<romanizer::RomanizerModel<float>> rom;
  if (cfg.contains("romanizer_ckpt"))
    rom = ckpt::load_romanizer(cfg.at("romanizer_ckpt").get<std::string>());
  std::optional<lm::ToyLM<float>> lm_model;
  if (cfg.contains("lm_ckpt")) lm_model = ckpt::load_toy_lm(cfg.at("lm_ckpt").get<std::string>());
  std::optional<bridge::Bridge<float>> br;
  if (cfg.contains("bridge_ckpt")) {
    if (!lm_model) throw ConfigError("bridge_ckpt needs lm_ckpt");
    br = ckpt::load_bridge(cfg.at("bridge_ckpt").get<std::string>(), *lm_model);
  }

  auto finish = [&](eval::EvalReport rep, const std::string& stem) {
    rep.config_hash = pipeline::config_hash(cfg);
    rep.seed = rc.seed;
    rep.dominant_lang = dominant;
    pipeline::write_text_file(out_dir / (stem + ".csv"), rep.to_csv());
    pipeline::write_text_file(out_dir / (stem + ".txt"), rep.to_text());
    std::printf("%s", rep.to_text().c_str());
    return 0;
  };

  if (mode == "cascaded") {
    if (!rom) throw ConfigError("cascaded eval needs romanizer_ckpt");
    auto backend = make_backend(cfg, langs, lm_model ? &*lm_model : nullptr,
                                br ? &*br : nullptr);
    const auto testset = pipeline::load_utterances(corpus_dir, split, eval_langs);
    eval::CascadedOpts opts;
    opts.dominant_lang = dominant;
    return finish(eval::evaluate_cascaded(*rom, *backend, testset, opts), "cascaded");
  }

  if (mode == "unified") {
    if (!rom || !lm_model || !br)
      throw ConfigError("unified eval needs romanizer_ckpt, lm_ckpt and bridge_ckpt");
    const auto testset = pipeline::load_utterances(corpus_dir, split, eval_langs);
    eval::UnifiedOpts opts;
    opts.dominant_lang = dominant;
    opts.beam_width = get_or(cfg, "beam_width", 2);
    opts.temperature = get_or(cfg, "temperature", 0.3);
    return finish(eval::evaluate_unified(*rom, *br, *lm_model, testset, opts), "unified");
  }

  if (mode == "reconstruction") {
    const auto pairs = pipeline::load_text_pairs(corpus_dir, split, eval_langs);
    auto backend = make_backend(cfg, langs, lm_model ? &*lm_model : nullptr,
                                br ? &*br : nullptr);
    const eval::TextFn romanize_fn = [&](const std::string& text, const std::string& lang) {
      return corpus::romanize(text, langs.by_code(lang));
    };
    const eval::TextFn derom_fn = [&](const std::string& text, const std::string& lang) {
      return backend->deromanize(text, lang);
    };
    return finish(eval::reconstruction_test(pairs, romanize_fn, derom_fn, dominant),
                  "reconstruction");
  }

  if (mode == "noise_sweep") {
    if (!rom) throw ConfigError("noise_sweep needs romanizer_ckpt");
    const auto testset = pipeline::load_utterances(corpus_dir, split, eval_langs);
    const json n = cfg.contains("noise") ? cfg.at("noise") : json::object();
    std::vector<double> snr_list = get_or<std::vector<double>>(n, "snr_list", {-5, 0, 5, 10, 15});
    std::vector<romanizer::Modality> modalities;
    for (const auto& m : get_or<std::vector<std::string>>(n, "modalities", {"AV", "A"}))
      modalities.push_back(modality_from(m));
    const auto kind = noise_kind_from(get_or<std::string>(n, "kind", "white"));

    auto backend = make_backend(cfg, langs, lm_model ? &*lm_model : nullptr,
                                br ? &*br : nullptr);
    eval::System system;
    if (get_or<std::string>(cfg, "system", "cascaded") == "unified") {
      if (!lm_model || !br) throw ConfigError("unified noise_sweep needs lm and bridge");
      system = eval::unified_system(*rom, *br, *lm_model, get_or(cfg, "beam_width", 2),
                                    get_or(cfg, "temperature", 0.3));
    } else {
      system = eval::cascaded_system(*rom, *backend);
    }
    const auto rows = eval::noise_sweep(system, testset, kind, snr_list, modalities, rc.seed);
    pipeline::write_text_file(out_dir / "noise_sweep.csv", eval::sweep_to_csv(rows));
    std::printf("%s", eval::sweep_to_csv(rows).c_str());
    return 0;
  }

  if (mode == "zero_shot") {
    const json z = cfg.contains("zero_shot") ? cfg.at("zero_shot") : json::object();
    const std::string holdout = require<std::string>(z, "holdout");
    std::vector<std::string> holdouts =
        holdout == "all" ? eval_langs : std::vector<std::string>{holdout};

    std::map<std::string, std::vector<romanizer::TrainItem>> train_items;
    const auto alphabet = roman::RomanAlphabet::basic();
    for (const auto& lang : eval_langs)
      train_items[lang] = pipeline::to_roman_train_items(
          pipeline::load_utterances(corpus_dir, get_or<std::string>(z, "train_split", "train"),
                                    {lang}),
          alphabet);
    const auto testset = pipeline::load_utterances(corpus_dir, split, eval_langs);

    romanizer::RomanizerTrainOpts opts;
    opts.steps = get_or<int64_t>(z, "steps", 1500);
    opts.batch_size = get_or(z, "batch_size", 8);
    opts.seed = rc.seed;
    opts.schedule = tri_stage_from(z);
    if (z.contains("noise")) {
      opts.noise.noise_prob = get_or(z.at("noise"), "prob", 0.25);
      opts.noise.modality_dropout_prob = get_or(z.at("noise"), "modality_dropout", 0.0);
    }
    const auto rom_cfg = romanizer_config(z, langs.languages[0].d_audio(),
                                          langs.languages[0].d_video());

    auto backend = make_backend(cfg, langs, lm_model ? &*lm_model : nullptr,
                                br ? &*br : nullptr);
    std::string matrix = "holdout,lang,n_utts,cer,wer,is_holdout\n";
    for (const auto& h : holdouts) {
      const auto res = eval::zero_shot_protocol(langs, h, train_items, testset, rom_cfg, opts,
                                                *backend, alphabet, dominant);
      char buf[160];
      for (const auto& row : res.report.rows) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%d,%.6f,%.6f,%d\n", h.c_str(), row.lang.c_str(),
                      row.n_utts, row.cer, row.wer, row.holdout ? 1 : 0);
        matrix += buf;
      }
      std::printf("holdout %s: zero-shot cer %.4f, seen mean %.4f\n", h.c_str(),
                  res.holdout_cer, res.seen_mean_cer);
    }
    pipeline::write_text_file(out_dir / "zero_shot.csv", matrix);
    return 0;
  }

  if (mode == "error_breakdown") {
    if (!rom) throw ConfigError("error_breakdown needs romanizer_ckpt");
    auto backend = make_backend(cfg, langs, lm_model ? &*lm_model : nullptr,
                                br ? &*br : nullptr);
    const auto testset = pipeline::load_utterances(corpus_dir, split, eval_langs);
    const auto counts = eval::error_breakdown(*rom, *backend, testset);
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "category,count\nmis_romanization,%d\nderomanization,%d\nboth,%d\nnone,%d\n",
                  counts.mis_romanization, counts.deromanization, counts.both, counts.none);
    pipeline::write_text_file(out_dir / "error_breakdown.csv", buf);
    std::printf("%s", buf);
    return 0;
  }

  throw ConfigError("unknown eval mode '" + mode + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"zero-shot audio-visual speech recognition toolkit"};
  app.require_subcommand(1);

  RunConfig rc;
  struct Cmd {
    const char* name;
    const char* help;
    int (*fn)(RunConfig&);
  };
  const Cmd commands[] = {
      {"gen-corpus", "generate a synthetic multilingual corpus", cmd_gen_corpus},
      {"train-romanizer", "train the audio-visual romanizer with CTC", cmd_train_romanizer},
      {"pretrain-lm", "pretrain the toy language model on text", cmd_pretrain_lm},
      {"train-bridge", "train the LM bridge (LoRA + compressor + adapter)", cmd_train_bridge},
      {"eval", "run an evaluation mode", cmd_eval},
  };
  std::map<std::string, int (*)(RunConfig&)> dispatch;
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    add_common(sub, rc);
    dispatch[c.name] = c.fn;
  }

  CLI11_PARSE(app, argc, argv);
  const std::string name = app.get_subcommands().front()->get_name();

  try {
    rc.resolve(name);
    return dispatch[name](rc);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const train::SeenLanguageViolation& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const lm::MissingLanguage& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const lm::UnknownLanguage& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const romanizer::DivergedLoss& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return 3;
  } catch (const lm::DivergedLoss& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return 3;
  } catch (const bridge::BackendUnreachable& e) {
    std::fprintf(stderr, "backend unreachable: %s\n", e.what());
    return 4;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
