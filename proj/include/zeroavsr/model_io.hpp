#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "zeroavsr/bridge.hpp"
#include "zeroavsr/checkpoint.hpp"
#include "zeroavsr/lm.hpp"
#include "zeroavsr/romanizer.hpp"

namespace zeroavsr::ckpt {

// -------------------------------- romanizer --------------------------------

inline json romanizer_config_json(const romanizer::RomanizerConfig& c) {
  return json{{"d_model", c.d_model},       {"n_layers", c.n_layers},
              {"n_heads", c.n_heads},       {"d_ffn", c.d_ffn},
              {"d_audio_in", c.d_audio_in}, {"d_video_in", c.d_video_in},
              {"dropout", c.dropout},       {"use_positions", c.use_positions}};
}

inline romanizer::RomanizerConfig romanizer_config_from_json(const json& j) {
  romanizer::RomanizerConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ffn = j.at("d_ffn").get<int>();
  c.d_audio_in = j.at("d_audio_in").get<int>();
  c.d_video_in = j.at("d_video_in").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.use_positions = j.at("use_positions").get<bool>();
  return c;
}

inline void save_romanizer(const std::filesystem::path& path,
                           romanizer::RomanizerModel<float>& model) {
  json meta;
  meta["config"] = romanizer_config_json(model.cfg);
  meta["alphabet"] = model.alphabet.tokens_string();
  std::vector<std::pair<std::string, const Mat<float>*>> tensors;
  auto params = model.params();
  add_params(tensors, params);
  save(path, "romanizer", meta, tensors);
}

inline romanizer::RomanizerModel<float> load_romanizer(const std::filesystem::path& path) {
  const Checkpoint c = load(path);
  if (c.kind != "romanizer") throw Error("expected a romanizer checkpoint, got " + c.kind);
  const auto cfg = romanizer_config_from_json(c.meta.at("config"));
  roman::RomanAlphabet alphabet(utf8_decode(c.meta.at("alphabet").get<std::string>()));
  romanizer::RomanizerModel<float> model(cfg, alphabet, /*seed=*/0);
  auto params = model.params();
  restore_params(c, params);
  return model;
}

// --------------------------------- toy LM ----------------------------------

inline json lm_config_json(const lm::ToyLMConfig& c) {
  return json{{"d_model", c.d_model}, {"n_layers", c.n_layers}, {"n_heads", c.n_heads},
              {"d_ffn", c.d_ffn},     {"dropout", c.dropout},   {"tied_head", c.tied_head}};
}

inline lm::ToyLMConfig lm_config_from_json(const json& j) {
  lm::ToyLMConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ffn = j.at("d_ffn").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.tied_head = j.at("tied_head").get<bool>();
  return c;
}

inline void save_toy_lm(const std::filesystem::path& path, lm::ToyLM<float>& model) {
  json meta;
  meta["config"] = lm_config_json(model.cfg);
  meta["vocab"] = model.vocab.names();
  std::vector<std::pair<std::string, const Mat<float>*>> tensors;
  auto params = model.params();
  add_params(tensors, params);
  save(path, "toy_lm", meta, tensors);
}

inline lm::ToyLM<float> load_toy_lm(const std::filesystem::path& path) {
  const Checkpoint c = load(path);
  if (c.kind != "toy_lm") throw Error("expected a toy_lm checkpoint, got " + c.kind);
  const auto cfg = lm_config_from_json(c.meta.at("config"));
  auto vocab = lm::LmVocab::from_names(c.meta.at("vocab").get<std::vector<std::string>>());
  lm::ToyLM<float> model(cfg, std::move(vocab), /*seed=*/0);
  auto params = model.params();
  restore_params(c, params);
  return model;
}

// --------------------------------- bridge ----------------------------------

inline void save_bridge(const std::filesystem::path& path, bridge::Bridge<float>& b, int d_av,
                        int d_lm) {
  json meta;
  meta["lora_rank"] = b.lora_rank;
  meta["lora_alpha"] = b.lora_alpha;
  meta["n_layers"] = int(b.lora.size());
  meta["d_av"] = d_av;
  meta["d_lm"] = d_lm;
  std::vector<std::pair<std::string, const Mat<float>*>> tensors;
  auto params = b.task1_params();
  add_params(tensors, params);
  save(path, "bridge", meta, tensors);
}

inline bridge::Bridge<float> load_bridge(const std::filesystem::path& path,
                                         lm::ToyLM<float>& lm_model) {
  const Checkpoint c = load(path);
  if (c.kind != "bridge") throw Error("expected a bridge checkpoint, got " + c.kind);
  if (c.meta.at("n_layers").get<int>() != lm_model.cfg.n_layers ||
      c.meta.at("d_lm").get<int>() != lm_model.d_lm())
    throw Error("bridge checkpoint does not match the LM architecture");
  bridge::Bridge<float> b(c.meta.at("d_av").get<int>(), lm_model,
                          c.meta.at("lora_rank").get<int>(),
                          c.meta.at("lora_alpha").get<double>(), /*seed=*/0);
  auto params = b.task1_params();
  restore_params(c, params);
  return b;
}

}  // namespace zeroavsr::ckpt
