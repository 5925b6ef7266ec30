#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "zeroavsr/corpus.hpp"
#include "zeroavsr/lm.hpp"
#include "zeroavsr/nn.hpp"
#include "zeroavsr/romanizer.hpp"

namespace zeroavsr::bridge {

using json = nlohmann::json;

struct SequenceTooShort : Error {
  explicit SequenceTooShort(int t)
      : Error("compressor needs at least 2 frames, got " + std::to_string(t)) {}
};
struct WidthMismatch : Error {
  WidthMismatch(int got, int want)
      : Error("embedding width " + std::to_string(got) + ", LM expects " + std::to_string(want)) {}
};
struct BackendTimeout : Error {
  explicit BackendTimeout(const std::string& msg) : Error("backend timeout: " + msg) {}
};
struct BackendRefusal : Error {
  explicit BackendRefusal(const std::string& msg) : Error("backend refusal: " + msg) {}
};
struct BackendUnreachable : Error {
  explicit BackendUnreachable(const std::string& msg) : Error("backend unreachable: " + msg) {}
};
using lm::UnknownLanguage;

// Stride-2 kernel-2 1-D convolution halving the temporal resolution:
// out[t] = gelu(W_c . concat(x[2t], x[2t+1]) + b). No padding; an odd final
// frame is dropped.
template <class S>
struct LengthCompressor {
  nn::Linear<S> proj;  // 2D -> D
  int d = 0;

  LengthCompressor() = default;
  LengthCompressor(int d_model, uint64_t seed) : d(d_model) {
    Rng rng(seed ^ 0x636f6d70ULL);
    proj = nn::Linear<S>("compressor", 2 * d_model, d_model, rng);
  }

  int apply(nn::Tape<S>& tape, int x) {
    if (tape.val(x).rows < 2) throw SequenceTooShort(tape.val(x).rows);
    return tape.gelu(proj.apply(tape, tape.pair_rows(x)));
  }
  Mat<S> apply_eval(const Mat<S>& x) {
    nn::Tape<S> tape;
    return tape.val(apply(tape, tape.constant(x)));
  }
  void collect(std::vector<nn::Param<S>*>& out) { proj.collect(out); }
};

template <class S>
Mat<S> compress(LengthCompressor<S>& comp, const Mat<S>& f_av) {
  return comp.apply_eval(f_av);
}

// Affine map from the romanizer width into the LM embedding space.
template <class S>
struct Adapter {
  nn::Linear<S> proj;

  Adapter() = default;
  Adapter(int d_in, int d_lm, uint64_t seed) {
    Rng rng(seed ^ 0x61646170ULL);
    proj = nn::Linear<S>("adapter", d_in, d_lm, rng);
  }
  int apply(nn::Tape<S>& tape, int x) { return proj.apply(tape, x); }
  Mat<S> apply_eval(const Mat<S>& x) {
    nn::Tape<S> tape;
    return tape.val(apply(tape, tape.constant(x)));
  }
  void collect(std::vector<nn::Param<S>*>& out) { proj.collect(out); }
};

// The trainable glue between a frozen romanizer and a frozen LM.
template <class S>
struct Bridge {
  LengthCompressor<S> compressor;
  Adapter<S> adapter;
  std::vector<nn::LayerLora<S>> lora;
  int lora_rank = 8;
  double lora_alpha = 16.0;

  Bridge() = default;
  Bridge(int d_av, lm::ToyLM<S>& lm, int rank, double alpha, uint64_t seed)
      : compressor(d_av, seed), adapter(d_av, lm.d_lm(), seed), lora_rank(rank),
        lora_alpha(alpha) {
    Rng rng(seed ^ 0x6c6f7261ULL);
    for (int l = 0; l < lm.cfg.n_layers; ++l) {
      nn::LayerLora<S> ll;
      const std::string p = "lora.layer" + std::to_string(l);
      ll.q = nn::LoraAdapter<S>(p + ".q", lm.d_lm(), lm.d_lm(), rank, alpha, rng);
      ll.v = nn::LoraAdapter<S>(p + ".v", lm.d_lm(), lm.d_lm(), rank, alpha, rng);
      lora.push_back(std::move(ll));
    }
  }

  std::vector<nn::Param<S>*> task1_params() {
    std::vector<nn::Param<S>*> out;
    compressor.collect(out);
    adapter.collect(out);
    for (auto& ll : lora) ll.collect(out);
    return out;
  }
  std::vector<nn::Param<S>*> lora_params() {
    std::vector<nn::Param<S>*> out;
    for (auto& ll : lora) ll.collect(out);
    return out;
  }

  // Eval-mode path from penultimate romanizer features to LM-space rows.
  Mat<S> av_to_embeds(const Mat<S>& f_av) {
    return adapter.apply_eval(compressor.apply_eval(f_av));
  }
};

// [embed(instruction); av_emb; embed(SEP)], positions assigned later by the
// LM over the whole concatenation.
template <class S>
int embed_multimodal_node(nn::Tape<S>& tape, lm::ToyLM<S>& lm, int av_emb,
                          const std::vector<int>& instruction) {
  if (tape.val(av_emb).cols != lm.d_lm())
    throw WidthMismatch(tape.val(av_emb).cols, lm.d_lm());
  const int sep = lm.embed_tokens(tape, {lm::LmVocab::sep()});
  if (instruction.empty()) return tape.concat_rows({av_emb, sep});
  const int instr = lm.embed_tokens(tape, instruction);
  return tape.concat_rows({instr, av_emb, sep});
}

template <class S>
Mat<S> embed_multimodal(lm::ToyLM<S>& lm, const Mat<S>& av_emb,
                        const std::vector<int>& instruction) {
  nn::Tape<S> tape;
  return tape.val(embed_multimodal_node(tape, lm, tape.constant(av_emb), instruction));
}

// Instruction for the unified path: [BOS, LANG].
template <class S>
std::vector<int> unified_instruction_tokens(const lm::ToyLM<S>& lm, const std::string& lang) {
  return {lm::LmVocab::bos(), lm.vocab.lang_token(lang)};
}

// Prompt template v1 for chat backends (documented verbatim in the README;
// the sentinel markers make replies machine-parsable).
inline std::string build_prompt(const std::string& roman, const std::string& target_lang,
                                const std::vector<std::string>& registered,
                                const std::string& sentinel_open = "<transcript>",
                                const std::string& sentinel_close = "</transcript>") {
  bool known = false;
  for (const auto& l : registered)
    if (l == target_lang) known = true;
  if (!known) throw UnknownLanguage(target_lang);
  return "Convert the following romanized text back into the original script of language " +
         target_lang + ". Reply with only the transcription between " + sentinel_open + " and " +
         sentinel_close + ". Romanized text: " + roman;
}

// ---------------------------- response cache -------------------------------

inline std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(size_t(len) * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

// Append-only JSON-lines cache {key, response, timestamp, check}. The check
// field detects torn lines from concurrent writers; bad lines are skipped on
// load. Keys are SHA-256 of the request body.
class ResponseCache {
 public:
  ResponseCache() = default;
  explicit ResponseCache(const std::filesystem::path& path) : path_(path) {
    if (path_.empty() || !std::filesystem::exists(path_)) return;
    std::ifstream in(path_, std::ios::binary);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        json j = json::parse(line);
        const std::string key = j.at("key").get<std::string>();
        const std::string response = j.at("response").get<std::string>();
        const std::string ts = j.at("timestamp").get<std::string>();
        if (j.at("check").get<std::string>() != line_check(key, response, ts)) continue;
        entries_[key] = response;
      } catch (const json::exception&) {
        continue;  // torn or foreign line
      }
    }
  }

  bool enabled() const { return !path_.empty(); }
  size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return entries_.size();
  }

  bool lookup(const std::string& key, std::string* response) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return false;
    *response = it->second;
    return true;
  }

  void insert(const std::string& key, const std::string& response) {
    std::lock_guard<std::mutex> lock(mu_);
    entries_[key] = response;
    if (path_.empty()) return;
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    const std::string ts =
        std::to_string(std::chrono::duration_cast<std::chrono::milliseconds>(now).count());
    json j{{"key", key}, {"response", response}, {"timestamp", ts},
           {"check", line_check(key, response, ts)}};
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    out << j.dump() << "\n";
  }

 private:
  static std::string line_check(const std::string& key, const std::string& response,
                                const std::string& ts) {
    return sha256_hex(key + "\x1f" + response + "\x1f" + ts).substr(0, 16);
  }

  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, std::string> entries_;
};

// ------------------------------- backends ---------------------------------

// Pluggable de-romanizer. Exactly one backend kind is active per instance.
class Deromanizer {
 public:
  virtual ~Deromanizer() = default;
  virtual std::string deromanize(const std::string& roman, const std::string& lang) = 0;
  virtual std::string kind_name() const = 0;
};

// Lexicon oracle over the synthetic language registry.
class OracleBackend : public Deromanizer {
 public:
  explicit OracleBackend(const corpus::LanguageSet* langs) : langs_(langs) {}
  std::string deromanize(const std::string& roman, const std::string& lang) override {
    if (!langs_->has(lang)) throw UnknownLanguage(lang);
    return corpus::deromanize_oracle(roman, langs_->by_code(lang));
  }
  std::string kind_name() const override { return "lexicon-oracle"; }

 private:
  const corpus::LanguageSet* langs_;
};

// Greedy/beamed decode of the toy LM on a SEP-delimited text prompt.
template <class S>
class ToyLmBackend : public Deromanizer {
 public:
  ToyLmBackend(lm::ToyLM<S>* model, std::vector<nn::LayerLora<S>>* lora, int beam_width = 1,
               double temperature = 1.0, int max_len = 160)
      : model_(model), lora_(lora), beam_(beam_width), temp_(temperature), max_len_(max_len) {}

  std::string deromanize(const std::string& roman, const std::string& lang) override {
    const std::vector<int> ids = lm::derom_prompt_tokens(*model_, roman, lang);
    nn::Tape<S> tape;
    const Mat<S> embeds = tape.val(model_->embed_tokens(tape, ids));
    return lm::generate(*model_, embeds, beam_, temp_, max_len_, lora_).text;
  }
  std::string kind_name() const override { return "toy-lm"; }

 private:
  lm::ToyLM<S>* model_;
  std::vector<nn::LayerLora<S>>* lora_;
  int beam_;
  double temp_;
  int max_len_;
};

struct RemoteSettings {
  std::string endpoint;  // scheme://host[:port]
  std::string path = "/v1/chat/completions";
  std::string model = "gpt-4o-mini";
  std::string api_key_env = "ZEROAVSR_API_KEY";
  double temperature = 0.0;
  int timeout_s = 30;
  int max_retries = 3;
  double backoff_s = 0.5;
  int max_in_flight = 4;
  std::string cache_path;
  std::string sentinel_open = "<transcript>";
  std::string sentinel_close = "</transcript>";
};

// Chat-completion client: JSON request {model, messages, temperature}, bounded
// retries with exponential backoff, disk cache keyed by request-body hash so
// reruns are free and deterministic. The transport is injected so tests can
// run without a network; the CLI wires in an HTTP(S) client.
class RemoteBackend : public Deromanizer {
 public:
  // send(body) -> response body; throws BackendTimeout/BackendUnreachable.
  using Transport = std::function<std::string(const std::string& body)>;

  RemoteBackend(RemoteSettings settings, std::vector<std::string> registered_langs,
                Transport transport)
      : settings_(std::move(settings)),
        langs_(std::move(registered_langs)),
        transport_(std::move(transport)),
        cache_(settings_.cache_path) {}

  const ResponseCache& cache() const { return cache_; }

  std::string deromanize(const std::string& roman, const std::string& lang) override {
    const std::string prompt =
        build_prompt(roman, lang, langs_, settings_.sentinel_open, settings_.sentinel_close);
    json req{{"model", settings_.model},
             {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})},
             {"temperature", settings_.temperature}};
    const std::string body = req.dump();
    const std::string key = sha256_hex(body);

    std::string response;
    if (!cache_.lookup(key, &response)) {
      response = send_with_retries(body);
      cache_.insert(key, response);
    }
    return parse_reply(response);
  }
  std::string kind_name() const override { return "remote-chat"; }

 private:
  std::string send_with_retries(const std::string& body) {
    std::string last_error;
    for (int attempt = 0; attempt <= settings_.max_retries; ++attempt) {
      if (attempt > 0) {
        const double delay = settings_.backoff_s * double(1 << (attempt - 1));
        std::this_thread::sleep_for(std::chrono::duration<double>(delay));
      }
      try {
        return transport_(body);
      } catch (const BackendTimeout& e) {
        last_error = e.what();
      } catch (const BackendUnreachable& e) {
        last_error = e.what();
        if (attempt == settings_.max_retries) throw;
      }
    }
    throw BackendTimeout(last_error);
  }

  std::string parse_reply(const std::string& response) const {
    std::string content;
    try {
      json j = json::parse(response);
      content = j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
      throw BackendRefusal(std::string("unparsable reply: ") + e.what());
    }
    const size_t open = content.find(settings_.sentinel_open);
    if (open == std::string::npos) throw BackendRefusal("reply lacks opening sentinel");
    const size_t start = open + settings_.sentinel_open.size();
    const size_t close = content.find(settings_.sentinel_close, start);
    if (close == std::string::npos) throw BackendRefusal("reply lacks closing sentinel");
    return content.substr(start, close - start);
  }

  RemoteSettings settings_;
  std::vector<std::string> langs_;
  Transport transport_;
  ResponseCache cache_;
};

inline std::string deromanize(Deromanizer& backend, const std::string& roman,
                              const std::string& lang) {
  return backend.deromanize(roman, lang);
}

// ------------------------ unified-path transcription -----------------------

template <class S>
std::string unified_transcribe(const romanizer::RomanizerModel<S>& rom, Bridge<S>& bridge,
                               lm::ToyLM<S>& lm_model, const Mat<float>& audio,
                               const Mat<float>& video, const std::string& lang,
                               romanizer::Modality modality = romanizer::Modality::AudioVisual,
                               int beam_width = 2, double temperature = 0.3,
                               int max_len = 160) {
  const Mat<S> f_av =
      rom.encode_eval(audio.template cast<S>(), video.template cast<S>(), modality);
  if (f_av.rows < 2) return "";
  const Mat<S> av_emb = bridge.av_to_embeds(f_av);
  const Mat<S> embeds =
      embed_multimodal(lm_model, av_emb, unified_instruction_tokens(lm_model, lang));
  return lm::generate(lm_model, embeds, beam_width, temperature, max_len, &bridge.lora).text;
}

}  // namespace zeroavsr::bridge
