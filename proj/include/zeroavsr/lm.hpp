#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "zeroavsr/autograd.hpp"
#include "zeroavsr/common.hpp"
#include "zeroavsr/corpus.hpp"
#include "zeroavsr/nn.hpp"
#include "zeroavsr/roman.hpp"
#include "zeroavsr/schedule.hpp"

namespace zeroavsr::lm {

struct UnknownLanguage : Error {
  explicit UnknownLanguage(const std::string& code) : Error("unknown language: " + code) {}
};
struct MissingLanguage : Error {
  explicit MissingLanguage(const std::string& code)
      : Error("corpus does not cover language: " + code) {}
};
struct EmptyTarget : Error {
  EmptyTarget() : Error("lm loss needs at least one target token") {}
};
struct DivergedLoss : Error {
  explicit DivergedLoss(int64_t step)
      : Error("lm training diverged (non-finite loss) at step " + std::to_string(step)) {}
};

// Character-level joint vocabulary: control tokens, the roman alphabet, one
// tag token per registered language, and the grapheme inventory of every
// language. Grapheme blocks are disjoint across languages by construction,
// so a single codepoint map covers both scripts.
class LmVocab {
 public:
  LmVocab() = default;
  LmVocab(const corpus::LanguageSet& langs, const roman::RomanAlphabet& alphabet) {
    names_ = {"<bos>", "<eos>", "<sep>"};
    for (int id = 1; id <= alphabet.size(); ++id) add_char(alphabet.token(id));
    for (const auto& l : langs.languages) {
      lang_ids_[l.lang] = int(names_.size());
      names_.push_back("<lang:" + l.lang + ">");
    }
    for (const auto& l : langs.languages)
      for (uint32_t g : l.graphemes) add_char(g);
  }

  static constexpr int bos() { return 0; }
  static constexpr int eos() { return 1; }
  static constexpr int sep() { return 2; }
  int size() const { return int(names_.size()); }

  int lang_token(const std::string& code) const {
    auto it = lang_ids_.find(code);
    if (it == lang_ids_.end()) throw UnknownLanguage(code);
    return it->second;
  }
  bool has_lang(const std::string& code) const { return lang_ids_.count(code) != 0; }
  std::vector<std::string> langs() const {
    std::vector<std::string> out;
    for (const auto& [code, _] : lang_ids_) out.push_back(code);
    return out;
  }

  int char_token(uint32_t cp) const {
    auto it = char_ids_.find(cp);
    if (it == char_ids_.end()) throw Error("codepoint not in LM vocabulary");
    return it->second;
  }
  std::vector<int> encode_text(const std::string& s) const {
    std::vector<int> out;
    for (uint32_t cp : utf8_decode(s)) out.push_back(char_token(cp));
    return out;
  }
  std::string decode_text(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
      auto it = chars_.find(id);
      if (it != chars_.end()) utf8_append(out, it->second);
    }
    return out;
  }

  const std::vector<std::string>& names() const { return names_; }

  // Rebuild from a serialized name list (checkpoint header).
  static LmVocab from_names(const std::vector<std::string>& names) {
    LmVocab v;
    if (names.size() < 3 || names[0] != "<bos>" || names[1] != "<eos>" || names[2] != "<sep>")
      throw Error("malformed LM vocabulary name list");
    v.names_ = {"<bos>", "<eos>", "<sep>"};
    for (size_t i = 3; i < names.size(); ++i) {
      const std::string& n = names[i];
      if (n.rfind("<lang:", 0) == 0 && n.back() == '>') {
        v.lang_ids_[n.substr(6, n.size() - 7)] = int(v.names_.size());
        v.names_.push_back(n);
      } else {
        const auto cps = utf8_decode(n);
        if (cps.size() != 1) throw Error("malformed LM vocabulary entry: " + n);
        v.add_char(cps[0]);
      }
    }
    return v;
  }

 private:
  void add_char(uint32_t cp) {
    if (char_ids_.count(cp)) return;
    const int id = int(names_.size());
    char_ids_[cp] = id;
    chars_[id] = cp;
    std::string n;
    utf8_append(n, cp);
    names_.push_back(n);
  }

  std::vector<std::string> names_;
  std::map<uint32_t, int> char_ids_;
  std::map<int, uint32_t> chars_;
  std::map<std::string, int> lang_ids_;
};

struct ToyLMConfig {
  int d_model = 64;
  int n_layers = 4;
  int n_heads = 4;
  int d_ffn = 256;
  double dropout = 0.0;
  bool tied_head = false;

  void validate() const {
    if (d_model <= 0 || n_layers < 0 || n_heads <= 0 || d_ffn <= 0)
      throw Error("lm dims must be positive");
    if (d_model % n_heads != 0) throw Error("d_model must be divisible by n_heads");
  }
};

// Small decoder-only LM standing in for a pretrained multilingual LLM.
template <class S>
struct ToyLM {
  ToyLMConfig cfg;
  LmVocab vocab;
  nn::Param<S> embedding;  // V x d_model
  nn::TransformerStack<S> decoder;
  nn::Linear<S> head;  // unused when tied

  ToyLM() = default;
  ToyLM(const ToyLMConfig& c, LmVocab v, uint64_t seed) : cfg(c), vocab(std::move(v)) {
    cfg.validate();
    Rng rng(seed ^ 0x746f796c6dULL);
    embedding = nn::Param<S>("lm.embedding",
                             gaussian_mat<S>(vocab.size(), cfg.d_model, rng,
                                             S(1.0 / std::sqrt(double(cfg.d_model)))));
    nn::TransformerConfig tc;
    tc.d_model = cfg.d_model;
    tc.n_layers = cfg.n_layers;
    tc.n_heads = cfg.n_heads;
    tc.d_ffn = cfg.d_ffn;
    tc.dropout = cfg.dropout;
    tc.causal = true;
    decoder = nn::TransformerStack<S>("lm", tc, rng);
    if (!cfg.tied_head) head = nn::Linear<S>("lm.head", cfg.d_model, vocab.size(), rng);
  }

  int d_lm() const { return cfg.d_model; }

  std::vector<nn::Param<S>*> params() {
    std::vector<nn::Param<S>*> out;
    out.push_back(&embedding);
    decoder.collect(out);
    if (!cfg.tied_head) head.collect(out);
    return out;
  }

  int embed_tokens(nn::Tape<S>& tape, const std::vector<int>& ids) {
    return tape.gather_rows(tape.param(embedding), ids);
  }

  // embeds node -> logits node (positions assigned over the concatenation).
  int forward_embeds(nn::Tape<S>& tape, int embeds, std::vector<nn::LayerLora<S>>* lora = nullptr,
                     Rng* dropout_rng = nullptr) {
    const int t = tape.val(embeds).rows;
    int x = embeds;
    if (t > 0) x = tape.add(x, tape.constant(nn::sinusoid_positions<S>(t, cfg.d_model)));
    x = decoder.apply(tape, x, lora, dropout_rng);
    if (cfg.tied_head) return tape.matmul(x, tape.param(embedding), false, true);
    return head.apply(tape, x);
  }

  int forward_tokens(nn::Tape<S>& tape, const std::vector<int>& ids,
                     std::vector<nn::LayerLora<S>>* lora = nullptr, Rng* dropout_rng = nullptr) {
    return forward_embeds(tape, embed_tokens(tape, ids), lora, dropout_rng);
  }
};

// Mean causal cross-entropy on the target span. The input embeds already end
// with SEP; targets are appended after it and EOS closes the sequence.
template <class S>
int lm_loss_node(nn::Tape<S>& tape, ToyLM<S>& lm, int input_embeds,
                 const std::vector<int>& targets, std::vector<nn::LayerLora<S>>* lora = nullptr,
                 Rng* dropout_rng = nullptr) {
  if (targets.empty()) throw EmptyTarget();
  const int prefix_len = tape.val(input_embeds).rows;
  if (prefix_len < 1) throw Error("lm input sequence is empty");
  const int tgt_embeds = lm.embed_tokens(tape, targets);
  const int full = tape.concat_rows({input_embeds, tgt_embeds});
  const int logits = lm.forward_embeds(tape, full, lora, dropout_rng);

  std::vector<int> rows, labels;
  for (size_t k = 0; k < targets.size(); ++k) {
    rows.push_back(prefix_len - 1 + int(k));
    labels.push_back(targets[k]);
  }
  rows.push_back(prefix_len - 1 + int(targets.size()));
  labels.push_back(LmVocab::eos());
  return tape.cross_entropy_rows(logits, labels, rows);
}

template <class S>
double lm_loss(ToyLM<S>& lm, const Mat<S>& input_embeds, const std::vector<int>& targets,
               std::vector<nn::LayerLora<S>>* lora = nullptr) {
  nn::Tape<S> tape;
  const int in = tape.constant(input_embeds);
  return double(tape.val(lm_loss_node(tape, lm, in, targets, lora))(0, 0));
}

// ------------------------------ generation --------------------------------

// Deterministic temperature-scaled beam search over a step function mapping
// an emitted-token prefix to next-token logits. Ties break toward the lower
// token id (via candidate ordering); no length normalization.
inline std::vector<int> beam_search(
    const std::function<std::vector<double>(const std::vector<int>&)>& step_fn, int eos_id,
    int beam_width, double temperature, int max_len) {
  if (beam_width < 1) throw Error("beam width must be >= 1");
  if (temperature <= 0) throw Error("temperature must be > 0");

  struct Hyp {
    std::vector<int> toks;
    double score = 0.0;
    bool done = false;
  };
  std::vector<Hyp> beam{Hyp{}};
  for (int step = 0; step < max_len; ++step) {
    bool all_done = true;
    std::vector<Hyp> candidates;
    for (const Hyp& h : beam) {
      if (h.done) {
        candidates.push_back(h);
        continue;
      }
      all_done = false;
      std::vector<double> logits = step_fn(h.toks);
      double mx = kNegInf;
      for (double& x : logits) {
        x /= temperature;
        mx = std::max(mx, x);
      }
      double z = 0;
      for (double x : logits) z += std::exp(x - mx);
      const double lse = mx + std::log(z);
      for (int tok = 0; tok < int(logits.size()); ++tok) {
        Hyp ext = h;
        ext.toks.push_back(tok);
        ext.score += logits[size_t(tok)] - lse;
        ext.done = tok == eos_id;
        candidates.push_back(std::move(ext));
      }
    }
    if (all_done) break;
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Hyp& a, const Hyp& b) { return a.score > b.score; });
    if (int(candidates.size()) > beam_width) candidates.resize(size_t(beam_width));
    beam = std::move(candidates);
  }

  const Hyp* best = nullptr;
  for (const Hyp& h : beam)
    if (h.done && (!best || h.score > best->score)) best = &h;
  if (!best) best = &beam.front();
  std::vector<int> out = best->toks;
  if (!out.empty() && out.back() == eos_id) out.pop_back();
  return out;
}

struct GenerateResult {
  std::string text;
  double log_score = 0.0;
};

// Autoregressive decode starting from prepared input embeddings.
template <class S>
GenerateResult generate(ToyLM<S>& lm, const Mat<S>& input_embeds, int beam_width,
                        double temperature, int max_len,
                        std::vector<nn::LayerLora<S>>* lora = nullptr) {
  auto step_fn = [&](const std::vector<int>& emitted) {
    nn::Tape<S> tape;
    int seq = tape.constant(input_embeds);
    if (!emitted.empty()) seq = tape.concat_rows({seq, lm.embed_tokens(tape, emitted)});
    const int logits = lm.forward_embeds(tape, seq, lora);
    const Mat<S>& lg = tape.val(logits);
    std::vector<double> out(size_t(lg.cols));
    for (int j = 0; j < lg.cols; ++j) out[size_t(j)] = double(lg(lg.rows - 1, j));
    return out;
  };
  const std::vector<int> toks =
      beam_search(step_fn, LmVocab::eos(), beam_width, temperature, max_len);

  GenerateResult res;
  res.text = lm.vocab.decode_text(toks);
  // Score of the chosen sequence under temperature-scaled log-probs.
  double score = 0.0;
  std::vector<int> prefix;
  for (int tok : toks) {
    std::vector<double> logits = step_fn(prefix);
    double mx = kNegInf;
    for (double& x : logits) {
      x /= temperature;
      mx = std::max(mx, x);
    }
    double z = 0;
    for (double x : logits) z += std::exp(x - mx);
    score += logits[size_t(tok)] - (mx + std::log(z));
    prefix.push_back(tok);
  }
  res.log_score = score;
  return res;
}

// --------------------------- sequence formats -----------------------------

// Text-side de-romanization prompt: [BOS, LANG, roman chars..., SEP].
template <class S>
std::vector<int> derom_prompt_tokens(const ToyLM<S>& lm, const std::string& roman,
                                     const std::string& lang) {
  std::vector<int> ids{LmVocab::bos(), lm.vocab.lang_token(lang)};
  for (int t : lm.vocab.encode_text(roman)) ids.push_back(t);
  ids.push_back(LmVocab::sep());
  return ids;
}

// ------------------------------ pretraining -------------------------------

struct PretrainOpts {
  int64_t steps = 600;
  int batch_size = 16;
  uint64_t seed = 1;
  int log_interval = 50;
  train::CosineSchedule schedule;
};

// Next-token pretraining over mixed sequences: grapheme text, roman text and
// roman->grapheme pairs for every registered language. This is what lets the
// bridge reach languages whose speech is never seen.
template <class S>
std::vector<std::pair<int64_t, double>> pretrain_toy_lm(
    ToyLM<S>& lm, const std::vector<roman::TextPair>& pairs, const PretrainOpts& opts) {
  for (const auto& code : lm.vocab.langs()) {
    bool found = false;
    for (const auto& p : pairs)
      if (p.lang == code) {
        found = true;
        break;
      }
    if (!found) throw MissingLanguage(code);
  }
  opts.schedule.validate();

  auto params = lm.params();
  nn::AdamW<S> opt;
  Rng rng(opts.seed ^ 0x70726574726eULL);

  auto build_sequence = [&](const roman::TextPair& p, int form) {
    std::vector<int> ids{LmVocab::bos(), lm.vocab.lang_token(p.lang)};
    auto push_text = [&](const std::string& s) {
      for (int t : lm.vocab.encode_text(s)) ids.push_back(t);
    };
    if (form == 0) {
      push_text(p.grapheme);
    } else if (form == 1) {
      push_text(p.roman);
    } else {
      push_text(p.roman);
      ids.push_back(LmVocab::sep());
      push_text(p.grapheme);
    }
    ids.push_back(LmVocab::eos());
    return ids;
  };

  std::vector<std::pair<int64_t, double>> metrics;
  for (int64_t step = 0; step < opts.steps; ++step) {
    nn::AdamW<S>::zero_grad(params);
    double total = 0.0;
    for (int b = 0; b < opts.batch_size; ++b) {
      const auto& p = pairs[size_t(rng.next_u64() % pairs.size())];
      const int form = int(rng.uniform_int(0, 2));
      const std::vector<int> ids = build_sequence(p, form);
      nn::Tape<S> tape;
      Rng drop = rng.fork(rng.next_u64());
      const int logits = lm.forward_tokens(tape, ids, nullptr, &drop);
      std::vector<int> rows, labels;
      for (size_t k = 0; k + 1 < ids.size(); ++k) {
        rows.push_back(int(k));
        labels.push_back(ids[k + 1]);
      }
      const int loss = tape.cross_entropy_rows(logits, labels, rows);
      total += double(tape.val(loss)(0, 0));
      tape.backward(tape.scale(loss, S(1.0 / opts.batch_size)));
    }
    total /= opts.batch_size;
    if (!std::isfinite(total)) throw DivergedLoss(step);
    opt.step(params, opts.schedule.lr_at(step));
    if (step % opts.log_interval == 0)
      metrics.emplace_back(step, total);
  }
  return metrics;
}

// Mean per-token perplexity of grapheme sequences for one language.
template <class S>
double grapheme_perplexity(ToyLM<S>& lm, const std::vector<roman::TextPair>& pairs,
                           const std::string& lang) {
  double total = 0.0;
  int64_t count = 0;
  for (const auto& p : pairs) {
    if (p.lang != lang) continue;
    std::vector<int> ids{LmVocab::bos(), lm.vocab.lang_token(p.lang)};
    for (int t : lm.vocab.encode_text(p.grapheme)) ids.push_back(t);
    ids.push_back(LmVocab::eos());
    nn::Tape<S> tape;
    const int logits = lm.forward_tokens(tape, ids);
    std::vector<int> rows, labels;
    for (size_t k = 0; k + 1 < ids.size(); ++k) {
      rows.push_back(int(k));
      labels.push_back(ids[k + 1]);
    }
    const int loss = tape.cross_entropy_rows(logits, labels, rows);
    total += double(tape.val(loss)(0, 0)) * double(rows.size());
    count += int64_t(rows.size());
  }
  if (count == 0) throw MissingLanguage(lang);
  return std::exp(total / double(count));
}

}  // namespace zeroavsr::lm
