#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "zeroavsr/autograd.hpp"
#include "zeroavsr/bridge.hpp"
#include "zeroavsr/checkpoint.hpp"
#include "zeroavsr/common.hpp"
#include "zeroavsr/lm.hpp"
#include "zeroavsr/roman.hpp"
#include "zeroavsr/romanizer.hpp"
#include "zeroavsr/schedule.hpp"

namespace zeroavsr::train {

struct SeenLanguageViolation : Error {
  explicit SeenLanguageViolation(const std::string& lang)
      : Error("task 1 manifest contains unseen language: " + lang) {}
};
using lm::MissingLanguage;

// Bit-level fingerprint of parameter values; frozen tensors must hash
// identically before and after optimizer steps.
template <class S>
std::map<std::string, uint64_t> hash_params(const std::vector<nn::Param<S>*>& params) {
  std::map<std::string, uint64_t> out;
  for (const auto* p : params)
    out[p->name] = fnv1a64(p->w.v.data(), p->w.v.size() * sizeof(S));
  return out;
}

template <class S>
struct Task1Item {
  Mat<float> audio, video;
  std::string lang;
  std::vector<int> targets;  // grapheme token ids
};

// Templated so finite-difference checks can run the same code in double.
template <class S>
struct BridgeTrainContext {
  const romanizer::RomanizerModel<S>* rom = nullptr;  // frozen
  lm::ToyLM<S>* lm = nullptr;                         // frozen base
  bridge::Bridge<S>* bridge = nullptr;                // trainable
  std::vector<Task1Item<S>> task1_items;              // seen languages only
  std::vector<roman::TextPair> task2_pairs;           // all languages
  std::vector<std::string> seen_langs;
  std::vector<std::string> all_langs;

  CosineSchedule schedule;
  int batch_size = 8;
  int grad_accum = 1;

  void validate() const {
    if (!rom || !lm || !bridge) throw Error("bridge trainer is missing a component");
    std::set<std::string> seen(seen_langs.begin(), seen_langs.end());
    for (const auto& it : task1_items)
      if (!seen.count(it.lang)) throw SeenLanguageViolation(it.lang);
    std::set<std::string> covered;
    for (const auto& p : task2_pairs) covered.insert(p.lang);
    for (const auto& l : all_langs)
      if (!covered.count(l)) throw MissingLanguage(l);
  }
};

// Persistent training-loop state; checkpoints restore it bit-exactly.
template <class S>
struct TrainState {
  int64_t step = 0;
  nn::AdamW<S> opt;
  Rng rng{0x6d756c7469ULL};
  double ema_task1 = -1.0;
  double ema_task2 = -1.0;
  double ema_decay = 0.95;

  void update_ema(int task, double loss) {
    double& e = task == 1 ? ema_task1 : ema_task2;
    e = e < 0 ? loss : ema_decay * e + (1 - ema_decay) * loss;
  }
};

namespace detail {

// Task 1: penultimate romanizer features -> compressor -> adapter ->
// [instruction; av; SEP] -> grapheme LM loss. The romanizer runs outside the
// tape, so gradients stop at its output by construction.
template <class S>
double task1_sample_loss(BridgeTrainContext<S>& ctx, const Task1Item<S>& item, bool backward,
                         double inv_total, Rng* dropout_rng) {
  const Mat<S> f_av =
      ctx.rom->encode_eval(item.audio.template cast<S>(), item.video.template cast<S>());
  nn::Tape<S> tape;
  int x = ctx.bridge->compressor.apply(tape, tape.constant(f_av));
  x = ctx.bridge->adapter.apply(tape, x);
  const int embeds =
      bridge::embed_multimodal_node(tape, *ctx.lm, x,
                                    bridge::unified_instruction_tokens(*ctx.lm, item.lang));
  const int loss =
      lm::lm_loss_node(tape, *ctx.lm, embeds, item.targets, &ctx.bridge->lora, dropout_rng);
  const double value = double(tape.val(loss)(0, 0));
  if (backward) tape.backward(tape.scale(loss, S(inv_total)));
  return value;
}

template <class S>
double task2_sample_loss(BridgeTrainContext<S>& ctx, const roman::TextPair& pair, bool backward,
                         double inv_total, Rng* dropout_rng) {
  const std::vector<int> prompt = lm::derom_prompt_tokens(*ctx.lm, pair.roman, pair.lang);
  const std::vector<int> targets = ctx.lm->vocab.encode_text(pair.grapheme);
  nn::Tape<S> tape;
  const int embeds = ctx.lm->embed_tokens(tape, prompt);
  const int loss =
      lm::lm_loss_node(tape, *ctx.lm, embeds, targets, &ctx.bridge->lora, dropout_rng);
  const double value = double(tape.val(loss)(0, 0));
  if (backward) tape.backward(tape.scale(loss, S(inv_total)));
  return value;
}

template <class S>
double run_task_step(BridgeTrainContext<S>& ctx, TrainState<S>& state, int task) {
  auto trainable = task == 1 ? ctx.bridge->task1_params() : ctx.bridge->lora_params();
  // Zero every gradient buffer the tape may have touched, frozen ones
  // included, so stale accumulation never leaks across steps.
  auto all_lm = ctx.lm->params();
  nn::AdamW<S>::zero_grad(all_lm);
  auto all_bridge = ctx.bridge->task1_params();
  nn::AdamW<S>::zero_grad(all_bridge);

  const double inv_total = 1.0 / double(ctx.batch_size * ctx.grad_accum);
  double total = 0.0;
  for (int acc = 0; acc < ctx.grad_accum; ++acc) {
    for (int b = 0; b < ctx.batch_size; ++b) {
      Rng drop = state.rng.fork(state.rng.next_u64());
      if (task == 1) {
        const auto& item =
            ctx.task1_items[size_t(state.rng.next_u64() % ctx.task1_items.size())];
        total += task1_sample_loss(ctx, item, true, inv_total, &drop);
      } else {
        const auto& pair =
            ctx.task2_pairs[size_t(state.rng.next_u64() % ctx.task2_pairs.size())];
        total += task2_sample_loss(ctx, pair, true, inv_total, &drop);
      }
    }
  }
  total /= double(ctx.batch_size * ctx.grad_accum);
  if (!std::isfinite(total)) throw lm::DivergedLoss(state.step);
  state.opt.step(trainable, ctx.schedule.lr_at(state.step));
  return total;
}

}  // namespace detail

// Task 1 only: align romanizer features with the LM space on seen languages.
// Updates LoRA factors, the compressor and the adapter; everything else is
// frozen.
template <class S>
std::vector<romanizer::MetricsRow> train_task1(BridgeTrainContext<S>& ctx, TrainState<S>& state,
                                               int64_t steps, int log_interval = 25) {
  ctx.validate();
  if (ctx.task1_items.empty()) throw Error("task 1 has no training items");
  std::vector<romanizer::MetricsRow> metrics;
  for (int64_t i = 0; i < steps; ++i) {
    const double loss = detail::run_task_step(ctx, state, 1);
    state.update_ema(1, loss);
    if (state.step % log_interval == 0)
      metrics.push_back({state.step, "task1", loss, ctx.schedule.lr_at(state.step)});
    ++state.step;
  }
  return metrics;
}

// Task 2 only: text-level de-romanization over every language; LoRA factors
// are the only trainable tensors.
template <class S>
std::vector<romanizer::MetricsRow> train_task2(BridgeTrainContext<S>& ctx, TrainState<S>& state,
                                               int64_t steps, int log_interval = 25) {
  ctx.validate();
  if (ctx.task2_pairs.empty()) throw Error("task 2 has no text pairs");
  std::vector<romanizer::MetricsRow> metrics;
  for (int64_t i = 0; i < steps; ++i) {
    const double loss = detail::run_task_step(ctx, state, 2);
    state.update_ema(2, loss);
    if (state.step % log_interval == 0)
      metrics.push_back({state.step, "task2", loss, ctx.schedule.lr_at(state.step)});
    ++state.step;
  }
  return metrics;
}

inline void save_bridge_state(const std::string& path, BridgeTrainContext<float>& ctx,
                              const TrainState<float>& state);

// Interleaved training: each step draws Task 1 with probability mix_ratio.
// Optionally checkpoints the bridge and loop state every K steps.
template <class S>
std::vector<romanizer::MetricsRow> multitask_loop(BridgeTrainContext<S>& ctx,
                                                  TrainState<S>& state, double mix_ratio,
                                                  int64_t total_steps, int log_interval = 25,
                                                  int64_t checkpoint_every = 0,
                                                  const std::string& checkpoint_path = "") {
  if (!(mix_ratio > 0.0 && mix_ratio < 1.0))
    throw Error("mix_ratio must lie in the open interval (0,1)");
  ctx.validate();
  if (ctx.task1_items.empty() || ctx.task2_pairs.empty())
    throw Error("multitask loop needs data for both tasks");

  std::vector<romanizer::MetricsRow> metrics;
  for (int64_t i = 0; i < total_steps; ++i) {
    const int task = state.rng.bernoulli(mix_ratio) ? 1 : 2;
    const double loss = detail::run_task_step(ctx, state, task);
    state.update_ema(task, loss);
    if (state.step % log_interval == 0)
      metrics.push_back({state.step, task == 1 ? "task1" : "task2", loss,
                         ctx.schedule.lr_at(state.step)});
    ++state.step;
    if constexpr (std::is_same_v<S, float>) {
      if (checkpoint_every > 0 && !checkpoint_path.empty() && state.step % checkpoint_every == 0)
        save_bridge_state(checkpoint_path, ctx, state);
    }
  }
  return metrics;
}

// ------------------------- bridge checkpointing ---------------------------

inline void save_bridge_state(const std::string& path, BridgeTrainContext<float>& ctx,
                              const TrainState<float>& state) {
  ckpt::json meta;
  meta["step"] = state.step;
  meta["adam_t"] = state.opt.t;
  meta["rng_state"] = state.rng.state();
  meta["ema_task1"] = state.ema_task1;
  meta["ema_task2"] = state.ema_task2;
  meta["lora_rank"] = ctx.bridge->lora_rank;
  meta["lora_alpha"] = ctx.bridge->lora_alpha;
  std::vector<std::pair<std::string, const Mat<float>*>> tensors;
  auto params = ctx.bridge->task1_params();
  ckpt::add_params(tensors, params, /*with_moments=*/true);
  ckpt::save(path, "bridge", meta, tensors);
}

inline void load_bridge_state(const std::string& path, BridgeTrainContext<float>& ctx,
                              TrainState<float>& state) {
  const ckpt::Checkpoint c = ckpt::load(path);
  if (c.kind != "bridge") throw Error("expected a bridge checkpoint, got kind " + c.kind);
  auto params = ctx.bridge->task1_params();
  ckpt::restore_params(c, params, /*with_moments=*/true);
  state.step = c.meta.at("step").get<int64_t>();
  state.opt.t = c.meta.at("adam_t").get<int64_t>();
  state.rng.set_state(c.meta.at("rng_state").get<std::vector<uint64_t>>());
  state.ema_task1 = c.meta.at("ema_task1").get<double>();
  state.ema_task2 = c.meta.at("ema_task2").get<double>();
}

}  // namespace zeroavsr::train
