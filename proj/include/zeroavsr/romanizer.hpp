#pragma once

#include <optional>
#include <string>
#include <vector>

#include "zeroavsr/autograd.hpp"
#include "zeroavsr/common.hpp"
#include "zeroavsr/ctc.hpp"
#include "zeroavsr/frontend.hpp"
#include "zeroavsr/nn.hpp"
#include "zeroavsr/roman.hpp"
#include "zeroavsr/schedule.hpp"

namespace zeroavsr::romanizer {

struct DivergedLoss : Error {
  explicit DivergedLoss(int64_t step)
      : Error("training loss diverged (non-finite) at step " + std::to_string(step)) {}
};

enum class Modality { AudioVisual, AudioOnly, VideoOnly };

inline const char* modality_name(Modality m) {
  switch (m) {
    case Modality::AudioVisual: return "AV";
    case Modality::AudioOnly: return "A";
    case Modality::VideoOnly: return "V";
  }
  return "?";
}

struct RomanizerConfig {
  int d_model = 64;
  int n_layers = 4;
  int n_heads = 4;
  int d_ffn = 256;
  int d_audio_in = 16;
  int d_video_in = 16;
  double dropout = 0.1;
  bool use_positions = true;

  void validate() const {
    if (d_model <= 0 || n_layers < 0 || n_heads <= 0 || d_ffn <= 0 || d_audio_in <= 0 ||
        d_video_in <= 0)
      throw Error("romanizer dims must be positive");
    if (d_model % n_heads != 0) throw Error("d_model must be divisible by n_heads");
    if (dropout < 0 || dropout >= 1) throw Error("dropout must be in [0,1)");
  }
};

// Audio/visual encoders, channel-concat fusion through a 2D x D projection,
// transformer encoder, and a linear head over roman tokens plus blank.
// The visual encoder is an affine map; synthetic features arrive as
// prototype vectors, and real-video users supply precomputed features.
template <class S>
struct RomanizerModel {
  RomanizerConfig cfg;
  roman::RomanAlphabet alphabet = roman::RomanAlphabet::basic();
  nn::Linear<S> f_audio, f_video;
  nn::Param<S> fusion;  // 2D x D, no bias (f_av = B((f_a ⊕ f_v) W))
  nn::TransformerStack<S> encoder;
  nn::Linear<S> head;

  RomanizerModel() = default;
  RomanizerModel(const RomanizerConfig& c, const roman::RomanAlphabet& alpha, uint64_t seed)
      : cfg(c), alphabet(alpha) {
    cfg.validate();
    Rng rng(seed ^ 0x726f6d616e697aULL);
    f_audio = nn::Linear<S>("f_a", cfg.d_audio_in, cfg.d_model, rng);
    f_video = nn::Linear<S>("f_v", cfg.d_video_in, cfg.d_model, rng);
    fusion = nn::Param<S>("fusion.w", gaussian_mat<S>(2 * cfg.d_model, cfg.d_model, rng,
                                                      S(1.0 / std::sqrt(2.0 * cfg.d_model))));
    nn::TransformerConfig tc;
    tc.d_model = cfg.d_model;
    tc.n_layers = cfg.n_layers;
    tc.n_heads = cfg.n_heads;
    tc.d_ffn = cfg.d_ffn;
    tc.dropout = cfg.dropout;
    tc.causal = false;
    tc.final_norm = cfg.n_layers > 0;  // an empty stack is the identity
    encoder = nn::TransformerStack<S>("enc", tc, rng);
    head = nn::Linear<S>("head", cfg.d_model, alphabet.vocab_size(), rng);
  }

  std::vector<nn::Param<S>*> params() {
    std::vector<nn::Param<S>*> out;
    f_audio.collect(out);
    f_video.collect(out);
    out.push_back(&fusion);
    encoder.collect(out);
    head.collect(out);
    return out;
  }

  // Hidden sequence at the penultimate layer (input to the head). Absent
  // modalities are zeroed before fusion.
  int encode(nn::Tape<S>& tape, const Mat<S>& audio, const Mat<S>& video,
             Modality modality = Modality::AudioVisual, Rng* dropout_rng = nullptr) const {
    if (audio.rows != video.rows)
      throw nn::DimensionMismatch("audio frames " + std::to_string(audio.rows) + " vs video " +
                                  std::to_string(video.rows));
    if (audio.cols != cfg.d_audio_in || video.cols != cfg.d_video_in)
      throw nn::DimensionMismatch("feature widths do not match the model config");
    Mat<S> a = audio, v = video;
    if (modality == Modality::VideoOnly) a.zero();
    if (modality == Modality::AudioOnly) v.zero();

    auto* self = const_cast<RomanizerModel<S>*>(this);
    const int fa = self->f_audio.apply(tape, tape.constant(std::move(a)));
    const int fv = self->f_video.apply(tape, tape.constant(std::move(v)));
    int x = tape.matmul(tape.concat_cols(fa, fv), tape.param(self->fusion));
    if (cfg.use_positions && audio.rows > 0)
      x = tape.add(x, tape.constant(nn::sinusoid_positions<S>(audio.rows, cfg.d_model)));
    return self->encoder.apply(tape, x, nullptr, dropout_rng);
  }

  int forward_logits_node(nn::Tape<S>& tape, const Mat<S>& audio, const Mat<S>& video,
                          Modality modality = Modality::AudioVisual,
                          Rng* dropout_rng = nullptr) const {
    auto* self = const_cast<RomanizerModel<S>*>(this);
    const int h = encode(tape, audio, video, modality, dropout_rng);
    return tape.log_softmax_rows(self->head.apply(tape, h));
  }

  Mat<S> encode_eval(const Mat<S>& audio, const Mat<S>& video,
                     Modality modality = Modality::AudioVisual) const {
    nn::Tape<S> tape;
    return tape.val(encode(tape, audio, video, modality));
  }

  ctc::Posteriorgram<S> forward_logits(const Mat<S>& audio, const Mat<S>& video,
                                       Modality modality = Modality::AudioVisual) const {
    nn::Tape<S> tape;
    return {tape.val(forward_logits_node(tape, audio, video, modality))};
  }

  std::string transcribe(const Mat<float>& audio, const Mat<float>& video,
                         Modality modality = Modality::AudioVisual) const {
    return ctc::ctc_greedy_decode(
        forward_logits(audio.template cast<S>(), video.template cast<S>(), modality), alphabet);
  }
};

// ------------------------------ training ----------------------------------

struct NoisePolicy {
  double noise_prob = 0.25;  // per-sample probability of mixing noise
  double snr_db = 0.0;
  frontend::NoiseKind kind = frontend::NoiseKind::White;
  double modality_dropout_prob = 0.0;  // split evenly between A-only and V-only
};

struct TrainItem {
  Mat<float> audio, video;
  std::vector<int> target;
};

struct MetricsRow {
  int64_t step;
  std::string task;
  double loss;
  double lr;
};

struct RomanizerTrainOpts {
  int64_t steps = 1000;
  int batch_size = 8;
  int grad_accum = 1;  // effective batch = batch_size * grad_accum
  uint64_t seed = 1;
  int log_interval = 50;
  NoisePolicy noise;
  train::TriStageSchedule schedule;
};

struct TrainDiagnostics {
  double probe_loss_initial = 0.0;
  double probe_loss_final = 0.0;
  std::vector<MetricsRow> metrics;
};

namespace detail {

template <class S>
double batch_ctc_loss(RomanizerModel<S>& model, const std::vector<const TrainItem*>& batch,
                      bool train_mode, Rng* rng, const NoisePolicy* noise, bool backward,
                      double inv_total) {
  double total = 0.0;
  for (const TrainItem* item : batch) {
    Mat<float> audio = item->audio;
    Modality modality = Modality::AudioVisual;
    if (train_mode && rng && noise) {
      if (noise->noise_prob > 0 && rng->bernoulli(noise->noise_prob)) {
        Rng nrng = rng->fork(rng->next_u64());
        Mat<float> n = frontend::make_feature_noise(noise->kind, audio.rows, audio.cols, nrng);
        audio = frontend::mix_feature_noise(audio, n, noise->snr_db);
      }
      if (noise->modality_dropout_prob > 0 && rng->bernoulli(noise->modality_dropout_prob))
        modality = rng->bernoulli(0.5) ? Modality::AudioOnly : Modality::VideoOnly;
    }
    nn::Tape<S> tape;
    Rng drop_rng = rng ? rng->fork(rng->next_u64()) : Rng(0);
    const int logp = model.forward_logits_node(tape, audio.template cast<S>(),
                                               item->video.template cast<S>(), modality,
                                               train_mode ? &drop_rng : nullptr);
    const int loss = ctc::tape_ctc_loss(tape, logp, item->target);
    total += double(tape.val(loss)(0, 0));
    if (backward) {
      const int scaled = tape.scale(loss, S(inv_total));
      tape.backward(scaled);
    }
  }
  return total / double(batch.size());
}

}  // namespace detail

// Max relative error between analytic parameter gradients of the mean CTC
// loss and central finite differences. Meant for tiny models in double
// precision; this is the verification harness behind the gradient-fidelity
// gate.
template <class S>
double ctc_grad_check(RomanizerModel<S>& model, const std::vector<TrainItem>& batch,
                      double epsilon) {
  if (batch.empty()) throw Error("ctc_grad_check: empty batch");
  auto params = model.params();
  auto loss_fn = [&](bool with_grads) {
    double total = 0.0;
    for (const TrainItem& item : batch) {
      nn::Tape<S> tape;
      const int lp = model.forward_logits_node(tape, item.audio.template cast<S>(),
                                               item.video.template cast<S>());
      const int loss = ctc::tape_ctc_loss(tape, lp, item.target);
      total += double(tape.val(loss)(0, 0));
      if (with_grads) tape.backward(tape.scale(loss, S(1.0 / double(batch.size()))));
    }
    return total / double(batch.size());
  };
  return nn::gradient_check<S>(params, loss_fn, epsilon);
}

template <class S>
TrainDiagnostics train_romanizer(RomanizerModel<S>& model, const std::vector<TrainItem>& items,
                                 const RomanizerTrainOpts& opts) {
  if (items.empty()) throw Error("train_romanizer: empty training set");
  opts.schedule.validate();
  auto params = model.params();
  nn::AdamW<S> opt;
  Rng rng(opts.seed ^ 0x74726e32ULL);

  // Fixed probe batch for the loss-decrease contract.
  std::vector<const TrainItem*> probe;
  for (size_t i = 0; i < std::min<size_t>(items.size(), size_t(opts.batch_size)); ++i)
    probe.push_back(&items[i]);

  TrainDiagnostics diag;
  diag.probe_loss_initial =
      detail::batch_ctc_loss(model, probe, false, nullptr, nullptr, false, 0.0);

  std::vector<size_t> order(items.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  size_t cursor = 0;
  auto next_item = [&]() -> const TrainItem* {
    if (cursor >= order.size()) {
      rng.shuffle(order);
      cursor = 0;
    }
    return &items[order[cursor++]];
  };

  const double inv_total = 1.0 / double(opts.batch_size * opts.grad_accum);
  for (int64_t step = 0; step < opts.steps; ++step) {
    nn::AdamW<S>::zero_grad(params);
    double step_loss = 0.0;
    for (int acc = 0; acc < opts.grad_accum; ++acc) {
      std::vector<const TrainItem*> batch;
      for (int b = 0; b < opts.batch_size; ++b) batch.push_back(next_item());
      step_loss +=
          detail::batch_ctc_loss(model, batch, true, &rng, &opts.noise, true, inv_total);
    }
    step_loss /= opts.grad_accum;
    if (!std::isfinite(step_loss)) throw DivergedLoss(step);
    const double lr = opts.schedule.lr_at(step);
    opt.step(params, lr);
    if (step % opts.log_interval == 0)
      diag.metrics.push_back({step, "romanizer", step_loss, lr});
  }

  diag.probe_loss_final =
      detail::batch_ctc_loss(model, probe, false, nullptr, nullptr, false, 0.0);
  return diag;
}

}  // namespace zeroavsr::romanizer
