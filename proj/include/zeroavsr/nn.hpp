#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "zeroavsr/autograd.hpp"
#include "zeroavsr/common.hpp"
#include "zeroavsr/mat.hpp"

namespace zeroavsr::nn {

struct DimensionMismatch : Error {
  explicit DimensionMismatch(const std::string& msg) : Error("dimension mismatch: " + msg) {}
};

template <class S>
Mat<S> sinusoid_positions(int t, int d) {
  Mat<S> pe(t, d);
  for (int pos = 0; pos < t; ++pos)
    for (int i = 0; i < d; ++i) {
      const double angle = pos / std::pow(10000.0, 2.0 * (i / 2) / double(d));
      pe(pos, i) = S(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  return pe;
}

template <class S>
struct Linear {
  Param<S> w;  // d_in x d_out
  Param<S> b;  // 1 x d_out

  Linear() = default;
  Linear(const std::string& name, int d_in, int d_out, Rng& rng)
      : w(name + ".w", gaussian_mat<S>(d_in, d_out, rng, S(1.0 / std::sqrt(double(d_in))))),
        b(name + ".b", Mat<S>(1, d_out)) {}

  int apply(Tape<S>& tape, int x) {
    return tape.add_bias(tape.matmul(x, tape.param(w)), tape.param(b));
  }
  Mat<S> apply(const Mat<S>& x) const {
    Mat<S> y = matmul(x, w.w);
    for (int i = 0; i < y.rows; ++i)
      for (int j = 0; j < y.cols; ++j) y(i, j) += b.w(0, j);
    return y;
  }
  void collect(std::vector<Param<S>*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

template <class S>
struct LayerNorm {
  Param<S> gamma, beta;

  LayerNorm() = default;
  LayerNorm(const std::string& name, int d)
      : gamma(name + ".g", Mat<S>(1, d, S(1))), beta(name + ".b", Mat<S>(1, d)) {}

  int apply(Tape<S>& tape, int x) {
    return tape.layernorm(x, tape.param(gamma), tape.param(beta));
  }
  void collect(std::vector<Param<S>*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

// Low-rank additive update for a frozen d_in x d_out weight:
// delta = (alpha/r) * B * A with A: r x d_in, B: d_out x r.
template <class S>
struct LoraAdapter {
  Param<S> a;  // r x d_in
  Param<S> b;  // d_out x r, zero-initialized so the delta starts as a no-op
  int rank = 0;
  double alpha = 0.0;

  LoraAdapter() = default;
  LoraAdapter(const std::string& name, int d_in, int d_out, int r, double alpha_, Rng& rng)
      : a(name + ".a", gaussian_mat<S>(r, d_in, rng, S(1.0 / std::sqrt(double(d_in))))),
        b(name + ".b", Mat<S>(d_out, r)),
        rank(r),
        alpha(alpha_) {
    if (r < 1) throw Error("lora rank must be >= 1");
  }

  // Row-major activations: y += (alpha/r) * (x * A^T) * B^T.
  int apply(Tape<S>& tape, int x, int base_out) {
    const int xa = tape.matmul(x, tape.param(a), false, true);
    const int xab = tape.matmul(xa, tape.param(b), false, true);
    return tape.add(base_out, tape.scale(xab, S(alpha / rank)));
  }
  void collect(std::vector<Param<S>*>& out) {
    out.push_back(&a);
    out.push_back(&b);
  }
};

// Column-vector form of the LoRA contract: output = base*input +
// (alpha/r)*B*(A*input). `input` is d_in x n.
template <class S>
Mat<S> lora_apply(const Mat<S>& base_weight, const LoraAdapter<S>& adapter, const Mat<S>& input) {
  if (base_weight.cols != input.rows) throw ShapeMismatch("lora base*input");
  if (adapter.a.w.cols != input.rows || adapter.b.w.rows != base_weight.rows ||
      adapter.a.w.rows != adapter.rank || adapter.b.w.cols != adapter.rank)
    throw ShapeMismatch("lora factor shapes");
  Mat<S> out = matmul(base_weight, input);
  Mat<S> ax = matmul(adapter.a.w, input);
  Mat<S> bax = matmul(adapter.b.w, ax);
  add_inplace(out, bax, S(adapter.alpha / adapter.rank));
  return out;
}

// Per-layer LoRA attachment points (attention query and value projections).
template <class S>
struct LayerLora {
  LoraAdapter<S> q, v;
  void collect(std::vector<Param<S>*>& out) {
    q.collect(out);
    v.collect(out);
  }
};

struct TransformerConfig {
  int d_model = 64;
  int n_layers = 4;
  int n_heads = 4;
  int d_ffn = 256;
  double dropout = 0.0;
  bool causal = false;
  bool final_norm = true;

  void validate() const {
    if (d_model <= 0 || n_layers < 0 || n_heads <= 0 || d_ffn <= 0)
      throw Error("transformer dims must be positive");
    if (d_model % n_heads != 0) throw Error("d_model must be divisible by n_heads");
  }
};

// Pre-norm transformer stack. The same block serves the romanizer encoder
// (bidirectional) and the toy LM decoder (causal).
template <class S>
struct TransformerStack {
  struct Layer {
    LayerNorm<S> ln1, ln2;
    Linear<S> wq, wk, wv, wo, ffn1, ffn2;
  };

  TransformerConfig cfg;
  std::vector<Layer> layers;
  LayerNorm<S> final_ln;

  TransformerStack() = default;
  TransformerStack(const std::string& name, const TransformerConfig& c, Rng& rng) : cfg(c) {
    cfg.validate();
    for (int l = 0; l < cfg.n_layers; ++l) {
      const std::string p = name + ".layer" + std::to_string(l);
      Layer layer;
      layer.ln1 = LayerNorm<S>(p + ".ln1", cfg.d_model);
      layer.ln2 = LayerNorm<S>(p + ".ln2", cfg.d_model);
      layer.wq = Linear<S>(p + ".q", cfg.d_model, cfg.d_model, rng);
      layer.wk = Linear<S>(p + ".k", cfg.d_model, cfg.d_model, rng);
      layer.wv = Linear<S>(p + ".v", cfg.d_model, cfg.d_model, rng);
      layer.wo = Linear<S>(p + ".o", cfg.d_model, cfg.d_model, rng);
      layer.ffn1 = Linear<S>(p + ".ffn1", cfg.d_model, cfg.d_ffn, rng);
      layer.ffn2 = Linear<S>(p + ".ffn2", cfg.d_ffn, cfg.d_model, rng);
      layers.push_back(std::move(layer));
    }
    if (cfg.final_norm) final_ln = LayerNorm<S>(name + ".final_ln", cfg.d_model);
  }

  // lora: nullptr or one entry per layer.
  int apply(Tape<S>& tape, int x, std::vector<LayerLora<S>>* lora = nullptr,
            Rng* dropout_rng = nullptr) {
    const bool drop = dropout_rng != nullptr && cfg.dropout > 0.0;
    const int t = tape.val(x).rows;
    const int dk = cfg.d_model / cfg.n_heads;
    if (t == 0) return x;
    for (size_t l = 0; l < layers.size(); ++l) {
      Layer& layer = layers[l];
      const int h = layer.ln1.apply(tape, x);
      int q = layer.wq.apply(tape, h);
      int k = layer.wk.apply(tape, h);
      int v = layer.wv.apply(tape, h);
      if (lora) {
        q = (*lora)[l].q.apply(tape, h, q);
        v = (*lora)[l].v.apply(tape, h, v);
      }
      int heads = -1;
      for (int hd = 0; hd < cfg.n_heads; ++hd) {
        const int qc = tape.slice_cols(q, hd * dk, (hd + 1) * dk);
        const int kc = tape.slice_cols(k, hd * dk, (hd + 1) * dk);
        const int vc = tape.slice_cols(v, hd * dk, (hd + 1) * dk);
        const int scores = tape.scale(tape.matmul(qc, kc, false, true),
                                      S(1.0 / std::sqrt(double(dk))));
        int probs = tape.softmax_rows(scores, cfg.causal);
        if (drop) probs = tape.dropout(probs, cfg.dropout, *dropout_rng, true);
        const int ctx = tape.matmul(probs, vc);
        heads = hd == 0 ? ctx : tape.concat_cols(heads, ctx);
      }
      int attn = layer.wo.apply(tape, heads);
      if (drop) attn = tape.dropout(attn, cfg.dropout, *dropout_rng, true);
      x = tape.add(x, attn);

      const int h2 = layer.ln2.apply(tape, x);
      int f = tape.gelu(layer.ffn1.apply(tape, h2));
      f = layer.ffn2.apply(tape, f);
      if (drop) f = tape.dropout(f, cfg.dropout, *dropout_rng, true);
      x = tape.add(x, f);
    }
    if (cfg.final_norm) x = final_ln.apply(tape, x);
    return x;
  }

  void collect(std::vector<Param<S>*>& out) {
    for (auto& layer : layers) {
      layer.ln1.collect(out);
      layer.wq.collect(out);
      layer.wk.collect(out);
      layer.wv.collect(out);
      layer.wo.collect(out);
      layer.ln2.collect(out);
      layer.ffn1.collect(out);
      layer.ffn2.collect(out);
    }
    if (cfg.final_norm) final_ln.collect(out);
  }
};

// Central-difference gradient check over every trainable parameter. loss_fn
// must be deterministic. Returns max relative error with a small absolute
// floor so zero-gradient directions compare as zero.
template <class S, class LossFn>
double gradient_check(const std::vector<Param<S>*>& params, LossFn loss_fn, double epsilon = 1e-4,
                      double floor_val = 1e-8) {
  for (Param<S>* p : params) p->zero_grad();
  loss_fn(/*accumulate_grads=*/true);
  double worst = 0.0;
  for (Param<S>* p : params) {
    if (!p->trainable) continue;
    for (size_t i = 0; i < p->w.v.size(); ++i) {
      const S saved = p->w.v[i];
      p->w.v[i] = saved + S(epsilon);
      const double up = loss_fn(false);
      p->w.v[i] = saved - S(epsilon);
      const double down = loss_fn(false);
      p->w.v[i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double analytic = double(p->g.v[i]);
      const double denom = std::max({std::abs(numeric), std::abs(analytic), floor_val});
      const double rel = std::abs(numeric - analytic) / denom;
      if (std::abs(numeric) < floor_val && std::abs(analytic) < floor_val) continue;
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace zeroavsr::nn
