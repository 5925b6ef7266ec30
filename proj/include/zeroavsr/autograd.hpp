#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "zeroavsr/common.hpp"
#include "zeroavsr/mat.hpp"

namespace zeroavsr::nn {

// Named parameter tensor with gradient and optimizer moment buffers.
template <class S>
struct Param {
  std::string name;
  Mat<S> w;
  Mat<S> g;
  Mat<S> m, v2;  // Adam moments, sized on first optimizer step
  bool trainable = true;

  Param() = default;
  Param(std::string n, Mat<S> init) : name(std::move(n)), w(std::move(init)) {
    g = Mat<S>(w.rows, w.cols);
  }
  void zero_grad() { g.zero(); }
};

// Reverse-mode tape. Values propagate eagerly as ops are recorded; backward()
// replays the tape in reverse. One tape per sample per step; models built on
// top are single-writer during training.
template <class S>
class Tape {
 public:
  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  int leaf(const Mat<S>* external, Param<S>* param = nullptr) {
    const int id = new_node(external->rows, external->cols);
    nodes_[size_t(id)].external = external;
    if (param) param_leaves_.emplace_back(id, param);
    return id;
  }
  int param(Param<S>& p) { return leaf(&p.w, &p); }
  int constant(Mat<S> value) {
    const int id = new_node(value.rows, value.cols);
    nodes_[size_t(id)].owned = std::move(value);
    return id;
  }

  const Mat<S>& val(int id) const {
    const Node& n = nodes_[size_t(id)];
    return n.external ? *n.external : n.owned;
  }
  Mat<S>& grad(int id) { return nodes_[size_t(id)].grad; }

  int matmul(int a, int b, bool ta = false, bool tb = false) {
    if (ta && tb) throw Error("tape matmul: double transpose unsupported");
    Mat<S> c;
    gemm(val(a), ta, val(b), tb, c);
    const int id = adopt(std::move(c));
    add_back(id, [this, id, a, b, ta, tb] {
      const Mat<S>& dc = grad(id);
      if (!ta && !tb) {
        gemm(dc, false, val(b), true, grad(a), S(1), true);
        gemm(val(a), true, dc, false, grad(b), S(1), true);
      } else if (!ta && tb) {
        gemm(dc, false, val(b), false, grad(a), S(1), true);
        gemm(dc, true, val(a), false, grad(b), S(1), true);
      } else {
        gemm(val(b), false, dc, true, grad(a), S(1), true);
        gemm(val(a), false, dc, false, grad(b), S(1), true);
      }
    });
    return id;
  }

  int add(int a, int b) {
    Mat<S> c = val(a);
    add_inplace(c, val(b));
    const int id = adopt(std::move(c));
    add_back(id, [this, id, a, b] {
      add_inplace(grad(a), grad(id));
      add_inplace(grad(b), grad(id));
    });
    return id;
  }

  // bias is 1 x C, broadcast over rows of a.
  int add_bias(int a, int bias) {
    const Mat<S>& x = val(a);
    const Mat<S>& bm = val(bias);
    if (bm.rows != 1 || bm.cols != x.cols) throw ShapeMismatch("add_bias");
    Mat<S> c = x;
    for (int i = 0; i < c.rows; ++i) {
      S* r = c.row(i);
      for (int j = 0; j < c.cols; ++j) r[j] += bm(0, j);
    }
    const int id = adopt(std::move(c));
    add_back(id, [this, id, a, bias] {
      const Mat<S>& dc = grad(id);
      add_inplace(grad(a), dc);
      Mat<S>& db = grad(bias);
      for (int i = 0; i < dc.rows; ++i) {
        const S* r = dc.row(i);
        for (int j = 0; j < dc.cols; ++j) db(0, j) += r[j];
      }
    });
    return id;
  }

  int scale(int a, S alpha) {
    Mat<S> c = val(a);
    for (auto& x : c.v) x *= alpha;
    const int id = adopt(std::move(c));
    add_back(id, [this, id, a, alpha] { add_inplace(grad(a), grad(id), alpha); });
    return id;
  }

  int gelu(int a) {
    const Mat<S>& x = val(a);
    Mat<S> c(x.rows, x.cols);
    for (size_t i = 0; i < x.v.size(); ++i) {
      const double xi = double(x.v[i]);
      c.v[i] = S(xi * 0.5 * (1.0 + std::erf(xi * M_SQRT1_2)));
    }
    const int id = adopt(std::move(c));
    add_back(id, [this, id, a] {
      const Mat<S>& x2 = val(a);
      const Mat<S>& dc = grad(id);
      Mat<S>& da = grad(a);
      for (size_t i = 0; i < x2.v.size(); ++i) {
        const double xi = double(x2.v[i]);
        const double phi = 0.5 * (1.0 + std::erf(xi * M_SQRT1_2));
        const double pdf = std::exp(-0.5 * xi * xi) / std::sqrt(2.0 * M_PI);
        da.v[i] += dc.v[i] * S(phi + xi * pdf);
      }
    });
    return id;
  }

  int layernorm(int a, int gamma, int beta, S eps = S(1e-5)) {
    const Mat<S>& x = val(a);
    const Mat<S>& g = val(gamma);
    const Mat<S>& b = val(beta);
    if (g.rows != 1 || g.cols != x.cols || b.rows != 1 || b.cols != x.cols)
      throw ShapeMismatch("layernorm affine");
    Mat<S> c(x.rows, x.cols);
    Mat<S> xhat(x.rows, x.cols);
    std::vector<S> inv_std(size_t(x.rows));
    for (int i = 0; i < x.rows; ++i) {
      const S* r = x.row(i);
      double mu = 0;
      for (int j = 0; j < x.cols; ++j) mu += double(r[j]);
      mu /= x.cols;
      double var = 0;
      for (int j = 0; j < x.cols; ++j) {
        const double d = double(r[j]) - mu;
        var += d * d;
      }
      var /= x.cols;
      const S is = S(1.0 / std::sqrt(var + double(eps)));
      inv_std[size_t(i)] = is;
      for (int j = 0; j < x.cols; ++j) {
        xhat(i, j) = (r[j] - S(mu)) * is;
        c(i, j) = g(0, j) * xhat(i, j) + b(0, j);
      }
    }
    const int id = adopt(std::move(c));
    auto xh = std::make_shared<Mat<S>>(std::move(xhat));
    auto istd = std::make_shared<std::vector<S>>(std::move(inv_std));
    add_back(id, [this, id, a, gamma, beta, xh, istd] {
      const Mat<S>& dc = grad(id);
      const Mat<S>& g = val(gamma);
      Mat<S>& da = grad(a);
      Mat<S>& dg = grad(gamma);
      Mat<S>& db = grad(beta);
      const int cols = dc.cols;
      for (int i = 0; i < dc.rows; ++i) {
        double mean_dy = 0, mean_dyxh = 0;
        for (int j = 0; j < cols; ++j) {
          const double dy = double(dc(i, j)) * double(g(0, j));
          mean_dy += dy;
          mean_dyxh += dy * double((*xh)(i, j));
          dg(0, j) += dc(i, j) * (*xh)(i, j);
          db(0, j) += dc(i, j);
        }
        mean_dy /= cols;
        mean_dyxh /= cols;
        const double is = double((*istd)[size_t(i)]);
        for (int j = 0; j < cols; ++j) {
          const double dy = double(dc(i, j)) * double(g(0, j));
          da(i, j) += S((dy - mean_dy - double((*xh)(i, j)) * mean_dyxh) * is);
        }
      }
    });
    return id;
  }

  // Row-wise softmax; with causal=true, entries j > i get zero probability.
  int softmax_rows(int a, bool causal = false) {
    const Mat<S>& x = val(a);
    Mat<S> c(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i) {
      const int limit = causal ? std::min(i + 1, x.cols) : x.cols;
      double mx = kNegInf;
      for (int j = 0; j < limit; ++j) mx = std::max(mx, double(x(i, j)));
      double z = 0;
      for (int j = 0; j < limit; ++j) z += std::exp(double(x(i, j)) - mx);
      for (int j = 0; j < limit; ++j) c(i, j) = S(std::exp(double(x(i, j)) - mx) / z);
      for (int j = limit; j < x.cols; ++j) c(i, j) = S(0);
    }
    const int id = adopt(std::move(c));
    add_back(id, [this, id, a] {
      const Mat<S>& y = val(id);
      const Mat<S>& dc = grad(id);
      Mat<S>& da = grad(a);
      for (int i = 0; i < y.rows; ++i) {
        double dot = 0;
        for (int j = 0; j < y.cols; ++j) dot += double(dc(i, j)) * double(y(i, j));
        for (int j = 0; j < y.cols; ++j)
          da(i, j) += S(double(y(i, j)) * (double(dc(i, j)) - dot));
      }
    });
    return id;
  }

  int log_softmax_rows(int a) {
    const Mat<S>& x = val(a);
    Mat<S> c(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i) {
      double mx = kNegInf;
      for (int j = 0; j < x.cols; ++j) mx = std::max(mx, double(x(i, j)));
      double z = 0;
      for (int j = 0; j < x.cols; ++j) z += std::exp(double(x(i, j)) - mx);
      const double lse = mx + std::log(z);
      for (int j = 0; j < x.cols; ++j) c(i, j) = S(double(x(i, j)) - lse);
    }
    const int id = adopt(std::move(c));
    add_back(id, [this, id, a] {
      const Mat<S>& y = val(id);
      const Mat<S>& dc = grad(id);
      Mat<S>& da = grad(a);
      for (int i = 0; i < y.rows; ++i) {
        double sum = 0;
        for (int j = 0; j < y.cols; ++j) sum += double(dc(i, j));
        for (int j = 0; j < y.cols; ++j)
          da(i, j) += S(double(dc(i, j)) - std::exp(double(y(i, j))) * sum);
      }
    });
    return id;
  }

  // Inverted dropout with a seeded mask; no-op when disabled or p == 0.
  int dropout(int a, double p, Rng& rng, bool enabled) {
    if (!enabled || p <= 0.0) return a;
    const Mat<S>& x = val(a);
    auto mask = std::make_shared<std::vector<S>>(x.v.size());
    const S keep_scale = S(1.0 / (1.0 - p));
    Mat<S> c(x.rows, x.cols);
    for (size_t i = 0; i < x.v.size(); ++i) {
      (*mask)[i] = rng.uniform() < p ? S(0) : keep_scale;
      c.v[i] = x.v[i] * (*mask)[i];
    }
    const int id = adopt(std::move(c));
    add_back(id, [this, id, a, mask] {
      const Mat<S>& dc = grad(id);
      Mat<S>& da = grad(a);
      for (size_t i = 0; i < dc.v.size(); ++i) da.v[i] += dc.v[i] * (*mask)[i];
    });
    return id;
  }

  int concat_cols(int a, int b) {
    const Mat<S>& x = val(a);
    const Mat<S>& y = val(b);
    if (x.rows != y.rows) throw ShapeMismatch("concat_cols rows");
    Mat<S> c(x.rows, x.cols + y.cols);
    for (int i = 0; i < x.rows; ++i) {
      std::copy(x.row(i), x.row(i) + x.cols, c.row(i));
      std::copy(y.row(i), y.row(i) + y.cols, c.row(i) + x.cols);
    }
    const int id = adopt(std::move(c));
    const int xc = x.cols, yc = y.cols;
    add_back(id, [this, id, a, b, xc, yc] {
      const Mat<S>& dc = grad(id);
      Mat<S>& da = grad(a);
      Mat<S>& db = grad(b);
      for (int i = 0; i < dc.rows; ++i) {
        for (int j = 0; j < xc; ++j) da(i, j) += dc(i, j);
        for (int j = 0; j < yc; ++j) db(i, j) += dc(i, xc + j);
      }
    });
    return id;
  }

  int slice_cols(int a, int c0, int c1) {
    const Mat<S>& x = val(a);
    Mat<S> c(x.rows, c1 - c0);
    for (int i = 0; i < x.rows; ++i)
      std::copy(x.row(i) + c0, x.row(i) + c1, c.row(i));
    const int id = adopt(std::move(c));
    add_back(id, [this, id, a, c0, c1] {
      const Mat<S>& dc = grad(id);
      Mat<S>& da = grad(a);
      for (int i = 0; i < dc.rows; ++i)
        for (int j = c0; j < c1; ++j) da(i, j) += dc(i, j - c0);
    });
    return id;
  }

  int concat_rows(const std::vector<int>& parts) {
    int rows = 0, cols = -1;
    for (int p : parts) {
      rows += val(p).rows;
      if (cols < 0) cols = val(p).cols;
      if (val(p).rows > 0 && val(p).cols != cols) throw ShapeMismatch("concat_rows cols");
    }
    Mat<S> c(rows, cols < 0 ? 0 : cols);
    int r = 0;
    for (int p : parts) {
      const Mat<S>& x = val(p);
      std::copy(x.v.begin(), x.v.end(), c.v.begin() + ptrdiff_t(r) * c.cols);
      r += x.rows;
    }
    const int id = adopt(std::move(c));
    auto parts_copy = std::make_shared<std::vector<int>>(parts);
    add_back(id, [this, id, parts_copy] {
      const Mat<S>& dc = grad(id);
      int r = 0;
      for (int p : *parts_copy) {
        Mat<S>& dp = grad(p);
        for (int i = 0; i < dp.rows; ++i)
          for (int j = 0; j < dp.cols; ++j) dp(i, j) += dc(r + i, j);
        r += dp.rows;
      }
    });
    return id;
  }

  int gather_rows(int table, std::vector<int> idx) {
    const Mat<S>& t = val(table);
    Mat<S> c(int(idx.size()), t.cols);
    for (size_t i = 0; i < idx.size(); ++i)
      std::copy(t.row(idx[i]), t.row(idx[i]) + t.cols, c.row(int(i)));
    const int id = adopt(std::move(c));
    auto ix = std::make_shared<std::vector<int>>(std::move(idx));
    add_back(id, [this, id, table, ix] {
      const Mat<S>& dc = grad(id);
      Mat<S>& dt = grad(table);
      for (size_t i = 0; i < ix->size(); ++i) {
        S* dst = dt.row((*ix)[i]);
        const S* src = dc.row(int(i));
        for (int j = 0; j < dc.cols; ++j) dst[j] += src[j];
      }
    });
    return id;
  }

  // T x D -> floor(T/2) x 2D, adjacent frame pairs side by side; an odd final
  // frame is dropped. This is the stride-2 kernel-2 view used by the length
  // compressor.
  int pair_rows(int a) {
    const Mat<S>& x = val(a);
    const int t2 = x.rows / 2;
    Mat<S> c(t2, x.cols * 2);
    for (int i = 0; i < t2; ++i) {
      std::copy(x.row(2 * i), x.row(2 * i) + x.cols, c.row(i));
      std::copy(x.row(2 * i + 1), x.row(2 * i + 1) + x.cols, c.row(i) + x.cols);
    }
    const int id = adopt(std::move(c));
    add_back(id, [this, id, a] {
      const Mat<S>& dc = grad(id);
      Mat<S>& da = grad(a);
      const int d = da.cols;
      for (int i = 0; i < dc.rows; ++i)
        for (int j = 0; j < dc.cols; ++j) da(2 * i + j / d, j % d) += dc(i, j);
    });
    return id;
  }

  // Mean cross-entropy of logits against targets, restricted to `rows`.
  int cross_entropy_rows(int logits, std::vector<int> targets, std::vector<int> rows) {
    if (rows.empty()) throw Error("cross_entropy_rows: no target rows");
    if (targets.size() != rows.size()) throw ShapeMismatch("cross_entropy targets/rows");
    const Mat<S>& x = val(logits);
    double loss = 0;
    for (size_t k = 0; k < rows.size(); ++k) {
      const int i = rows[k];
      double mx = kNegInf;
      for (int j = 0; j < x.cols; ++j) mx = std::max(mx, double(x(i, j)));
      double z = 0;
      for (int j = 0; j < x.cols; ++j) z += std::exp(double(x(i, j)) - mx);
      loss += mx + std::log(z) - double(x(i, targets[k]));
    }
    loss /= double(rows.size());
    Mat<S> c(1, 1);
    c(0, 0) = S(loss);
    const int id = adopt(std::move(c));
    auto tg = std::make_shared<std::vector<int>>(std::move(targets));
    auto rw = std::make_shared<std::vector<int>>(std::move(rows));
    add_back(id, [this, id, logits, tg, rw] {
      const S gscale = grad(id)(0, 0) / S(double(rw->size()));
      const Mat<S>& x = val(logits);
      Mat<S>& dx = grad(logits);
      for (size_t k = 0; k < rw->size(); ++k) {
        const int i = (*rw)[k];
        double mx = kNegInf;
        for (int j = 0; j < x.cols; ++j) mx = std::max(mx, double(x(i, j)));
        double z = 0;
        for (int j = 0; j < x.cols; ++j) z += std::exp(double(x(i, j)) - mx);
        for (int j = 0; j < x.cols; ++j) {
          const double p = std::exp(double(x(i, j)) - mx) / z;
          dx(i, j) += gscale * S(p - (j == (*tg)[k] ? 1.0 : 0.0));
        }
      }
    });
    return id;
  }

  // Custom node: caller supplies the value and later attaches a backward
  // closure via set_back (the closure usually needs the node's own id).
  int custom(Mat<S> value) { return adopt(std::move(value)); }
  void set_back(int id, std::function<void()> back) {
    nodes_[size_t(id)].back = std::move(back);
  }

  void backward(int loss_id) {
    Mat<S>& lg = grad(loss_id);
    if (lg.rows != 1 || lg.cols != 1) throw Error("backward: loss must be a scalar node");
    lg(0, 0) = S(1);
    for (int i = loss_id; i >= 0; --i)
      if (nodes_[size_t(i)].back) nodes_[size_t(i)].back();
    for (auto& [id, p] : param_leaves_) add_inplace(p->g, nodes_[size_t(id)].grad);
  }

 private:
  struct Node {
    Mat<S> owned;
    const Mat<S>* external = nullptr;
    Mat<S> grad;
    std::function<void()> back;
  };

  int new_node(int r, int c) {
    nodes_.emplace_back();
    nodes_.back().grad = Mat<S>(r, c);
    return int(nodes_.size()) - 1;
  }
  int adopt(Mat<S> value) {
    const int id = new_node(value.rows, value.cols);
    nodes_[size_t(id)].owned = std::move(value);
    return id;
  }
  void add_back(int id, std::function<void()> fn) { nodes_[size_t(id)].back = std::move(fn); }

  std::vector<Node> nodes_;
  std::vector<std::pair<int, Param<S>*>> param_leaves_;
};

// Decoupled weight decay Adam. Moments live in the Param buffers so trainer
// checkpoints can restore optimizer state bit-exactly.
template <class S>
struct AdamW {
  double beta1 = 0.9, beta2 = 0.98, eps = 1e-8, weight_decay = 0.01;
  int64_t t = 0;

  void step(const std::vector<Param<S>*>& params, double lr) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, double(t));
    const double bc2 = 1.0 - std::pow(beta2, double(t));
    for (Param<S>* p : params) {
      if (!p->trainable) continue;
      if (p->m.v.empty()) {
        p->m = Mat<S>(p->w.rows, p->w.cols);
        p->v2 = Mat<S>(p->w.rows, p->w.cols);
      }
      for (size_t i = 0; i < p->w.v.size(); ++i) {
        const double g = double(p->g.v[i]);
        const double m = beta1 * double(p->m.v[i]) + (1.0 - beta1) * g;
        const double v = beta2 * double(p->v2.v[i]) + (1.0 - beta2) * g * g;
        p->m.v[i] = S(m);
        p->v2.v[i] = S(v);
        const double update = (m / bc1) / (std::sqrt(v / bc2) + eps) +
                              weight_decay * double(p->w.v[i]);
        p->w.v[i] -= S(lr * update);
      }
    }
  }

  static void zero_grad(const std::vector<Param<S>*>& params) {
    for (Param<S>* p : params) p->zero_grad();
  }
};

}  // namespace zeroavsr::nn
