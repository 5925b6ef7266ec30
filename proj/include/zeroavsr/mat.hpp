#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "zeroavsr/common.hpp"

namespace zeroavsr {

// Dense row-major matrix. The scalar type is a template parameter so model
// code can run in float for training and double for finite-difference checks.
template <class S>
struct Mat {
  int rows = 0, cols = 0;
  std::vector<S> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(size_t(r) * size_t(c), S(0)) {}
  Mat(int r, int c, S fill) : rows(r), cols(c), v(size_t(r) * size_t(c), fill) {}

  S& operator()(int i, int j) { return v[size_t(i) * cols + j]; }
  S operator()(int i, int j) const { return v[size_t(i) * cols + j]; }
  S* row(int i) { return v.data() + size_t(i) * cols; }
  const S* row(int i) const { return v.data() + size_t(i) * cols; }
  size_t size() const { return v.size(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  void fill(S x) { std::fill(v.begin(), v.end(), x); }
  void zero() { fill(S(0)); }

  bool all_finite() const {
    for (S x : v)
      if (!std::isfinite(double(x))) return false;
    return true;
  }

  template <class T>
  Mat<T> cast() const {
    Mat<T> out(rows, cols);
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = T(v[i]);
    return out;
  }
};

struct ShapeMismatch : Error {
  explicit ShapeMismatch(const std::string& msg) : Error("shape mismatch: " + msg) {}
};

namespace detail {
inline std::string dims(int r, int c) { return std::to_string(r) + "x" + std::to_string(c); }
}  // namespace detail

// C (+)= alpha * op(A) * op(B). Loop orders keep the inner loop contiguous.
template <class S>
void gemm(const Mat<S>& a, bool trans_a, const Mat<S>& b, bool trans_b, Mat<S>& c,
          S alpha = S(1), bool accumulate = false) {
  const int m = trans_a ? a.cols : a.rows;
  const int k = trans_a ? a.rows : a.cols;
  const int kb = trans_b ? b.cols : b.rows;
  const int n = trans_b ? b.rows : b.cols;
  if (k != kb)
    throw ShapeMismatch("gemm inner " + detail::dims(a.rows, a.cols) + " vs " +
                        detail::dims(b.rows, b.cols));
  if (!accumulate) {
    c.rows = m;
    c.cols = n;
    c.v.assign(size_t(m) * n, S(0));
  } else if (c.rows != m || c.cols != n) {
    throw ShapeMismatch("gemm output " + detail::dims(c.rows, c.cols) + " want " +
                        detail::dims(m, n));
  }
  if (m == 0 || n == 0 || k == 0) return;

  if (!trans_a && !trans_b) {
    for (int i = 0; i < m; ++i) {
      S* cr = c.row(i);
      const S* ar = a.row(i);
      for (int p = 0; p < k; ++p) {
        const S s = alpha * ar[p];
        const S* br = b.row(p);
        for (int j = 0; j < n; ++j) cr[j] += s * br[j];
      }
    }
  } else if (!trans_a && trans_b) {
    for (int i = 0; i < m; ++i) {
      const S* ar = a.row(i);
      S* cr = c.row(i);
      for (int j = 0; j < n; ++j) {
        const S* br = b.row(j);
        S acc = S(0);
        for (int p = 0; p < k; ++p) acc += ar[p] * br[p];
        cr[j] += alpha * acc;
      }
    }
  } else if (trans_a && !trans_b) {
    for (int p = 0; p < k; ++p) {
      const S* ar = a.row(p);
      const S* br = b.row(p);
      for (int i = 0; i < m; ++i) {
        const S s = alpha * ar[i];
        S* cr = c.row(i);
        for (int j = 0; j < n; ++j) cr[j] += s * br[j];
      }
    }
  } else {
    for (int i = 0; i < m; ++i) {
      S* cr = c.row(i);
      for (int p = 0; p < k; ++p) {
        const S s = alpha * a(p, i);
        for (int j = 0; j < n; ++j) cr[j] += s * b(j, p);
      }
    }
  }
}

template <class S>
Mat<S> matmul(const Mat<S>& a, const Mat<S>& b, bool trans_a = false, bool trans_b = false) {
  Mat<S> c;
  gemm(a, trans_a, b, trans_b, c);
  return c;
}

template <class S>
void add_inplace(Mat<S>& a, const Mat<S>& b, S alpha = S(1)) {
  if (!a.same_shape(b))
    throw ShapeMismatch("add " + detail::dims(a.rows, a.cols) + " vs " +
                        detail::dims(b.rows, b.cols));
  for (size_t i = 0; i < a.v.size(); ++i) a.v[i] += alpha * b.v[i];
}

template <class S>
Mat<S> transpose(const Mat<S>& a) {
  Mat<S> t(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

template <class S>
Mat<S> gaussian_mat(int r, int c, Rng& rng, S scale) {
  Mat<S> m(r, c);
  for (auto& x : m.v) x = S(rng.gauss()) * scale;
  return m;
}

// Mean squared entry; the "power" used by SNR bookkeeping.
template <class S>
double mean_square(const Mat<S>& m) {
  if (m.v.empty()) return 0.0;
  double acc = 0.0;
  for (S x : m.v) acc += double(x) * double(x);
  return acc / double(m.v.size());
}

}  // namespace zeroavsr
