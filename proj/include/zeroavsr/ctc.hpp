#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "zeroavsr/autograd.hpp"
#include "zeroavsr/common.hpp"
#include "zeroavsr/mat.hpp"
#include "zeroavsr/roman.hpp"

namespace zeroavsr::ctc {

struct TargetTooLong : Error {
  TargetTooLong(int t, size_t needed)
      : Error("no valid CTC alignment: " + std::to_string(needed) +
              " frames required, posteriorgram has " + std::to_string(t)) {}
};

// Per-frame log posteriors over alphabet tokens plus blank (column 0).
template <class S>
struct Posteriorgram {
  Mat<S> log_probs;  // T x (|alphabet| + 1)
  int frames() const { return log_probs.rows; }
  int vocab() const { return log_probs.cols; }
};

namespace detail {

inline std::vector<int> extended_targets(const std::vector<int>& target, int blank) {
  std::vector<int> ext(2 * target.size() + 1, blank);
  for (size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];
  return ext;
}

inline size_t min_frames(const std::vector<int>& target) {
  size_t repeats = 0;
  for (size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++repeats;
  return target.size() + repeats;
}

}  // namespace detail

// Negative log probability of the target labeling under the standard CTC
// alignment lattice (log-space forward recursion). When grad_out is non-null
// it receives d(loss)/d(log_probs). The recursion runs in double regardless
// of the storage scalar.
template <class S>
double ctc_loss(const Mat<S>& log_probs, const std::vector<int>& target, int blank = 0,
                Mat<S>* grad_out = nullptr) {
  const int t_len = log_probs.rows;
  const int vocab = log_probs.cols;
  for (int k : target) {
    if (k == blank) throw Error("ctc target contains the blank symbol");
    if (k < 0 || k >= vocab) throw Error("ctc target id out of range");
  }
  const size_t needed = detail::min_frames(target);
  if (size_t(t_len) < needed) throw TargetTooLong(t_len, needed);
  if (t_len == 0) return 0.0;  // empty target on an empty posteriorgram

  const std::vector<int> ext = detail::extended_targets(target, blank);
  const int s_len = int(ext.size());
  auto lp = [&](int t, int s) { return double(log_probs(t, ext[size_t(s)])); };

  Mat<double> alpha(t_len, s_len);
  alpha.fill(kNegInf);
  alpha(0, 0) = lp(0, 0);
  if (s_len > 1) alpha(0, 1) = lp(0, 1);
  for (int t = 1; t < t_len; ++t) {
    for (int s = 0; s < s_len; ++s) {
      double a = alpha(t - 1, s);
      if (s >= 1) a = log_sum_exp(a, alpha(t - 1, s - 1));
      if (s >= 2 && ext[size_t(s)] != blank && ext[size_t(s)] != ext[size_t(s) - 2])
        a = log_sum_exp(a, alpha(t - 1, s - 2));
      alpha(t, s) = a + lp(t, s);
    }
  }
  double log_p = alpha(t_len - 1, s_len - 1);
  if (s_len > 1) log_p = log_sum_exp(log_p, alpha(t_len - 1, s_len - 2));

  if (grad_out) {
    Mat<double> beta(t_len, s_len);
    beta.fill(kNegInf);
    beta(t_len - 1, s_len - 1) = lp(t_len - 1, s_len - 1);
    if (s_len > 1) beta(t_len - 1, s_len - 2) = lp(t_len - 1, s_len - 2);
    for (int t = t_len - 2; t >= 0; --t) {
      for (int s = 0; s < s_len; ++s) {
        double b = beta(t + 1, s);
        if (s + 1 < s_len) b = log_sum_exp(b, beta(t + 1, s + 1));
        if (s + 2 < s_len && ext[size_t(s) + 2] != blank && ext[size_t(s) + 2] != ext[size_t(s)])
          b = log_sum_exp(b, beta(t + 1, s + 2));
        beta(t, s) = b + lp(t, s);
      }
    }
    // d(-log P)/d(log p[t][k]) = -exp(lse_{s: ext[s]=k}(alpha+beta) - lp - log P);
    // alpha and beta both include the emission at t, hence the subtraction.
    *grad_out = Mat<S>(t_len, vocab);
    for (int t = 0; t < t_len; ++t) {
      std::vector<double> acc(size_t(vocab), kNegInf);
      for (int s = 0; s < s_len; ++s)
        acc[size_t(ext[size_t(s)])] =
            log_sum_exp(acc[size_t(ext[size_t(s)])], alpha(t, s) + beta(t, s));
      for (int k = 0; k < vocab; ++k) {
        if (acc[size_t(k)] == kNegInf) continue;
        (*grad_out)(t, k) = S(-std::exp(acc[size_t(k)] - double(log_probs(t, k)) - log_p));
      }
    }
  }
  return -log_p;
}

// Tape wrapper: records the CTC loss as a scalar node so it can sit on top of
// a log-softmax output and participate in backward().
template <class S>
int tape_ctc_loss(nn::Tape<S>& tape, int log_probs_id, const std::vector<int>& target,
                  int blank = 0) {
  Mat<S> grad;
  const double loss = ctc_loss(tape.val(log_probs_id), target, blank, &grad);
  Mat<S> value(1, 1);
  value(0, 0) = S(loss);
  auto g = std::make_shared<Mat<S>>(std::move(grad));
  nn::Tape<S>* tp = &tape;
  const int id = tape.custom(std::move(value));
  tape.set_back(id, [tp, id, log_probs_id, g] {
    const S scale = tp->grad(id)(0, 0);
    add_inplace(tp->grad(log_probs_id), *g, scale);
  });
  return id;
}

// Per-frame argmax, collapse repeats, strip blanks. Ties break toward the
// lowest token id.
template <class S>
std::string ctc_greedy_decode(const Posteriorgram<S>& post, const roman::RomanAlphabet& alphabet) {
  const Mat<S>& lp = post.log_probs;
  std::vector<int> out;
  int prev = -1;
  for (int t = 0; t < lp.rows; ++t) {
    int best = 0;
    for (int k = 1; k < lp.cols; ++k)
      if (double(lp(t, k)) > double(lp(t, best))) best = k;
    if (best != prev && best != roman::RomanAlphabet::blank_id()) out.push_back(best);
    prev = best;
  }
  return detokenize_roman(out, alphabet);
}

// Prefix beam search over blank/non-blank prefix probabilities (log-space,
// sums over alignments). A width of 1 reduces to greedy decoding by
// contract; the returned score is still the full labeling log-probability.
template <class S>
std::vector<std::pair<std::string, double>> ctc_beam_decode(const Posteriorgram<S>& post,
                                                            int width,
                                                            const roman::RomanAlphabet& alphabet) {
  if (width < 1) throw Error("beam width must be >= 1");
  const Mat<S>& lp = post.log_probs;
  const int t_len = lp.rows, vocab = lp.cols;
  const int blank = roman::RomanAlphabet::blank_id();

  if (width == 1) {
    const std::string hyp = ctc_greedy_decode(post, alphabet);
    std::vector<int> ids = tokenize_roman(hyp, alphabet);
    const double score = t_len == 0 ? 0.0 : -ctc_loss(lp, ids, blank);
    return {{hyp, score}};
  }

  struct Entry {
    double p_blank = kNegInf;     // prefix, last frame blank
    double p_nonblank = kNegInf;  // prefix, last frame its final symbol
    double total() const { return log_sum_exp(p_blank, p_nonblank); }
  };
  std::map<std::vector<int>, Entry> beam;
  beam[{}] = Entry{0.0, kNegInf};

  for (int t = 0; t < t_len; ++t) {
    std::map<std::vector<int>, Entry> next;
    auto bump = [&next](const std::vector<int>& prefix, double log_p, bool blank_end) {
      if (log_p == kNegInf) return;
      Entry& e = next[prefix];
      double& slot = blank_end ? e.p_blank : e.p_nonblank;
      slot = log_sum_exp(slot, log_p);
    };
    for (const auto& [prefix, e] : beam) {
      const double tot = e.total();
      bump(prefix, tot + double(lp(t, blank)), true);
      if (!prefix.empty()) bump(prefix, e.p_nonblank + double(lp(t, prefix.back())), false);
      for (int k = 1; k < vocab; ++k) {
        const double pk = double(lp(t, k));
        std::vector<int> ext = prefix;
        ext.push_back(k);
        if (!prefix.empty() && prefix.back() == k)
          bump(ext, e.p_blank + pk, false);  // repeat requires a blank gap
        else
          bump(ext, tot + pk, false);
      }
    }
    std::vector<std::pair<std::vector<int>, Entry>> ranked(next.begin(), next.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      const double ta = a.second.total(), tb = b.second.total();
      if (ta != tb) return ta > tb;
      return a.first < b.first;
    });
    if (int(ranked.size()) > width) ranked.resize(size_t(width));
    beam.clear();
    for (auto& [prefix, e] : ranked) beam.emplace(std::move(prefix), e);
  }

  std::vector<std::pair<std::string, double>> out;
  for (const auto& [prefix, e] : beam)
    if (e.total() > kNegInf) out.emplace_back(detokenize_roman(prefix, alphabet), e.total());
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return out;
}

}  // namespace zeroavsr::ctc
