#ifndef ADVSEG_CRF_HPP
#define ADVSEG_CRF_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "advseg/tensor.hpp"

namespace advseg {

// Fixed label order used everywhere: B=0, M=1, E=2, S=3.
enum class Label : std::uint8_t { B = 0, M = 1, E = 2, S = 3 };
inline constexpr int kNumLabels = 4;
using LabelSequence = std::vector<Label>;

char label_char(Label l);
inline int index_of(Label l) { return static_cast<int>(l); }

// Emission projection and transition matrix for one criterion.
// transitions(a, b) scores label a followed by label b.
struct CrfHead {
  Tensor weight;       // d_feat x 4
  Tensor bias;         // 1 x 4
  Tensor transitions;  // 4 x 4

  Index feature_width() const { return weight.rows(); }
};

namespace crf {

namespace detail {

template <typename ScoresDerived, typename TransDerived>
void check_shapes(const Eigen::MatrixBase<ScoresDerived>& scores,
                  const Eigen::MatrixBase<TransDerived>& transitions) {
  if (scores.rows() < 1) throw ShapeError("crf: sequence must have at least one position");
  if (scores.cols() != transitions.rows() || transitions.rows() != transitions.cols()) {
    throw ShapeError("crf: scores have " + std::to_string(scores.cols()) +
                     " labels but transitions are " + std::to_string(transitions.rows()) + "x" +
                     std::to_string(transitions.cols()));
  }
}

inline double lse(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace detail

// Emission scores at every position plus transitions between successive
// positions. No start or stop terms.
template <typename ScoresDerived, typename TransDerived>
double sequence_score(const Eigen::MatrixBase<ScoresDerived>& scores,
                      const Eigen::MatrixBase<TransDerived>& transitions,
                      std::span<const Label> labels) {
  detail::check_shapes(scores, transitions);
  if (static_cast<Index>(labels.size()) != scores.rows()) {
    throw ShapeError("sequence_score: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(scores.rows()) + " positions");
  }
  double total = 0.0;
  for (Index i = 0; i < scores.rows(); ++i) {
    const int y = index_of(labels[static_cast<std::size_t>(i)]);
    if (y < 0 || y >= scores.cols()) throw std::out_of_range("sequence_score: label out of range");
    total += scores(i, y);
    if (i > 0) total += transitions(index_of(labels[static_cast<std::size_t>(i - 1)]), y);
  }
  return total;
}

// Forward log-messages: alpha(i, y) = log-sum over prefixes ending in y.
template <typename ScoresDerived, typename TransDerived>
Matrix forward_messages(const Eigen::MatrixBase<ScoresDerived>& scores,
                        const Eigen::MatrixBase<TransDerived>& transitions) {
  detail::check_shapes(scores, transitions);
  const Index n = scores.rows();
  const Index L = scores.cols();
  Matrix alpha(n, L);
  alpha.row(0) = scores.row(0);
  Eigen::VectorXd tmp(L);
  for (Index i = 1; i < n; ++i) {
    for (Index y = 0; y < L; ++y) {
      for (Index prev = 0; prev < L; ++prev) tmp(prev) = alpha(i - 1, prev) + transitions(prev, y);
      alpha(i, y) = scores(i, y) + detail::lse(tmp);
    }
  }
  return alpha;
}

// Backward log-messages: beta(i, y) = log-sum over suffixes after y at i.
template <typename ScoresDerived, typename TransDerived>
Matrix backward_messages(const Eigen::MatrixBase<ScoresDerived>& scores,
                         const Eigen::MatrixBase<TransDerived>& transitions) {
  detail::check_shapes(scores, transitions);
  const Index n = scores.rows();
  const Index L = scores.cols();
  Matrix beta(n, L);
  beta.row(n - 1).setZero();
  Eigen::VectorXd tmp(L);
  for (Index i = n - 2; i >= 0; --i) {
    for (Index y = 0; y < L; ++y) {
      for (Index next = 0; next < L; ++next) {
        tmp(next) = transitions(y, next) + scores(i + 1, next) + beta(i + 1, next);
      }
      beta(i, y) = detail::lse(tmp);
    }
  }
  return beta;
}

template <typename ScoresDerived, typename TransDerived>
double log_partition(const Eigen::MatrixBase<ScoresDerived>& scores,
                     const Eigen::MatrixBase<TransDerived>& transitions) {
  const Matrix alpha = forward_messages(scores, transitions);
  return detail::lse(alpha.row(alpha.rows() - 1).transpose());
}

template <typename ScoresDerived, typename TransDerived>
double log_likelihood(const Eigen::MatrixBase<ScoresDerived>& scores,
                      const Eigen::MatrixBase<TransDerived>& transitions,
                      std::span<const Label> gold) {
  return sequence_score(scores, transitions, gold) - log_partition(scores, transitions);
}

// Posterior marginals: node(i, y) = p(y_i = y), and the transition
// expectation edge(a, b) = sum_i p(y_{i-1} = a, y_i = b).
struct Marginals {
  Matrix node;
  Matrix edge;
  double log_partition = 0.0;
};

template <typename ScoresDerived, typename TransDerived>
Marginals marginals(const Eigen::MatrixBase<ScoresDerived>& scores,
                    const Eigen::MatrixBase<TransDerived>& transitions) {
  const Matrix alpha = forward_messages(scores, transitions);
  const Matrix beta = backward_messages(scores, transitions);
  const Index n = scores.rows();
  const Index L = scores.cols();
  Marginals out;
  out.log_partition = detail::lse(alpha.row(n - 1).transpose());
  out.node = ((alpha + beta).array() - out.log_partition).exp().matrix();
  out.edge = Matrix::Zero(L, L);
  for (Index i = 1; i < n; ++i) {
    for (Index a = 0; a < L; ++a) {
      for (Index b = 0; b < L; ++b) {
        out.edge(a, b) += std::exp(alpha(i - 1, a) + transitions(a, b) + scores(i, b) +
                                   beta(i, b) - out.log_partition);
      }
    }
  }
  return out;
}

// Maximum-score label sequence. Every argmax, including the final label,
// keeps the lowest label index on ties.
template <typename ScoresDerived, typename TransDerived>
LabelSequence viterbi_decode(const Eigen::MatrixBase<ScoresDerived>& scores,
                             const Eigen::MatrixBase<TransDerived>& transitions) {
  detail::check_shapes(scores, transitions);
  const Index n = scores.rows();
  const Index L = scores.cols();
  Matrix best(n, L);
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> back(n, L);
  best.row(0) = scores.row(0);
  for (Index i = 1; i < n; ++i) {
    for (Index y = 0; y < L; ++y) {
      Index arg = 0;
      double top = best(i - 1, 0) + transitions(0, y);
      for (Index prev = 1; prev < L; ++prev) {
        const double s = best(i - 1, prev) + transitions(prev, y);
        if (s > top) {
          top = s;
          arg = prev;
        }
      }
      best(i, y) = top + scores(i, y);
      back(i, y) = static_cast<int>(arg);
    }
  }
  Index last = 0;
  for (Index y = 1; y < L; ++y)
    if (best(n - 1, y) > best(n - 1, last)) last = y;

  LabelSequence path(static_cast<std::size_t>(n));
  path[static_cast<std::size_t>(n - 1)] = static_cast<Label>(last);
  for (Index i = n - 1; i > 0; --i) {
    last = back(i, last);
    path[static_cast<std::size_t>(i - 1)] = static_cast<Label>(last);
  }
  return path;
}

struct BruteForceResult {
  double log_partition = 0.0;
  LabelSequence best;
  double best_score = 0.0;
};

inline constexpr Index kBruteForceMaxLength = 8;

// Enumerates all 4^n label sequences. Ties keep the lexicographically
// smallest sequence.
template <typename ScoresDerived, typename TransDerived>
BruteForceResult brute_force(const Eigen::MatrixBase<ScoresDerived>& scores,
                             const Eigen::MatrixBase<TransDerived>& transitions) {
  detail::check_shapes(scores, transitions);
  const Index n = scores.rows();
  if (n > kBruteForceMaxLength) {
    throw std::invalid_argument("brute_force: length " + std::to_string(n) + " exceeds " +
                                std::to_string(kBruteForceMaxLength));
  }
  const auto L = static_cast<std::size_t>(scores.cols());
  std::size_t total = 1;
  for (Index i = 0; i < n; ++i) total *= L;

  std::vector<double> all(total);
  LabelSequence labels(static_cast<std::size_t>(n));
  BruteForceResult out;
  out.best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t code = 0; code < total; ++code) {
    // Most significant digit is position 0, so codes run in lexicographic order.
    std::size_t rest = code;
    for (Index i = n - 1; i >= 0; --i) {
      labels[static_cast<std::size_t>(i)] = static_cast<Label>(rest % L);
      rest /= L;
    }
    const double s = sequence_score(scores, transitions, labels);
    all[code] = s;
    if (s > out.best_score) {
      out.best_score = s;
      out.best = labels;
    }
  }
  const Eigen::Map<const Eigen::VectorXd> v(all.data(), static_cast<Index>(all.size()));
  out.log_partition = detail::lse(v);
  return out;
}

// Tape-recorded versions used in training.

// Row i = hidden_i * W + b.
Tensor emission_scores(const Tensor& hidden, const CrfHead& head);
Tensor sequence_score(const Tensor& scores, const Tensor& transitions,
                      std::span<const Label> labels);
// Backward uses posterior marginals from forward-backward.
Tensor log_partition(const Tensor& scores, const Tensor& transitions);
Tensor log_likelihood(const Tensor& scores, const Tensor& transitions,
                      std::span<const Label> gold);

// -inf on transitions that cannot occur in a well-formed BMES sequence.
Matrix bmes_transition_mask();
// Viterbi with illegal transitions and illegal first/last labels removed.
LabelSequence constrained_viterbi_decode(const Matrix& scores, const Matrix& transitions);

}  // namespace crf
}  // namespace advseg

#endif  // ADVSEG_CRF_HPP
