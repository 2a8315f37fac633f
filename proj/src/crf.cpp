#include "advseg/crf.hpp"

namespace advseg {

char label_char(Label l) {
  switch (l) {
    case Label::B: return 'B';
    case Label::M: return 'M';
    case Label::E: return 'E';
    case Label::S: return 'S';
  }
  return '?';
}

namespace crf {

Tensor emission_scores(const Tensor& hidden, const CrfHead& head) {
  if (hidden.rows() == 0) throw ShapeError("emission_scores: empty sequence");
  if (hidden.cols() != head.feature_width()) {
    throw ShapeError("emission_scores: features are " + hidden.shape_string() +
                     " but head expects width " + std::to_string(head.feature_width()));
  }
  return add(matmul(hidden, head.weight), head.bias);
}

Tensor sequence_score(const Tensor& scores, const Tensor& transitions,
                      std::span<const Label> labels) {
  Tensor out = Tensor::scalar(sequence_score(scores.value(), transitions.value(), labels));
  const Tensor inputs[] = {scores, transitions};
  LabelSequence kept(labels.begin(), labels.end());
  Tape::record(inputs, out, [scores, transitions, kept](const Matrix& g) mutable {
    const double w = g(0, 0);
    if (scores.requires_grad()) {
      Matrix ds = Matrix::Zero(scores.rows(), scores.cols());
      for (std::size_t i = 0; i < kept.size(); ++i) ds(static_cast<Index>(i), index_of(kept[i])) = w;
      scores.accumulate_grad(ds);
    }
    if (transitions.requires_grad()) {
      Matrix dt = Matrix::Zero(transitions.rows(), transitions.cols());
      for (std::size_t i = 1; i < kept.size(); ++i) dt(index_of(kept[i - 1]), index_of(kept[i])) += w;
      transitions.accumulate_grad(dt);
    }
  });
  return out;
}

Tensor log_partition(const Tensor& scores, const Tensor& transitions) {
  if (!scores.requires_grad() && !transitions.requires_grad()) {
    return Tensor::scalar(log_partition(scores.value(), transitions.value()));
  }
  Marginals m = marginals(scores.value(), transitions.value());
  Tensor out = Tensor::scalar(m.log_partition);
  const Tensor inputs[] = {scores, transitions};
  Tape::record(inputs, out, [scores, transitions, m = std::move(m)](const Matrix& g) mutable {
    const double w = g(0, 0);
    if (scores.requires_grad()) scores.accumulate_grad(w * m.node);
    if (transitions.requires_grad()) transitions.accumulate_grad(w * m.edge);
  });
  return out;
}

Tensor log_likelihood(const Tensor& scores, const Tensor& transitions,
                      std::span<const Label> gold) {
  return sub(sequence_score(scores, transitions, gold), log_partition(scores, transitions));
}

Matrix bmes_transition_mask() {
  constexpr double kNeg = -std::numeric_limits<double>::infinity();
  Matrix mask = Matrix::Zero(kNumLabels, kNumLabels);
  // After B or M only M or E may follow; after E or S only B or S.
  for (Label from : {Label::B, Label::M}) {
    mask(index_of(from), index_of(Label::B)) = kNeg;
    mask(index_of(from), index_of(Label::S)) = kNeg;
  }
  for (Label from : {Label::E, Label::S}) {
    mask(index_of(from), index_of(Label::M)) = kNeg;
    mask(index_of(from), index_of(Label::E)) = kNeg;
  }
  return mask;
}

LabelSequence constrained_viterbi_decode(const Matrix& scores, const Matrix& transitions) {
  constexpr double kNeg = -std::numeric_limits<double>::infinity();
  Matrix s = scores;
  s(0, index_of(Label::M)) = kNeg;
  s(0, index_of(Label::E)) = kNeg;
  s(s.rows() - 1, index_of(Label::B)) = kNeg;
  s(s.rows() - 1, index_of(Label::M)) = kNeg;
  const Matrix t = transitions + bmes_transition_mask();
  return viterbi_decode(s, t);
}

}  // namespace crf
}  // namespace advseg
