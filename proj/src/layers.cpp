#include "advseg/layers.hpp"

#include <string>
#include <vector>

namespace advseg {

namespace {

Matrix sigmoid_of(const Eigen::Ref<const Matrix>& z) {
  return (1.0 + (-z.array()).exp()).inverse().matrix();
}

void check_width(const char* op, Index expected, Index got) {
  if (expected != got) {
    throw ShapeError(std::string(op) + ": width mismatch, expected " + std::to_string(expected) +
                     " got " + std::to_string(got));
  }
}

}  // namespace

EmbeddingTable EmbeddingTable::random(Index n_chars, Index n_bigrams, Index dim, double range,
                                      Rng& rng) {
  if (dim <= 0) throw std::invalid_argument("EmbeddingTable: dim must be positive");
  EmbeddingTable t;
  t.dim = dim;
  t.unigram = Tensor(uniform_matrix(n_chars, dim, range, rng), true);
  t.bigram = Tensor(uniform_matrix(n_bigrams, dim, range, rng), true);
  return t;
}

LstmParams LstmParams::random(Index input_width, Index hidden, double range, Rng& rng) {
  LstmParams p;
  p.hidden = hidden;
  p.weight = Tensor(uniform_matrix(input_width + hidden, 4 * hidden, range, rng), true);
  p.bias = Tensor(uniform_matrix(1, 4 * hidden, range, rng), true);
  return p;
}

BiLstmParams BiLstmParams::random(Index input_width, Index hidden, double range, Rng& rng) {
  BiLstmParams p;
  p.forward = LstmParams::random(input_width, hidden, range, rng);
  p.backward = LstmParams::random(input_width, hidden, range, rng);
  return p;
}

Tensor embed_sequence(std::span<const int> char_ids, std::span<const int> bigram_ids,
                      const EmbeddingTable& table, bool use_bigram) {
  Tensor uni = gather_rows(table.unigram, char_ids);
  if (!use_bigram) return uni;
  if (bigram_ids.size() != char_ids.size()) {
    throw ShapeError("embed_sequence: " + std::to_string(bigram_ids.size()) + " bigram ids for " +
                     std::to_string(char_ids.size()) + " characters");
  }
  Tensor bi = gather_rows(table.bigram, bigram_ids);
  return concat({uni, bi}, 1);
}

LstmState lstm_step(const Tensor& x, const Tensor& h_prev, const Tensor& c_prev,
                    const LstmParams& p) {
  const Index h = p.hidden;
  check_width("lstm_step input", p.input_width(), x.cols());
  check_width("lstm_step h_prev", h, h_prev.cols());
  check_width("lstm_step c_prev", h, c_prev.cols());

  Tensor z = add(matmul(concat({x, h_prev}, 1), p.weight), p.bias);
  Tensor gates = sigmoid(slice(z, 0, 1, 0, 3 * h));
  Tensor candidate = tanh(slice(z, 0, 1, 3 * h, h));
  Tensor in_gate = slice(gates, 0, 1, 0, h);
  Tensor out_gate = slice(gates, 0, 1, h, h);
  Tensor forget_gate = slice(gates, 0, 1, 2 * h, h);

  Tensor c = add(mul(c_prev, forget_gate), mul(candidate, in_gate));
  Tensor h_new = mul(out_gate, tanh(c));
  return {h_new, c};
}

Tensor lstm_sequence(const Tensor& inputs, const LstmParams& p, bool reverse) {
  const Index n = inputs.rows();
  const Index h = p.hidden;
  const Index d_in = p.input_width();
  if (n == 0) throw ShapeError("lstm_sequence: empty sequence");
  check_width("lstm_sequence", d_in, inputs.cols());

  const Matrix& W = p.weight.value();
  const auto Wx = W.topRows(d_in);
  const auto Wh = W.bottomRows(h);

  // Per position: [i, o, f, g] activations, cell, tanh(cell).
  Matrix projected = inputs.value() * Wx;
  projected.rowwise() += p.bias.value().row(0);
  Matrix acts(n, 4 * h);
  Matrix cells(n, h);
  Matrix cell_tanh(n, h);
  Matrix hidden(n, h);

  RowVector h_prev = RowVector::Zero(h);
  RowVector c_prev = RowVector::Zero(h);
  for (Index step = 0; step < n; ++step) {
    const Index pos = reverse ? n - 1 - step : step;
    RowVector z = projected.row(pos) + h_prev * Wh;
    acts.row(pos).head(3 * h) = sigmoid_of(z.head(3 * h));
    acts.row(pos).tail(h) = z.tail(h).array().tanh().matrix();
    const auto gi = acts.row(pos).segment(0, h).array();
    const auto go = acts.row(pos).segment(h, h).array();
    const auto gf = acts.row(pos).segment(2 * h, h).array();
    const auto gg = acts.row(pos).segment(3 * h, h).array();
    cells.row(pos) = (c_prev.array() * gf + gg * gi).matrix();
    cell_tanh.row(pos) = cells.row(pos).array().tanh().matrix();
    hidden.row(pos) = (go * cell_tanh.row(pos).array()).matrix();
    h_prev = hidden.row(pos);
    c_prev = cells.row(pos);
  }

  Tensor out(hidden);
  const Tensor recorded[] = {inputs, p.weight, p.bias};
  Tape::record(recorded, out,
               [inputs, weight = p.weight, bias = p.bias, acts = std::move(acts),
                cells = std::move(cells), cell_tanh = std::move(cell_tanh), hidden, reverse, n, h,
                d_in](const Matrix& g) mutable {
                 const Matrix& Wv = weight.value();
                 const auto Whv = Wv.bottomRows(h);
                 Matrix d_proj(n, 4 * h);
                 Matrix dWh = Matrix::Zero(h, 4 * h);
                 RowVector dh_next = RowVector::Zero(h);
                 RowVector dc_next = RowVector::Zero(h);
                 for (Index step = n - 1; step >= 0; --step) {
                   const Index pos = reverse ? n - 1 - step : step;
                   const bool first = step == 0;
                   const Index prev = reverse ? pos + 1 : pos - 1;
                   const auto gi = acts.row(pos).segment(0, h).array();
                   const auto go = acts.row(pos).segment(h, h).array();
                   const auto gf = acts.row(pos).segment(2 * h, h).array();
                   const auto gg = acts.row(pos).segment(3 * h, h).array();
                   const auto tc = cell_tanh.row(pos).array();

                   const RowVector dh = g.row(pos) + dh_next;
                   const RowVector dc =
                       (dh.array() * go * (1.0 - tc.square()) + dc_next.array()).matrix();
                   RowVector dz(4 * h);
                   dz.segment(0, h) = (dc.array() * gg * gi * (1.0 - gi)).matrix();
                   dz.segment(h, h) = (dh.array() * tc * go * (1.0 - go)).matrix();
                   if (first) {
                     dz.segment(2 * h, h).setZero();
                   } else {
                     dz.segment(2 * h, h) =
                         (dc.array() * cells.row(prev).array() * gf * (1.0 - gf)).matrix();
                   }
                   dz.segment(3 * h, h) = (dc.array() * gi * (1.0 - gg.square())).matrix();
                   d_proj.row(pos) = dz;

                   dc_next = (dc.array() * gf).matrix();
                   if (!first) {
                     dWh.noalias() += hidden.row(prev).transpose() * dz;
                     dh_next = dz * Whv.transpose();
                   }
                 }
                 if (weight.requires_grad()) {
                   weight.accumulate_grad_block(0, 0, inputs.value().transpose() * d_proj);
                   weight.accumulate_grad_block(d_in, 0, dWh);
                 }
                 if (bias.requires_grad()) bias.accumulate_grad(d_proj.colwise().sum());
                 if (inputs.requires_grad()) {
                   inputs.accumulate_grad(d_proj * Wv.topRows(d_in).transpose());
                 }
               });
  return out;
}

Tensor bilstm_forward(const Tensor& inputs, const BiLstmParams& p) {
  if (inputs.rows() == 0) throw ShapeError("bilstm_forward: empty sequence");
  if (p.forward.hidden != p.backward.hidden) {
    throw ShapeError("bilstm_forward: forward and backward hidden sizes differ");
  }
  Tensor fwd = lstm_sequence(inputs, p.forward, false);
  Tensor bwd = lstm_sequence(inputs, p.backward, true);
  return concat({fwd, bwd}, 1);
}

Tensor dropout(const Tensor& x, double keep_rate, Mode mode, Rng& rng) {
  if (!(keep_rate > 0.0 && keep_rate <= 1.0)) {
    throw std::invalid_argument("dropout: keep_rate must be in (0, 1], got " +
                                std::to_string(keep_rate));
  }
  if (mode == Mode::Eval || keep_rate == 1.0) return x;
  Matrix mask(x.rows(), x.cols());
  const double survivor = 1.0 / keep_rate;
  for (Index r = 0; r < mask.rows(); ++r)
    for (Index c = 0; c < mask.cols(); ++c) mask(r, c) = uniform01(rng) < keep_rate ? survivor : 0.0;
  return mul(x, constant(std::move(mask)));
}

}  // namespace advseg
