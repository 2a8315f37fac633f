#ifndef ADVSEG_LAYERS_HPP
#define ADVSEG_LAYERS_HPP

#include <span>

#include "advseg/random.hpp"
#include "advseg/tensor.hpp"

namespace advseg {

// Row 0 is padding, row 1 the unknown symbol, in both tables.
struct EmbeddingTable {
  Tensor unigram;  // |V_char| x dim
  Tensor bigram;   // |V_bigram| x dim
  Index dim = 0;

  static EmbeddingTable random(Index n_chars, Index n_bigrams, Index dim, double range, Rng& rng);
  Index input_width(bool use_bigram) const { return use_bigram ? 2 * dim : dim; }
};

// Gate blocks along the 4*hidden columns of `weight` and `bias`, in order:
// input, output, forget, candidate. Rows of `weight` are the input width
// followed by the hidden width, matching [x; h_prev].
struct LstmParams {
  Tensor weight;  // (d_in + d_h) x 4 d_h
  Tensor bias;    // 1 x 4 d_h
  Index hidden = 0;

  static LstmParams random(Index input_width, Index hidden, double range, Rng& rng);
  Index input_width() const { return weight.rows() - hidden; }
};

struct BiLstmParams {
  LstmParams forward;
  LstmParams backward;

  static BiLstmParams random(Index input_width, Index hidden, double range, Rng& rng);
  Index hidden() const { return forward.hidden; }
  Index input_width() const { return forward.input_width(); }
  Index output_width() const { return 2 * forward.hidden; }
};

struct LstmState {
  Tensor h;
  Tensor c;
};

enum class Mode { Train, Eval };

// n x d_in matrix: unigram rows, joined column-wise with bigram rows when
// use_bigram is set. bigram_ids[i] encodes (x_i, x_{i+1}).
Tensor embed_sequence(std::span<const int> char_ids, std::span<const int> bigram_ids,
                      const EmbeddingTable& table, bool use_bigram);

// One LSTM step built from tensor primitives (no peepholes).
LstmState lstm_step(const Tensor& x, const Tensor& h_prev, const Tensor& c_prev,
                    const LstmParams& p);

// Runs one direction over the rows of `inputs` from zero initial state and
// returns the n x d_h hidden states in position order. Recorded as a single
// tape operation with a hand-written backward pass through time.
Tensor lstm_sequence(const Tensor& inputs, const LstmParams& p, bool reverse);

// Row i is forward state i joined with backward state i (n x 2 d_h).
Tensor bilstm_forward(const Tensor& inputs, const BiLstmParams& p);

// Inverted dropout: each coordinate kept with probability keep_rate and
// scaled by 1/keep_rate. Identity in eval mode.
Tensor dropout(const Tensor& x, double keep_rate, Mode mode, Rng& rng);

}  // namespace advseg

#endif  // ADVSEG_LAYERS_HPP
