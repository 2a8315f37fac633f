#ifndef ADVSEG_MULTITASK_HPP
#define ADVSEG_MULTITASK_HPP

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "advseg/crf.hpp"
#include "advseg/data.hpp"
#include "advseg/layers.hpp"
#include "advseg/tensor.hpp"

namespace advseg {

// How shared and private Bi-LSTMs feed the CRF head.
//   ModelI:   both towers read the embeddings; head sees [shared; private].
//   ModelII:  private tower reads [embedding; shared]; head sees private only.
//   ModelIII: wired as ModelII; head sees [shared; private] as ModelI.
enum class Architecture { ModelI, ModelII, ModelIII };

std::string architecture_name(Architecture a);
// Accepts "model1".."model3" and "I".."III".
Architecture parse_architecture(std::string_view name);

// Linear layer plus softmax over criteria, applied to the mean of the
// shared states.
struct DiscriminatorParams {
  Tensor weight;  // 2 d_h x M
  Tensor bias;    // 1 x M
};

// Theta^s: embedding table and shared tower. Theta^m: private tower and
// CRF head of criterion m. Theta^d: the discriminator.
enum class ParamGroup { Shared, Private, Discriminator };

struct NamedParam {
  std::string name;
  Tensor tensor;
  ParamGroup group;
  int criterion = -1;  // for Private
};

struct ModelDims {
  Index embedding_dim = 100;
  Index hidden_dim = 100;
  bool use_bigram = true;
  double init_range = 0.05;
};

struct SharedPrivateModel {
  Architecture arch = Architecture::ModelI;
  ModelDims dims;
  std::vector<std::string> criteria;
  EmbeddingTable embedding;
  BiLstmParams shared;
  std::vector<BiLstmParams> privates;
  std::vector<CrfHead> heads;
  DiscriminatorParams discriminator;

  static SharedPrivateModel create(Architecture arch, const ModelDims& dims, Index n_chars,
                                   Index n_bigrams, std::vector<std::string> criteria, Rng& rng);

  int criteria_count() const { return static_cast<int>(criteria.size()); }
  // Throws std::out_of_range listing the available names.
  int criterion_index(std::string_view name) const;
  Index input_width() const { return embedding.input_width(dims.use_bigram); }
  Index private_input_width() const;
  Index head_width() const;

  // Every trainable tensor exactly once, in a fixed order.
  std::vector<NamedParam> parameters() const;
  std::vector<NamedParam> parameters(ParamGroup group, int criterion = -1) const;

  // Appends a freshly initialized private tower and head, and a new
  // discriminator column. Returns the new criterion index.
  int add_criterion(std::string name, Rng& rng);

  // Independent copy of every parameter.
  SharedPrivateModel clone() const;
};

struct ForwardContext {
  Mode mode = Mode::Eval;
  double keep_rate = 1.0;
  Rng* rng = nullptr;

  static ForwardContext eval() { return {}; }
  static ForwardContext train(double keep_rate, Rng& rng) { return {Mode::Train, keep_rate, &rng}; }
};

// Embedding lookup followed by dropout when training.
Tensor embed(const SharedPrivateModel& model, const EncodedSentence& s, ForwardContext& ctx);

struct Features {
  Tensor task;    // n x head_width()
  Tensor shared;  // n x 2 d_h
};

Features forward_features(const SharedPrivateModel& model, const Tensor& embedded, int m);

// 1 x M probabilities p(. | X).
Tensor discriminator_forward(const Tensor& shared_states, const DiscriminatorParams& d);
Tensor discriminator_log_probs(const Tensor& shared_states, const DiscriminatorParams& d);

// Each returns a quantity to maximize, summed over the batch.

// Sum of CRF log-likelihoods under head m.
Tensor loss_seg(const SharedPrivateModel& model, std::span<const EncodedSentence> batch, int m,
                ForwardContext& ctx);
// Sum of log p(m | X); the shared states enter as constants.
Tensor loss_adv_discriminator(const SharedPrivateModel& model,
                              std::span<const EncodedSentence> batch, int m, ForwardContext& ctx);
// Sum of H(p(. | X)); the discriminator enters as constants.
Tensor loss_adv_entropy(const SharedPrivateModel& model, std::span<const EncodedSentence> batch,
                        int m, ForwardContext& ctx);

double entropy(const Eigen::Ref<const RowVector>& p);

struct ObjectiveTerms {
  Tensor seg;
  Tensor adv_discriminator;
  Tensor adv_entropy;
  Tensor total;  // seg + adv_discriminator + lambda * adv_entropy
};

// All three terms on one batch, sharing one embedding pass (and dropout
// mask) per sentence. With the detachments above, one backward of `total`
// routes grad(J_seg + lambda J2) to Theta^s, grad J_seg to Theta^m and
// grad J1 to Theta^d.
ObjectiveTerms combined_objective(const SharedPrivateModel& model,
                                  std::span<const EncodedSentence> batch, int m, double lambda,
                                  ForwardContext& ctx);

// J_seg + lambda * J2 without the discriminator term (adv_discriminator is
// a constant 0, adv_entropy too when lambda is 0); same gradients on
// Theta^s and Theta^m as combined_objective.
ObjectiveTerms tagger_objective(const SharedPrivateModel& model, std::span<const EncodedSentence> batch,
                        int m, double lambda, ForwardContext& ctx);

struct DecodeOptions {
  bool mask_illegal_transitions = false;
};

LabelSequence decode(const SharedPrivateModel& model, const EncodedSentence& s, int m,
                     const DecodeOptions& options = {});
std::vector<SpanList> segment(const SharedPrivateModel& model, std::span<const EncodedSentence> batch,
                              int m, const DecodeOptions& options = {});

// Fraction of sentences whose argmax criterion equals their true one.
struct LabeledBatch {
  std::span<const EncodedSentence> sentences;
  int criterion;
};
double discriminator_accuracy(const SharedPrivateModel& model, std::span<const LabeledBatch> data);

// Checkpoint: "ADVSEGCK", u32 format version, u64 header length, a JSON
// header (architecture, dims, criteria, vocabulary, config echo, tensor
// index), then every tensor as row-major little-endian doubles in index
// order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  SharedPrivateModel model;
  Vocabulary vocab;
  nlohmann::json config;
};

void save_checkpoint(const std::filesystem::path& path, const SharedPrivateModel& model,
                     const Vocabulary& vocab, const nlohmann::json& config);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace advseg

#endif  // ADVSEG_MULTITASK_HPP
