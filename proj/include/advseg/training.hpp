#ifndef ADVSEG_TRAINING_HPP
#define ADVSEG_TRAINING_HPP

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "advseg/config.hpp"
#include "advseg/data.hpp"
#include "advseg/eval.hpp"
#include "advseg/multitask.hpp"

namespace advseg {

struct AdamHyper {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamHyper from(const TrainConfig& c) {
    return {c.learning_rate, c.adam_beta1, c.adam_beta2, c.adam_epsilon};
  }
};

// Moments per parameter name. Each slot counts its own updates for bias
// correction; t counts adam_step calls.
struct AdamState {
  struct Slot {
    Matrix m;
    Matrix v;
    long steps = 0;
  };
  std::map<std::string, Slot> slots;
  long t = 0;
};

// Gradient ascent: theta += lr * m_hat / (sqrt(v_hat) + eps). Every listed
// parameter must hold a gradient; gradients are cleared afterwards.
void adam_step(std::span<const NamedParam> params, AdamState& state, const AdamHyper& hyper);

struct EncodedCorpus {
  std::string name;
  std::vector<EncodedSentence> train;
  std::vector<EncodedSentence> dev;
  std::vector<EncodedSentence> test;
  const CriterionCorpus* source = nullptr;  // gold spans and lexicon
};

EncodedCorpus encode_corpus(const CriterionCorpus& corpus, const Vocabulary& vocab);
std::vector<EncodedCorpus> encode_corpora(std::span<const CriterionCorpus> corpora,
                                          const Vocabulary& vocab);

enum class Split { Train, Dev, Test };

SegmentationScore evaluate(const SharedPrivateModel& model, const EncodedCorpus& corpus, Split split,
                           int m, const DecodeOptions& options = {});

// Draws batches without replacement from a shuffled pass over one corpus,
// reshuffling when fewer than a full batch remain.
class BatchSampler {
 public:
  BatchSampler(std::size_t corpus_size, std::size_t batch_size);
  std::vector<std::size_t> next(Rng& rng);

 private:
  std::vector<std::size_t> order_;
  std::size_t cursor_;
  std::size_t batch_;
};

struct EpochReport {
  int epoch = 0;
  std::vector<double> seg;            // J_seg per corpus (phase A)
  std::vector<double> entropy;        // J2_adv per corpus (phase A)
  std::vector<double> discriminator;  // J1_adv per corpus (phase B)
};

struct LogRow {
  std::string phase;
  int epoch = 0;
  std::string corpus;
  double seg = 0.0;
  double entropy = 0.0;
  double discriminator = 0.0;
  bool has_dev = false;
  SegmentationScore dev;
};

// One line, tab-separated: phase epoch corpus seg entropy disc dev_P dev_R dev_F.
std::string format_log_row(const LogRow& row);
std::string log_header();

// Mutable state carried across epochs of one run.
struct TrainingState {
  Rng rng;
  AdamState adam;
  std::vector<BatchSampler> samplers;
  int epoch = 0;
  std::vector<LogRow> log;
  std::function<void(const LogRow&)> sink;
  // Called after each phase of train_epoch with 'A' or 'B'.
  std::function<void(const SharedPrivateModel&, char)> on_phase_end;

  TrainingState(std::span<const EncodedCorpus> corpora, const TrainConfig& config);
};

// One iteration of the alternating procedure. Phase A: for each corpus m,
// one batch, ascend J_seg + lambda J2 on Theta^s and Theta^m. Phase B (when
// `adversarial`): for each corpus, one batch, ascend J1 on Theta^d.
// corpora[i] is criterion i of the model.
EpochReport train_epoch(SharedPrivateModel& model, std::span<const EncodedCorpus> corpora,
                        const TrainConfig& config, TrainingState& state, bool adversarial);

// One batch per corpus, J_seg only, updating Theta^m. Theta^s, Theta^d
// stay fixed. `criteria` selects which corpora train (all when empty).
EpochReport finetune_epoch(SharedPrivateModel& model, std::span<const EncodedCorpus> corpora,
                           const TrainConfig& config, TrainingState& state,
                           std::span<const int> criteria = {});

struct TrainedModel {
  SharedPrivateModel model;
  bool shared_frozen = false;
  double best_dev_f = 0.0;
  int best_epoch = 0;
  int epochs_run = 0;
  // Measured on dev sets after the adversarial phase; negative when none ran.
  double phase1_discriminator_accuracy = -1.0;
  std::vector<LogRow> log;
};

// Mean dev F over the given criteria (all when empty).
double average_dev_f(const SharedPrivateModel& model, std::span<const EncodedCorpus> corpora,
                     const TrainConfig& config, std::span<const int> criteria = {});

// Phase 1: config.adversarial_epochs of train_epoch. Phase 2: Theta^s and
// Theta^d frozen, J_seg on Theta^m with early stopping on average dev F.
// Returns the best-dev snapshot. `on_phase1_end` sees the model between
// the phases.
TrainedModel two_phase_train(SharedPrivateModel model, std::span<const EncodedCorpus> corpora,
                             const TrainConfig& config,
                             std::function<void(const LogRow&)> sink = {},
                             const std::function<void(const SharedPrivateModel&)>& on_phase1_end = {});

// Multi-task training without adversary: Phase A only with lambda = 0 over
// Theta^s and Theta^m, early-stopped on average dev F.
TrainedModel joint_train(SharedPrivateModel model, std::span<const EncodedCorpus> corpora,
                         const TrainConfig& config, std::function<void(const LogRow&)> sink = {});

// Adds a criterion for `corpus` and trains only its private tower and head
// against the frozen shared layer, with early stopping on its dev F.
TrainedModel transfer_train(const TrainedModel& trained, const EncodedCorpus& corpus,
                            const TrainConfig& config,
                            std::function<void(const LogRow&)> sink = {});

// Parameter values by name, for routing checks.
std::map<std::string, Matrix> snapshot(const SharedPrivateModel& model, ParamGroup group,
                                       int criterion = -1);
bool snapshots_equal(const std::map<std::string, Matrix>& a, const std::map<std::string, Matrix>& b);

}  // namespace advseg

#endif  // ADVSEG_TRAINING_HPP
