#ifndef ADVSEG_EXPERIMENT_HPP
#define ADVSEG_EXPERIMENT_HPP

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "advseg/config.hpp"
#include "advseg/data.hpp"
#include "advseg/training.hpp"

namespace advseg {

// Desk-scale synthetic study. The first `multi_criteria` rules form the
// multi-criteria task; any further rule is held out for transfer.
struct SyntheticSetup {
  SyntheticOptions data;
  int multi_criteria = 2;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{1, 2, 3};

  static SyntheticSetup desk_scale();
};

// Generated corpora with their vocabulary and encodings. Encodings point
// into `corpora`, so the object is move-only.
struct SyntheticData {
  std::vector<CriterionCorpus> corpora;
  Vocabulary vocab;
  std::vector<EncodedCorpus> encoded;

  SyntheticData(const SyntheticOptions& options, double dev_fraction);
  SyntheticData(const SyntheticData&) = delete;
  SyntheticData& operator=(const SyntheticData&) = delete;
  SyntheticData(SyntheticData&&) = default;
  SyntheticData& operator=(SyntheticData&&) = default;

  std::span<const EncodedCorpus> first(int n) const;
};

std::vector<double> test_f(const SharedPrivateModel& model, std::span<const EncodedCorpus> corpora,
                           const TrainConfig& config);
double mean(std::span<const double> xs);
double median(std::vector<double> xs);

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<double> baseline_f;     // one single-criterion model per corpus
  std::vector<double> multi_f;        // Model-I, joint training without adversary
  std::vector<double> adversarial_f;  // Model-I, two-phase adversarial training
  double discriminator_accuracy = 0.0;
  double seconds = 0.0;
};

struct SyntheticReport {
  std::vector<SeedRun> runs;
  double baseline_avg = 0.0;  // medians over seeds of the per-seed averages
  double multi_avg = 0.0;
  double adversarial_avg = 0.0;
  double discriminator_accuracy = 0.0;
  std::vector<double> baseline_min_f;  // worst seed per criterion
};

using Progress = std::function<void(const std::string&)>;

// `adversarial_model` receives the adversarially trained model when given.
SeedRun run_synthetic_seed(const SyntheticData& data, const SyntheticSetup& setup, std::uint64_t seed,
                           TrainedModel* adversarial_model = nullptr, const Progress& progress = {});

// `first_adversarial` receives the adversarial model of the first seed.
SyntheticReport run_synthetic_experiment(const SyntheticData& data, const SyntheticSetup& setup,
                                         TrainedModel* first_adversarial = nullptr,
                                         const Progress& progress = {});

struct TransferReport {
  double transferred_f = 0.0;    // private tower over the trained shared layer
  double random_shared_f = 0.0;  // same budget over a random frozen shared layer
  int transferred_epochs = 0;
  int random_shared_epochs = 0;
};

// Trains `data.encoded[target]` against the frozen shared layer of
// `trained`, and against a randomly initialized frozen one.
TransferReport run_transfer_experiment(const TrainedModel& trained, const SyntheticData& data,
                                       int target, const TrainConfig& config);

}  // namespace advseg

#endif  // ADVSEG_EXPERIMENT_HPP
