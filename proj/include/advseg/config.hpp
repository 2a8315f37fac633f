#ifndef ADVSEG_CONFIG_HPP
#define ADVSEG_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include <json.hpp>

#include "advseg/multitask.hpp"

namespace advseg {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Hyperparameters. Defaults are the published CWS settings; the desk-scale
// experiment overrides sizes and schedule lengths.
struct TrainConfig {
  Architecture arch = Architecture::ModelI;
  bool adversarial = true;
  Index embedding_dim = 100;
  Index hidden_dim = 100;
  bool use_bigram = true;
  double learning_rate = 0.01;
  double lambda = 0.05;
  double dropout_keep = 0.8;
  double init_range = 0.05;
  int default_batch_size = 128;
  // Lower-cased corpus name -> batch size.
  std::map<std::string, int> batch_sizes{{"as", 512}, {"msr", 256}};
  int adversarial_epochs = 2400;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int early_stop_patience = 10;
  int eval_interval = 20;
  // Upper bound on epochs for the early-stopped phases.
  int max_epochs = 20000;
  int min_freq = 1;
  double dev_fraction = 0.1;
  std::uint64_t seed = 1;
  bool mask_illegal_transitions = false;

  int batch_size_for(std::string_view corpus) const;
  ModelDims model_dims() const;
  // Throws ConfigError on the first violated constraint.
  void validate() const;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);

  // "key = value" lines; '#' starts a comment. Keys are the field names
  // above, with "batch_size" for the default and "batch_size.<corpus>" for
  // overrides. Unknown keys and ill-typed values are errors.
  static TrainConfig parse(std::string_view text);
  static TrainConfig load(const std::filesystem::path& path);
};

}  // namespace advseg

#endif  // ADVSEG_CONFIG_HPP
