#include "advseg/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace advseg {

namespace {

SharedPrivateModel fresh_model(const SyntheticData& data, std::span<const EncodedCorpus> corpora,
                               const TrainConfig& config, std::uint64_t seed) {
  std::vector<std::string> names;
  for (const auto& c : corpora) names.push_back(c.name);
  Rng rng(seed);
  return SharedPrivateModel::create(config.arch, config.model_dims(), data.vocab.char_count(),
                                    data.vocab.bigram_count(), std::move(names), rng);
}

std::string format_fs(std::span<const double> fs) {
  std::ostringstream os;
  os.precision(4);
  for (std::size_t i = 0; i < fs.size(); ++i) os << (i ? " " : "") << fs[i];
  return os.str();
}

}  // namespace

SyntheticSetup SyntheticSetup::desk_scale() {
  SyntheticSetup s;
  s.data.rules = {SegmentationRule::DigitRun, SegmentationRule::DigitEach,
                  SegmentationRule::DigitPairs};
  s.data.n_train = 500;
  s.data.n_test = 200;
  s.multi_criteria = 2;

  TrainConfig& t = s.train;
  t.arch = Architecture::ModelI;
  t.embedding_dim = 32;
  t.hidden_dim = 32;
  t.use_bigram = false;
  t.learning_rate = 0.01;
  t.lambda = 0.05;
  t.dropout_keep = 0.8;
  t.default_batch_size = 16;
  t.batch_sizes.clear();
  t.adversarial_epochs = 300;
  t.eval_interval = 10;
  t.early_stop_patience = 15;
  t.max_epochs = 600;
  return s;
}

SyntheticData::SyntheticData(const SyntheticOptions& options, double dev_fraction) {
  for (auto& c : generate_synthetic_corpora(options)) {
    corpora.push_back(make_corpus(c.name, std::move(c.train), std::move(c.test), dev_fraction,
                                  options.seed));
  }
  vocab = build_vocab(corpora, 1);
  encoded = encode_corpora(corpora, vocab);
}

std::span<const EncodedCorpus> SyntheticData::first(int n) const {
  if (n < 1 || n > static_cast<int>(encoded.size())) {
    throw std::out_of_range("SyntheticData::first: bad corpus count");
  }
  return std::span<const EncodedCorpus>(encoded).first(static_cast<std::size_t>(n));
}

std::vector<double> test_f(const SharedPrivateModel& model, std::span<const EncodedCorpus> corpora,
                           const TrainConfig& config) {
  const DecodeOptions opts{config.mask_illegal_transitions};
  std::vector<double> out;
  for (const auto& c : corpora) {
    out.push_back(evaluate(model, c, Split::Test, model.criterion_index(c.name), opts).f1);
  }
  return out;
}

double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double median(std::vector<double> xs) {
  if (xs.empty()) throw std::invalid_argument("median of an empty list");
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

SeedRun run_synthetic_seed(const SyntheticData& data, const SyntheticSetup& setup, std::uint64_t seed,
                           TrainedModel* adversarial_model, const Progress& progress) {
  const auto start = std::chrono::steady_clock::now();
  const auto corpora = data.first(setup.multi_criteria);
  TrainConfig config = setup.train;
  config.seed = seed;

  SeedRun run;
  run.seed = seed;
  for (const auto& c : corpora) {
    const std::span<const EncodedCorpus> one(&c, 1);
    auto trained = joint_train(fresh_model(data, one, config, seed), one, config);
    run.baseline_f.push_back(test_f(trained.model, one, config).front());
  }

  auto multi = joint_train(fresh_model(data, corpora, config, seed), corpora, config);
  run.multi_f = test_f(multi.model, corpora, config);

  TrainConfig adv = config;
  adv.adversarial = true;
  auto adversarial = two_phase_train(fresh_model(data, corpora, config, seed), corpora, adv);
  run.adversarial_f = test_f(adversarial.model, corpora, config);
  run.discriminator_accuracy = adversarial.phase1_discriminator_accuracy;
  if (adversarial_model != nullptr) *adversarial_model = std::move(adversarial);

  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (progress) {
    std::ostringstream os;
    os << "seed " << seed << ": baseline F [" << format_fs(run.baseline_f) << "] multi F ["
       << format_fs(run.multi_f) << "] adversarial F [" << format_fs(run.adversarial_f)
       << "] discriminator acc " << run.discriminator_accuracy << " (" << run.seconds << " s)";
    progress(os.str());
  }
  return run;
}

SyntheticReport run_synthetic_experiment(const SyntheticData& data, const SyntheticSetup& setup,
                                         TrainedModel* first_adversarial, const Progress& progress) {
  if (setup.seeds.empty()) throw std::invalid_argument("synthetic experiment needs a seed");
  SyntheticReport report;
  std::vector<double> base, multi, adv, disc;
  for (auto seed : setup.seeds) {
    TrainedModel* keep = report.runs.empty() ? first_adversarial : nullptr;
    auto run = run_synthetic_seed(data, setup, seed, keep, progress);
    base.push_back(mean(run.baseline_f));
    multi.push_back(mean(run.multi_f));
    adv.push_back(mean(run.adversarial_f));
    disc.push_back(run.discriminator_accuracy);
    if (report.baseline_min_f.empty()) {
      report.baseline_min_f = run.baseline_f;
    } else {
      for (std::size_t i = 0; i < run.baseline_f.size(); ++i) {
        report.baseline_min_f[i] = std::min(report.baseline_min_f[i], run.baseline_f[i]);
      }
    }
    report.runs.push_back(std::move(run));
  }
  report.baseline_avg = median(base);
  report.multi_avg = median(multi);
  report.adversarial_avg = median(adv);
  report.discriminator_accuracy = median(disc);
  return report;
}

TransferReport run_transfer_experiment(const TrainedModel& trained, const SyntheticData& data,
                                       int target, const TrainConfig& config) {
  if (target < 0 || target >= static_cast<int>(data.encoded.size())) {
    throw std::out_of_range("run_transfer_experiment: bad target corpus");
  }
  const auto& corpus = data.encoded[static_cast<std::size_t>(target)];
  const std::span<const EncodedCorpus> one(&corpus, 1);

  TransferReport r;
  auto transferred = transfer_train(trained, corpus, config);
  r.transferred_f = test_f(transferred.model, one, config).front();
  r.transferred_epochs = transferred.epochs_run;

  // Same architecture, criteria and budget; only the shared layer differs.
  TrainedModel random_shared;
  Rng rng(config.seed + 1000);
  random_shared.model = SharedPrivateModel::create(
      trained.model.arch, trained.model.dims, data.vocab.char_count(), data.vocab.bigram_count(),
      trained.model.criteria, rng);
  random_shared.shared_frozen = true;
  auto baseline = transfer_train(random_shared, corpus, config);
  r.random_shared_f = test_f(baseline.model, one, config).front();
  r.random_shared_epochs = baseline.epochs_run;
  return r;
}

}  // namespace advseg
