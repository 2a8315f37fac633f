#include "advseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace advseg {

namespace {

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string(what) + " is not finite");
}

std::vector<EncodedSentence> gather(const std::vector<EncodedSentence>& data,
                                    const std::vector<std::size_t>& idx) {
  std::vector<EncodedSentence> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(data[i]);
  return out;
}

// Theta^s minus the bigram table when bigrams are not read.
std::vector<NamedParam> shared_trainable(const SharedPrivateModel& model) {
  auto ps = model.parameters(ParamGroup::Shared);
  if (!model.dims.use_bigram) {
    std::erase_if(ps, [](const NamedParam& p) { return p.name == "embedding.bigram"; });
  }
  return ps;
}

void clear_grads(const SharedPrivateModel& model) {
  for (auto& p : model.parameters()) p.tensor.zero_grad();
}

// Only the private parameters of `criteria` remain trainable.
void freeze_all_but(const SharedPrivateModel& model, std::span<const int> criteria) {
  for (const auto& p : model.parameters()) {
    const bool keep = p.group == ParamGroup::Private &&
                      std::find(criteria.begin(), criteria.end(), p.criterion) != criteria.end();
    Tensor t = p.tensor;
    t.set_requires_grad(keep);
  }
}

std::vector<int> all_criteria(std::size_t n) {
  std::vector<int> out(n);
  std::iota(out.begin(), out.end(), 0);
  return out;
}

const std::vector<TaggedSentence>& gold_split(const CriterionCorpus& c, Split split) {
  switch (split) {
    case Split::Train: return c.train;
    case Split::Dev: return c.dev;
    case Split::Test: return c.test;
  }
  throw std::logic_error("unknown split");
}

const std::vector<EncodedSentence>& encoded_split(const EncodedCorpus& c, Split split) {
  switch (split) {
    case Split::Train: return c.train;
    case Split::Dev: return c.dev;
    case Split::Test: return c.test;
  }
  throw std::logic_error("unknown split");
}

void emit(TrainingState& state, LogRow row) {
  if (state.sink) state.sink(row);
  state.log.push_back(std::move(row));
}

void log_epoch(TrainingState& state, const std::string& phase, const EpochReport& report,
               const SharedPrivateModel& model, std::span<const EncodedCorpus> corpora,
               std::span<const int> criteria, const TrainConfig& config, bool with_dev) {
  const DecodeOptions opts{config.mask_illegal_transitions};
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    LogRow row;
    row.phase = phase;
    row.epoch = report.epoch;
    row.corpus = corpora[i].name;
    if (i < report.seg.size()) row.seg = report.seg[i];
    if (i < report.entropy.size()) row.entropy = report.entropy[i];
    if (i < report.discriminator.size()) row.discriminator = report.discriminator[i];
    if (with_dev && !corpora[i].dev.empty()) {
      row.has_dev = true;
      row.dev = evaluate(model, corpora[i], Split::Dev, criteria[i], opts);
    }
    emit(state, std::move(row));
  }
}

struct EarlyStopResult {
  SharedPrivateModel best;
  double best_f = -1.0;
  int best_epoch = 0;
  int epochs_run = 0;
};

// Runs `epoch_fn` until dev F (checked every eval_interval epochs, and once
// before the first epoch) fails to improve for early_stop_patience checks.
template <typename EpochFn>
EarlyStopResult early_stopped(SharedPrivateModel& model, std::span<const EncodedCorpus> corpora,
                              std::span<const int> criteria, const TrainConfig& config,
                              TrainingState& state, const std::string& phase, EpochFn epoch_fn) {
  EarlyStopResult r{model.clone()};
  r.best_f = average_dev_f(model, corpora, config, criteria);
  int stale = 0;
  for (int e = 1; e <= config.max_epochs; ++e) {
    EpochReport report = epoch_fn();
    report.epoch = e;
    r.epochs_run = e;
    const bool check = e % config.eval_interval == 0 || e == config.max_epochs;
    log_epoch(state, phase, report, model, corpora, criteria, config, check);
    if (!check) continue;
    const double f = average_dev_f(model, corpora, config, criteria);
    // Ties move the snapshot to the later (longer trained) model; only a
    // strict gain resets patience.
    const bool gain = f > r.best_f;
    if (f >= r.best_f) {
      r.best_f = f;
      r.best_epoch = e;
      r.best = model.clone();
    }
    stale = gain ? 0 : stale + 1;
    if (stale >= config.early_stop_patience) break;
  }
  return r;
}

}  // namespace

void adam_step(std::span<const NamedParam> params, AdamState& state, const AdamHyper& hyper) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) {
      throw std::logic_error("adam_step: parameter '" + p.name + "' has no gradient");
    }
  }
  ++state.t;
  for (const auto& p : params) {
    Tensor t = p.tensor;
    const Matrix& g = t.grad();
    auto& slot = state.slots[p.name];
    if (slot.m.rows() != g.rows() || slot.m.cols() != g.cols()) {
      // New parameter, or one that grew (a discriminator column).
      Matrix m = Matrix::Zero(g.rows(), g.cols());
      Matrix v = Matrix::Zero(g.rows(), g.cols());
      const Index r = std::min(slot.m.rows(), g.rows());
      const Index c = std::min(slot.m.cols(), g.cols());
      if (slot.m.size() > 0) {
        m.topLeftCorner(r, c) = slot.m.topLeftCorner(r, c);
        v.topLeftCorner(r, c) = slot.v.topLeftCorner(r, c);
      }
      slot.m = std::move(m);
      slot.v = std::move(v);
    }
    ++slot.steps;
    slot.m = hyper.beta1 * slot.m + (1.0 - hyper.beta1) * g;
    slot.v = hyper.beta2 * slot.v + (1.0 - hyper.beta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(slot.steps));
    const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(slot.steps));
    Matrix& w = t.mutable_value();
    w.array() += hyper.learning_rate * (slot.m.array() / c1) /
                 ((slot.v.array() / c2).sqrt() + hyper.epsilon);
    if (!w.allFinite()) throw NumericError("adam_step: parameter '" + p.name + "' became non-finite");
    t.zero_grad();
  }
}

EncodedCorpus encode_corpus(const CriterionCorpus& corpus, const Vocabulary& vocab) {
  EncodedCorpus out;
  out.name = corpus.name;
  out.source = &corpus;
  auto enc = [&](const std::vector<TaggedSentence>& in, std::vector<EncodedSentence>& dst) {
    dst.reserve(in.size());
    for (const auto& s : in) dst.push_back(vocab.encode(s));
  };
  enc(corpus.train, out.train);
  enc(corpus.dev, out.dev);
  enc(corpus.test, out.test);
  return out;
}

std::vector<EncodedCorpus> encode_corpora(std::span<const CriterionCorpus> corpora,
                                          const Vocabulary& vocab) {
  std::vector<EncodedCorpus> out;
  out.reserve(corpora.size());
  for (const auto& c : corpora) out.push_back(encode_corpus(c, vocab));
  return out;
}

SegmentationScore evaluate(const SharedPrivateModel& model, const EncodedCorpus& corpus, Split split,
                           int m, const DecodeOptions& options) {
  if (corpus.source == nullptr) throw std::logic_error("evaluate: corpus has no gold source");
  const auto& gold = gold_split(*corpus.source, split);
  const auto& enc = encoded_split(corpus, split);
  const auto predicted = segment(model, enc, m, options);
  return score(gold, predicted, corpus.source->train_words);
}

BatchSampler::BatchSampler(std::size_t corpus_size, std::size_t batch_size)
    : order_(corpus_size), cursor_(corpus_size), batch_(std::min(batch_size, corpus_size)) {
  if (corpus_size == 0) throw std::invalid_argument("BatchSampler: empty corpus");
  if (batch_size == 0) throw std::invalid_argument("BatchSampler: batch size must be positive");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
}

std::vector<std::size_t> BatchSampler::next(Rng& rng) {
  if (cursor_ + batch_ > order_.size()) {
    shuffle(order_, rng);
    cursor_ = 0;
  }
  std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_));
  cursor_ += batch_;
  return out;
}

std::string log_header() { return "phase\tepoch\tcorpus\tseg\tentropy\tdisc\tdev_P\tdev_R\tdev_F"; }

std::string format_log_row(const LogRow& row) {
  std::ostringstream os;
  os << std::setprecision(6) << row.phase << '\t' << row.epoch << '\t' << row.corpus << '\t'
     << row.seg << '\t' << row.entropy << '\t' << row.discriminator;
  if (row.has_dev) {
    os << '\t' << row.dev.precision << '\t' << row.dev.recall << '\t' << row.dev.f1;
  } else {
    os << "\t-\t-\t-";
  }
  return os.str();
}

TrainingState::TrainingState(std::span<const EncodedCorpus> corpora, const TrainConfig& config)
    : rng(config.seed) {
  for (const auto& c : corpora) {
    if (c.train.empty()) throw std::invalid_argument("corpus '" + c.name + "' has no training data");
    samplers.emplace_back(c.train.size(), static_cast<std::size_t>(config.batch_size_for(c.name)));
  }
}

EpochReport train_epoch(SharedPrivateModel& model, std::span<const EncodedCorpus> corpora,
                        const TrainConfig& config, TrainingState& state, bool adversarial) {
  if (static_cast<int>(corpora.size()) != model.criteria_count()) {
    throw std::invalid_argument("train_epoch: one corpus per criterion is required");
  }
  const AdamHyper hyper = AdamHyper::from(config);
  const double lambda = adversarial ? config.lambda : 0.0;
  EpochReport report;
  report.epoch = ++state.epoch;

  // Phase A: tagger parameters.
  for (int m = 0; m < model.criteria_count(); ++m) {
    const auto& corpus = corpora[static_cast<std::size_t>(m)];
    const auto batch = gather(corpus.train, state.samplers[static_cast<std::size_t>(m)].next(state.rng));
    clear_grads(model);
    Tape tape;
    ForwardContext ctx = ForwardContext::train(config.dropout_keep, state.rng);
    ObjectiveTerms t = tagger_objective(model, batch, m, lambda, ctx);
    check_finite(t.total.item(), "training objective");
    report.seg.push_back(t.seg.item());
    report.entropy.push_back(t.adv_entropy.item());
    tape.backward(t.total);
    auto params = shared_trainable(model);
    for (auto& p : model.parameters(ParamGroup::Private, m)) params.push_back(std::move(p));
    adam_step(params, state.adam, hyper);
  }
  if (state.on_phase_end) state.on_phase_end(model, 'A');

  // Phase B: discriminator.
  if (adversarial) {
    for (int m = 0; m < model.criteria_count(); ++m) {
      const auto& corpus = corpora[static_cast<std::size_t>(m)];
      const auto batch =
          gather(corpus.train, state.samplers[static_cast<std::size_t>(m)].next(state.rng));
      clear_grads(model);
      Tape tape;
      ForwardContext ctx = ForwardContext::train(config.dropout_keep, state.rng);
      Tensor j1 = loss_adv_discriminator(model, batch, m, ctx);
      check_finite(j1.item(), "discriminator objective");
      report.discriminator.push_back(j1.item());
      tape.backward(j1);
      adam_step(model.parameters(ParamGroup::Discriminator), state.adam, hyper);
    }
    if (state.on_phase_end) state.on_phase_end(model, 'B');
  }
  return report;
}

EpochReport finetune_epoch(SharedPrivateModel& model, std::span<const EncodedCorpus> corpora,
                           const TrainConfig& config, TrainingState& state,
                           std::span<const int> criteria) {
  const auto ids = criteria.empty() ? all_criteria(corpora.size())
                                    : std::vector<int>(criteria.begin(), criteria.end());
  if (ids.size() != corpora.size()) {
    throw std::invalid_argument("finetune_epoch: one criterion per corpus is required");
  }
  const AdamHyper hyper = AdamHyper::from(config);
  EpochReport report;
  report.epoch = ++state.epoch;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int m = ids[i];
    const auto batch = gather(corpora[i].train, state.samplers[i].next(state.rng));
    clear_grads(model);
    Tape tape;
    ForwardContext ctx = ForwardContext::train(config.dropout_keep, state.rng);
    Tensor seg = loss_seg(model, batch, m, ctx);
    check_finite(seg.item(), "segmentation objective");
    report.seg.push_back(seg.item());
    tape.backward(seg);
    adam_step(model.parameters(ParamGroup::Private, m), state.adam, hyper);
  }
  return report;
}

double average_dev_f(const SharedPrivateModel& model, std::span<const EncodedCorpus> corpora,
                     const TrainConfig& config, std::span<const int> criteria) {
  const auto ids = criteria.empty() ? all_criteria(corpora.size())
                                    : std::vector<int>(criteria.begin(), criteria.end());
  if (ids.size() != corpora.size()) {
    throw std::invalid_argument("average_dev_f: one criterion per corpus is required");
  }
  const DecodeOptions opts{config.mask_illegal_transitions};
  double total = 0.0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    total += evaluate(model, corpora[i], Split::Dev, ids[i], opts).f1;
  }
  return ids.empty() ? 0.0 : total / static_cast<double>(ids.size());
}

TrainedModel two_phase_train(SharedPrivateModel model, std::span<const EncodedCorpus> corpora,
                             const TrainConfig& config, std::function<void(const LogRow&)> sink,
                             const std::function<void(const SharedPrivateModel&)>& on_phase1_end) {
  config.validate();
  model = model.clone();  // tensors are shared handles
  TrainingState state(corpora, config);
  state.sink = std::move(sink);
  const auto ids = all_criteria(corpora.size());

  for (int e = 1; e <= config.adversarial_epochs; ++e) {
    EpochReport report = train_epoch(model, corpora, config, state, config.adversarial);
    report.epoch = e;
    const bool check = e % config.eval_interval == 0 || e == config.adversarial_epochs;
    log_epoch(state, "phase1", report, model, corpora, ids, config, check);
  }

  if (on_phase1_end) on_phase1_end(model);

  TrainedModel out;
  if (config.adversarial && config.adversarial_epochs > 0) {
    std::vector<LabeledBatch> data;
    for (std::size_t i = 0; i < corpora.size(); ++i) {
      const auto& split = corpora[i].dev.empty() ? corpora[i].train : corpora[i].dev;
      data.push_back({split, static_cast<int>(i)});
    }
    out.phase1_discriminator_accuracy = discriminator_accuracy(model, data);
  }

  freeze_all_but(model, ids);
  state.epoch = 0;
  auto r = early_stopped(model, corpora, ids, config, state, "phase2",
                         [&] { return finetune_epoch(model, corpora, config, state); });
  out.model = std::move(r.best);
  out.shared_frozen = true;
  out.best_dev_f = r.best_f;
  out.best_epoch = r.best_epoch;
  out.epochs_run = config.adversarial_epochs + r.epochs_run;
  out.log = std::move(state.log);
  return out;
}

TrainedModel joint_train(SharedPrivateModel model, std::span<const EncodedCorpus> corpora,
                         const TrainConfig& config, std::function<void(const LogRow&)> sink) {
  config.validate();
  model = model.clone();  // tensors are shared handles
  TrainingState state(corpora, config);
  state.sink = std::move(sink);
  const auto ids = all_criteria(corpora.size());
  auto r = early_stopped(model, corpora, ids, config, state, "joint",
                         [&] { return train_epoch(model, corpora, config, state, false); });
  TrainedModel out;
  out.model = std::move(r.best);
  out.best_dev_f = r.best_f;
  out.best_epoch = r.best_epoch;
  out.epochs_run = r.epochs_run;
  out.log = std::move(state.log);
  return out;
}

TrainedModel transfer_train(const TrainedModel& trained, const EncodedCorpus& corpus,
                            const TrainConfig& config, std::function<void(const LogRow&)> sink) {
  config.validate();
  if (!trained.shared_frozen) {
    throw std::invalid_argument("transfer_train: the shared layer must come from a finished run");
  }
  SharedPrivateModel model = trained.model.clone();
  Rng init_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  const int m = model.add_criterion(corpus.name, init_rng);
  const int ids[] = {m};
  freeze_all_but(model, ids);

  const std::span<const EncodedCorpus> corpora(&corpus, 1);
  TrainingState state(corpora, config);
  state.sink = std::move(sink);
  auto r = early_stopped(model, corpora, ids, config, state, "transfer",
                         [&] { return finetune_epoch(model, corpora, config, state, ids); });
  TrainedModel out;
  out.model = std::move(r.best);
  out.shared_frozen = true;
  out.best_dev_f = r.best_f;
  out.best_epoch = r.best_epoch;
  out.epochs_run = r.epochs_run;
  out.log = std::move(state.log);
  return out;
}

std::map<std::string, Matrix> snapshot(const SharedPrivateModel& model, ParamGroup group, int criterion) {
  std::map<std::string, Matrix> out;
  for (const auto& p : model.parameters(group, criterion)) out.emplace(p.name, p.tensor.value());
  return out;
}

bool snapshots_equal(const std::map<std::string, Matrix>& a,
                     const std::map<std::string, Matrix>& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, value] : a) {
    auto it = b.find(name);
    if (it == b.end() || it->second.rows() != value.rows() || it->second.cols() != value.cols() ||
        it->second != value) {
      return false;
    }
  }
  return true;
}

}  // namespace advseg
