#include <doctest.h>

#include <algorithm>
#include <set>

#include "advseg/experiment.hpp"
#include "advseg/training.hpp"

using namespace advseg;

namespace {

SyntheticOptions small_options(int n_train = 60) {
  SyntheticOptions o;
  o.n_train = n_train;
  o.n_test = 20;
  return o;
}

TrainConfig small_config() {
  TrainConfig c;
  c.embedding_dim = 8;
  c.hidden_dim = 8;
  c.use_bigram = false;
  c.batch_sizes.clear();
  c.default_batch_size = 8;
  c.adversarial_epochs = 5;
  c.eval_interval = 2;
  c.early_stop_patience = 2;
  c.max_epochs = 12;
  return c;
}

SharedPrivateModel model_for(const SyntheticData& data, int criteria, const TrainConfig& c,
                             std::uint64_t seed = 1) {
  Rng rng(seed);
  std::vector<std::string> names;
  for (int m = 0; m < criteria; ++m) names.push_back(data.encoded[static_cast<std::size_t>(m)].name);
  return SharedPrivateModel::create(c.arch, c.model_dims(), static_cast<Index>(data.vocab.chars().size()),
                                    static_cast<Index>(data.vocab.bigrams().size()), names, rng);
}

std::map<std::string, Matrix> all_values(const SharedPrivateModel& model) {
  std::map<std::string, Matrix> out;
  for (const auto& p : model.parameters()) out.emplace(p.name, p.tensor.value());
  return out;
}

}  // namespace

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Tensor w(Matrix::Ones(2, 2), true);
  const std::vector<NamedParam> params{{"w", w, ParamGroup::Shared, -1}};
  AdamState state;
  for (int i = 0; i < 3; ++i) {
    w.accumulate_grad(Matrix::Zero(2, 2));
    adam_step(params, state, {});
  }
  CHECK(w.value() == Matrix::Ones(2, 2));
  CHECK(state.t == 3);
}

TEST_CASE("adam: first step has size lr in the gradient direction") {
  Tensor w(Matrix::Zero(1, 3), true);
  const std::vector<NamedParam> params{{"w", w, ParamGroup::Shared, -1}};
  AdamState state;
  w.accumulate_grad(Tensor::row({2.0, -0.001, 50.0}).value());
  adam_step(params, state, {});
  CHECK(std::abs(w.value()(0, 0) - 0.01) < 1e-8);
  CHECK(std::abs(w.value()(0, 1) + 0.01) < 1e-6);
  CHECK(std::abs(w.value()(0, 2) - 0.01) < 1e-8);
  CHECK(w.grad().isZero(0.0));
}

TEST_CASE("adam: slots are independent per parameter") {
  Tensor a(Matrix::Zero(1, 1), true);
  Tensor b(Matrix::Zero(1, 1), true);
  AdamState state;
  const std::vector<NamedParam> only_a{{"a", a, ParamGroup::Shared, -1}};
  for (int i = 0; i < 5; ++i) {
    a.accumulate_grad(Matrix::Constant(1, 1, 1.0));
    adam_step(only_a, state, {});
  }
  const std::vector<NamedParam> both{{"a", a, ParamGroup::Shared, -1}, {"b", b, ParamGroup::Shared, -1}};
  a.accumulate_grad(Matrix::Constant(1, 1, 1.0));
  b.accumulate_grad(Matrix::Constant(1, 1, 1.0));
  adam_step(both, state, {});
  CHECK(std::abs(b.value()(0, 0) - 0.01) < 1e-8);
  CHECK(state.slots.at("a").steps == 6);
  CHECK(state.slots.at("b").steps == 1);
}

TEST_CASE("adam: a parameter without gradient is an error") {
  Tensor w(Matrix::Zero(1, 1), true);
  AdamState state;
  const std::vector<NamedParam> params{{"lonely", w, ParamGroup::Shared, -1}};
  try {
    adam_step(params, state, {});
    FAIL("expected logic_error");
  } catch (const std::logic_error& e) {
    CHECK(std::string(e.what()).find("lonely") != std::string::npos);
  }
}

TEST_CASE("batch sampler covers each pass once") {
  Rng rng(1);
  BatchSampler sampler(10, 4);
  std::multiset<std::size_t> seen;
  for (int i = 0; i < 2; ++i) {
    const auto b = sampler.next(rng);
    CHECK(b.size() == 4);
    seen.insert(b.begin(), b.end());
  }
  CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 8);
  BatchSampler big(3, 10);
  CHECK(big.next(rng).size() == 3);
}

TEST_CASE("single-criterion training raises the objective") {
  const SyntheticData data(small_options(22), 0.1);
  auto c = small_config();
  c.default_batch_size = 40;
  c.dropout_keep = 1.0;
  const auto corpora = data.first(1);
  auto model = model_for(data, 1, c);
  TrainingState state(corpora, c);
  std::vector<double> seg;
  for (int e = 0; e < 50; ++e) seg.push_back(train_epoch(model, corpora, c, state, false).seg[0]);
  int dips = 0;
  for (std::size_t i = 1; i < seg.size(); ++i) dips += seg[i] < seg[i - 1];
  CHECK(dips <= 5);
  CHECK(seg.back() > seg.front());
  CHECK(seg.back() <= 0.0);
}

TEST_CASE("each phase updates only its own parameters") {
  const SyntheticData data(small_options(), 0.1);
  const auto c = small_config();
  const auto corpora = data.first(2);
  auto model = model_for(data, 2, c);

  SUBCASE("joint epoch leaves the discriminator alone") {
    TrainingState state(corpora, c);
    const auto d0 = snapshot(model, ParamGroup::Discriminator);
    const auto s0 = snapshot(model, ParamGroup::Shared);
    train_epoch(model, corpora, c, state, false);
    CHECK(snapshots_equal(d0, snapshot(model, ParamGroup::Discriminator)));
    CHECK_FALSE(snapshots_equal(s0, snapshot(model, ParamGroup::Shared)));
    CHECK(state.adam.t == 2);
  }
  SUBCASE("adversarial epoch is one batch per corpus in each phase") {
    TrainingState state(corpora, c);
    const auto d0 = snapshot(model, ParamGroup::Discriminator);
    const auto report = train_epoch(model, corpora, c, state, true);
    CHECK(state.adam.t == 4);
    CHECK(report.seg.size() == 2);
    CHECK(report.discriminator.size() == 2);
    CHECK_FALSE(snapshots_equal(d0, snapshot(model, ParamGroup::Discriminator)));
  }
  SUBCASE("fine-tuning touches only the chosen private parameters") {
    TrainingState state(corpora, c);
    const auto s0 = snapshot(model, ParamGroup::Shared);
    const auto d0 = snapshot(model, ParamGroup::Discriminator);
    const auto p0 = snapshot(model, ParamGroup::Private);
    const std::vector<int> only{1};
    finetune_epoch(model, corpora.subspan(1, 1), c, state, only);
    CHECK(snapshots_equal(s0, snapshot(model, ParamGroup::Shared)));
    CHECK(snapshots_equal(d0, snapshot(model, ParamGroup::Discriminator)));
    const auto p1 = snapshot(model, ParamGroup::Private);
    for (const auto& p : model.parameters(ParamGroup::Private, 0)) CHECK(p0.at(p.name) == p1.at(p.name));
    CHECK_FALSE(snapshots_equal(p0, p1));
  }
}

TEST_CASE("with lambda zero the tagger update matches joint training") {
  const SyntheticData data(small_options(), 0.1);
  auto c = small_config();
  c.lambda = 0.0;
  const auto corpora = data.first(2);
  auto a = model_for(data, 2, c);
  auto b = a.clone();
  TrainingState sa(corpora, c);
  TrainingState sb(corpora, c);
  train_epoch(a, corpora, c, sa, true);
  train_epoch(b, corpora, c, sb, false);
  CHECK(snapshots_equal(snapshot(a, ParamGroup::Shared), snapshot(b, ParamGroup::Shared)));
  CHECK(snapshots_equal(snapshot(a, ParamGroup::Private), snapshot(b, ParamGroup::Private)));
}

TEST_CASE("two-phase training freezes the shared layer and discriminator") {
  const SyntheticData data(small_options(), 0.1);
  auto c = small_config();
  c.adversarial_epochs = 0;
  const auto corpora = data.first(2);
  const auto model = model_for(data, 2, c);
  const auto trained = two_phase_train(model, corpora, c);
  CHECK(trained.shared_frozen);
  CHECK(snapshots_equal(snapshot(model, ParamGroup::Shared), snapshot(trained.model, ParamGroup::Shared)));
  CHECK(snapshots_equal(snapshot(model, ParamGroup::Discriminator),
                        snapshot(trained.model, ParamGroup::Discriminator)));
  CHECK_FALSE(snapshots_equal(snapshot(model, ParamGroup::Private), snapshot(trained.model, ParamGroup::Private)));
  for (const auto& p : trained.model.parameters()) {
    CAPTURE(p.name);
    CHECK(p.tensor.requires_grad() == (p.group == ParamGroup::Private));
  }
}

TEST_CASE("early stopping keeps the best dev checkpoint") {
  const SyntheticData data(small_options(), 0.1);
  const auto c = small_config();
  const auto corpora = data.first(2);
  const auto trained = joint_train(model_for(data, 2, c), corpora, c);
  CHECK(trained.best_dev_f == doctest::Approx(average_dev_f(trained.model, corpora, c)).epsilon(1e-12));

  std::map<int, std::vector<double>> by_epoch;
  for (const auto& row : trained.log) {
    if (row.has_dev) by_epoch[row.epoch].push_back(row.dev.f1);
  }
  REQUIRE(!by_epoch.empty());
  double best = -1.0;
  for (const auto& [epoch, fs] : by_epoch) best = std::max(best, mean(fs));
  CHECK(trained.best_dev_f == doctest::Approx(best).epsilon(1e-12));
  CHECK(by_epoch.count(trained.best_epoch) == 1);
  CHECK(trained.epochs_run <= c.max_epochs);
}

TEST_CASE("training is deterministic for a seed") {
  const SyntheticData data(small_options(), 0.1);
  const auto c = small_config();
  const auto corpora = data.first(2);
  const auto a = two_phase_train(model_for(data, 2, c), corpora, c);
  const auto b = two_phase_train(model_for(data, 2, c), corpora, c);
  CHECK(all_values(a.model) == all_values(b.model));
  CHECK(a.best_epoch == b.best_epoch);
}

TEST_CASE("transfer adds a criterion over the frozen shared layer") {
  SyntheticOptions o = small_options();
  o.rules.push_back(SegmentationRule::DigitPairs);
  const SyntheticData data(o, 0.1);
  const auto c = small_config();
  const auto trained = two_phase_train(model_for(data, 2, c), data.first(2), c);
  const auto moved = transfer_train(trained, data.encoded[2], c);
  CHECK(moved.model.criteria.size() == 3);
  CHECK(moved.model.heads[2].feature_width() == 4 * c.hidden_dim);
  CHECK(snapshots_equal(snapshot(trained.model, ParamGroup::Shared), snapshot(moved.model, ParamGroup::Shared)));
  for (int m = 0; m < 2; ++m) {
    CHECK(snapshots_equal(snapshot(trained.model, ParamGroup::Private, m),
                          snapshot(moved.model, ParamGroup::Private, m)));
  }
  CHECK(moved.best_dev_f > 0.0);

  TrainedModel unfrozen{trained.model.clone()};
  CHECK_THROWS(transfer_train(unfrozen, data.encoded[2], c));
}
