#include <doctest.h>

#include "advseg/config.hpp"

using namespace advseg;

TEST_CASE("defaults follow the published settings") {
  const TrainConfig c;
  CHECK(c.embedding_dim == 100);
  CHECK(c.hidden_dim == 100);
  CHECK(c.learning_rate == 0.01);
  CHECK(c.lambda == 0.05);
  CHECK(c.dropout_keep == 0.8);
  CHECK(c.init_range == 0.05);
  CHECK(c.adversarial_epochs == 2400);
  CHECK(c.batch_size_for("AS") == 512);
  CHECK(c.batch_size_for("msr") == 256);
  CHECK(c.batch_size_for("pku") == 128);
}

TEST_CASE("parse key-value text") {
  const auto c = TrainConfig::parse(
      "# desk run\n"
      "architecture = model2\n"
      "hidden_dim = 16   # small\n"
      "lambda = 0.1\n"
      "adversarial = false\n"
      "batch_size = 8\n"
      "batch_size.pku = 4\n");
  CHECK(c.arch == Architecture::ModelII);
  CHECK(c.hidden_dim == 16);
  CHECK(c.lambda == 0.1);
  CHECK_FALSE(c.adversarial);
  CHECK(c.batch_size_for("other") == 8);
  CHECK(c.batch_size_for("PKU") == 4);
}

TEST_CASE("bad config text is rejected") {
  CHECK_THROWS_AS(TrainConfig::parse("hiden_dim = 3\n"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::parse("hidden_dim = three\n"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::parse("hidden_dim 3\n"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::parse("lambda = -1\n"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::parse("dropout_keep = 0\n"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::parse("architecture = model4\n"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::parse("adversarial = maybe\n"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::load("/nonexistent/config.txt"), ConfigError);
}

TEST_CASE("json round trip") {
  auto c = TrainConfig::parse("seed = 42\nhidden_dim = 7\narchitecture = model3\n");
  const auto back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.seed == 42);
  CHECK(back.arch == Architecture::ModelIII);
}
