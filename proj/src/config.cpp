#include "advseg/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace advseg {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end) {
    throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + std::string(value) +
                      "' as " + (std::is_integral_v<T> ? "an integer" : "a number"));
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  const auto v = lower(value);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + std::string(key) + "': expected true or false, got '" +
                    std::string(value) + "'");
}

}  // namespace

int TrainConfig::batch_size_for(std::string_view corpus) const {
  auto it = batch_sizes.find(lower(corpus));
  return it == batch_sizes.end() ? default_batch_size : it->second;
}

ModelDims TrainConfig::model_dims() const {
  ModelDims d;
  d.embedding_dim = embedding_dim;
  d.hidden_dim = hidden_dim;
  d.use_bigram = use_bigram;
  d.init_range = init_range;
  return d;
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("invalid config: ") + what);
  };
  require(embedding_dim > 0, "embedding_dim must be positive");
  require(hidden_dim > 0, "hidden_dim must be positive");
  require(learning_rate > 0.0, "learning_rate must be positive");
  require(lambda >= 0.0, "lambda must be >= 0");
  require(dropout_keep > 0.0 && dropout_keep <= 1.0, "dropout_keep must be in (0, 1]");
  require(init_range > 0.0, "init_range must be positive");
  require(default_batch_size > 0, "batch_size must be positive");
  for (const auto& [name, size] : batch_sizes) {
    (void)name;
    require(size > 0, "per-corpus batch sizes must be positive");
  }
  require(adversarial_epochs >= 0, "adversarial_epochs must be >= 0");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1 must be in [0, 1)");
  require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2 must be in [0, 1)");
  require(adam_epsilon > 0.0, "adam_epsilon must be positive");
  require(early_stop_patience > 0, "early_stop_patience must be positive");
  require(eval_interval > 0, "eval_interval must be positive");
  require(max_epochs > 0, "max_epochs must be positive");
  require(min_freq >= 1, "min_freq must be >= 1");
  require(dev_fraction > 0.0 && dev_fraction < 1.0, "dev_fraction must be in (0, 1)");
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j;
  j["architecture"] = architecture_name(arch);
  j["adversarial"] = adversarial;
  j["embedding_dim"] = embedding_dim;
  j["hidden_dim"] = hidden_dim;
  j["use_bigram"] = use_bigram;
  j["learning_rate"] = learning_rate;
  j["lambda"] = lambda;
  j["dropout_keep"] = dropout_keep;
  j["init_range"] = init_range;
  j["batch_size"] = default_batch_size;
  j["batch_sizes"] = batch_sizes;
  j["adversarial_epochs"] = adversarial_epochs;
  j["adam_beta1"] = adam_beta1;
  j["adam_beta2"] = adam_beta2;
  j["adam_epsilon"] = adam_epsilon;
  j["early_stop_patience"] = early_stop_patience;
  j["eval_interval"] = eval_interval;
  j["max_epochs"] = max_epochs;
  j["min_freq"] = min_freq;
  j["dev_fraction"] = dev_fraction;
  j["seed"] = seed;
  j["mask_illegal_transitions"] = mask_illegal_transitions;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.arch = parse_architecture(j.at("architecture").get<std::string>());
  c.adversarial = j.at("adversarial").get<bool>();
  c.embedding_dim = j.at("embedding_dim").get<Index>();
  c.hidden_dim = j.at("hidden_dim").get<Index>();
  c.use_bigram = j.at("use_bigram").get<bool>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.lambda = j.at("lambda").get<double>();
  c.dropout_keep = j.at("dropout_keep").get<double>();
  c.init_range = j.at("init_range").get<double>();
  c.default_batch_size = j.at("batch_size").get<int>();
  c.batch_sizes = j.at("batch_sizes").get<std::map<std::string, int>>();
  c.adversarial_epochs = j.at("adversarial_epochs").get<int>();
  c.adam_beta1 = j.at("adam_beta1").get<double>();
  c.adam_beta2 = j.at("adam_beta2").get<double>();
  c.adam_epsilon = j.at("adam_epsilon").get<double>();
  c.early_stop_patience = j.at("early_stop_patience").get<int>();
  c.eval_interval = j.at("eval_interval").get<int>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.min_freq = j.at("min_freq").get<int>();
  c.dev_fraction = j.at("dev_fraction").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.mask_illegal_transitions = j.at("mask_illegal_transitions").get<bool>();
  return c;
}

TrainConfig TrainConfig::parse(std::string_view text) {
  TrainConfig c;
  using Setter = std::function<void(std::string_view key, std::string_view value)>;
  auto integer = [](auto& field) -> Setter {
    return [&field](std::string_view k, std::string_view v) {
      field = parse_number<std::remove_reference_t<decltype(field)>>(k, v);
    };
  };
  auto real = [](double& field) -> Setter {
    return [&field](std::string_view k, std::string_view v) { field = parse_number<double>(k, v); };
  };
  auto boolean = [](bool& field) -> Setter {
    return [&field](std::string_view k, std::string_view v) { field = parse_bool(k, v); };
  };
  const std::map<std::string, Setter, std::less<>> setters{
      {"architecture", [&c](std::string_view k, std::string_view v) {
         try {
           c.arch = parse_architecture(v);
         } catch (const std::invalid_argument& e) {
           throw ConfigError("config key '" + std::string(k) + "': " + e.what());
         }
       }},
      {"adversarial", boolean(c.adversarial)},
      {"embedding_dim", integer(c.embedding_dim)},
      {"hidden_dim", integer(c.hidden_dim)},
      {"use_bigram", boolean(c.use_bigram)},
      {"learning_rate", real(c.learning_rate)},
      {"lambda", real(c.lambda)},
      {"dropout_keep", real(c.dropout_keep)},
      {"init_range", real(c.init_range)},
      {"batch_size", integer(c.default_batch_size)},
      {"adversarial_epochs", integer(c.adversarial_epochs)},
      {"adam_beta1", real(c.adam_beta1)},
      {"adam_beta2", real(c.adam_beta2)},
      {"adam_epsilon", real(c.adam_epsilon)},
      {"early_stop_patience", integer(c.early_stop_patience)},
      {"eval_interval", integer(c.eval_interval)},
      {"max_epochs", integer(c.max_epochs)},
      {"min_freq", integer(c.min_freq)},
      {"dev_fraction", real(c.dev_fraction)},
      {"seed", integer(c.seed)},
      {"mask_illegal_transitions", boolean(c.mask_illegal_transitions)},
  };

  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (value.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": empty value for '" +
                        std::string(key) + "'");
    }
    constexpr std::string_view kBatchPrefix = "batch_size.";
    if (key.starts_with(kBatchPrefix) && key.size() > kBatchPrefix.size()) {
      c.batch_sizes[lower(key.substr(kBatchPrefix.size()))] = parse_number<int>(key, value);
      continue;
    }
    auto it = setters.find(key);
    if (it == setters.end()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" +
                        std::string(key) + "'");
    }
    it->second(key, value);
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

}  // namespace advseg
