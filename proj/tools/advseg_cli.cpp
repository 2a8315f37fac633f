#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "advseg/config.hpp"
#include "advseg/data.hpp"
#include "advseg/eval.hpp"
#include "advseg/multitask.hpp"
#include "advseg/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace advseg;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

// ADVSEG_LOG: quiet, info (default) or debug.
enum class Verbosity { Quiet, Info, Debug };

Verbosity verbosity() {
  const char* v = std::getenv("ADVSEG_LOG");
  if (v == nullptr) return Verbosity::Info;
  const std::string s(v);
  if (s == "quiet" || s == "0") return Verbosity::Quiet;
  if (s == "debug" || s == "2") return Verbosity::Debug;
  return Verbosity::Info;
}

void info(const std::string& message) {
  if (verbosity() != Verbosity::Quiet) std::cerr << message << '\n';
}

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path.string() + ": cannot open");
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_atomically(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError(tmp.string() + ": cannot write");
    out << text;
    if (!out.flush()) throw DataError(tmp.string() + ": write failed");
  }
  fs::rename(tmp, path);
}

struct CorpusSpec {
  std::string name;
  fs::path train;
  std::optional<fs::path> test;
};

// name:train[:test]
CorpusSpec parse_corpus_spec(const std::string& spec) {
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  for (std::string part; std::getline(ss, part, ':');) parts.push_back(part);
  if (parts.size() < 2 || parts.size() > 3 || parts[0].empty() || parts[1].empty()) {
    throw ConfigError("corpus spec '" + spec + "' must be name:train[:test]");
  }
  CorpusSpec out{parts[0], parts[1], std::nullopt};
  if (parts.size() == 3) out.test = fs::path(parts[2]);
  return out;
}

json file_record(const fs::path& path) {
  return {{"path", path.string()}, {"fnv1a", hex64(fnv1a(read_bytes(path)))}};
}

json score_json(const SegmentationScore& s) {
  return {{"P", s.precision}, {"R", s.recall}, {"F", s.f1}, {"OOV", s.oov_recall}};
}

// Training lexicons travel with the checkpoint so eval can report OOV recall.
std::unordered_set<std::string> lexicon_from(const json& config, const std::string& criterion) {
  std::unordered_set<std::string> words;
  if (config.contains("lexicons") && config["lexicons"].contains(criterion)) {
    for (const auto& w : config["lexicons"][criterion]) words.insert(w.get<std::string>());
  }
  return words;
}

DecodeOptions decode_options(const json& config) {
  DecodeOptions o;
  if (config.contains("train")) o.mask_illegal_transitions = config["train"].value("mask_illegal_transitions", false);
  return o;
}

struct TrainArgs {
  std::string config_path;
  std::vector<std::string> corpora;
  std::string arch;
  std::optional<bool> adversarial;
  std::string output_dir;
};

int cmd_train(const TrainArgs& args) {
  const std::string started = now_utc();
  TrainConfig config = args.config_path.empty() ? TrainConfig{} : TrainConfig::load(args.config_path);
  if (!args.arch.empty()) config.arch = parse_architecture(args.arch);
  if (args.adversarial) config.adversarial = *args.adversarial;
  config.validate();

  std::vector<CorpusSpec> specs;
  for (const auto& s : args.corpora) specs.push_back(parse_corpus_spec(s));
  std::vector<CriterionCorpus> corpora;
  json corpus_records = json::array();
  for (const auto& spec : specs) {
    auto train = read_segmented_corpus(spec.train);
    std::vector<TaggedSentence> test;
    json record{{"name", spec.name}, {"train", file_record(spec.train)}};
    if (spec.test) {
      test = read_segmented_corpus(*spec.test);
      record["test"] = file_record(*spec.test);
    }
    corpora.push_back(make_corpus(spec.name, std::move(train), std::move(test), config.dev_fraction, config.seed));
    corpus_records.push_back(record);
  }

  const Vocabulary vocab = build_vocab(corpora, config.min_freq);
  const auto encoded = encode_corpora(corpora, vocab);
  std::vector<std::string> names;
  for (const auto& c : corpora) names.push_back(c.name);
  Rng init(config.seed);
  auto model = SharedPrivateModel::create(config.arch, config.model_dims(),
                                          static_cast<Index>(vocab.char_count()),
                                          static_cast<Index>(vocab.bigram_count()), names, init);

  const fs::path out_dir(args.output_dir);
  fs::create_directories(out_dir);
  std::ofstream log(out_dir / "train.log");
  if (!log) throw DataError((out_dir / "train.log").string() + ": cannot write");
  log << log_header() << '\n';
  const bool debug = verbosity() == Verbosity::Debug;
  auto sink = [&](const LogRow& row) {
    const std::string line = format_log_row(row);
    log << line << '\n';
    if (debug || (row.has_dev && verbosity() == Verbosity::Info)) std::cerr << line << '\n';
  };

  const std::string mode = config.adversarial ? "adversarial" : (corpora.size() == 1 ? "baseline" : "multi");
  info("training " + architecture_name(config.arch) + " (" + mode + ") on " + std::to_string(corpora.size()) +
       " corpora");
  const TrainedModel trained = config.adversarial ? two_phase_train(model, encoded, config, sink)
                                                  : joint_train(model, encoded, config, sink);
  log.close();

  json lexicons = json::object();
  for (const auto& c : corpora) {
    std::vector<std::string> words(c.train_words.begin(), c.train_words.end());
    std::sort(words.begin(), words.end());
    lexicons[c.name] = words;
  }
  save_checkpoint(out_dir / "model.ckpt", trained.model, vocab,
                  {{"train", config.to_json()}, {"lexicons", lexicons}});

  const DecodeOptions options{config.mask_illegal_transitions};
  json per_corpus = json::object();
  for (std::size_t m = 0; m < encoded.size(); ++m) {
    json entry{{"dev", score_json(evaluate(trained.model, encoded[m], Split::Dev, static_cast<int>(m), options))}};
    if (!encoded[m].test.empty()) {
      entry["test"] = score_json(evaluate(trained.model, encoded[m], Split::Test, static_cast<int>(m), options));
    }
    per_corpus[encoded[m].name] = entry;
  }
  json metrics{{"best_dev_f", trained.best_dev_f},
               {"best_epoch", trained.best_epoch},
               {"epochs_run", trained.epochs_run},
               {"corpora", per_corpus}};
  if (trained.phase1_discriminator_accuracy >= 0.0) {
    metrics["phase1_discriminator_accuracy"] = trained.phase1_discriminator_accuracy;
  }

  json manifest{{"command", "train"},
                {"version", ADVSEG_VERSION},
                {"mode", mode},
                {"phase1_objective", config.adversarial ? json::array({"seg", "entropy", "discriminator"}) : json::array({"seg"})},
                {"config", config.to_json()},
                {"config_path", args.config_path},
                {"corpora", corpus_records},
                {"seed", config.seed},
                {"vocab_hash", hex64(vocab.hash())},
                {"started", started},
                {"finished", now_utc()},
                {"metrics", metrics}};
  write_atomically(out_dir / "manifest.json", manifest.dump(2) + "\n");
  info("best dev F " + std::to_string(trained.best_dev_f) + " at epoch " + std::to_string(trained.best_epoch));
  return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& corpus_path, const std::string& criterion,
             const std::string& per_sentence_path) {
  const auto ckpt = load_checkpoint(checkpoint);
  const int m = ckpt.model.criterion_index(criterion);
  const auto gold = read_segmented_corpus(corpus_path);
  std::vector<EncodedSentence> batch;
  for (const auto& s : gold) batch.push_back(ckpt.vocab.encode(s));
  const auto predicted = segment(ckpt.model, batch, m, decode_options(ckpt.config));
  const auto s = score(gold, predicted, lexicon_from(ckpt.config, criterion));
  write_score_tsv(std::cout, s);
  if (!per_sentence_path.empty()) {
    std::ofstream out(per_sentence_path);
    if (!out) throw DataError(per_sentence_path + ": cannot write");
    write_per_sentence_tsv(out, per_sentence_f(gold, predicted));
  }
  return kOk;
}

// Whitespace in the input is dropped; every other character is kept in order.
int cmd_segment(const std::string& checkpoint, const std::string& criterion, const std::string& input,
                const std::string& output) {
  const auto ckpt = load_checkpoint(checkpoint);
  const int m = ckpt.model.criterion_index(criterion);
  const auto options = decode_options(ckpt.config);
  std::ifstream in(input, std::ios::binary);
  if (!in) throw DataError(input + ": cannot open");
  std::ofstream out(output, std::ios::binary);
  if (!out) throw DataError(output + ": cannot write");

  const auto start = std::chrono::steady_clock::now();
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line); ++lines) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> chars;
    for (char32_t cp : utf8::decode(line, lines + 1)) {
      if (!utf8::is_space(cp)) chars.push_back(utf8::encode(cp));
    }
    if (chars.empty()) {
      out << '\n';
      continue;
    }
    const std::vector<EncodedSentence> one{ckpt.vocab.encode_chars(chars)};
    TaggedSentence s;
    s.chars = chars;
    s.spans = segment(ckpt.model, one, m, options)[0];
    out << format_segmented(s) << '\n';
  }
  if (!out.flush()) throw DataError(output + ": write failed");
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::ostringstream msg;
  msg << lines << " sentences in " << std::fixed << std::setprecision(3) << seconds << " s ("
      << std::setprecision(1) << (seconds > 0 ? static_cast<double>(lines) / seconds : 0.0) << " sentences/s)";
  info(msg.str());
  return kOk;
}

int cmd_gen_synth(const std::string& output_dir, const SyntheticOptions& options) {
  const auto corpora = generate_synthetic_corpora(options);
  fs::create_directories(output_dir);
  for (const auto& c : corpora) {
    write_segmented_corpus(fs::path(output_dir) / (c.name + ".train.txt"), c.train);
    write_segmented_corpus(fs::path(output_dir) / (c.name + ".test.txt"), c.test);
  }
  std::size_t differ = 0;
  for (std::size_t i = 0; i < corpora[0].train.size(); ++i) {
    differ += corpora[0].train[i].spans != corpora[1].train[i].spans;
  }
  info(std::to_string(differ) + " of " + std::to_string(corpora[0].train.size()) + " training sentences differ between " +
       corpora[0].name + " and " + corpora[1].name);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial multi-criteria word segmentation"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoint, log and manifest");
  train_cmd->add_option("--config", train.config_path, "Key = value config file")->check(CLI::ExistingFile);
  train_cmd->add_option("--corpus", train.corpora, "name:train[:test], repeatable")->required();
  train_cmd->add_option("--arch", train.arch, "model1, model2 or model3");
  auto* adv = train_cmd->add_flag("--adversarial,!--no-adversarial", "Adversarial phase on or off");
  train_cmd->add_option("--output-dir", train.output_dir, "Directory for outputs")->required();

  std::string checkpoint, corpus, criterion, per_sentence;
  auto* eval_cmd = app.add_subcommand("eval", "Print P, R, F and OOV recall as TSV");
  eval_cmd->add_option("--checkpoint", checkpoint)->required();
  eval_cmd->add_option("--corpus", corpus, "Segmented gold corpus")->required();
  eval_cmd->add_option("--criterion", criterion)->required();
  eval_cmd->add_option("--per-sentence", per_sentence, "Write per-sentence F as TSV");

  std::string input, output;
  auto* seg_cmd = app.add_subcommand("segment", "Segment raw text, one sentence per line");
  seg_cmd->add_option("--checkpoint", checkpoint)->required();
  seg_cmd->add_option("--criterion", criterion)->required();
  seg_cmd->add_option("--input", input)->required();
  seg_cmd->add_option("--output", output)->required();

  std::string synth_dir;
  SyntheticOptions synth;
  std::vector<std::string> rules;
  auto* synth_cmd = app.add_subcommand("gen-synth", "Write synthetic multi-criteria corpora");
  synth_cmd->add_option("--output-dir", synth_dir)->required();
  synth_cmd->add_option("--seed", synth.seed);
  synth_cmd->add_option("--train-size", synth.n_train);
  synth_cmd->add_option("--test-size", synth.n_test);
  synth_cmd->add_option("--rules", rules, "digit_run, digit_each, digit_pairs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*train_cmd) {
      if (adv->count() > 0) train.adversarial = adv->as<bool>();
      return cmd_train(train);
    }
    if (*eval_cmd) return cmd_eval(checkpoint, corpus, criterion, per_sentence);
    if (*seg_cmd) return cmd_segment(checkpoint, criterion, input, output);
    if (*synth_cmd) {
      if (!rules.empty()) {
        synth.rules.clear();
        for (const auto& r : rules) synth.rules.push_back(parse_rule(r));
      }
      return cmd_gen_synth(synth_dir, synth);
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::out_of_range& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
