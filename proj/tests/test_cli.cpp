#include <doctest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "advseg/data.hpp"

using namespace advseg;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path& work_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("advseg_cli_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(const std::string& args) {
  static int counter = 0;
  const auto out = work_dir() / ("stdout" + std::to_string(counter));
  const auto err = work_dir() / ("stderr" + std::to_string(counter++));
  const std::string cmd = "ADVSEG_LOG=quiet " + std::string(ADVSEG_CLI_PATH) + " " + args + " >" + out.string() +
                          " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(out), read_file(err)};
}

const fs::path& synth_dir() {
  static const fs::path dir = [] {
    const auto d = work_dir() / "syn";
    REQUIRE(run("gen-synth --output-dir " + d.string() + " --seed 3 --train-size 120 --test-size 40").code == 0);
    return d;
  }();
  return dir;
}

std::string corpus_arg(const std::string& name, const std::string& rule) {
  const auto d = synth_dir();
  return "--corpus " + name + ":" + (d / (rule + ".train.txt")).string() + ":" + (d / (rule + ".test.txt")).string();
}

const char* kSmallConfig =
    "embedding_dim = 16\nhidden_dim = 16\nuse_bigram = false\nbatch_size = 16\n"
    "adversarial_epochs = 20\neval_interval = 5\nearly_stop_patience = 3\nmax_epochs = 60\n";

// Two-criterion Model-I run shared by several cases.
const fs::path& trained_dir() {
  static const fs::path dir = [] {
    const auto d = work_dir() / "trained";
    write_file(work_dir() / "small.cfg", kSmallConfig);
    const auto r = run("train --config " + (work_dir() / "small.cfg").string() + " " + corpus_arg("run", "digit_run") +
                       " " + corpus_arg("each", "digit_each") + " --arch model1 --output-dir " + d.string());
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

std::vector<double> eval_row(const std::string& tsv) {
  std::istringstream in(tsv);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  std::istringstream cells(row);
  std::vector<double> out;
  for (double v; cells >> v;) out.push_back(v);
  return out;
}

}  // namespace

TEST_CASE("gen-synth is deterministic and re-parses losslessly") {
  const auto again = work_dir() / "syn2";
  REQUIRE(run("gen-synth --output-dir " + again.string() + " --seed 3 --train-size 120 --test-size 40").code == 0);
  for (const char* f : {"digit_run.train.txt", "digit_each.train.txt", "digit_run.test.txt"}) {
    CHECK(read_file(synth_dir() / f) == read_file(again / f));
  }
  const auto run_rule = read_segmented_corpus(synth_dir() / "digit_run.train.txt");
  const auto each_rule = read_segmented_corpus(synth_dir() / "digit_each.train.txt");
  write_segmented_corpus(work_dir() / "rewritten.txt", run_rule);
  CHECK(read_file(work_dir() / "rewritten.txt") == read_file(synth_dir() / "digit_run.train.txt"));

  REQUIRE(run_rule.size() == each_rule.size());
  std::size_t differ = 0;
  for (std::size_t i = 0; i < run_rule.size(); ++i) differ += run_rule[i].spans != each_rule[i].spans;
  CHECK(static_cast<double>(differ) >= 0.3 * static_cast<double>(run_rule.size()));
}

TEST_CASE("train writes checkpoint, log and manifest") {
  const auto d = trained_dir();
  CHECK(fs::exists(d / "model.ckpt"));
  CHECK(read_file(d / "train.log").rfind("phase\tepoch", 0) == 0);
  const auto m = json::parse(read_file(d / "manifest.json"));
  CHECK(m["mode"] == "adversarial");
  CHECK(m["phase1_objective"] == json::array({"seg", "entropy", "discriminator"}));
  CHECK(m["corpora"].size() == 2);
  CHECK(m["corpora"][0]["train"]["fnv1a"].get<std::string>().size() == 16);
  CHECK(m.contains("started"));
  CHECK(m.contains("finished"));
  CHECK(m["metrics"].contains("phase1_discriminator_accuracy"));
  CHECK_FALSE(fs::exists(d / "manifest.json.tmp"));
}

TEST_CASE("manifest echoes the published defaults and is deterministic") {
  write_file(work_dir() / "short.cfg", "adversarial_epochs = 1\nmax_epochs = 2\neval_interval = 1\nbatch_size = 8\n");
  const auto d = synth_dir();
  const std::string base = "train --config " + (work_dir() / "short.cfg").string() + " --corpus x:" +
                           (d / "digit_run.test.txt").string() + " --output-dir ";
  REQUIRE(run(base + (work_dir() / "d1").string()).code == 0);
  REQUIRE(run(base + (work_dir() / "d2").string()).code == 0);
  const auto a = json::parse(read_file(work_dir() / "d1" / "manifest.json"));
  const auto b = json::parse(read_file(work_dir() / "d2" / "manifest.json"));
  CHECK(a["metrics"] == b["metrics"]);
  CHECK(a["config"]["embedding_dim"] == 100);
  CHECK(a["config"]["hidden_dim"] == 100);
  CHECK(a["config"]["learning_rate"] == 0.01);
  CHECK(a["config"]["lambda"] == 0.05);
  CHECK(a["config"]["dropout_keep"] == 0.8);
}

TEST_CASE("adversarial off records a plain objective") {
  write_file(work_dir() / "tiny.cfg", "embedding_dim = 4\nhidden_dim = 4\nmax_epochs = 2\neval_interval = 1\n");
  const auto d = synth_dir();
  const std::string corpus = " --corpus x:" + (d / "digit_run.test.txt").string();
  const std::string base = "train --config " + (work_dir() / "tiny.cfg").string() + corpus;
  REQUIRE(run(base + " --no-adversarial --output-dir " + (work_dir() / "single").string()).code == 0);
  const auto single = json::parse(read_file(work_dir() / "single" / "manifest.json"));
  CHECK(single["mode"] == "baseline");
  CHECK(single["phase1_objective"] == json::array({"seg"}));

  const std::string two = corpus + " --corpus y:" + (d / "digit_each.test.txt").string();
  REQUIRE(run("train --config " + (work_dir() / "tiny.cfg").string() + two + " --no-adversarial --output-dir " +
              (work_dir() / "multi").string())
              .code == 0);
  CHECK(json::parse(read_file(work_dir() / "multi" / "manifest.json"))["mode"] == "multi");
}

TEST_CASE("eval prints P, R, F, OOV and prefers the matched head") {
  const auto ckpt = (trained_dir() / "model.ckpt").string();
  const auto test = (synth_dir() / "digit_run.test.txt").string();
  const auto matched = run("eval --checkpoint " + ckpt + " --corpus " + test + " --criterion run");
  REQUIRE(matched.code == 0);
  CHECK(matched.out.rfind("P\tR\tF\tOOV\n", 0) == 0);
  const auto wrong = run("eval --checkpoint " + ckpt + " --corpus " + test + " --criterion each");
  REQUIRE(wrong.code == 0);
  CHECK(eval_row(wrong.out).at(2) < eval_row(matched.out).at(2));

  const auto manifest = json::parse(read_file(trained_dir() / "manifest.json"));
  const double dev_f = manifest["metrics"]["corpora"]["run"]["dev"]["F"];
  const auto train = run("eval --checkpoint " + ckpt + " --corpus " +
                         (synth_dir() / "digit_run.train.txt").string() + " --criterion run");
  CHECK(eval_row(train.out).at(2) >= dev_f - 0.01);

  const auto unknown = run("eval --checkpoint " + ckpt + " --corpus " + test + " --criterion nope");
  CHECK(unknown.code == 1);
  CHECK(unknown.err.find("run, each") != std::string::npos);
}

TEST_CASE("segment preserves characters") {
  const auto ckpt = (trained_dir() / "model.ckpt").string();
  const auto test = read_segmented_corpus(synth_dir() / "digit_run.test.txt");
  std::string raw;
  for (std::size_t i = 0; i < 10; ++i) raw += test[i].text() + "\n";
  raw += "\n7\n";
  write_file(work_dir() / "raw.txt", raw);
  const auto out = work_dir() / "seg.txt";
  REQUIRE(run("segment --checkpoint " + ckpt + " --criterion each --input " + (work_dir() / "raw.txt").string() +
              " --output " + out.string())
              .code == 0);
  std::istringstream in(read_file(out));
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  REQUIRE(lines.size() == 12);
  for (std::size_t i = 0; i < 10; ++i) {
    std::string stripped = lines[i];
    std::erase(stripped, ' ');
    CHECK(stripped == test[i].text());
  }
  CHECK(lines[10].empty());
  CHECK(lines[11] == "7");
}

TEST_CASE("exit codes") {
  CHECK(run("").code == 1);
  CHECK(run("train --corpus a:/no/such/file --output-dir " + (work_dir() / "e").string()).code == 2);
  write_file(work_dir() / "typo.cfg", "hiden_dim = 3\n");
  const auto typo = run("train --config " + (work_dir() / "typo.cfg").string() + " --corpus a:" +
                        (synth_dir() / "digit_run.test.txt").string() + " --output-dir " + (work_dir() / "e").string());
  CHECK(typo.code == 1);
  CHECK(typo.err.find("hiden_dim") != std::string::npos);
  CHECK(run("segment --checkpoint /no/such.ckpt --criterion a --input x --output y").code == 2);
  CHECK(run("train --corpus badspec --output-dir " + (work_dir() / "e").string()).code == 1);
}
