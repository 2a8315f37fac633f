#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "advseg/data.hpp"
#include "oracles.hpp"

using namespace advseg;
using L = Label;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  auto dir = fs::temp_directory_path() / ("advseg_data_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("parse segmented lines") {
  const auto s = parse_segmented_text("AB C\n");
  REQUIRE(s.size() == 1);
  CHECK(s[0].chars == std::vector<std::string>{"A", "B", "C"});
  CHECK(s[0].spans == SpanList{{0, 2}, {2, 3}});
  CHECK(s[0].tags == LabelSequence{L::B, L::E, L::S});

  CHECK(parse_segmented_text("").empty());
  CHECK(parse_segmented_text("\n\n").empty());
  const auto wide = parse_segmented_text("AB   C\tD\xE3\x80\x80" "E\n");
  const auto narrow = parse_segmented_text("AB C D E\n");
  REQUIRE(wide.size() == 1);
  CHECK(wide[0].spans == narrow[0].spans);
  CHECK(wide[0].chars == narrow[0].chars);

  const auto han = parse_segmented_text("\xE4\xB8\xAD\xE5\x9B\xBD \xE4\xBA\xBA\n");
  REQUIRE(han.size() == 1);
  CHECK(han[0].size() == 3);
  CHECK(han[0].words() == std::vector<std::string>{"\xE4\xB8\xAD\xE5\x9B\xBD", "\xE4\xBA\xBA"});
}

TEST_CASE("malformed utf-8 names the line") {
  try {
    parse_segmented_text("ok\nbad \xC3\n");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("spans to bmes") {
  CHECK(spans_to_bmes(SpanList{{0, 1}}, 1) == LabelSequence{L::S});
  CHECK(spans_to_bmes(SpanList{{0, 3}}, 3) == LabelSequence{L::B, L::M, L::E});
  CHECK(spans_to_bmes(SpanList{{0, 2}, {2, 3}}, 3) == LabelSequence{L::B, L::E, L::S});
  CHECK_THROWS_AS(spans_to_bmes(SpanList{{0, 2}}, 3), std::invalid_argument);
  CHECK_THROWS_AS(spans_to_bmes(SpanList{{0, 2}, {1, 3}}, 3), std::invalid_argument);
}

TEST_CASE("bmes to spans") {
  CHECK(bmes_to_spans(LabelSequence{L::B, L::E, L::S}) == SpanList{{0, 2}, {2, 3}});
  CHECK(bmes_to_spans(LabelSequence{L::S, L::S}) == SpanList{{0, 1}, {1, 2}});
  CHECK(bmes_to_spans(LabelSequence{L::M, L::E, L::B}) == SpanList{{0, 2}, {2, 3}});
  CHECK(bmes_to_spans(LabelSequence{}).empty());
  for (Label y : {L::B, L::M, L::E, L::S}) CHECK(bmes_to_spans(LabelSequence{y}) == SpanList{{0, 1}});
}

TEST_CASE("codec is total and inverse on valid sequences") {
  for (int n = 1; n <= 8; ++n) {
    long valid = 0;
    for (const auto& tags : testing::all_sequences(n)) {
      const auto spans = bmes_to_spans(tags);
      REQUIRE(is_partition(spans, n));
      const auto back = spans_to_bmes(spans, n);
      if (back == tags) ++valid;
      CHECK(bmes_to_spans(back) == spans);
    }
    // Well-formed sequences of length n correspond to compositions of n.
    CHECK(valid == (1L << (n - 1)));
  }
}

TEST_CASE("corpus round trip through files") {
  const auto dir = temp_dir();
  const std::string text = "AB C\nD EF G\n";
  write_file(dir / "a.txt", text);
  const auto corpus = read_segmented_corpus(dir / "a.txt");
  write_segmented_corpus(dir / "b.txt", corpus);
  CHECK(read_file(dir / "b.txt") == text);
  CHECK(read_segmented_corpus(dir / "b.txt").size() == 2);
  CHECK_THROWS_AS(read_segmented_corpus(dir / "missing.txt"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("vocabulary") {
  auto c = make_corpus("x", parse_segmented_text("AB C\n"), {}, 0.5, 1);
  c.train = parse_segmented_text("AB C\n");
  c.rebuild_word_set();
  const std::vector<CriterionCorpus> one{c};
  const auto v = build_vocab(one, 1);
  for (const char* ch : {"A", "B", "C"}) CHECK(v.char_id(ch) > kUnkId);
  CHECK(v.char_id("Z") == kUnkId);
  CHECK(v.chars()[kPadId] == kPadToken);
  CHECK(v.chars()[kUnkId] == kUnkToken);

  const auto rare = build_vocab(one, 2);
  for (const char* ch : {"A", "B", "C"}) CHECK(rare.char_id(ch) == kUnkId);

  const auto again = build_vocab(one, 1);
  CHECK(again.chars() == v.chars());
  CHECK(again.bigrams() == v.bigrams());
  CHECK(again.hash() == v.hash());

  const auto enc = v.encode(c.train[0]);
  CHECK(enc.char_ids.size() == 3);
  CHECK(enc.bigram_ids[0] == v.bigram_id("A", "B"));
  CHECK(enc.bigram_ids[2] == v.bigram_id("C", std::string(kBoundaryToken)));
}

TEST_CASE("pretrained embeddings") {
  const auto dir = temp_dir();
  const Vocabulary v({"A", "B"}, {});
  Rng rng(1);
  write_file(dir / "full.vec", "2 3\nA 1 2 3\nB 4 5 6\n");
  const auto full = load_pretrained_embeddings(dir / "full.vec", v, 3, 0.05, rng);
  CHECK(full.rows_from_file == 2);
  CHECK(full.table.row(v.char_id("B")) == Tensor::row({4, 5, 6}).value());

  write_file(dir / "empty.vec", "0 100\n");
  const auto empty = load_pretrained_embeddings(dir / "empty.vec", v, 100, 0.05, rng);
  CHECK(empty.rows_from_file == 0);
  CHECK(empty.table.rows() == 4);
  CHECK(empty.table.cwiseAbs().maxCoeff() < 0.05);

  Rng table_rng(2);
  const Matrix table = uniform_matrix(4, 3, 1.0, table_rng);
  save_embeddings(dir / "saved.vec", v.chars(), table);
  const auto loaded = load_pretrained_embeddings(dir / "saved.vec", v, 3, 0.05, rng);
  CHECK(loaded.table == table);

  write_file(dir / "bad.vec", "A 1 2\n");
  try {
    load_pretrained_embeddings(dir / "bad.vec", v, 3, 0.05, rng);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("dev split") {
  std::vector<TaggedSentence> train;
  for (int i = 0; i < 10; ++i) train.push_back(TaggedSentence::from_words({std::string(1, static_cast<char>('a' + i))}));
  const auto [rest, dev] = split_dev(train, 0.1, 3);
  CHECK(dev.size() == 1);
  CHECK(rest.size() == 9);
  const auto [rest2, dev2] = split_dev(train, 0.1, 3);
  CHECK(dev2[0].text() == dev[0].text());

  std::multiset<std::string> all, parts;
  for (const auto& s : train) all.insert(s.text());
  for (const auto& s : rest) parts.insert(s.text());
  for (const auto& s : dev) parts.insert(s.text());
  CHECK(all == parts);
  CHECK_THROWS(split_dev({}, 0.1, 1));
  CHECK_THROWS(split_dev(train, 1.5, 1));
}

TEST_CASE("character normalization") {
  const auto s = parse_segmented_text("AA C\n")[0];
  CHECK(normalize_chars(s, nullptr).chars == s.chars);
  const CharMapping m{{"A", "B"}};
  const auto n = normalize_chars(s, &m);
  CHECK(n.text() == "BBC");
  CHECK(n.spans == s.spans);
  CHECK(n.tags == s.tags);

  const auto dir = temp_dir();
  write_file(dir / "map.tsv", "A\tB\n");
  CHECK(load_char_mapping(dir / "map.tsv").at("A") == "B");
  write_file(dir / "bad.tsv", "AB\n");
  CHECK_THROWS_AS(load_char_mapping(dir / "bad.tsv"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("segmentation rules") {
  const std::vector<SyntheticSegment> segs{{"ab", false}, {"12345", true}, {"cd", false}};
  CHECK(apply_rule(SegmentationRule::DigitRun, segs) == std::vector<std::string>{"ab", "12345", "cd"});
  CHECK(apply_rule(SegmentationRule::DigitEach, segs) ==
        std::vector<std::string>{"ab", "1", "2", "3", "4", "5", "cd"});
  CHECK(apply_rule(SegmentationRule::DigitPairs, segs) ==
        std::vector<std::string>{"ab", "12", "34", "5", "cd"});
  CHECK(parse_rule(rule_name(SegmentationRule::DigitPairs)) == SegmentationRule::DigitPairs);
  CHECK_THROWS(parse_rule("nope"));
}

TEST_CASE("synthetic corpora") {
  SyntheticOptions o;
  o.n_train = 100;
  o.n_test = 20;
  const auto a = generate_synthetic_corpora(o);
  const auto b = generate_synthetic_corpora(o);
  REQUIRE(a.size() == 2);
  int differ = 0;
  for (std::size_t i = 0; i < a[0].train.size(); ++i) {
    CHECK(a[0].train[i].text() == a[1].train[i].text());
    CHECK(a[0].train[i].spans == b[0].train[i].spans);
    if (a[0].train[i].spans != a[1].train[i].spans) ++differ;
  }
  CHECK(differ >= 30);

  o.rules = {SegmentationRule::DigitRun};
  CHECK_THROWS_AS(generate_synthetic_corpora(o), std::invalid_argument);
}
