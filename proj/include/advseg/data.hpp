#ifndef ADVSEG_DATA_HPP
#define ADVSEG_DATA_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "advseg/crf.hpp"
#include "advseg/random.hpp"

namespace advseg {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Half-open character range [start, end).
struct Span {
  int start = 0;
  int end = 0;
  friend bool operator==(const Span&, const Span&) = default;
  int length() const { return end - start; }
};
using SpanList = std::vector<Span>;

namespace utf8 {
// Throws DataError naming `line` on malformed input.
std::vector<char32_t> decode(std::string_view text, std::size_t line = 0);
std::string encode(char32_t cp);
bool is_space(char32_t cp);
// One UTF-8 string per code point.
std::vector<std::string> split_chars(std::string_view text, std::size_t line = 0);
}  // namespace utf8

// One sentence under one criterion. chars holds one code point per entry.
struct TaggedSentence {
  std::vector<std::string> chars;
  SpanList spans;
  LabelSequence tags;

  static TaggedSentence from_words(const std::vector<std::string>& words);
  std::size_t size() const { return chars.size(); }
  std::string word(const Span& s) const;
  std::vector<std::string> words() const;
  // Characters joined without separators.
  std::string text() const;
};

// Spans must cover [0, n) contiguously; single characters map to S, longer
// words to B M* E.
LabelSequence spans_to_bmes(std::span<const Span> spans, int n);

// Inverse of spans_to_bmes on well-formed sequences. Any other sequence is
// repaired: a word opens at position 0 and after each close; it closes
// after E or S, and just before a B or S that arrives while it is open.
SpanList bmes_to_spans(std::span<const Label> tags);

bool is_partition(std::span<const Span> spans, int n);

// One sentence per line, words separated by runs of Unicode whitespace.
// Blank lines are skipped.
std::vector<TaggedSentence> parse_segmented_text(std::string_view text);
std::vector<TaggedSentence> read_segmented_corpus(const std::filesystem::path& path);
std::string format_segmented(const TaggedSentence& s);
void write_segmented_corpus(const std::filesystem::path& path,
                            std::span<const TaggedSentence> sentences);

struct CriterionCorpus {
  std::string name;
  std::vector<TaggedSentence> train;
  std::vector<TaggedSentence> dev;
  std::vector<TaggedSentence> test;
  std::unordered_set<std::string> train_words;

  void rebuild_word_set();
};

// Deterministic shuffle under `seed`; the first ceil(fraction * N) become dev.
std::pair<std::vector<TaggedSentence>, std::vector<TaggedSentence>> split_dev(
    std::vector<TaggedSentence> train, double fraction, std::uint64_t seed);

// Carves dev from train and records the training lexicon.
CriterionCorpus make_corpus(std::string name, std::vector<TaggedSentence> train,
                            std::vector<TaggedSentence> test, double dev_fraction,
                            std::uint64_t seed);

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kBoundaryToken = "</s>";

struct EncodedSentence {
  std::vector<int> char_ids;
  std::vector<int> bigram_ids;
  LabelSequence tags;
};

// Character and bigram ids. Ids 0 and 1 are reserved for padding and
// unknown; the rest follow byte order of the token, so identical input
// always yields identical ids.
class Vocabulary {
 public:
  Vocabulary();
  Vocabulary(std::vector<std::string> chars, std::vector<std::string> bigrams);

  int char_id(const std::string& c) const;
  int bigram_id(const std::string& first, const std::string& second) const;
  static std::string bigram_key(const std::string& first, const std::string& second);

  // The bigram at position i pairs char i with char i+1, or with the
  // boundary token at the last position.
  EncodedSentence encode(const TaggedSentence& s) const;
  EncodedSentence encode_chars(std::span<const std::string> chars) const;

  std::size_t char_count() const { return chars_.size(); }
  std::size_t bigram_count() const { return bigrams_.size(); }
  const std::vector<std::string>& chars() const { return chars_; }
  const std::vector<std::string>& bigrams() const { return bigrams_; }
  // FNV-1a over both token lists.
  std::uint64_t hash() const;

 private:
  std::vector<std::string> chars_;
  std::vector<std::string> bigrams_;
  std::unordered_map<std::string, int> char_index_;
  std::unordered_map<std::string, int> bigram_index_;
};

// Counts over the training splits of every corpus.
Vocabulary build_vocab(std::span<const CriterionCorpus> corpora, int min_freq = 1);

struct PretrainedEmbeddings {
  Matrix table;                  // vocab.char_count() x dim
  std::size_t rows_from_file = 0;
};

// word2vec text format: optional "count dim" header, then "token v1 .. vdim"
// per line. Rows absent from the file are uniform(-range, range).
PretrainedEmbeddings load_pretrained_embeddings(const std::filesystem::path& path,
                                                const Vocabulary& vocab, Index dim, double range,
                                                Rng& rng);
void save_embeddings(const std::filesystem::path& path, std::span<const std::string> tokens,
                     const Matrix& table);

using CharMapping = std::unordered_map<std::string, std::string>;
// Lines of "from<TAB>to", one character each side.
CharMapping load_char_mapping(const std::filesystem::path& path);
TaggedSentence normalize_chars(TaggedSentence s, const CharMapping* mapping);

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

// Synthetic multi-criteria corpora: the same character streams segmented
// under different conventions for digit runs. Letter words come from a
// fixed random lexicon and are single words under every rule.
enum class SegmentationRule {
  DigitRun,    // a digit run is one word
  DigitEach,   // every digit is its own word
  DigitPairs,  // digit runs split into pairs from the left
};

std::string rule_name(SegmentationRule r);
SegmentationRule parse_rule(std::string_view name);

// A raw segment of a synthetic sentence: a lexicon word or a digit run.
struct SyntheticSegment {
  std::string text;
  bool digits = false;
};

std::vector<std::string> apply_rule(SegmentationRule rule, std::span<const SyntheticSegment> segments);

struct SyntheticOptions {
  int alphabet_size = 12;
  int lexicon_size = 40;
  int n_train = 500;
  int n_test = 200;
  int min_segments = 3;
  int max_segments = 7;
  std::vector<SegmentationRule> rules{SegmentationRule::DigitRun, SegmentationRule::DigitEach};
  std::vector<std::string> names;  // defaults to rule names
  std::uint64_t seed = 7;
};

// Train and test splits only; dev is carved by make_corpus.
struct SyntheticCorpus {
  std::string name;
  SegmentationRule rule;
  std::vector<TaggedSentence> train;
  std::vector<TaggedSentence> test;
};

std::vector<SyntheticCorpus> generate_synthetic_corpora(const SyntheticOptions& options);

}  // namespace advseg

#endif  // ADVSEG_DATA_HPP
