#ifndef ADVSEG_EVAL_HPP
#define ADVSEG_EVAL_HPP

#include <ostream>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "advseg/data.hpp"

namespace advseg {

struct SegmentationCounts {
  long gold = 0;
  long predicted = 0;
  long correct = 0;
  long gold_oov = 0;
  long recalled_oov = 0;

  SegmentationCounts& operator+=(const SegmentationCounts& o);
  friend bool operator==(const SegmentationCounts&, const SegmentationCounts&) = default;
};

// Word-level scores. A predicted word is correct when its span matches a
// gold span exactly; OOV words are gold words missing from the training
// lexicon of the same criterion.
struct SegmentationScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double oov_recall = 0.0;
  SegmentationCounts counts;

  static SegmentationScore from_counts(const SegmentationCounts& c);
};

SegmentationCounts count_matches(const TaggedSentence& gold, std::span<const Span> predicted,
                                 const std::unordered_set<std::string>* train_words);

SegmentationScore score(std::span<const TaggedSentence> gold, std::span<const SpanList> predicted,
                        const std::unordered_set<std::string>& train_words);

// Sentence-level F with the same matching rule; an empty pair scores 1.
std::vector<double> per_sentence_f(std::span<const TaggedSentence> gold,
                                   std::span<const SpanList> predicted);

// Header "P\tR\tF\tOOV" then one row.
void write_score_tsv(std::ostream& out, const SegmentationScore& s);
// Header "index\tF" then one row per sentence.
void write_per_sentence_tsv(std::ostream& out, std::span<const double> f);

}  // namespace advseg

#endif  // ADVSEG_EVAL_HPP
