#include "advseg/eval.hpp"

#include <iomanip>
#include <stdexcept>

namespace advseg {

SegmentationCounts& SegmentationCounts::operator+=(const SegmentationCounts& o) {
  gold += o.gold;
  predicted += o.predicted;
  correct += o.correct;
  gold_oov += o.gold_oov;
  recalled_oov += o.recalled_oov;
  return *this;
}

SegmentationScore SegmentationScore::from_counts(const SegmentationCounts& c) {
  SegmentationScore s;
  s.counts = c;
  s.precision = c.predicted > 0 ? static_cast<double>(c.correct) / static_cast<double>(c.predicted) : 0.0;
  s.recall = c.gold > 0 ? static_cast<double>(c.correct) / static_cast<double>(c.gold) : 0.0;
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  s.oov_recall = c.gold_oov > 0 ? static_cast<double>(c.recalled_oov) / static_cast<double>(c.gold_oov) : 0.0;
  return s;
}

SegmentationCounts count_matches(const TaggedSentence& gold, std::span<const Span> predicted,
                                 const std::unordered_set<std::string>* train_words) {
  SegmentationCounts c;
  c.gold = static_cast<long>(gold.spans.size());
  c.predicted = static_cast<long>(predicted.size());
  // Both span lists are sorted partitions; walk them together.
  std::size_t p = 0;
  for (const auto& g : gold.spans) {
    while (p < predicted.size() && predicted[p].start < g.start) ++p;
    const bool hit = p < predicted.size() && predicted[p] == g;
    if (hit) ++c.correct;
    if (train_words != nullptr && !train_words->contains(gold.word(g))) {
      ++c.gold_oov;
      if (hit) ++c.recalled_oov;
    }
  }
  return c;
}

namespace {

void check_aligned(std::span<const TaggedSentence> gold, std::span<const SpanList> predicted) {
  if (gold.size() != predicted.size()) {
    throw std::invalid_argument("score: " + std::to_string(gold.size()) + " gold sentences but " +
                                std::to_string(predicted.size()) + " predictions");
  }
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (!is_partition(predicted[i], static_cast<int>(gold[i].size()))) {
      throw std::invalid_argument("score: prediction " + std::to_string(i) +
                                  " does not partition its gold sentence");
    }
  }
}

}  // namespace

SegmentationScore score(std::span<const TaggedSentence> gold, std::span<const SpanList> predicted,
                        const std::unordered_set<std::string>& train_words) {
  check_aligned(gold, predicted);
  SegmentationCounts total;
  for (std::size_t i = 0; i < gold.size(); ++i) total += count_matches(gold[i], predicted[i], &train_words);
  return SegmentationScore::from_counts(total);
}

std::vector<double> per_sentence_f(std::span<const TaggedSentence> gold,
                                   std::span<const SpanList> predicted) {
  check_aligned(gold, predicted);
  std::vector<double> out;
  out.reserve(gold.size());
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto c = count_matches(gold[i], predicted[i], nullptr);
    if (c.gold == 0 && c.predicted == 0) {
      out.push_back(1.0);
      continue;
    }
    out.push_back(SegmentationScore::from_counts(c).f1);
  }
  return out;
}

void write_score_tsv(std::ostream& out, const SegmentationScore& s) {
  out << "P\tR\tF\tOOV\n" << std::fixed << std::setprecision(6) << s.precision << '\t' << s.recall
      << '\t' << s.f1 << '\t' << s.oov_recall << '\n';
}

void write_per_sentence_tsv(std::ostream& out, std::span<const double> f) {
  out << "index\tF\n" << std::fixed << std::setprecision(6);
  for (std::size_t i = 0; i < f.size(); ++i) out << i << '\t' << f[i] << '\n';
}

}  // namespace advseg
