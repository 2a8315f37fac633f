#include "advseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace advseg {

namespace utf8 {

std::vector<char32_t> decode(std::string_view text, std::size_t line) {
  std::vector<char32_t> out;
  out.reserve(text.size());
  auto fail = [line](const char* what) -> DataError {
    return DataError(std::string("malformed UTF-8 (") + what + ") on line " + std::to_string(line));
  };
  std::size_t i = 0;
  while (i < text.size()) {
    const auto b0 = static_cast<unsigned char>(text[i]);
    int extra = 0;
    char32_t cp = 0;
    if (b0 < 0x80) {
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      extra = 1;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      extra = 2;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      extra = 3;
      cp = b0 & 0x07;
    } else {
      throw fail("invalid lead byte");
    }
    if (i + static_cast<std::size_t>(extra) >= text.size()) throw fail("truncated sequence");
    for (int k = 1; k <= extra; ++k) {
      const auto b = static_cast<unsigned char>(text[i + static_cast<std::size_t>(k)]);
      if ((b & 0xC0) != 0x80) throw fail("bad continuation byte");
      cp = (cp << 6) | (b & 0x3F);
    }
    static constexpr char32_t kMin[] = {0, 0x80, 0x800, 0x10000};
    if (cp < kMin[extra]) throw fail("overlong encoding");
    if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) throw fail("invalid code point");
    out.push_back(cp);
    i += static_cast<std::size_t>(extra) + 1;
  }
  return out;
}

std::string encode(char32_t cp) {
  std::string s;
  if (cp < 0x80) {
    s += static_cast<char>(cp);
  } else if (cp < 0x800) {
    s += static_cast<char>(0xC0 | (cp >> 6));
    s += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    s += static_cast<char>(0xE0 | (cp >> 12));
    s += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    s += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    s += static_cast<char>(0xF0 | (cp >> 18));
    s += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    s += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    s += static_cast<char>(0x80 | (cp & 0x3F));
  }
  return s;
}

bool is_space(char32_t cp) {
  switch (cp) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

std::vector<std::string> split_chars(std::string_view text, std::size_t line) {
  std::vector<std::string> out;
  for (char32_t cp : decode(text, line)) out.push_back(encode(cp));
  return out;
}

}  // namespace utf8

TaggedSentence TaggedSentence::from_words(const std::vector<std::string>& words) {
  TaggedSentence s;
  for (const auto& w : words) {
    const auto chars = utf8::split_chars(w);
    if (chars.empty()) continue;
    const int start = static_cast<int>(s.chars.size());
    s.chars.insert(s.chars.end(), chars.begin(), chars.end());
    s.spans.push_back({start, static_cast<int>(s.chars.size())});
  }
  s.tags = spans_to_bmes(s.spans, static_cast<int>(s.chars.size()));
  return s;
}

std::string TaggedSentence::word(const Span& sp) const {
  std::string w;
  for (int i = sp.start; i < sp.end; ++i) w += chars[static_cast<std::size_t>(i)];
  return w;
}

std::vector<std::string> TaggedSentence::words() const {
  std::vector<std::string> out;
  out.reserve(spans.size());
  for (const auto& sp : spans) out.push_back(word(sp));
  return out;
}

std::string TaggedSentence::text() const {
  std::string t;
  for (const auto& c : chars) t += c;
  return t;
}

bool is_partition(std::span<const Span> spans, int n) {
  int cursor = 0;
  for (const auto& sp : spans) {
    if (sp.start != cursor || sp.end <= sp.start) return false;
    cursor = sp.end;
  }
  return cursor == n;
}

LabelSequence spans_to_bmes(std::span<const Span> spans, int n) {
  if (!is_partition(spans, n)) {
    throw std::invalid_argument("spans_to_bmes: spans do not partition [0, " + std::to_string(n) +
                                ")");
  }
  LabelSequence tags(static_cast<std::size_t>(n));
  for (const auto& sp : spans) {
    if (sp.length() == 1) {
      tags[static_cast<std::size_t>(sp.start)] = Label::S;
      continue;
    }
    tags[static_cast<std::size_t>(sp.start)] = Label::B;
    for (int i = sp.start + 1; i < sp.end - 1; ++i) tags[static_cast<std::size_t>(i)] = Label::M;
    tags[static_cast<std::size_t>(sp.end - 1)] = Label::E;
  }
  return tags;
}

SpanList bmes_to_spans(std::span<const Label> tags) {
  SpanList spans;
  const int n = static_cast<int>(tags.size());
  int start = 0;
  for (int i = 0; i < n; ++i) {
    const Label t = tags[static_cast<std::size_t>(i)];
    if ((t == Label::B || t == Label::S) && i > start) {
      spans.push_back({start, i});
      start = i;
    }
    if (t == Label::E || t == Label::S) {
      spans.push_back({start, i + 1});
      start = i + 1;
    }
  }
  if (start < n) spans.push_back({start, n});
  return spans;
}

std::vector<TaggedSentence> parse_segmented_text(std::string_view text) {
  std::vector<TaggedSentence> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    ++line_no;
    const std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;

    std::vector<std::string> words;
    std::string current;
    for (char32_t cp : utf8::decode(line, line_no)) {
      if (utf8::is_space(cp)) {
        if (!current.empty()) words.push_back(std::move(current));
        current.clear();
      } else {
        current += utf8::encode(cp);
      }
    }
    if (!current.empty()) words.push_back(std::move(current));
    if (!words.empty()) out.push_back(TaggedSentence::from_words(words));
    if (nl == text.size()) break;
  }
  return out;
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool is_integer(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

}  // namespace

std::vector<TaggedSentence> read_segmented_corpus(const std::filesystem::path& path) {
  try {
    return parse_segmented_text(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string format_segmented(const TaggedSentence& s) {
  std::string line;
  for (std::size_t i = 0; i < s.spans.size(); ++i) {
    if (i > 0) line += ' ';
    line += s.word(s.spans[i]);
  }
  return line;
}

void write_segmented_corpus(const std::filesystem::path& path,
                            std::span<const TaggedSentence> sentences) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& s : sentences) out << format_segmented(s) << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

void CriterionCorpus::rebuild_word_set() {
  train_words.clear();
  for (const auto& s : train)
    for (const auto& sp : s.spans) train_words.insert(s.word(sp));
}

std::pair<std::vector<TaggedSentence>, std::vector<TaggedSentence>> split_dev(
    std::vector<TaggedSentence> train, double fraction, std::uint64_t seed) {
  if (train.empty()) throw std::invalid_argument("split_dev: empty training set");
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw std::invalid_argument("split_dev: fraction must be in (0, 1)");
  }
  Rng rng(seed);
  shuffle(train, rng);
  const auto n_dev = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(train.size())));
  std::vector<TaggedSentence> dev(std::make_move_iterator(train.begin()),
                                  std::make_move_iterator(train.begin() + static_cast<std::ptrdiff_t>(n_dev)));
  train.erase(train.begin(), train.begin() + static_cast<std::ptrdiff_t>(n_dev));
  return {std::move(train), std::move(dev)};
}

CriterionCorpus make_corpus(std::string name, std::vector<TaggedSentence> train,
                            std::vector<TaggedSentence> test, double dev_fraction,
                            std::uint64_t seed) {
  CriterionCorpus c;
  c.name = std::move(name);
  auto [tr, dev] = split_dev(std::move(train), dev_fraction, seed);
  c.train = std::move(tr);
  c.dev = std::move(dev);
  c.test = std::move(test);
  c.rebuild_word_set();
  return c;
}

Vocabulary::Vocabulary() : Vocabulary({}, {}) {}

Vocabulary::Vocabulary(std::vector<std::string> chars, std::vector<std::string> bigrams) {
  chars_ = {std::string(kPadToken), std::string(kUnkToken)};
  bigrams_ = chars_;
  auto append = [](std::vector<std::string>& dst, std::vector<std::string>& src) {
    for (auto& t : src)
      if (t != kPadToken && t != kUnkToken) dst.push_back(std::move(t));
  };
  append(chars_, chars);
  append(bigrams_, bigrams);
  for (std::size_t i = 0; i < chars_.size(); ++i) char_index_[chars_[i]] = static_cast<int>(i);
  for (std::size_t i = 0; i < bigrams_.size(); ++i) bigram_index_[bigrams_[i]] = static_cast<int>(i);
}

int Vocabulary::char_id(const std::string& c) const {
  auto it = char_index_.find(c);
  return it == char_index_.end() ? kUnkId : it->second;
}

std::string Vocabulary::bigram_key(const std::string& first, const std::string& second) {
  return first + second;
}

int Vocabulary::bigram_id(const std::string& first, const std::string& second) const {
  auto it = bigram_index_.find(bigram_key(first, second));
  return it == bigram_index_.end() ? kUnkId : it->second;
}

EncodedSentence Vocabulary::encode_chars(std::span<const std::string> chars) const {
  EncodedSentence e;
  e.char_ids.reserve(chars.size());
  e.bigram_ids.reserve(chars.size());
  const std::string boundary(kBoundaryToken);
  for (std::size_t i = 0; i < chars.size(); ++i) {
    e.char_ids.push_back(char_id(chars[i]));
    e.bigram_ids.push_back(bigram_id(chars[i], i + 1 < chars.size() ? chars[i + 1] : boundary));
  }
  return e;
}

EncodedSentence Vocabulary::encode(const TaggedSentence& s) const {
  EncodedSentence e = encode_chars(s.chars);
  e.tags = s.tags;
  return e;
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : chars_) h = fnv1a(t + '\n', h);
  h = fnv1a("\x1f", h);
  for (const auto& t : bigrams_) h = fnv1a(t + '\n', h);
  return h;
}

Vocabulary build_vocab(std::span<const CriterionCorpus> corpora, int min_freq) {
  if (corpora.empty()) throw std::invalid_argument("build_vocab: no corpora");
  std::map<std::string, int> char_counts;
  std::map<std::string, int> bigram_counts;
  const std::string boundary(kBoundaryToken);
  for (const auto& corpus : corpora) {
    for (const auto& s : corpus.train) {
      for (std::size_t i = 0; i < s.chars.size(); ++i) {
        ++char_counts[s.chars[i]];
        ++bigram_counts[Vocabulary::bigram_key(s.chars[i], i + 1 < s.chars.size() ? s.chars[i + 1] : boundary)];
      }
    }
  }
  auto keep = [min_freq](const std::map<std::string, int>& counts) {
    std::vector<std::string> out;
    for (const auto& [tok, n] : counts)
      if (n >= min_freq) out.push_back(tok);
    return out;
  };
  return Vocabulary(keep(char_counts), keep(bigram_counts));
}

PretrainedEmbeddings load_pretrained_embeddings(const std::filesystem::path& path,
                                                const Vocabulary& vocab, Index dim, double range,
                                                Rng& rng) {
  PretrainedEmbeddings out;
  out.table = uniform_matrix(static_cast<Index>(vocab.char_count()), dim, range, rng);
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embeddings " + path.string());

  std::vector<bool> seen(vocab.char_count(), false);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream fields(line);
    std::vector<std::string> tokens;
    for (std::string t; fields >> t;) tokens.push_back(t);
    if (tokens.empty()) continue;
    if (line_no == 1 && tokens.size() == 2 && is_integer(tokens[0]) && is_integer(tokens[1])) {
      if (std::stoll(tokens[1]) != dim) {
        throw DataError(path.string() + ": embedding dimension " + tokens[1] + " does not match " +
                        std::to_string(dim));
      }
      continue;
    }
    if (static_cast<Index>(tokens.size()) != dim + 1) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) + ": expected " +
                      std::to_string(dim) + " values, found " + std::to_string(tokens.size() - 1));
    }
    RowVector v(dim);
    for (Index k = 0; k < dim; ++k) {
      const std::string& f = tokens[static_cast<std::size_t>(k) + 1];
      char* end = nullptr;
      v(k) = std::strtod(f.c_str(), &end);
      if (end != f.c_str() + f.size() || !std::isfinite(v(k))) {
        throw DataError(path.string() + ": line " + std::to_string(line_no) + ": bad number '" + f + "'");
      }
    }
    const int id = vocab.char_id(tokens[0]);
    if (id == kUnkId && tokens[0] != kUnkToken) continue;
    out.table.row(id) = v;
    if (!seen[static_cast<std::size_t>(id)]) {
      seen[static_cast<std::size_t>(id)] = true;
      ++out.rows_from_file;
    }
  }
  return out;
}

void save_embeddings(const std::filesystem::path& path, std::span<const std::string> tokens,
                     const Matrix& table) {
  if (static_cast<Index>(tokens.size()) != table.rows()) {
    throw std::invalid_argument("save_embeddings: token count does not match table rows");
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << tokens.size() << ' ' << table.cols() << '\n';
  out << std::setprecision(17);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    out << tokens[i];
    for (Index k = 0; k < table.cols(); ++k) out << ' ' << table(static_cast<Index>(i), k);
    out << '\n';
  }
}

CharMapping load_char_mapping(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open mapping " + path.string());
  CharMapping mapping;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    auto bad = [&](const char* why) {
      return DataError(path.string() + ": line " + std::to_string(line_no) + ": " + why);
    };
    if (tab == std::string::npos) throw bad("expected from<TAB>to");
    const auto from = utf8::split_chars(std::string_view(line).substr(0, tab), line_no);
    const auto to = utf8::split_chars(std::string_view(line).substr(tab + 1), line_no);
    if (from.size() != 1 || to.size() != 1) throw bad("each side must be a single character");
    mapping[from[0]] = to[0];
  }
  return mapping;
}

TaggedSentence normalize_chars(TaggedSentence s, const CharMapping* mapping) {
  if (mapping == nullptr) return s;
  for (auto& c : s.chars) {
    auto it = mapping->find(c);
    if (it != mapping->end()) c = it->second;
  }
  return s;
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string rule_name(SegmentationRule r) {
  switch (r) {
    case SegmentationRule::DigitRun: return "digit_run";
    case SegmentationRule::DigitEach: return "digit_each";
    case SegmentationRule::DigitPairs: return "digit_pairs";
  }
  return "unknown";
}

SegmentationRule parse_rule(std::string_view name) {
  for (auto r : {SegmentationRule::DigitRun, SegmentationRule::DigitEach, SegmentationRule::DigitPairs})
    if (rule_name(r) == name) return r;
  throw std::invalid_argument("unknown segmentation rule '" + std::string(name) + "'");
}

std::vector<std::string> apply_rule(SegmentationRule rule, std::span<const SyntheticSegment> segments) {
  std::vector<std::string> words;
  for (const auto& seg : segments) {
    if (!seg.digits) {
      words.push_back(seg.text);
      continue;
    }
    switch (rule) {
      case SegmentationRule::DigitRun:
        words.push_back(seg.text);
        break;
      case SegmentationRule::DigitEach:
        for (char c : seg.text) words.emplace_back(1, c);
        break;
      case SegmentationRule::DigitPairs:
        for (std::size_t i = 0; i < seg.text.size(); i += 2) words.push_back(seg.text.substr(i, 2));
        break;
    }
  }
  return words;
}

namespace {

// Letters in the first half of the alphabet end a word and the others never
// do, so the lexicon is a prefix code: every concatenation of words has one
// segmentation, and letter words are unambiguous under every rule.
std::vector<std::string> make_lexicon(const SyntheticOptions& o, Rng& rng) {
  const auto n_final = static_cast<std::size_t>((o.alphabet_size + 1) / 2);
  const auto n_inner = static_cast<std::size_t>(o.alphabet_size) - n_final;
  std::vector<std::string> lexicon;
  std::unordered_set<std::string> seen;
  // Bounded attempts: small alphabets cannot supply many distinct short words.
  for (int attempt = 0; attempt < 100 * o.lexicon_size && static_cast<int>(lexicon.size()) < o.lexicon_size; ++attempt) {
    const int len = 1 + static_cast<int>(uniform_index(rng, 3));
    std::string w;
    for (int k = 0; k + 1 < len; ++k) w += static_cast<char>('a' + n_final + uniform_index(rng, n_inner));
    w += static_cast<char>('a' + uniform_index(rng, n_final));
    if (seen.insert(w).second) lexicon.push_back(w);
  }
  return lexicon;
}

std::string digit_run(Rng& rng, int min_len, int max_len) {
  const int len = min_len + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(max_len - min_len + 1)));
  std::string s;
  for (int k = 0; k < len; ++k) s += static_cast<char>('0' + uniform_index(rng, 10));
  return s;
}

// Every sentence carries at least one digit run of length >= 2, so rules
// that treat digits differently disagree on it.
std::vector<SyntheticSegment> make_sentence(const SyntheticOptions& o,
                                            const std::vector<std::string>& lexicon, Rng& rng) {
  const int count = o.min_segments +
                    static_cast<int>(uniform_index(rng, static_cast<std::size_t>(o.max_segments - o.min_segments + 1)));
  auto word = [&] { return SyntheticSegment{lexicon[uniform_index(rng, lexicon.size())], false}; };
  std::vector<SyntheticSegment> segs;
  for (int k = 0; k < count; ++k) {
    const bool prev_digit = !segs.empty() && segs.back().digits;
    if (!prev_digit && uniform01(rng) < 0.3) segs.push_back({digit_run(rng, 1, 4), true});
    else segs.push_back(word());
  }
  const auto has_long_run = std::any_of(segs.begin(), segs.end(), [](const SyntheticSegment& s) {
    return s.digits && s.text.size() >= 2;
  });
  if (!has_long_run) {
    const std::size_t j = uniform_index(rng, segs.size());
    segs[j] = {digit_run(rng, 2, 4), true};
    if (j > 0 && segs[j - 1].digits) segs[j - 1] = word();
    if (j + 1 < segs.size() && segs[j + 1].digits) segs[j + 1] = word();
  }
  return segs;
}

}  // namespace

std::vector<SyntheticCorpus> generate_synthetic_corpora(const SyntheticOptions& o) {
  if (o.rules.size() < 2) throw std::invalid_argument("generate_synthetic_corpora: need at least 2 rules");
  if (o.alphabet_size < 2 || o.alphabet_size > 26) {
    throw std::invalid_argument("generate_synthetic_corpora: alphabet_size must be in [2, 26]");
  }
  if (o.lexicon_size < 1 || o.min_segments < 1 || o.max_segments < o.min_segments || o.n_train < 1 ||
      o.n_test < 0) {
    throw std::invalid_argument("generate_synthetic_corpora: invalid sizes");
  }
  if (!o.names.empty() && o.names.size() != o.rules.size()) {
    throw std::invalid_argument("generate_synthetic_corpora: one name per rule required");
  }
  Rng rng(o.seed);
  const auto lexicon = make_lexicon(o, rng);

  std::vector<SyntheticCorpus> out(o.rules.size());
  for (std::size_t r = 0; r < o.rules.size(); ++r) {
    out[r].rule = o.rules[r];
    out[r].name = o.names.empty() ? rule_name(o.rules[r]) : o.names[r];
  }
  for (int i = 0; i < o.n_train + o.n_test; ++i) {
    const auto segs = make_sentence(o, lexicon, rng);
    for (auto& corpus : out) {
      auto s = TaggedSentence::from_words(apply_rule(corpus.rule, segs));
      (i < o.n_train ? corpus.train : corpus.test).push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace advseg
