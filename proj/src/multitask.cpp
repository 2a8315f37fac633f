#include "advseg/multitask.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>

namespace advseg {

std::string architecture_name(Architecture a) {
  switch (a) {
    case Architecture::ModelI: return "model1";
    case Architecture::ModelII: return "model2";
    case Architecture::ModelIII: return "model3";
  }
  return "unknown";
}

Architecture parse_architecture(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "model1" || lower == "i") return Architecture::ModelI;
  if (lower == "model2" || lower == "ii") return Architecture::ModelII;
  if (lower == "model3" || lower == "iii") return Architecture::ModelIII;
  throw std::invalid_argument("unknown architecture '" + std::string(name) +
                              "' (expected model1, model2 or model3)");
}

namespace {

CrfHead random_head(Index width, double range, Rng& rng) {
  CrfHead h;
  h.weight = Tensor(uniform_matrix(width, kNumLabels, range, rng), true);
  h.bias = Tensor(uniform_matrix(1, kNumLabels, range, rng), true);
  h.transitions = Tensor(uniform_matrix(kNumLabels, kNumLabels, range, rng), true);
  return h;
}

void append_lstm(std::vector<NamedParam>& out, const std::string& prefix, const BiLstmParams& p,
                 ParamGroup group, int criterion) {
  out.push_back({prefix + ".fwd.weight", p.forward.weight, group, criterion});
  out.push_back({prefix + ".fwd.bias", p.forward.bias, group, criterion});
  out.push_back({prefix + ".bwd.weight", p.backward.weight, group, criterion});
  out.push_back({prefix + ".bwd.bias", p.backward.bias, group, criterion});
}

void check_criterion(const SharedPrivateModel& model, int m) {
  if (m < 0 || m >= model.criteria_count()) {
    throw std::out_of_range("criterion index " + std::to_string(m) + " outside [0, " +
                            std::to_string(model.criteria_count()) + ")");
  }
}

void check_batch(std::span<const EncodedSentence> batch, const char* op) {
  if (batch.empty()) throw std::invalid_argument(std::string(op) + ": empty batch");
}

Tensor entropy_of(const Tensor& logits) {
  Tensor p = softmax(logits);
  Tensor logp = log_softmax(logits);
  return scale(sum(mul(p, logp)), -1.0);
}

}  // namespace

SharedPrivateModel SharedPrivateModel::create(Architecture arch, const ModelDims& dims,
                                              Index n_chars, Index n_bigrams,
                                              std::vector<std::string> criteria, Rng& rng) {
  if (criteria.empty()) throw std::invalid_argument("SharedPrivateModel: no criteria");
  if (dims.embedding_dim <= 0 || dims.hidden_dim <= 0) {
    throw std::invalid_argument("SharedPrivateModel: dimensions must be positive");
  }
  SharedPrivateModel model;
  model.arch = arch;
  model.dims = dims;
  const double r = dims.init_range;
  model.embedding = EmbeddingTable::random(n_chars, n_bigrams, dims.embedding_dim, r, rng);
  model.shared = BiLstmParams::random(model.input_width(), dims.hidden_dim, r, rng);
  model.discriminator.weight = Tensor(Matrix::Zero(2 * dims.hidden_dim, 0), true);
  model.discriminator.bias = Tensor(Matrix::Zero(1, 0), true);
  for (auto& name : criteria) model.add_criterion(std::move(name), rng);
  return model;
}

int SharedPrivateModel::criterion_index(std::string_view name) const {
  for (std::size_t i = 0; i < criteria.size(); ++i)
    if (criteria[i] == name) return static_cast<int>(i);
  std::string available;
  for (const auto& c : criteria) available += (available.empty() ? "" : ", ") + c;
  throw std::out_of_range("unknown criterion '" + std::string(name) + "'; available: " + available);
}

Index SharedPrivateModel::private_input_width() const {
  return arch == Architecture::ModelI ? input_width() : input_width() + 2 * dims.hidden_dim;
}

Index SharedPrivateModel::head_width() const {
  return arch == Architecture::ModelII ? 2 * dims.hidden_dim : 4 * dims.hidden_dim;
}

int SharedPrivateModel::add_criterion(std::string name, Rng& rng) {
  for (const auto& c : criteria)
    if (c == name) throw std::invalid_argument("duplicate criterion name '" + name + "'");
  const double r = dims.init_range;
  criteria.push_back(std::move(name));
  privates.push_back(BiLstmParams::random(private_input_width(), dims.hidden_dim, r, rng));
  heads.push_back(random_head(head_width(), r, rng));

  const Index M = static_cast<Index>(criteria.size());
  Matrix w(2 * dims.hidden_dim, M);
  Matrix b(1, M);
  w.leftCols(M - 1) = discriminator.weight.value();
  b.leftCols(M - 1) = discriminator.bias.value();
  w.col(M - 1) = uniform_matrix(2 * dims.hidden_dim, 1, r, rng);
  b(0, M - 1) = uniform(rng, -r, r);
  discriminator.weight = Tensor(std::move(w), true);
  discriminator.bias = Tensor(std::move(b), true);
  return static_cast<int>(M - 1);
}

std::vector<NamedParam> SharedPrivateModel::parameters() const {
  std::vector<NamedParam> out;
  out.push_back({"embedding.unigram", embedding.unigram, ParamGroup::Shared, -1});
  out.push_back({"embedding.bigram", embedding.bigram, ParamGroup::Shared, -1});
  append_lstm(out, "shared", shared, ParamGroup::Shared, -1);
  for (int m = 0; m < criteria_count(); ++m) {
    const auto i = static_cast<std::size_t>(m);
    append_lstm(out, "private." + std::to_string(m), privates[i], ParamGroup::Private, m);
    const std::string head = "head." + std::to_string(m);
    out.push_back({head + ".weight", heads[i].weight, ParamGroup::Private, m});
    out.push_back({head + ".bias", heads[i].bias, ParamGroup::Private, m});
    out.push_back({head + ".transitions", heads[i].transitions, ParamGroup::Private, m});
  }
  out.push_back({"discriminator.weight", discriminator.weight, ParamGroup::Discriminator, -1});
  out.push_back({"discriminator.bias", discriminator.bias, ParamGroup::Discriminator, -1});
  return out;
}

std::vector<NamedParam> SharedPrivateModel::parameters(ParamGroup group, int criterion) const {
  std::vector<NamedParam> out;
  for (auto& p : parameters()) {
    if (p.group != group) continue;
    if (group == ParamGroup::Private && criterion >= 0 && p.criterion != criterion) continue;
    out.push_back(std::move(p));
  }
  return out;
}

SharedPrivateModel SharedPrivateModel::clone() const {
  SharedPrivateModel copy = *this;
  // Copies share storage until every handle is rebound.
  auto rebind_lstm = [](BiLstmParams& p) {
    p.forward.weight = p.forward.weight.clone();
    p.forward.bias = p.forward.bias.clone();
    p.backward.weight = p.backward.weight.clone();
    p.backward.bias = p.backward.bias.clone();
  };
  copy.embedding.unigram = embedding.unigram.clone();
  copy.embedding.bigram = embedding.bigram.clone();
  rebind_lstm(copy.shared);
  for (auto& p : copy.privates) rebind_lstm(p);
  for (auto& h : copy.heads) {
    h.weight = h.weight.clone();
    h.bias = h.bias.clone();
    h.transitions = h.transitions.clone();
  }
  copy.discriminator.weight = discriminator.weight.clone();
  copy.discriminator.bias = discriminator.bias.clone();
  return copy;
}

Tensor embed(const SharedPrivateModel& model, const EncodedSentence& s, ForwardContext& ctx) {
  if (s.char_ids.empty()) throw ShapeError("embed: empty sentence");
  Tensor e = embed_sequence(s.char_ids, s.bigram_ids, model.embedding, model.dims.use_bigram);
  if (ctx.mode == Mode::Train && ctx.keep_rate < 1.0) {
    if (ctx.rng == nullptr) throw std::logic_error("embed: training mode needs a generator");
    e = dropout(e, ctx.keep_rate, Mode::Train, *ctx.rng);
  }
  return e;
}

Features forward_features(const SharedPrivateModel& model, const Tensor& embedded, int m) {
  check_criterion(model, m);
  const auto& priv = model.privates[static_cast<std::size_t>(m)];
  Features f;
  f.shared = bilstm_forward(embedded, model.shared);
  switch (model.arch) {
    case Architecture::ModelI: {
      Tensor own = bilstm_forward(embedded, priv);
      f.task = concat({f.shared, own}, 1);
      break;
    }
    case Architecture::ModelII: {
      f.task = bilstm_forward(concat({embedded, f.shared}, 1), priv);
      break;
    }
    case Architecture::ModelIII: {
      Tensor own = bilstm_forward(concat({embedded, f.shared}, 1), priv);
      f.task = concat({f.shared, own}, 1);
      break;
    }
  }
  return f;
}

namespace {

Tensor discriminator_logits(const Tensor& shared_states, const DiscriminatorParams& d) {
  if (shared_states.rows() == 0) throw ShapeError("discriminator: empty sequence");
  return add(matmul(mean_over_axis(shared_states, 0), d.weight), d.bias);
}

Tensor shared_states_only(const SharedPrivateModel& model, const EncodedSentence& s,
                          ForwardContext& ctx) {
  NoGradScope no_grad;
  return bilstm_forward(embed(model, s, ctx), model.shared);
}

}  // namespace

Tensor discriminator_forward(const Tensor& shared_states, const DiscriminatorParams& d) {
  return softmax(discriminator_logits(shared_states, d));
}

Tensor discriminator_log_probs(const Tensor& shared_states, const DiscriminatorParams& d) {
  return log_softmax(discriminator_logits(shared_states, d));
}

double entropy(const Eigen::Ref<const RowVector>& p) {
  double h = 0.0;
  for (Index i = 0; i < p.size(); ++i)
    if (p(i) > 0.0) h -= p(i) * std::log(p(i));
  return h;
}

Tensor loss_seg(const SharedPrivateModel& model, std::span<const EncodedSentence> batch, int m,
                ForwardContext& ctx) {
  check_batch(batch, "loss_seg");
  check_criterion(model, m);
  const auto& head = model.heads[static_cast<std::size_t>(m)];
  std::vector<Tensor> terms;
  terms.reserve(batch.size());
  for (const auto& s : batch) {
    Features f = forward_features(model, embed(model, s, ctx), m);
    Tensor scores = crf::emission_scores(f.task, head);
    terms.push_back(crf::log_likelihood(scores, head.transitions, s.tags));
  }
  return sum(concat(terms, 0));
}

Tensor loss_adv_discriminator(const SharedPrivateModel& model,
                              std::span<const EncodedSentence> batch, int m, ForwardContext& ctx) {
  check_batch(batch, "loss_adv_discriminator");
  check_criterion(model, m);
  std::vector<Tensor> terms;
  terms.reserve(batch.size());
  for (const auto& s : batch) {
    Tensor logp = discriminator_log_probs(shared_states_only(model, s, ctx), model.discriminator);
    terms.push_back(slice(logp, 0, 1, m, 1));
  }
  return sum(concat(terms, 0));
}

Tensor loss_adv_entropy(const SharedPrivateModel& model, std::span<const EncodedSentence> batch,
                        int m, ForwardContext& ctx) {
  check_batch(batch, "loss_adv_entropy");
  check_criterion(model, m);
  const DiscriminatorParams frozen{detach(model.discriminator.weight),
                                   detach(model.discriminator.bias)};
  std::vector<Tensor> terms;
  terms.reserve(batch.size());
  for (const auto& s : batch) {
    Tensor shared = bilstm_forward(embed(model, s, ctx), model.shared);
    terms.push_back(entropy_of(discriminator_logits(shared, frozen)));
  }
  return sum(concat(terms, 0));
}

ObjectiveTerms combined_objective(const SharedPrivateModel& model,
                                  std::span<const EncodedSentence> batch, int m, double lambda,
                                  ForwardContext& ctx) {
  check_batch(batch, "combined_objective");
  check_criterion(model, m);
  if (!(lambda >= 0.0)) throw std::invalid_argument("combined_objective: lambda must be >= 0");
  const auto& head = model.heads[static_cast<std::size_t>(m)];
  const DiscriminatorParams frozen{detach(model.discriminator.weight),
                                   detach(model.discriminator.bias)};
  std::vector<Tensor> seg, disc, ent;
  for (const auto& s : batch) {
    Features f = forward_features(model, embed(model, s, ctx), m);
    seg.push_back(crf::log_likelihood(crf::emission_scores(f.task, head), head.transitions, s.tags));
    Tensor logp = discriminator_log_probs(detach(f.shared), model.discriminator);
    disc.push_back(slice(logp, 0, 1, m, 1));
    ent.push_back(entropy_of(discriminator_logits(f.shared, frozen)));
  }
  ObjectiveTerms t;
  t.seg = sum(concat(seg, 0));
  t.adv_discriminator = sum(concat(disc, 0));
  t.adv_entropy = sum(concat(ent, 0));
  t.total = add(add(t.seg, t.adv_discriminator), scale(t.adv_entropy, lambda));
  return t;
}

ObjectiveTerms tagger_objective(const SharedPrivateModel& model,
                                std::span<const EncodedSentence> batch, int m, double lambda,
                                ForwardContext& ctx) {
  check_batch(batch, "tagger_objective");
  check_criterion(model, m);
  if (!(lambda >= 0.0)) throw std::invalid_argument("tagger_objective: lambda must be >= 0");
  const auto& head = model.heads[static_cast<std::size_t>(m)];
  const DiscriminatorParams frozen{detach(model.discriminator.weight),
                                   detach(model.discriminator.bias)};
  std::vector<Tensor> seg, ent;
  seg.reserve(batch.size());
  for (const auto& s : batch) {
    Features f = forward_features(model, embed(model, s, ctx), m);
    seg.push_back(crf::log_likelihood(crf::emission_scores(f.task, head), head.transitions, s.tags));
    if (lambda > 0.0) ent.push_back(entropy_of(discriminator_logits(f.shared, frozen)));
  }
  ObjectiveTerms t;
  t.seg = sum(concat(seg, 0));
  t.adv_discriminator = Tensor::scalar(0.0);
  t.adv_entropy = ent.empty() ? Tensor::scalar(0.0) : sum(concat(ent, 0));
  t.total = ent.empty() ? t.seg : add(t.seg, scale(t.adv_entropy, lambda));
  return t;
}

LabelSequence decode(const SharedPrivateModel& model, const EncodedSentence& s, int m,
                     const DecodeOptions& options) {
  check_criterion(model, m);
  if (s.char_ids.empty()) return {};
  NoGradScope no_grad;
  ForwardContext ctx = ForwardContext::eval();
  const auto& head = model.heads[static_cast<std::size_t>(m)];
  Features f = forward_features(model, embed(model, s, ctx), m);
  const Tensor scores = crf::emission_scores(f.task, head);
  if (options.mask_illegal_transitions) {
    return crf::constrained_viterbi_decode(scores.value(), head.transitions.value());
  }
  return crf::viterbi_decode(scores.value(), head.transitions.value());
}

std::vector<SpanList> segment(const SharedPrivateModel& model, std::span<const EncodedSentence> batch,
                              int m, const DecodeOptions& options) {
  std::vector<SpanList> out;
  out.reserve(batch.size());
  for (const auto& s : batch) out.push_back(bmes_to_spans(decode(model, s, m, options)));
  return out;
}

double discriminator_accuracy(const SharedPrivateModel& model, std::span<const LabeledBatch> data) {
  NoGradScope no_grad;
  ForwardContext ctx = ForwardContext::eval();
  long total = 0;
  long right = 0;
  for (const auto& group : data) {
    for (const auto& s : group.sentences) {
      const Tensor p = discriminator_forward(shared_states_only(model, s, ctx), model.discriminator);
      Index arg = 0;
      p.value().row(0).maxCoeff(&arg);
      right += arg == group.criterion ? 1 : 0;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(right) / static_cast<double>(total);
}

namespace {

constexpr char kMagic[8] = {'A', 'D', 'V', 'S', 'E', 'G', 'C', 'K'};

template <typename T>
void write_le(std::ostream& out, T v) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!in) throw DataError("checkpoint: truncated file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const SharedPrivateModel& model,
                     const Vocabulary& vocab, const nlohmann::json& config) {
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["architecture"] = architecture_name(model.arch);
  header["dims"] = {{"embedding_dim", model.dims.embedding_dim},
                    {"hidden_dim", model.dims.hidden_dim},
                    {"use_bigram", model.dims.use_bigram},
                    {"init_range", model.dims.init_range}};
  header["criteria"] = model.criteria;
  header["vocab"] = {{"chars", vocab.chars()}, {"bigrams", vocab.bigrams()}, {"hash", hex64(vocab.hash())}};
  header["config"] = config;
  const auto params = model.parameters();
  nlohmann::json index = nlohmann::json::array();
  for (const auto& p : params) index.push_back({{"name", p.name}, {"rows", p.tensor.rows()}, {"cols", p.tensor.cols()}});
  header["tensors"] = index;
  const std::string text = header.dump();

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    write_le<std::uint32_t>(out, kCheckpointVersion);
    write_le<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : params) {
      const Matrix& v = p.tensor.value();
      for (Index r = 0; r < v.rows(); ++r)
        for (Index c = 0; c < v.cols(); ++c) write_le<double>(out, v(r, c));
    }
    if (!out) throw DataError("write failed for checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw DataError(path.string() + ": not a checkpoint file");
  }
  const auto version = read_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto length = read_le<std::uint64_t>(in);
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw DataError(path.string() + ": truncated header");
  const auto header = nlohmann::json::parse(text);

  Checkpoint ck;
  ck.vocab = Vocabulary(header["vocab"]["chars"].get<std::vector<std::string>>(),
                        header["vocab"]["bigrams"].get<std::vector<std::string>>());
  if (hex64(ck.vocab.hash()) != header["vocab"]["hash"].get<std::string>()) {
    throw DataError(path.string() + ": vocabulary hash mismatch");
  }
  ck.config = header["config"];
  ModelDims dims;
  dims.embedding_dim = header["dims"]["embedding_dim"].get<Index>();
  dims.hidden_dim = header["dims"]["hidden_dim"].get<Index>();
  dims.use_bigram = header["dims"]["use_bigram"].get<bool>();
  dims.init_range = header["dims"]["init_range"].get<double>();
  Rng rng(0);
  ck.model = SharedPrivateModel::create(parse_architecture(header["architecture"].get<std::string>()), dims,
                                        static_cast<Index>(ck.vocab.char_count()),
                                        static_cast<Index>(ck.vocab.bigram_count()),
                                        header["criteria"].get<std::vector<std::string>>(), rng);
  auto params = ck.model.parameters();
  const auto& index = header["tensors"];
  if (index.size() != params.size()) throw DataError(path.string() + ": tensor count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const auto& entry = index[i];
    if (entry["name"].get<std::string>() != p.name || entry["rows"].get<Index>() != p.tensor.rows() ||
        entry["cols"].get<Index>() != p.tensor.cols()) {
      throw DataError(path.string() + ": tensor " + entry["name"].get<std::string>() +
                      " does not match the model layout");
    }
    Matrix& v = p.tensor.mutable_value();
    for (Index r = 0; r < v.rows(); ++r)
      for (Index c = 0; c < v.cols(); ++c) v(r, c) = read_le<double>(in);
  }
  return ck;
}

}  // namespace advseg
