#include "vqw2v/masked_lm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

namespace vqw2v {

Vocabulary::Vocabulary(std::uint32_t groups, std::uint32_t vars, std::string codebook_hash)
    : groups_(groups), vars_(vars), hash_(std::move(codebook_hash)) {}

Index Vocabulary::insert(std::span<const std::uint32_t> tuple) {
  if (tuple.size() != groups_) throw std::invalid_argument("tuple width differs from G");
  std::vector<std::uint32_t> key(tuple.begin(), tuple.end());
  auto [it, fresh] = ids_.try_emplace(key, size());
  if (fresh) tuples_.push_back(std::move(key));
  return it->second;
}

Index Vocabulary::id_of(std::span<const std::uint32_t> tuple) const {
  auto it = ids_.find(std::vector<std::uint32_t>(tuple.begin(), tuple.end()));
  return it == ids_.end() ? kUnk : it->second;
}

const std::vector<std::uint32_t>& Vocabulary::tuple_of(Index id) const {
  if (id < kFirstTuple || id >= size())
    throw std::out_of_range("id " + std::to_string(id) + " is not a codeword tuple");
  return tuples_[std::size_t(id - kFirstTuple)];
}

void Vocabulary::check_compatible(const TokenHeader& header) const {
  if (header.groups != groups_ || header.vars != vars_ || header.codebook_hash != hash_)
    throw std::invalid_argument("token stream (G=" + std::to_string(header.groups) +
                                ", V=" + std::to_string(header.vars) + ", codebook " +
                                header.codebook_hash + ") does not match vocabulary (G=" +
                                std::to_string(groups_) + ", V=" + std::to_string(vars_) +
                                ", codebook " + hash_ + ")");
}

std::vector<Index> Vocabulary::encode(const TokenStream& stream) const {
  check_compatible(stream.header);
  std::vector<Index> ids(stream.frames());
  for (std::size_t t = 0; t < ids.size(); ++t) ids[t] = id_of(stream.frame(t));
  return ids;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "# vqw2v-vocab v1\n"
      << "# groups=" << groups_ << "\n# vars=" << vars_ << "\n# codebook_hash=" << hash_
      << "\n# specials=PAD:" << kPad << ",MASK:" << kMask << ",UNK:" << kUnk << '\n';
  for (std::size_t i = 0; i < tuples_.size(); ++i) {
    for (std::size_t g = 0; g < tuples_[i].size(); ++g) out << (g ? "," : "") << tuples_[i][g];
    out << '\t' << Index(i) + kFirstTuple << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::map<std::string, std::string> meta;
  Vocabulary vocab;
  bool header_done = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto eq = line.find('=');
      if (eq != std::string::npos) meta[line.substr(2, eq - 2)] = line.substr(eq + 1);
      continue;
    }
    if (!header_done) {
      if (!meta.count("groups") || !meta.count("vars") || !meta.count("codebook_hash"))
        throw std::runtime_error(path.string() + ": vocabulary header incomplete");
      vocab = Vocabulary(std::uint32_t(std::stoul(meta["groups"])),
                         std::uint32_t(std::stoul(meta["vars"])), meta["codebook_hash"]);
      header_done = true;
    }
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error(path.string() + ": malformed line " + line);
    std::vector<std::uint32_t> tuple;
    std::stringstream fields(line.substr(0, tab));
    for (std::string f; std::getline(fields, f, ',');) tuple.push_back(std::uint32_t(std::stoul(f)));
    const Index expect = std::stoll(line.substr(tab + 1));
    if (vocab.insert(tuple) != expect)
      throw std::runtime_error(path.string() + ": ids are not dense in file order");
  }
  if (!header_done) {
    if (!meta.count("groups") || !meta.count("vars") || !meta.count("codebook_hash"))
      throw std::runtime_error(path.string() + ": vocabulary header incomplete");
    vocab = Vocabulary(std::uint32_t(std::stoul(meta["groups"])),
                       std::uint32_t(std::stoul(meta["vars"])), meta["codebook_hash"]);
  }
  return vocab;
}

Vocabulary build_vocab(std::span<const TokenStream> streams) {
  if (streams.empty()) throw std::invalid_argument("build_vocab needs at least one token stream");
  const auto& h = streams.front().header;
  Vocabulary vocab(h.groups, h.vars, h.codebook_hash);
  for (const auto& s : streams) {
    vocab.check_compatible(s.header);
    for (std::size_t t = 0; t < s.frames(); ++t) vocab.insert(s.frame(t));
  }
  return vocab;
}

void SpanMaskConfig::validate() const {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("span start rate p must be in (0, 1)");
  if (span < 1) throw std::invalid_argument("span length M must be >= 1");
}

SpanMask sample_span_mask(Index length, const SpanMaskConfig& cfg, Rng& rng) {
  cfg.validate();
  if (length < 1) throw std::invalid_argument("cannot mask an empty sequence");
  const auto count = std::size_t(std::llround(cfg.p * double(length)));
  std::vector<Index> candidates(static_cast<std::size_t>(length));
  std::iota(candidates.begin(), candidates.end(), Index(0));
  SpanMask mask;
  std::sample(candidates.begin(), candidates.end(), std::back_inserter(mask.starts), count, rng);
  std::vector<char> hit(std::size_t(length), 0);
  for (Index s : mask.starts)
    for (Index t = s; t < std::min(s + cfg.span, length); ++t) hit[std::size_t(t)] = 1;
  for (Index t = 0; t < length; ++t)
    if (hit[std::size_t(t)]) mask.positions.push_back(t);
  return mask;
}

MaskedEncoderConfig MaskedEncoderConfig::small() {
  return {12, 512, 2048, 8, 0.05};
}

MaskedEncoderConfig MaskedEncoderConfig::tiny() {
  return {2, 64, 256, 4, 0.05};
}

void MaskedEncoderConfig::validate() const {
  if (layers < 1 || dim < 1 || ffn_dim < 1 || heads < 1)
    throw std::invalid_argument("masked encoder sizes must be positive");
  if (dim % heads != 0) throw std::invalid_argument("model dim must be divisible by heads");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("dropout outside [0, 1)");
}

RowMatrix<double> sinusoidal_positions(Index length, Index dim) {
  RowMatrix<double> pe(length, dim);
  for (Index t = 0; t < length; ++t)
    for (Index i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -double(2 * (i / 2)) / double(dim));
      pe(t, i) = (i % 2 == 0) ? std::sin(double(t) * rate) : std::cos(double(t) * rate);
    }
  return pe;
}

template <typename Scalar>
MaskedEncoder<Scalar>::MaskedEncoder(const MaskedEncoderConfig& cfg, Index vocab_size)
    : cfg_(cfg), vocab_size_(vocab_size) {
  cfg_.validate();
  if (vocab_size <= Vocabulary::kFirstTuple)
    throw std::invalid_argument("vocabulary holds no codeword tuples");
  const Index d = cfg_.dim;
  embedding_ = &params_.add("embed.tokens", {vocab_size, d});
  embed_ln_g_ = &params_.add("embed.norm.gain", {d});
  embed_ln_b_ = &params_.add("embed.norm.bias", {d});
  for (Index l = 0; l < cfg_.layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    Layer layer{};
    layer.q_w = &params_.add(p + "attn.q.weight", {d, d});
    layer.q_b = &params_.add(p + "attn.q.bias", {d});
    layer.k_w = &params_.add(p + "attn.k.weight", {d, d});
    layer.k_b = &params_.add(p + "attn.k.bias", {d});
    layer.v_w = &params_.add(p + "attn.v.weight", {d, d});
    layer.v_b = &params_.add(p + "attn.v.bias", {d});
    layer.o_w = &params_.add(p + "attn.out.weight", {d, d});
    layer.o_b = &params_.add(p + "attn.out.bias", {d});
    layer.ln1_g = &params_.add(p + "attn.norm.gain", {d});
    layer.ln1_b = &params_.add(p + "attn.norm.bias", {d});
    layer.ff1_w = &params_.add(p + "ffn.0.weight", {cfg_.ffn_dim, d});
    layer.ff1_b = &params_.add(p + "ffn.0.bias", {cfg_.ffn_dim});
    layer.ff2_w = &params_.add(p + "ffn.1.weight", {d, cfg_.ffn_dim});
    layer.ff2_b = &params_.add(p + "ffn.1.bias", {d});
    layer.ln2_g = &params_.add(p + "ffn.norm.gain", {d});
    layer.ln2_b = &params_.add(p + "ffn.norm.bias", {d});
    layers_.push_back(layer);
  }
  out_w_ = &params_.add("head.weight", {vocab_size, d});
  out_b_ = &params_.add("head.bias", {vocab_size});
}

template <typename Scalar>
void MaskedEncoder<Scalar>::init(std::uint64_t seed) {
  Rng rng = make_stream(seed, "mlm-init");
  for (auto& p : params_) {
    if (p.name.ends_with(".gain")) {
      p.value.setOnes();
    } else if (p.name.ends_with(".bias")) {
      p.value.setZero();
    } else if (p.name == "embed.tokens") {
      uniform_fill(p, 1.0, rng);
    } else {
      // Glorot-style bound keeps attention logits O(1) at init.
      uniform_fill(p, std::sqrt(6.0 / double(p.shape[0] + p.shape[1])), rng);
    }
  }
}

template <typename Scalar>
Tensor<Scalar> MaskedEncoder<Scalar>::encode(Tape<Scalar>& tape, std::span<const Index> ids,
                                             Rng& rng, bool train,
                                             std::vector<Tensor<Scalar>>* attention) const {
  const Index length = Index(ids.size());
  if (length < 1) throw std::invalid_argument("cannot encode an empty token sequence");
  for (Index id : ids)
    if (id < 0 || id >= vocab_size_) throw std::out_of_range("token id " + std::to_string(id));
  constexpr double kEps = 1e-5;
  const Index d = cfg_.dim;
  const Index head_dim = d / cfg_.heads;
  auto p = [&tape](Parameter<Scalar>* param) { return tape.parameter(*param); };

  const RowMatrix<double> table = sinusoidal_positions(length, d);
  Vec<Scalar> pos(length * d);
  for (Index i = 0; i < pos.size(); ++i) pos[i] = Scalar(table.data()[i]);
  auto x = add(gather_rows(p(embedding_), ids), tape.constant({length, d}, std::move(pos)));
  x = dropout(layer_norm(x, p(embed_ln_g_), p(embed_ln_b_), kEps), cfg_.dropout, rng, train);

  const Scalar inv_sqrt = Scalar(1.0 / std::sqrt(double(head_dim)));
  for (const auto& layer : layers_) {
    auto q = linear(x, p(layer.q_w), p(layer.q_b));
    auto k = linear(x, p(layer.k_w), p(layer.k_b));
    auto v = linear(x, p(layer.v_w), p(layer.v_b));
    std::vector<Tensor<Scalar>> heads;
    for (Index h = 0; h < cfg_.heads; ++h) {
      auto scores = scale(matmul(slice_cols(q, h * head_dim, head_dim),
                                 slice_cols(k, h * head_dim, head_dim), true),
                          inv_sqrt);
      auto weights = softmax(scores);
      if (attention) attention->push_back(weights);
      heads.push_back(matmul(dropout(weights, cfg_.dropout, rng, train),
                             slice_cols(v, h * head_dim, head_dim)));
    }
    auto attended = linear(concat_cols(heads), p(layer.o_w), p(layer.o_b));
    x = layer_norm(add(x, dropout(attended, cfg_.dropout, rng, train)), p(layer.ln1_g),
                   p(layer.ln1_b), kEps);
    auto ff = linear(relu(linear(x, p(layer.ff1_w), p(layer.ff1_b))), p(layer.ff2_w), p(layer.ff2_b));
    x = layer_norm(add(x, dropout(ff, cfg_.dropout, rng, train)), p(layer.ln2_g), p(layer.ln2_b), kEps);
  }
  return x;
}

template <typename Scalar>
Tensor<Scalar> MaskedEncoder<Scalar>::logits(Tape<Scalar>& tape, const Tensor<Scalar>& states) const {
  return linear(states, tape.parameter(*out_w_), tape.parameter(*out_b_));
}

template <typename Scalar>
MlmResult<Scalar> mlm_forward(Tape<Scalar>& tape, std::span<const Index> tokens,
                              std::span<const Index> masked, const MaskedEncoder<Scalar>& model,
                              Rng& rng, bool train) {
  MlmResult<Scalar> out;
  std::vector<Index> input(tokens.begin(), tokens.end());
  out.masked.assign(masked.begin(), masked.end());
  for (Index t : out.masked) {
    if (t < 0 || t >= Index(input.size())) throw std::out_of_range("masked position");
    input[std::size_t(t)] = Vocabulary::kMask;
  }
  out.logits = model.logits(tape, model.encode(tape, input, rng, train));
  if (out.masked.empty()) {
    std::clog << "warning: empty mask, batch skipped\n";
    return out;
  }
  std::vector<Index> targets;
  for (Index t : out.masked) targets.push_back(tokens[std::size_t(t)]);
  auto picked = gather_rows(out.logits, std::span<const Index>(out.masked));
  out.loss = softmax_cross_entropy(picked, std::span<const Index>(targets));
  auto scores = picked.matrix();
  for (Index r = 0; r < scores.rows(); ++r) {
    Index best;
    scores.row(r).maxCoeff(&best);
    if (best == targets[std::size_t(r)]) ++out.correct;
  }
  return out;
}

template <typename Scalar>
RowMatrix<Scalar> extract_features(std::span<const Index> tokens, const MaskedEncoder<Scalar>& model) {
  Tape<Scalar> tape;
  Rng unused(0);
  auto states = model.encode(tape, tokens, unused, false);
  return states.matrix().transpose();
}

template <typename Scalar>
RowMatrix<Scalar> extract_features(const TokenStream& stream, const Vocabulary& vocab,
                                   const MaskedEncoder<Scalar>& model) {
  if (vocab.size() != model.vocab_size())
    throw std::invalid_argument("vocabulary size does not match the masked encoder");
  return extract_features(std::span<const Index>(vocab.encode(stream)), model);
}

#define VQW2V_INSTANTIATE_MLM(S)                                                             \
  template class MaskedEncoder<S>;                                                           \
  template MlmResult<S> mlm_forward(Tape<S>&, std::span<const Index>, std::span<const Index>, \
                                    const MaskedEncoder<S>&, Rng&, bool);                    \
  template RowMatrix<S> extract_features(std::span<const Index>, const MaskedEncoder<S>&);   \
  template RowMatrix<S> extract_features(const TokenStream&, const Vocabulary&,              \
                                         const MaskedEncoder<S>&);

VQW2V_INSTANTIATE_MLM(float)
VQW2V_INSTANTIATE_MLM(double)

}  // namespace vqw2v
