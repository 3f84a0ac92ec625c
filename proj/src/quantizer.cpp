#include "vqw2v/quantizer.hpp"

#include "binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace vqw2v {

namespace {

template <typename Scalar>
Index argmax_lowest(std::span<const Scalar> values) {
  Index best = 0;
  for (Index j = 1; j < Index(values.size()); ++j)
    if (values[j] > values[best]) best = j;
  return best;
}

}  // namespace

double QuantizerConfig::codeword_space() const {
  return std::pow(double(vars), double(groups));
}

void QuantizerConfig::validate(Index dim) const {
  if (groups < 1) throw std::invalid_argument("quantizer needs G >= 1");
  if (vars < 2) throw std::invalid_argument("quantizer needs V >= 2");
  if (dim % groups != 0)
    throw std::invalid_argument("feature dim " + std::to_string(dim) + " not divisible by G=" +
                                std::to_string(groups));
  if (gamma < 0) throw std::invalid_argument("gamma must be non-negative");
}

template <typename Scalar>
RowMatrix<Scalar> partition(std::span<const Scalar> z, Index groups) {
  const Index d = Index(z.size());
  if (groups < 1 || d % groups != 0)
    throw std::invalid_argument("cannot partition " + std::to_string(d) + " features into " +
                                std::to_string(groups) + " groups");
  return ConstMatrixMap<Scalar>(z.data(), groups, d / groups);
}

double gumbel_noise(Rng& rng) {
  constexpr double kLo = 1e-10;
  const double u = std::clamp(uniform01(rng), kLo, 1.0 - kLo);
  return -std::log(-std::log(u));
}

template <typename Scalar>
GumbelChoice<Scalar> gumbel_select(std::span<const Scalar> logits, std::span<const Scalar> noise,
                                   double tau, QuantizeMode mode) {
  GumbelChoice<Scalar> out;
  if (mode == QuantizeMode::kInfer) {
    out.index = argmax_lowest(logits);
    return out;
  }
  if (!(tau > 0)) throw std::invalid_argument("gumbel temperature must be positive");
  if (noise.size() != logits.size()) throw ShapeError("gumbel_select: noise/logit size mismatch");
  const Index v = Index(logits.size());
  Vec<Scalar> y(v);
  for (Index j = 0; j < v; ++j) y[j] = (logits[j] + noise[j]) / Scalar(tau);
  out.probs = (y - y.maxCoeff()).exp();
  out.probs /= out.probs.sum();
  out.index = argmax_lowest(std::span<const Scalar>(out.probs.data(), std::size_t(v)));
  return out;
}

template <typename Scalar>
KMeansChoice kmeans_select(std::span<const Scalar> z_group,
                           const Eigen::Ref<const RowMatrix<Scalar>>& codebook) {
  if (codebook.rows() == 0) throw std::invalid_argument("empty codebook");
  if (codebook.cols() != Index(z_group.size()))
    throw ShapeError("kmeans_select: codeword width differs from group width");
  KMeansChoice best{0, std::numeric_limits<double>::infinity()};
  for (Index j = 0; j < codebook.rows(); ++j) {
    double dist = 0;
    for (Index c = 0; c < codebook.cols(); ++c) {
      const double diff = double(z_group[c]) - double(codebook(j, c));
      dist += diff * diff;
    }
    if (dist < best.distance) best = {j, dist};
  }
  return best;
}

template <typename Scalar>
Tensor<Scalar> codebook_term(const Tensor<Scalar>& z, const Tensor<Scalar>& z_hat) {
  auto diff = sub(stop_gradient(z), z_hat);
  return scale(sum(mul(diff, diff)), Scalar(1) / Scalar(z.rows()));
}

template <typename Scalar>
Tensor<Scalar> commitment_term(const Tensor<Scalar>& z, const Tensor<Scalar>& z_hat) {
  auto diff = sub(z, stop_gradient(z_hat));
  return scale(sum(mul(diff, diff)), Scalar(1) / Scalar(z.rows()));
}

template <typename Scalar>
Tensor<Scalar> kmeans_aux_loss(const Tensor<Scalar>& z, const Tensor<Scalar>& z_hat, double gamma) {
  return add(codebook_term(z, z_hat), scale(commitment_term(z, z_hat), Scalar(gamma)));
}

template <typename Scalar>
Quantizer<Scalar>::Quantizer(const QuantizerConfig& cfg, Index dim, ParameterSet<Scalar>& params,
                             const std::string& prefix)
    : cfg_(cfg), dim_(dim) {
  cfg_.validate(dim);
  const Index rows = cfg_.shared_codebook ? cfg_.vars : cfg_.groups * cfg_.vars;
  codebook_ = &params.add(prefix + ".codebook", {rows, group_dim()});
  if (cfg_.backend == QuantizerBackend::kGumbel) {
    hidden_weight_ = &params.add(prefix + ".logits.0.weight", {dim, dim});
    hidden_bias_ = &params.add(prefix + ".logits.0.bias", {dim});
    logits_weight_ = &params.add(prefix + ".logits.1.weight", {cfg_.groups * cfg_.vars, dim});
    logits_bias_ = &params.add(prefix + ".logits.1.bias", {cfg_.groups * cfg_.vars});
  }
}

template <typename Scalar>
void Quantizer<Scalar>::init(Rng& rng) {
  uniform_fill(*codebook_, 1.0 / std::sqrt(double(group_dim())), rng);
  if (hidden_weight_) {
    kaiming_uniform(*hidden_weight_, dim_, rng);
    hidden_bias_->value.setZero();
    kaiming_uniform(*logits_weight_, dim_, rng);
    logits_bias_->value.setZero();
  }
}

template <typename Scalar>
std::string Quantizer<Scalar>::codebook_hash() const {
  std::vector<double> values(codebook_->value.data(),
                             codebook_->value.data() + codebook_->value.size());
  return hash_values(values);
}

template <typename Scalar>
Tensor<Scalar> Quantizer<Scalar>::logits(Tape<Scalar>& tape, const Tensor<Scalar>& z) const {
  if (!hidden_weight_) throw std::logic_error("k-means quantizer has no logits network");
  auto h = relu(linear(z, tape.parameter(*hidden_weight_), tape.parameter(*hidden_bias_)));
  auto l = linear(h, tape.parameter(*logits_weight_), tape.parameter(*logits_bias_));
  return reshape(l, {z.rows() * cfg_.groups, cfg_.vars});
}

template <typename Scalar>
QuantizeOutcome<Scalar> Quantizer<Scalar>::quantize(Tape<Scalar>& tape, const Tensor<Scalar>& z,
                                                    QuantizeMode mode, double tau,
                                                    Rng& rng) const {
  if (z.ndim() != 2 || z.dim(1) != dim_)
    throw ShapeError("quantizer expects [T x " + std::to_string(dim_) + "], got " +
                     shape_string(z.shape()));
  if (cfg_.backend == QuantizerBackend::kGumbel) return quantize_gumbel(tape, z, mode, tau, rng);
  return quantize_kmeans(tape, z);
}

template <typename Scalar>
QuantizeOutcome<Scalar> Quantizer<Scalar>::quantize_gumbel(Tape<Scalar>& tape,
                                                           const Tensor<Scalar>& z,
                                                           QuantizeMode mode, double tau,
                                                           Rng& rng) const {
  const Index frames = z.rows();
  const Index groups = cfg_.groups;
  const Index vars = cfg_.vars;
  const Index width = group_dim();
  const Index rows = frames * groups;

  QuantizeOutcome<Scalar> out;
  out.frames = frames;
  out.groups = groups;
  out.indices.resize(std::size_t(rows));

  const bool train = mode == QuantizeMode::kTrain;
  const bool through_logits = train && cfg_.gumbel_gradient == GumbelGradient::kLogits;
  auto l = logits(tape, through_logits ? z : stop_gradient(z));

  Vec<Scalar> one_hot = Vec<Scalar>::Zero(rows * vars);
  Tensor<Scalar> probs;
  if (train) {
    if (!(tau > 0)) throw std::invalid_argument("gumbel temperature must be positive");
    Vec<Scalar> noise(rows * vars);
    for (Index i = 0; i < noise.size(); ++i) noise[i] = Scalar(gumbel_noise(rng));
    probs = softmax(scale(add(l, tape.constant(l.shape(), std::move(noise))), Scalar(1.0 / tau)));
    out.probs = probs;
  }
  const Vec<Scalar>& scores = train ? probs.value() : l.value();
  for (Index r = 0; r < rows; ++r) {
    const Index j = argmax_lowest(std::span<const Scalar>(scores.data() + r * vars, std::size_t(vars)));
    out.indices[std::size_t(r)] = std::uint32_t(j);
    one_hot[r * vars + j] = Scalar(1);
  }

  auto table = codebook_->matrix();
  Vec<Scalar> hard(rows * width);
  for (Index r = 0; r < rows; ++r)
    hard.segment(r * width, width) =
        table.row(table_row(r % groups, out.indices[std::size_t(r)])).transpose().array();

  if (!train) {
    out.z_hat = tape.constant({frames, dim_}, std::move(hard));
    return out;
  }

  // h + (p - sg(p)): forward value is exactly the one-hot, backward is the
  // softmax Jacobian.
  auto relaxed = add(tape.constant({rows, vars}, std::move(one_hot)), sub(probs, stop_gradient(probs)));
  auto mixed = reshape(group_mix(relaxed, tape.parameter(*codebook_), groups, cfg_.shared_codebook),
                       {frames, dim_});
  if (cfg_.gumbel_gradient == GumbelGradient::kLogits) {
    out.z_hat = mixed;
    return out;
  }
  auto hard_t = tape.constant({frames, dim_}, std::move(hard));
  out.z_hat = add(straight_through(hard_t, z), sub(mixed, hard_t));
  return out;
}

template <typename Scalar>
QuantizeOutcome<Scalar> Quantizer<Scalar>::quantize_kmeans(Tape<Scalar>& tape,
                                                           const Tensor<Scalar>& z) const {
  const Index frames = z.rows();
  const Index groups = cfg_.groups;
  const Index vars = cfg_.vars;
  const Index width = group_dim();

  QuantizeOutcome<Scalar> out;
  out.frames = frames;
  out.groups = groups;
  out.indices.resize(std::size_t(frames * groups));

  auto table = codebook_->matrix();
  std::vector<Index> rows(std::size_t(frames * groups));
  const Scalar* zv = z.value().data();
  for (Index r = 0; r < frames * groups; ++r) {
    const Index g = r % groups;
    auto block = table.middleRows(cfg_.shared_codebook ? 0 : g * vars, vars);
    auto choice = kmeans_select<Scalar>(std::span<const Scalar>(zv + r * width, std::size_t(width)), block);
    out.indices[std::size_t(r)] = std::uint32_t(choice.index);
    rows[std::size_t(r)] = table_row(g, choice.index);
  }
  auto selected = reshape(gather_rows(tape.parameter(*codebook_), std::span<const Index>(rows)),
                          {frames, dim_});
  out.z_hat = straight_through(selected, z);
  out.codebook_loss = codebook_term(z, selected);
  out.commitment_loss = commitment_term(z, selected);
  return out;
}

CodewordUsage codeword_usage(std::span<const std::uint32_t> indices, Index groups, Index vars) {
  if (groups < 1 || indices.size() % std::size_t(groups) != 0)
    throw std::invalid_argument("index buffer is not whole frames");
  std::set<std::vector<std::uint32_t>> seen;
  for (std::size_t t = 0; t < indices.size(); t += std::size_t(groups))
    seen.emplace(indices.begin() + std::ptrdiff_t(t), indices.begin() + std::ptrdiff_t(t + groups));
  CodewordUsage u;
  u.unique_count = seen.size();
  u.total_tokens = indices.size() / std::size_t(groups);
  u.possible = std::pow(double(vars), double(groups));
  const double denom = std::min(u.possible, double(u.total_tokens));
  u.fraction = denom > 0 ? double(u.unique_count) / denom : 0.0;
  return u;
}

CodewordUsage codeword_usage(std::span<const TokenStream> streams) {
  if (streams.empty()) throw std::invalid_argument("codeword_usage needs at least one stream");
  const auto& first = streams.front().header;
  std::vector<std::uint32_t> all;
  for (const auto& s : streams) {
    if (!s.header.compatible_with(first))
      throw std::invalid_argument("token streams mix quantizer configurations (source " +
                                  s.header.source + ")");
    all.insert(all.end(), s.indices.begin(), s.indices.end());
  }
  return codeword_usage(all, Index(first.groups), Index(first.vars));
}

std::string hash_values(std::span<const double> values) {
  io::ByteWriter w;
  for (double v : values) w.f64(v);
  return io::hex32(io::crc32(w.bytes()));
}

#define VQW2V_INSTANTIATE_QUANTIZER(S)                                                       \
  template RowMatrix<S> partition(std::span<const S>, Index);                                \
  template GumbelChoice<S> gumbel_select(std::span<const S>, std::span<const S>, double,     \
                                         QuantizeMode);                                      \
  template KMeansChoice kmeans_select(std::span<const S>,                                    \
                                      const Eigen::Ref<const RowMatrix<S>>&);                \
  template Tensor<S> codebook_term(const Tensor<S>&, const Tensor<S>&);                      \
  template Tensor<S> commitment_term(const Tensor<S>&, const Tensor<S>&);                    \
  template Tensor<S> kmeans_aux_loss(const Tensor<S>&, const Tensor<S>&, double);            \
  template class Quantizer<S>;

VQW2V_INSTANTIATE_QUANTIZER(float)
VQW2V_INSTANTIATE_QUANTIZER(double)

}  // namespace vqw2v
