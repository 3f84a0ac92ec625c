#include "vqw2v/model.hpp"

#include <stdexcept>

namespace vqw2v {

EncoderConfig EncoderConfig::full(Index channels) {
  EncoderConfig cfg;
  const Index kernels[] = {10, 8, 4, 4, 4, 1, 1, 1};
  const Index strides[] = {5, 4, 2, 2, 2, 1, 1, 1};
  for (int i = 0; i < 8; ++i) cfg.layers.push_back({kernels[i], strides[i], channels});
  return cfg;
}

EncoderConfig EncoderConfig::small(Index channels) {
  EncoderConfig cfg;
  const Index kernels[] = {10, 8, 4, 4, 4};
  const Index strides[] = {5, 4, 2, 2, 2};
  for (int i = 0; i < 5; ++i) cfg.layers.push_back({kernels[i], strides[i], channels});
  return cfg;
}

Index EncoderConfig::total_stride() const {
  Index s = 1;
  for (const auto& l : layers) s *= l.stride;
  return s;
}

Index EncoderConfig::receptive_field() const {
  Index field = 1;
  Index jump = 1;
  for (const auto& l : layers) {
    field += (l.kernel - 1) * jump;
    jump *= l.stride;
  }
  return field;
}

Index EncoderConfig::frames_for(Index samples) const {
  Index n = samples;
  // With left padding k - 1, each layer yields ceil(n / stride) frames.
  for (const auto& l : layers) n = (n + l.stride - 1) / l.stride;
  return n;
}

void EncoderConfig::validate() const {
  if (layers.empty()) throw std::invalid_argument("encoder needs at least one layer");
  for (const auto& l : layers)
    if (l.kernel < 1 || l.stride < 1 || l.channels < 1)
      throw std::invalid_argument("encoder layer needs positive kernel, stride and channels");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("encoder dropout outside [0, 1)");
}

AggregatorConfig AggregatorConfig::full(Index channels) {
  AggregatorConfig cfg;
  for (Index k = 2; k <= 13; ++k) cfg.layers.push_back({k, 1, channels});
  return cfg;
}

AggregatorConfig AggregatorConfig::small(Index channels) {
  AggregatorConfig cfg;
  for (int i = 0; i < 7; ++i) cfg.layers.push_back({3, 1, channels});
  return cfg;
}

void AggregatorConfig::validate() const {
  if (layers.empty()) throw std::invalid_argument("aggregator needs at least one layer");
  for (const auto& l : layers)
    if (l.kernel < 1 || l.stride != 1 || l.channels < 1)
      throw std::invalid_argument("aggregator layers need kernel >= 1 and stride 1");
  if (dropout < 0.0 || dropout >= 1.0)
    throw std::invalid_argument("aggregator dropout outside [0, 1)");
}

template <typename Scalar>
ConvBlock<Scalar>::ConvBlock(ParameterSet<Scalar>& params, const std::string& prefix,
                             Index in_channels_, ConvLayerSpec spec_, bool with_skip)
    : spec(spec_), in_channels(in_channels_) {
  weight = &params.add(prefix + ".conv.weight", {spec.channels, in_channels, spec.kernel});
  bias = &params.add(prefix + ".conv.bias", {spec.channels});
  norm_gain = &params.add(prefix + ".norm.gain", {spec.channels});
  norm_bias = &params.add(prefix + ".norm.bias", {spec.channels});
  if (with_skip && in_channels != spec.channels) {
    skip_weight = &params.add(prefix + ".skip.weight", {spec.channels, in_channels, 1});
    skip_bias = &params.add(prefix + ".skip.bias", {spec.channels});
  }
}

template <typename Scalar>
void ConvBlock<Scalar>::init(Rng& rng) {
  kaiming_uniform(*weight, in_channels * spec.kernel, rng);
  bias->value.setZero();
  norm_gain->value.setOnes();
  norm_bias->value.setZero();
  if (skip_weight) {
    kaiming_uniform(*skip_weight, in_channels, rng);
    skip_bias->value.setZero();
  }
}

template <typename Scalar>
Tensor<Scalar> ConvBlock<Scalar>::forward(Tape<Scalar>& tape, const Tensor<Scalar>& x,
                                          double dropout_rate, Rng& rng, bool train) const {
  constexpr double kNormEps = 1e-5;
  auto h = conv1d(x, tape.parameter(*weight), tape.parameter(*bias), spec.stride, spec.kernel - 1);
  h = dropout(h, dropout_rate, rng, train);
  h = group_norm(h, Index(1), tape.parameter(*norm_gain), tape.parameter(*norm_bias), kNormEps,
                 NormSpan::kFrame);
  return relu(h);
}

template <typename Scalar>
Encoder<Scalar>::Encoder(const EncoderConfig& cfg, ParameterSet<Scalar>& params,
                         const std::string& prefix)
    : cfg_(cfg) {
  cfg_.validate();
  Index in = 1;
  for (std::size_t i = 0; i < cfg_.layers.size(); ++i) {
    blocks_.emplace_back(params, prefix + "." + std::to_string(i), in, cfg_.layers[i], false);
    in = cfg_.layers[i].channels;
  }
}

template <typename Scalar>
void Encoder<Scalar>::init(Rng& rng) {
  for (auto& b : blocks_) b.init(rng);
}

template <typename Scalar>
Tensor<Scalar> Encoder<Scalar>::forward(Tape<Scalar>& tape, const Tensor<Scalar>& wave, Rng& rng,
                                        bool train) const {
  if (wave.size() < cfg_.receptive_field())
    throw std::invalid_argument("audio too short: " + std::to_string(wave.size()) +
                                " samples, encoder needs at least " +
                                std::to_string(cfg_.receptive_field()));
  auto h = reshape(wave, {1, wave.size()});
  for (const auto& b : blocks_) h = b.forward(tape, h, cfg_.dropout, rng, train);
  return h;
}

template <typename Scalar>
Tensor<Scalar> Encoder<Scalar>::forward(Tape<Scalar>& tape, std::span<const float> samples,
                                        Rng& rng, bool train) const {
  Vec<Scalar> v(Index(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) v[Index(i)] = Scalar(samples[i]);
  return forward(tape, tape.constant({1, Index(samples.size())}, std::move(v)), rng, train);
}

template <typename Scalar>
Aggregator<Scalar>::Aggregator(const AggregatorConfig& cfg, Index input_dim,
                               ParameterSet<Scalar>& params, const std::string& prefix)
    : cfg_(cfg) {
  cfg_.validate();
  Index in = input_dim;
  for (std::size_t i = 0; i < cfg_.layers.size(); ++i) {
    blocks_.emplace_back(params, prefix + "." + std::to_string(i), in, cfg_.layers[i],
                         cfg_.skip_connections);
    in = cfg_.layers[i].channels;
  }
}

template <typename Scalar>
void Aggregator<Scalar>::init(Rng& rng) {
  for (auto& b : blocks_) b.init(rng);
}

template <typename Scalar>
Tensor<Scalar> Aggregator<Scalar>::forward(Tape<Scalar>& tape, const Tensor<Scalar>& x, Rng& rng,
                                           bool train) const {
  if (x.ndim() != 2 || x.dim(0) != blocks_.front().in_channels)
    throw ShapeError("aggregator input " + shape_string(x.shape()) + " does not have " +
                     std::to_string(blocks_.front().in_channels) + " channels");
  auto h = x;
  for (const auto& b : blocks_) {
    auto out = b.forward(tape, h, cfg_.dropout, rng, train);
    if (cfg_.skip_connections) {
      auto residual = b.skip_weight ? conv1d(h, tape.parameter(*b.skip_weight),
                                             tape.parameter(*b.skip_bias), Index(1), Index(0))
                                    : h;
      out = add(out, residual);
    }
    h = out;
  }
  return h;
}

template <typename Scalar>
StepHeads<Scalar>::StepHeads(Index steps, Index context_dim, Index target_dim,
                             ParameterSet<Scalar>& params, const std::string& prefix) {
  if (steps < 1) throw std::invalid_argument("need at least one prediction step");
  for (Index k = 1; k <= steps; ++k) {
    weights_.push_back(
        &params.add(prefix + "." + std::to_string(k) + ".weight", {target_dim, context_dim}));
    biases_.push_back(&params.add(prefix + "." + std::to_string(k) + ".bias", {target_dim}));
  }
}

template <typename Scalar>
void StepHeads<Scalar>::init(Rng& rng) {
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    kaiming_uniform(*weights_[i], weights_[i]->shape[1], rng);
    biases_[i]->value.setZero();
  }
}

template <typename Scalar>
std::size_t StepHeads<Scalar>::check(Index k) const {
  if (k < 1 || k > steps())
    throw std::out_of_range("prediction step " + std::to_string(k) + " outside 1.." +
                            std::to_string(steps()));
  return std::size_t(k - 1);
}

template <typename Scalar>
Tensor<Scalar> StepHeads<Scalar>::predict(Tape<Scalar>& tape, const Tensor<Scalar>& context,
                                          Index k) const {
  const auto i = check(k);
  return linear(context, tape.parameter(*weights_[i]), tape.parameter(*biases_[i]));
}

template <typename Scalar>
Tensor<Scalar> predict_step(Tape<Scalar>& tape, const Tensor<Scalar>& context, Index k,
                            const StepHeads<Scalar>& heads) {
  return heads.predict(tape, context, k);
}

template struct ConvBlock<float>;
template struct ConvBlock<double>;
template class Encoder<float>;
template class Encoder<double>;
template class Aggregator<float>;
template class Aggregator<double>;
template class StepHeads<float>;
template class StepHeads<double>;
template Tensor<float> predict_step(Tape<float>&, const Tensor<float>&, Index,
                                    const StepHeads<float>&);
template Tensor<double> predict_step(Tape<double>&, const Tensor<double>&, Index,
                                     const StepHeads<double>&);

}  // namespace vqw2v
