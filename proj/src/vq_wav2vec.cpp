#include "vqw2v/vq_wav2vec.hpp"

#include <stdexcept>

namespace vqw2v {

VqModelConfig VqModelConfig::full(QuantizerBackend backend) {
  VqModelConfig cfg;
  cfg.encoder = EncoderConfig::full();
  cfg.aggregator = AggregatorConfig::full();
  cfg.quantizer.backend = backend;
  return cfg;
}

VqModelConfig VqModelConfig::small(QuantizerBackend backend, Index channels) {
  VqModelConfig cfg;
  cfg.encoder = EncoderConfig::small(channels);
  cfg.aggregator = AggregatorConfig::small(channels);
  cfg.quantizer.backend = backend;
  return cfg;
}

void VqModelConfig::validate() const {
  encoder.validate();
  aggregator.validate();
  loss.validate();
  const Index dim = quantizer.placement == QuantizerPlacement::kAfterEncoder
                        ? encoder.output_dim()
                        : aggregator.output_dim();
  quantizer.validate(dim);
}

namespace {

Index quantizer_dim(const VqModelConfig& cfg) {
  cfg.validate();
  return cfg.quantizer.placement == QuantizerPlacement::kAfterEncoder ? cfg.encoder.output_dim()
                                                                      : cfg.aggregator.output_dim();
}

}  // namespace

template <typename Scalar>
VqWav2Vec<Scalar>::VqWav2Vec(const VqModelConfig& cfg)
    : cfg_(cfg),
      encoder_(cfg.encoder, params_),
      quantizer_(cfg.quantizer, quantizer_dim(cfg), params_),
      aggregator_(cfg.aggregator, cfg.encoder.output_dim(), params_),
      heads_(cfg.loss.steps, cfg.aggregator.output_dim(), cfg.encoder.output_dim(), params_) {}

template <typename Scalar>
void VqWav2Vec<Scalar>::init(std::uint64_t seed) {
  Rng rng = make_stream(seed, "init");
  encoder_.init(rng);
  quantizer_.init(rng);
  aggregator_.init(rng);
  heads_.init(rng);
}

template <typename Scalar>
VqForward<Scalar> VqWav2Vec<Scalar>::forward(Tape<Scalar>& tape, std::span<const float> wave,
                                             double tau, ForwardRngs& rngs, bool train) const {
  VqForward<Scalar> out;
  const auto mode = train ? QuantizeMode::kTrain : QuantizeMode::kInfer;
  auto z = encoder_.forward(tape, wave, rngs.dropout, train);
  out.frames.z = z;
  out.frames.frame_rate = frame_rate();
  auto z_rows = transpose(z);

  Tensor<Scalar> context_rows;
  Tensor<Scalar> target_rows;
  if (cfg_.quantizer.placement == QuantizerPlacement::kAfterEncoder) {
    out.quantized = quantizer_.quantize(tape, z_rows, mode, tau, rngs.gumbel);
    out.frames.z_hat = transpose(out.quantized.z_hat);
    out.frames.context = aggregator_.forward(tape, out.frames.z_hat, rngs.dropout, train);
    context_rows = transpose(out.frames.context);
    target_rows = out.quantized.z_hat;
  } else {
    auto c = aggregator_.forward(tape, z, rngs.dropout, train);
    out.quantized = quantizer_.quantize(tape, transpose(c), mode, tau, rngs.gumbel);
    out.frames.z_hat = transpose(out.quantized.z_hat);
    out.frames.context = out.frames.z_hat;
    context_rows = out.quantized.z_hat;
    target_rows = z_rows;
  }

  auto negatives = sample_negatives(z.dim(1), cfg_.loss, rngs.negatives);
  out.wav2vec_loss = contrastive_loss(tape, context_rows, target_rows, heads_, negatives, cfg_.loss);
  std::optional<AuxTerms<Scalar>> aux;
  if (cfg_.quantizer.backend == QuantizerBackend::kKMeans)
    aux = AuxTerms<Scalar>{out.quantized.codebook_loss, out.quantized.commitment_loss,
                           cfg_.quantizer.gamma};
  out.loss = total_loss(out.wav2vec_loss, cfg_.quantizer.backend, aux);
  return out;
}

template <typename Scalar>
std::vector<std::uint32_t> VqWav2Vec<Scalar>::quantize_indices(std::span<const float> wave) const {
  Tape<Scalar> tape;
  Rng unused(0);
  auto z = encoder_.forward(tape, wave, unused, false);
  auto rows = transpose(z);
  if (cfg_.quantizer.placement == QuantizerPlacement::kAfterAggregator)
    rows = transpose(aggregator_.forward(tape, z, unused, false));
  return quantizer_.quantize(tape, rows, QuantizeMode::kInfer, 1.0, unused).indices;
}

template <typename Scalar>
TokenStream tokenize(const VqWav2Vec<Scalar>& model, std::span<const float> wave,
                     const std::string& source) {
  const auto& q = model.config().quantizer;
  TokenStream stream;
  stream.header.groups = std::uint32_t(q.groups);
  stream.header.vars = std::uint32_t(q.vars);
  stream.header.frame_rate = model.frame_rate();
  stream.header.sample_rate = kSampleRate;
  stream.header.codebook_hash = model.quantizer().codebook_hash();
  stream.header.source = source;
  stream.indices = model.quantize_indices(wave);
  return stream;
}

template class VqWav2Vec<float>;
template class VqWav2Vec<double>;
template TokenStream tokenize(const VqWav2Vec<float>&, std::span<const float>, const std::string&);
template TokenStream tokenize(const VqWav2Vec<double>&, std::span<const float>, const std::string&);

}  // namespace vqw2v
