#pragma once

#include "vqw2v/model.hpp"
#include "vqw2v/objective.hpp"
#include "vqw2v/quantizer.hpp"
#include "vqw2v/token_stream.hpp"

#include <cstdint>
#include <span>

namespace vqw2v {

struct VqModelConfig {
  EncoderConfig encoder = EncoderConfig::full();
  AggregatorConfig aggregator = AggregatorConfig::full();
  QuantizerConfig quantizer;
  LossConfig loss;

  /// 512-channel eight-layer encoder, twelve-layer aggregator, G=2, V=320.
  static VqModelConfig full(QuantizerBackend backend = QuantizerBackend::kGumbel);
  /// Five-layer encoder and seven-layer kernel-3 aggregator of `channels` width.
  static VqModelConfig small(QuantizerBackend backend = QuantizerBackend::kGumbel,
                             Index channels = 512);

  void validate() const;
};

/// Random streams consumed by one forward pass.
struct ForwardRngs {
  Rng dropout;
  Rng gumbel;
  Rng negatives;
};

template <typename Scalar>
struct VqForward {
  FrameSequence<Scalar> frames;
  QuantizeOutcome<Scalar> quantized;
  Tensor<Scalar> wav2vec_loss;
  Tensor<Scalar> loss;  // wav2vec loss plus k-means terms when applicable
};

template <typename Scalar>
class VqWav2Vec {
 public:
  explicit VqWav2Vec(const VqModelConfig& cfg);
  VqWav2Vec(const VqWav2Vec&) = delete;
  VqWav2Vec& operator=(const VqWav2Vec&) = delete;

  /// Kaiming-uniform convs/heads, zero biases, uniform codebook.
  void init(std::uint64_t seed);

  /// encode -> quantize -> aggregate -> contrastive (+ k-means) loss.
  VqForward<Scalar> forward(Tape<Scalar>& tape, std::span<const float> wave, double tau,
                            ForwardRngs& rngs, bool train) const;

  /// Inference-mode codeword indices, frame-major T x G.
  std::vector<std::uint32_t> quantize_indices(std::span<const float> wave) const;

  const VqModelConfig& config() const { return cfg_; }
  ParameterSet<Scalar>& parameters() { return params_; }
  const ParameterSet<Scalar>& parameters() const { return params_; }
  const Encoder<Scalar>& encoder() const { return encoder_; }
  const Quantizer<Scalar>& quantizer() const { return quantizer_; }
  const Aggregator<Scalar>& aggregator() const { return aggregator_; }
  const StepHeads<Scalar>& heads() const { return heads_; }
  Aggregator<Scalar>& aggregator() { return aggregator_; }
  StepHeads<Scalar>& heads() { return heads_; }

  double frame_rate() const { return double(kSampleRate) / double(cfg_.encoder.total_stride()); }

 private:
  VqModelConfig cfg_;
  ParameterSet<Scalar> params_;
  Encoder<Scalar> encoder_;
  Quantizer<Scalar> quantizer_;
  Aggregator<Scalar> aggregator_;
  StepHeads<Scalar> heads_;
};

/// Discretises a waveform with an inference-mode model.
template <typename Scalar>
TokenStream tokenize(const VqWav2Vec<Scalar>& model, std::span<const float> wave,
                     const std::string& source = "");

}  // namespace vqw2v
