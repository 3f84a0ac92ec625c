#pragma once

#include "vqw2v/ops.hpp"
#include "vqw2v/parameters.hpp"

#include <span>
#include <string>
#include <vector>

namespace vqw2v {

inline constexpr int kSampleRate = 16000;

struct ConvLayerSpec {
  Index kernel = 1;
  Index stride = 1;
  Index channels = 512;
};

/// Feature encoder f: raw waveform -> dense frames. Every block is
/// conv -> dropout -> single-group norm -> relu with causal left padding.
struct EncoderConfig {
  std::vector<ConvLayerSpec> layers;
  double dropout = 0.1;

  /// Eight layers, kernels (10,8,4,4,4,1,1,1), strides (5,4,2,2,2,1,1,1).
  static EncoderConfig full(Index channels = 512);
  /// Five layers, kernels (10,8,4,4,4), strides (5,4,2,2,2).
  static EncoderConfig small(Index channels = 512);

  Index total_stride() const;
  /// Samples seen by one output frame.
  Index receptive_field() const;
  Index output_dim() const { return layers.back().channels; }
  /// Frames produced for `samples` input samples (ceil division per layer).
  Index frames_for(Index samples) const;
  void validate() const;
};

/// Context network g: quantized frames -> context vectors, stride one.
struct AggregatorConfig {
  std::vector<ConvLayerSpec> layers;
  bool skip_connections = true;
  double dropout = 0.1;

  /// Twelve layers with kernels 2..13.
  static AggregatorConfig full(Index channels = 512);
  /// Seven layers with kernel 3.
  static AggregatorConfig small(Index channels = 512);

  Index output_dim() const { return layers.back().channels; }
  void validate() const;
};

/// Parameters of one conv block, registered under `prefix`.
template <typename Scalar>
struct ConvBlock {
  ConvLayerSpec spec;
  Index in_channels = 0;
  Parameter<Scalar>* weight = nullptr;
  Parameter<Scalar>* bias = nullptr;
  Parameter<Scalar>* norm_gain = nullptr;
  Parameter<Scalar>* norm_bias = nullptr;
  // 1x1 projection for skip connections across a channel change.
  Parameter<Scalar>* skip_weight = nullptr;
  Parameter<Scalar>* skip_bias = nullptr;

  ConvBlock(ParameterSet<Scalar>& params, const std::string& prefix, Index in_channels,
            ConvLayerSpec spec, bool with_skip);
  void init(Rng& rng);
  /// conv -> dropout -> norm -> relu (-> + skip).
  Tensor<Scalar> forward(Tape<Scalar>& tape, const Tensor<Scalar>& x, double dropout, Rng& rng,
                         bool train) const;
};

template <typename Scalar>
class Encoder {
 public:
  Encoder(const EncoderConfig& cfg, ParameterSet<Scalar>& params, const std::string& prefix = "encoder");
  void init(Rng& rng);

  /// Waveform [1 x N] (or raw samples) -> Z [d x T].
  Tensor<Scalar> forward(Tape<Scalar>& tape, const Tensor<Scalar>& wave, Rng& rng, bool train) const;
  Tensor<Scalar> forward(Tape<Scalar>& tape, std::span<const float> samples, Rng& rng,
                         bool train) const;

  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  std::vector<ConvBlock<Scalar>> blocks_;
};

template <typename Scalar>
class Aggregator {
 public:
  Aggregator(const AggregatorConfig& cfg, Index input_dim, ParameterSet<Scalar>& params,
             const std::string& prefix = "aggregator");
  void init(Rng& rng);

  /// [d x T] -> [d' x T]; output frame t depends on inputs at frames <= t.
  Tensor<Scalar> forward(Tape<Scalar>& tape, const Tensor<Scalar>& x, Rng& rng, bool train) const;

  const AggregatorConfig& config() const { return cfg_; }
  std::vector<ConvBlock<Scalar>>& blocks() { return blocks_; }

 private:
  AggregatorConfig cfg_;
  std::vector<ConvBlock<Scalar>> blocks_;
};

/// K step-specific affine maps h_k(c) = W_k c + b_k, k = 1..K.
template <typename Scalar>
class StepHeads {
 public:
  StepHeads(Index steps, Index context_dim, Index target_dim, ParameterSet<Scalar>& params,
            const std::string& prefix = "heads");
  void init(Rng& rng);

  /// Applies head k (1-based) to the rows of `context` [N x d].
  Tensor<Scalar> predict(Tape<Scalar>& tape, const Tensor<Scalar>& context, Index k) const;

  Index steps() const { return Index(weights_.size()); }
  Parameter<Scalar>& weight(Index k) { return *weights_.at(check(k)); }
  Parameter<Scalar>& bias(Index k) { return *biases_.at(check(k)); }

 private:
  std::size_t check(Index k) const;

  std::vector<Parameter<Scalar>*> weights_;
  std::vector<Parameter<Scalar>*> biases_;
};

/// Single-frame prediction h_k(c_i) for a context vector [d].
template <typename Scalar>
Tensor<Scalar> predict_step(Tape<Scalar>& tape, const Tensor<Scalar>& context, Index k,
                            const StepHeads<Scalar>& heads);

/// Dense, quantized and context representations of one sequence.
template <typename Scalar>
struct FrameSequence {
  Tensor<Scalar> z;       // [d x T]
  Tensor<Scalar> z_hat;   // [d x T]
  Tensor<Scalar> context; // [d x T]
  double frame_rate = 0;
};

}  // namespace vqw2v
