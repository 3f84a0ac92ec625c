#pragma once

#include "vqw2v/model.hpp"
#include "vqw2v/quantizer.hpp"

#include <optional>
#include <vector>

namespace vqw2v {

struct LossConfig {
  Index steps = 8;       // K
  Index negatives = 10;  // distractors per positive
  double negative_weight = 1.0;  // lambda

  void validate() const;
};

/// Distractor frame indices for every (k, i) pair with i + k < T, drawn
/// uniformly from the same sequence (the true target may be drawn).
struct NegativeDraw {
  Index frames = 0;
  Index steps = 0;
  Index negatives = 0;
  // per_step[k - 1] holds (T - k) * negatives indices, row i then sample n.
  std::vector<std::vector<Index>> per_step;

  std::span<const Index> for_step(Index k) const { return per_step.at(std::size_t(k - 1)); }
};

NegativeDraw sample_negatives(Index frames, const LossConfig& cfg, Rng& rng);

/// Sum over k = 1..K and i < T - k of
///   -[log sigma(t_{i+k} . h_k(c_i)) + lambda * mean_n log sigma(-t~_n . h_k(c_i))]
/// with context and targets given as rows [T x d]. Steps with k >= T
/// contribute nothing and emit a warning.
template <typename Scalar>
Tensor<Scalar> contrastive_loss(Tape<Scalar>& tape, const Tensor<Scalar>& context,
                                const Tensor<Scalar>& targets, const StepHeads<Scalar>& heads,
                                const NegativeDraw& negatives, const LossConfig& cfg);

template <typename Scalar>
struct AuxTerms {
  Tensor<Scalar> codebook;    // ||sg(z) - z_hat||^2
  Tensor<Scalar> commitment;  // ||z - sg(z_hat)||^2
  double gamma = 0.25;
};

/// Gumbel: the wav2vec loss itself. k-means: plus codebook + gamma * commitment.
template <typename Scalar>
Tensor<Scalar> total_loss(const Tensor<Scalar>& wav2vec_loss, QuantizerBackend backend,
                          const std::optional<AuxTerms<Scalar>>& aux);

}  // namespace vqw2v
