#pragma once

#include "vqw2v/ops.hpp"
#include "vqw2v/parameters.hpp"
#include "vqw2v/token_stream.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vqw2v {

enum class QuantizerBackend { kGumbel, kKMeans };
enum class QuantizerPlacement { kAfterEncoder, kAfterAggregator };
enum class QuantizeMode { kTrain, kInfer };

/// How the Gumbel quantizer routes d(loss)/d(z_hat) back to the encoder.
enum class GumbelGradient {
  /// Identity to z (straight-through); logits and codebook learn from the
  /// softmax path with the logits net reading sg(z).
  kStraightThrough,
  /// Only through the softmax probabilities and the logits net.
  kLogits,
};

struct QuantizerConfig {
  QuantizerBackend backend = QuantizerBackend::kGumbel;
  Index groups = 2;
  Index vars = 320;
  bool shared_codebook = true;
  double gamma = 0.25;
  QuantizerPlacement placement = QuantizerPlacement::kAfterEncoder;
  GumbelGradient gumbel_gradient = GumbelGradient::kStraightThrough;

  /// V^G, the number of distinct index tuples.
  double codeword_space() const;
  void validate(Index dim) const;
};

/// Splits z [d] into G contiguous rows of width d/G.
template <typename Scalar>
RowMatrix<Scalar> partition(std::span<const Scalar> z, Index groups);

template <typename Scalar>
struct GumbelChoice {
  Index index = 0;
  Vec<Scalar> probs;  // empty in inference mode
};

/// Gumbel noise v = -log(-log u) with u clamped to [1e-10, 1 - 1e-10].
double gumbel_noise(Rng& rng);

/// Selection for one group's logits. Train: p = softmax((l + v) / tau),
/// index = argmax p. Infer: index = argmax l. Ties go to the lowest index.
template <typename Scalar>
GumbelChoice<Scalar> gumbel_select(std::span<const Scalar> logits, std::span<const Scalar> noise,
                                   double tau, QuantizeMode mode);

struct KMeansChoice {
  Index index = 0;
  double distance = 0;  // squared Euclidean
};

/// argmin_j ||z - e_j||^2 over the rows of `codebook`, lowest index on ties.
template <typename Scalar>
KMeansChoice kmeans_select(std::span<const Scalar> z_group,
                           const Eigen::Ref<const RowMatrix<Scalar>>& codebook);

/// ||sg(z) - z_hat||^2 per frame: pulls codewords towards the encoder.
template <typename Scalar>
Tensor<Scalar> codebook_term(const Tensor<Scalar>& z, const Tensor<Scalar>& z_hat);
/// ||z - sg(z_hat)||^2 per frame: commits the encoder to its codewords.
template <typename Scalar>
Tensor<Scalar> commitment_term(const Tensor<Scalar>& z, const Tensor<Scalar>& z_hat);
/// codebook_term + gamma * commitment_term; z and z_hat are [T x d].
template <typename Scalar>
Tensor<Scalar> kmeans_aux_loss(const Tensor<Scalar>& z, const Tensor<Scalar>& z_hat, double gamma);

template <typename Scalar>
struct QuantizeOutcome {
  Tensor<Scalar> z_hat;              // [T x d], forward value = selected codewords
  std::vector<std::uint32_t> indices;  // T x G, frame-major
  Index frames = 0;
  Index groups = 0;
  Tensor<Scalar> probs;               // [T*G x V], gumbel train mode only
  Tensor<Scalar> codebook_loss;       // k-means only
  Tensor<Scalar> commitment_loss;     // k-means only
};

template <typename Scalar>
class Quantizer {
 public:
  Quantizer(const QuantizerConfig& cfg, Index dim, ParameterSet<Scalar>& params,
            const std::string& prefix = "quantizer");
  void init(Rng& rng);

  /// Quantizes the rows of z [T x d]. `tau` and `rng` are only read by the
  /// Gumbel backend in train mode.
  QuantizeOutcome<Scalar> quantize(Tape<Scalar>& tape, const Tensor<Scalar>& z, QuantizeMode mode,
                                   double tau, Rng& rng) const;

  /// Gumbel logits [T*G x V] for z [T x d].
  Tensor<Scalar> logits(Tape<Scalar>& tape, const Tensor<Scalar>& z) const;

  const QuantizerConfig& config() const { return cfg_; }
  Index dim() const { return dim_; }
  Index group_dim() const { return dim_ / cfg_.groups; }
  Parameter<Scalar>& codebook() const { return *codebook_; }
  /// Table row of index j in group g.
  Index table_row(Index group, Index j) const {
    return cfg_.shared_codebook ? j : group * cfg_.vars + j;
  }
  /// CRC32 of the codebook values, as 8 hex digits.
  std::string codebook_hash() const;

 private:
  QuantizeOutcome<Scalar> quantize_gumbel(Tape<Scalar>& tape, const Tensor<Scalar>& z,
                                          QuantizeMode mode, double tau, Rng& rng) const;
  QuantizeOutcome<Scalar> quantize_kmeans(Tape<Scalar>& tape, const Tensor<Scalar>& z) const;

  QuantizerConfig cfg_;
  Index dim_;
  Parameter<Scalar>* codebook_ = nullptr;
  Parameter<Scalar>* hidden_weight_ = nullptr;
  Parameter<Scalar>* hidden_bias_ = nullptr;
  Parameter<Scalar>* logits_weight_ = nullptr;
  Parameter<Scalar>* logits_bias_ = nullptr;
};

struct CodewordUsage {
  std::uint64_t unique_count = 0;
  std::uint64_t total_tokens = 0;
  double possible = 0;   // V^G
  double fraction = 0;   // unique / min(V^G, total tokens)
};

/// Distinct G-tuples across streams. Throws on mixed (G, V, hash).
CodewordUsage codeword_usage(std::span<const TokenStream> streams);
/// Same statistic for raw frame-major index tuples.
CodewordUsage codeword_usage(std::span<const std::uint32_t> indices, Index groups, Index vars);

std::string hash_values(std::span<const double> values);

}  // namespace vqw2v
