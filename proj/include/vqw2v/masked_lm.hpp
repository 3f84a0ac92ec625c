#pragma once

#include "vqw2v/ops.hpp"
#include "vqw2v/parameters.hpp"
#include "vqw2v/token_stream.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

namespace vqw2v {

/// Dense ids for observed codeword tuples. Ids 0..2 are reserved.
class Vocabulary {
 public:
  static constexpr Index kPad = 0;
  static constexpr Index kMask = 1;
  static constexpr Index kUnk = 2;
  static constexpr Index kFirstTuple = 3;

  Vocabulary() = default;
  Vocabulary(std::uint32_t groups, std::uint32_t vars, std::string codebook_hash);

  /// Returns the tuple's id, adding it when new.
  Index insert(std::span<const std::uint32_t> tuple);
  /// kUnk for tuples never seen while building.
  Index id_of(std::span<const std::uint32_t> tuple) const;
  const std::vector<std::uint32_t>& tuple_of(Index id) const;

  Index size() const { return kFirstTuple + Index(tuples_.size()); }
  Index tuple_count() const { return Index(tuples_.size()); }
  std::uint32_t groups() const { return groups_; }
  std::uint32_t vars() const { return vars_; }
  const std::string& codebook_hash() const { return hash_; }

  /// Throws unless the stream carries the same (G, V, codebook hash).
  void check_compatible(const TokenHeader& header) const;
  std::vector<Index> encode(const TokenStream& stream) const;

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary&) const = default;

 private:
  std::uint32_t groups_ = 0;
  std::uint32_t vars_ = 0;
  std::string hash_;
  std::vector<std::vector<std::uint32_t>> tuples_;
  std::map<std::vector<std::uint32_t>, Index> ids_;
};

/// One id per distinct tuple, numbered in first-seen order.
Vocabulary build_vocab(std::span<const TokenStream> streams);

struct SpanMaskConfig {
  double p = 0.05;  // fraction of positions drawn as span starts
  Index span = 10;  // M

  void validate() const;
};

struct SpanMask {
  std::vector<Index> starts;     // sorted
  std::vector<Index> positions;  // sorted union of [s, min(s + M, T))
};

/// round(p * T) distinct starts drawn uniformly; spans may overlap and are
/// truncated at the end of the sequence.
SpanMask sample_span_mask(Index length, const SpanMaskConfig& cfg, Rng& rng);

struct MaskedEncoderConfig {
  Index layers = 2;
  Index dim = 64;
  Index ffn_dim = 256;
  Index heads = 4;
  double dropout = 0.05;

  /// dim 512, FFN 2048, 8 heads, dropout 0.05 (12 layers).
  static MaskedEncoderConfig small();
  /// 2 layers, dim 64, FFN 256, 4 heads.
  static MaskedEncoderConfig tiny();

  void validate() const;
};

/// Fixed sinusoidal position table [length x dim].
RowMatrix<double> sinusoidal_positions(Index length, Index dim);

/// Bidirectional transformer encoder with a token-prediction head.
template <typename Scalar>
class MaskedEncoder {
 public:
  MaskedEncoder(const MaskedEncoderConfig& cfg, Index vocab_size);
  MaskedEncoder(const MaskedEncoder&) = delete;
  MaskedEncoder& operator=(const MaskedEncoder&) = delete;

  void init(std::uint64_t seed);

  /// Final-layer states [T x dim]. When `attention` is given, each layer's
  /// per-head attention matrices are appended to it.
  Tensor<Scalar> encode(Tape<Scalar>& tape, std::span<const Index> ids, Rng& rng, bool train,
                        std::vector<Tensor<Scalar>>* attention = nullptr) const;
  /// Vocabulary logits [T x |vocab|] from encoder states.
  Tensor<Scalar> logits(Tape<Scalar>& tape, const Tensor<Scalar>& states) const;

  const MaskedEncoderConfig& config() const { return cfg_; }
  Index vocab_size() const { return vocab_size_; }
  ParameterSet<Scalar>& parameters() { return params_; }
  const ParameterSet<Scalar>& parameters() const { return params_; }

 private:
  struct Layer {
    Parameter<Scalar>*q_w, *q_b, *k_w, *k_b, *v_w, *v_b, *o_w, *o_b;
    Parameter<Scalar>*ln1_g, *ln1_b, *ff1_w, *ff1_b, *ff2_w, *ff2_b, *ln2_g, *ln2_b;
  };

  MaskedEncoderConfig cfg_;
  Index vocab_size_;
  ParameterSet<Scalar> params_;
  Parameter<Scalar>* embedding_ = nullptr;
  Parameter<Scalar>* embed_ln_g_ = nullptr;
  Parameter<Scalar>* embed_ln_b_ = nullptr;
  std::vector<Layer> layers_;
  Parameter<Scalar>* out_w_ = nullptr;
  Parameter<Scalar>* out_b_ = nullptr;
};

template <typename Scalar>
struct MlmResult {
  Tensor<Scalar> logits;   // [T x |vocab|]
  Tensor<Scalar> loss;     // undefined when the mask is empty
  std::vector<Index> masked;
  Index correct = 0;       // argmax hits at masked positions
};

/// Replaces masked positions with MASK, runs the encoder, and scores
/// cross-entropy at the masked positions only. An empty mask yields an
/// undefined loss (the caller skips the batch).
template <typename Scalar>
MlmResult<Scalar> mlm_forward(Tape<Scalar>& tape, std::span<const Index> tokens,
                              std::span<const Index> masked, const MaskedEncoder<Scalar>& model,
                              Rng& rng, bool train);

/// Inference-mode final-layer states, [dim x T].
template <typename Scalar>
RowMatrix<Scalar> extract_features(std::span<const Index> tokens, const MaskedEncoder<Scalar>& model);

/// Token stream -> features, checking the stream against the vocabulary.
template <typename Scalar>
RowMatrix<Scalar> extract_features(const TokenStream& stream, const Vocabulary& vocab,
                                   const MaskedEncoder<Scalar>& model);

}  // namespace vqw2v
