#pragma once

#include "vqw2v/audio.hpp"
#include "vqw2v/checkpoint.hpp"
#include "vqw2v/masked_lm.hpp"
#include "vqw2v/optimizer.hpp"
#include "vqw2v/schedule.hpp"
#include "vqw2v/vq_wav2vec.hpp"

#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace vqw2v {

/// One telemetry line: "step=.. loss=.. lr=.. tau=.. usage=..", plus
/// "contrastive=.." for vq-wav2vec runs and "acc=.." for masked-LM runs.
struct StepRecord {
  Index step = 0;
  double loss = 0;
  double lr = 0;
  double tau = 0;
  double usage = 0;
  std::optional<double> contrastive;  // future-prediction term alone
  std::optional<double> accuracy;

  std::string to_line() const;
};

/// Parses a telemetry line into its key/value pairs.
std::map<std::string, double> parse_record(const std::string& line);

struct VqTrainPlan {
  VqModelConfig model = VqModelConfig::full();
  Index batch_size = 10;
  Index crop_samples = 150000;
  Index steps = 400000;
  std::uint64_t seed = 1;
  LrSchedule lr = LrSchedule::vq();
  TempSchedule tau;
  AdamConfig adam;
  Index checkpoint_every = 0;  // 0 disables periodic checkpoints

  void validate() const;
};

template <typename Scalar>
class VqTrainer {
 public:
  VqTrainer(const VqTrainPlan& plan, std::vector<Waveform> data);
  /// Resumes from a checkpoint written by a trainer of the same precision.
  VqTrainer(const Checkpoint& ckpt, std::vector<Waveform> data);

  StepRecord step();
  /// Runs until `until` updates have been made, writing telemetry lines.
  std::vector<StepRecord> run(Index until, std::ostream* telemetry = nullptr);

  Checkpoint checkpoint() const;

  Index current_step() const { return step_; }
  const VqTrainPlan& plan() const { return plan_; }
  VqWav2Vec<Scalar>& model() { return *model_; }
  const VqWav2Vec<Scalar>& model() const { return *model_; }
  const AdamState<Scalar>& optimizer_state() const { return adam_; }

  /// Parameters whose gradient has been exactly zero on every step so far.
  std::vector<std::string> dead_parameters() const;
  /// Codebook rows never selected during training so far.
  std::vector<Index> unused_codewords() const;

 private:
  void setup();
  std::span<const float> crop(std::vector<float>& buffer);

  VqTrainPlan plan_;
  std::vector<Waveform> data_;
  std::unique_ptr<VqWav2Vec<Scalar>> model_;
  AdamState<Scalar> adam_;
  Index step_ = 0;
  Rng data_rng_, dropout_rng_, gumbel_rng_, negatives_rng_;
  std::vector<bool> touched_;
  std::vector<bool> selected_;
};

/// Runs plan.steps updates from a fresh initialisation.
template <typename Scalar>
Checkpoint train_vq(const std::vector<Waveform>& data, const VqTrainPlan& plan,
                    std::ostream* telemetry = nullptr);

struct MlmTrainPlan {
  MaskedEncoderConfig model = MaskedEncoderConfig::tiny();
  Index batch_size = 2;
  Index seq_len = 128;
  Index steps = 250000;
  std::uint64_t seed = 1;
  SpanMaskConfig mask;
  LrSchedule lr = LrSchedule::mlm();
  AdamConfig adam;
  Index checkpoint_every = 0;

  void validate() const;
};

template <typename Scalar>
class MlmTrainer {
 public:
  /// Throws when a stream does not match the vocabulary's (G, V, hash).
  MlmTrainer(const MlmTrainPlan& plan, const Vocabulary& vocab, std::span<const TokenStream> streams);
  MlmTrainer(const Checkpoint& ckpt, const Vocabulary& vocab, std::span<const TokenStream> streams);

  StepRecord step();
  std::vector<StepRecord> run(Index until, std::ostream* telemetry = nullptr);

  /// Masked accuracy in inference mode over `draws` random crops.
  double evaluate(Index draws, std::uint64_t seed) const;

  Checkpoint checkpoint() const;

  Index current_step() const { return step_; }
  const MlmTrainPlan& plan() const { return plan_; }
  MaskedEncoder<Scalar>& model() { return *model_; }
  const MaskedEncoder<Scalar>& model() const { return *model_; }

 private:
  void setup(const Vocabulary& vocab, std::span<const TokenStream> streams);
  std::span<const Index> crop(Rng& rng) const;

  MlmTrainPlan plan_;
  std::string vocab_hash_;
  std::vector<std::vector<Index>> sequences_;
  std::unique_ptr<MaskedEncoder<Scalar>> model_;
  AdamState<Scalar> adam_;
  Index step_ = 0;
  Rng data_rng_, mask_rng_, dropout_rng_;
};

template <typename Scalar>
Checkpoint train_mlm(std::span<const TokenStream> streams, const Vocabulary& vocab,
                     const MlmTrainPlan& plan, std::ostream* telemetry = nullptr);

/// Restores an inference model from a masked-LM checkpoint.
template <typename Scalar>
std::unique_ptr<MaskedEncoder<Scalar>> load_masked_encoder(const Checkpoint& ckpt, const Vocabulary& vocab);
/// Restores an inference model from a vq-wav2vec checkpoint.
template <typename Scalar>
std::unique_ptr<VqWav2Vec<Scalar>> load_vq_model(const Checkpoint& ckpt);

}  // namespace vqw2v
