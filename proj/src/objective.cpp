#include "vqw2v/objective.hpp"

#include <iostream>
#include <stdexcept>

namespace vqw2v {

void LossConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("need K >= 1 prediction steps");
  if (negatives < 1) throw std::invalid_argument("need at least one negative per positive");
  if (negative_weight < 0) throw std::invalid_argument("negative weight must be non-negative");
}

NegativeDraw sample_negatives(Index frames, const LossConfig& cfg, Rng& rng) {
  cfg.validate();
  if (frames <= 1) throw std::invalid_argument("negative sampling needs T > 1 frames");
  NegativeDraw draw{frames, cfg.steps, cfg.negatives, {}};
  std::uniform_int_distribution<Index> pick(0, frames - 1);
  for (Index k = 1; k <= cfg.steps; ++k) {
    auto& idx = draw.per_step.emplace_back();
    const Index positives = std::max<Index>(frames - k, 0);
    idx.resize(std::size_t(positives * cfg.negatives));
    for (auto& v : idx) v = pick(rng);
  }
  return draw;
}

template <typename Scalar>
Tensor<Scalar> contrastive_loss(Tape<Scalar>& tape, const Tensor<Scalar>& context,
                                const Tensor<Scalar>& targets, const StepHeads<Scalar>& heads,
                                const NegativeDraw& negatives, const LossConfig& cfg) {
  cfg.validate();
  const Index frames = context.rows();
  if (targets.rows() != frames)
    throw ShapeError("context and targets disagree on frame count: " +
                     shape_string(context.shape()) + " vs " + shape_string(targets.shape()));
  if (negatives.frames != frames || negatives.steps < cfg.steps ||
      negatives.negatives != cfg.negatives)
    throw std::invalid_argument("negative draw does not match sequence/config");
  if (heads.steps() < cfg.steps) throw std::invalid_argument("fewer step heads than K");

  Tensor<Scalar> loss;
  const Scalar neg_scale = Scalar(cfg.negative_weight / double(cfg.negatives));
  for (Index k = 1; k <= cfg.steps; ++k) {
    const Index positives = frames - k;
    if (positives <= 0) {
      std::clog << "warning: T=" << frames << " leaves no positives for step k=" << k << '\n';
      continue;
    }
    auto preds = heads.predict(tape, slice_rows(context, 0, positives), k);
    auto pos = rowwise_dot(preds, slice_rows(targets, k, positives));

    std::vector<Index> repeat(std::size_t(positives * cfg.negatives));
    for (Index i = 0; i < positives; ++i)
      for (Index n = 0; n < cfg.negatives; ++n) repeat[std::size_t(i * cfg.negatives + n)] = i;
    auto neg = rowwise_dot(gather_rows(preds, std::span<const Index>(repeat)),
                           gather_rows(targets, negatives.for_step(k)));

    auto step_loss = sub(scale(sum(log_sigmoid(pos)), Scalar(-1)),
                         scale(sum(log_sigmoid(scale(neg, Scalar(-1)))), neg_scale));
    loss = loss.defined() ? add(loss, step_loss) : step_loss;
  }
  if (!loss.defined()) {
    Vec<Scalar> zero = Vec<Scalar>::Zero(1);
    return tape.constant({1}, std::move(zero));
  }
  return loss;
}

template <typename Scalar>
Tensor<Scalar> total_loss(const Tensor<Scalar>& wav2vec_loss, QuantizerBackend backend,
                          const std::optional<AuxTerms<Scalar>>& aux) {
  if (backend == QuantizerBackend::kGumbel) {
    if (aux) throw std::invalid_argument("gumbel backend takes no auxiliary terms");
    return wav2vec_loss;
  }
  if (!aux) throw std::invalid_argument("k-means backend needs its auxiliary terms");
  return add(add(wav2vec_loss, aux->codebook), scale(aux->commitment, Scalar(aux->gamma)));
}

#define VQW2V_INSTANTIATE_OBJECTIVE(S)                                                          \
  template Tensor<S> contrastive_loss(Tape<S>&, const Tensor<S>&, const Tensor<S>&,             \
                                      const StepHeads<S>&, const NegativeDraw&, const LossConfig&); \
  template Tensor<S> total_loss(const Tensor<S>&, QuantizerBackend,                             \
                                const std::optional<AuxTerms<S>>&);

VQW2V_INSTANTIATE_OBJECTIVE(float)
VQW2V_INSTANTIATE_OBJECTIVE(double)

}  // namespace vqw2v
