#pragma once

// JSON forms of the configuration structs, used for checkpoint snapshots and
// CLI config files.

#include "vqw2v/trainer.hpp"

#include "json.hpp"

namespace vqw2v {

NLOHMANN_JSON_SERIALIZE_ENUM(QuantizerBackend, {{QuantizerBackend::kGumbel, "gumbel"},
                                                {QuantizerBackend::kKMeans, "kmeans"}})
NLOHMANN_JSON_SERIALIZE_ENUM(QuantizerPlacement,
                             {{QuantizerPlacement::kAfterEncoder, "after-encoder"},
                              {QuantizerPlacement::kAfterAggregator, "after-aggregator"}})
NLOHMANN_JSON_SERIALIZE_ENUM(GumbelGradient, {{GumbelGradient::kStraightThrough, "straight-through"},
                                              {GumbelGradient::kLogits, "logits"}})
NLOHMANN_JSON_SERIALIZE_ENUM(DecayShape, {{DecayShape::kCosine, "cosine"}, {DecayShape::kLinear, "linear"}})

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ConvLayerSpec, kernel, stride, channels)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EncoderConfig, layers, dropout)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AggregatorConfig, layers, skip_connections, dropout)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(QuantizerConfig, backend, groups, vars, shared_codebook,
                                                gamma, placement, gumbel_gradient)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossConfig, steps, negatives, negative_weight)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(VqModelConfig, encoder, aggregator, quantizer, loss)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(MaskedEncoderConfig, layers, dim, ffn_dim, heads, dropout)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SpanMaskConfig, p, span)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LrSchedule, warmup_steps, lr_start, lr_peak, lr_end,
                                                total_steps, shape)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TempSchedule, start, end, anneal_fraction, total_steps)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AdamConfig, beta1, beta2, eps, clip_norm)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(VqTrainPlan, model, batch_size, crop_samples, steps, seed,
                                                lr, tau, adam, checkpoint_every)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(MlmTrainPlan, model, batch_size, seq_len, steps, seed,
                                                mask, lr, adam, checkpoint_every)

}  // namespace vqw2v
