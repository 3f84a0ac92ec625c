#pragma once

// Toy vq-wav2vec setups and the surrogate losses that define what the
// quantizer's gradient estimators differentiate.
//
// Selection (argmax / nearest codeword) is piecewise constant, so the
// gradient the tape reports for upstream parameters is an estimator, not the
// derivative of the forward value. The surrogate rebuilds the pipeline with
// the selection, the noise and the stop-gradient inputs frozen at the base
// point; its value equals the real loss there and its true derivative is the
// estimator. Finite differences of the surrogate are therefore the oracle.

#include "gradcheck.hpp"

#include "vqw2v/vq_wav2vec.hpp"

namespace vqw2v::testing {

inline VqModelConfig toy_config(QuantizerBackend backend, QuantizerPlacement placement,
                                GumbelGradient gradient = GumbelGradient::kStraightThrough) {
  auto cfg = VqModelConfig::small(backend, 8);
  cfg.quantizer.groups = 2;
  cfg.quantizer.vars = 4;
  cfg.quantizer.placement = placement;
  cfg.quantizer.gumbel_gradient = gradient;
  cfg.loss.steps = 3;
  cfg.loss.negatives = 4;
  return cfg;
}

inline std::vector<float> toy_wave(std::uint64_t seed, Index samples = 1280) {
  Rng rng = make_stream(seed, "toy-wave");
  std::vector<float> w(static_cast<std::size_t>(samples));
  for (auto& s : w) s = float(uniform(rng, -0.9, 0.9));
  return w;
}

inline ForwardRngs toy_rngs(std::uint64_t seed) {
  return {make_stream(seed, "dropout"), make_stream(seed, "gumbel"), make_stream(seed, "negatives")};
}

/// Values the surrogate freezes, taken from an unperturbed forward pass.
struct BasePoint {
  Vec<double> quantizer_input;  // rows [T x d] fed to the quantizer
  Shape input_shape;
  Vec<double> probs;            // gumbel train mode
  Vec<double> one_hot;
  Vec<double> selected;         // chosen codewords [T x d]
  std::vector<Index> table_rows;
  Vec<double> noise;
  NegativeDraw negatives;
};

inline BasePoint base_point(const VqWav2Vec<double>& model, std::span<const float> wave, double tau,
                            std::uint64_t seed) {
  const auto& cfg = model.config();
  BasePoint bp;
  ForwardRngs rngs = toy_rngs(seed);
  Rng gumbel = rngs.gumbel;
  Tape<double> tape;
  auto fwd = model.forward(tape, wave, tau, rngs, true);
  const auto& q = fwd.quantized;

  // The quantizer input: encoder rows, or aggregator rows when quantizing late.
  ForwardRngs again = toy_rngs(seed);
  Tape<double> tape2;
  auto z = model.encoder().forward(tape2, wave, again.dropout, true);
  auto in = transpose(z);
  if (cfg.quantizer.placement == QuantizerPlacement::kAfterAggregator)
    in = transpose(model.aggregator().forward(tape2, z, again.dropout, true));
  bp.quantizer_input = in.value();
  bp.input_shape = in.shape();

  const Index rows = q.frames * q.groups;
  const Index vars = cfg.quantizer.vars;
  if (q.probs.defined()) bp.probs = q.probs.value();
  bp.one_hot = Vec<double>::Zero(rows * vars);
  for (Index r = 0; r < rows; ++r) {
    bp.one_hot[r * vars + q.indices[std::size_t(r)]] = 1;
    bp.table_rows.push_back(model.quantizer().table_row(r % q.groups, q.indices[std::size_t(r)]));
  }
  bp.selected = q.z_hat.value();
  if (cfg.quantizer.backend == QuantizerBackend::kGumbel) {
    bp.noise.resize(rows * vars);
    for (Index i = 0; i < bp.noise.size(); ++i) bp.noise[i] = gumbel_noise(gumbel);
  }
  Rng negatives = toy_rngs(seed).negatives;
  bp.negatives = sample_negatives(q.frames, cfg.loss, negatives);
  return bp;
}

/// Real training loss with fresh copies of the seeded streams.
inline LossFn real_loss(const VqWav2Vec<double>& model, std::vector<float> wave, double tau, std::uint64_t seed) {
  return [&model, wave = std::move(wave), tau, seed](Tape<double>& tape) {
    ForwardRngs rngs = toy_rngs(seed);
    return model.forward(tape, wave, tau, rngs, true).loss;
  };
}

/// Surrogate loss whose exact derivative is the estimator's gradient.
inline LossFn surrogate_loss(VqWav2Vec<double>& model, std::vector<float> wave, double tau, std::uint64_t seed,
                             const BasePoint& bp) {
  return [&model, wave = std::move(wave), tau, seed, &bp](Tape<double>& tape) {
    const auto& cfg = model.config();
    const auto& qc = cfg.quantizer;
    ForwardRngs rngs = toy_rngs(seed);
    auto z = model.encoder().forward(tape, wave, rngs.dropout, true);
    auto z_rows = transpose(z);
    auto in = z_rows;
    if (qc.placement == QuantizerPlacement::kAfterAggregator)
      in = transpose(model.aggregator().forward(tape, z, rngs.dropout, true));
    const Index frames = in.dim(0);
    const Index dim = in.dim(1);
    auto frozen_in = tape.constant(bp.input_shape, bp.quantizer_input);
    auto codebook = tape.parameter(model.quantizer().codebook());

    Tensor<double> z_hat;
    Tensor<double> aux;
    if (qc.backend == QuantizerBackend::kGumbel) {
      const bool live_logits = qc.gumbel_gradient == GumbelGradient::kLogits;
      auto logits = model.quantizer().logits(tape, live_logits ? in : frozen_in);
      auto noisy = add(logits, tape.constant(logits.shape(), bp.noise));
      auto p = softmax(scale(noisy, 1.0 / tau));
      auto weights = add(tape.constant(p.shape(), bp.one_hot), sub(p, tape.constant(p.shape(), bp.probs)));
      auto mixed = reshape(group_mix(weights, codebook, qc.groups, qc.shared_codebook), {frames, dim});
      z_hat = live_logits ? mixed : add(sub(in, frozen_in), mixed);
    } else {
      auto chosen = reshape(gather_rows(codebook, std::span<const Index>(bp.table_rows)), {frames, dim});
      auto frozen_sel = tape.constant({frames, dim}, bp.selected);
      z_hat = add(sub(in, frozen_in), frozen_sel);
      aux = add(codebook_term(frozen_in, chosen), scale(commitment_term(in, frozen_sel), qc.gamma));
    }

    Tensor<double> context, targets;
    if (qc.placement == QuantizerPlacement::kAfterEncoder) {
      context = transpose(model.aggregator().forward(tape, transpose(z_hat), rngs.dropout, true));
      targets = z_hat;
    } else {
      context = z_hat;
      targets = z_rows;
    }
    auto loss = contrastive_loss(tape, context, targets, model.heads(), bp.negatives, cfg.loss);
    return aux.defined() ? add(loss, aux) : loss;
  };
}

}  // namespace vqw2v::testing
