#include "vqw2v/optimizer.hpp"

#include <cmath>

namespace vqw2v {

template <typename Scalar>
double gradient_norm(const ParameterSet<Scalar>& params) {
  double sq = 0;
  for (const auto& p : params) sq += p.grad.template cast<double>().square().sum();
  return std::sqrt(sq);
}

template <typename Scalar>
void adam_step(ParameterSet<Scalar>& params, AdamState<Scalar>& state, double lr,
               const AdamConfig& cfg) {
  if (state.first.empty()) {
    for (const auto& p : params) {
      state.first.push_back(Vec<Scalar>::Zero(p.size()));
      state.second.push_back(Vec<Scalar>::Zero(p.size()));
    }
  }
  if (state.first.size() != params.size())
    throw std::logic_error("optimizer state does not match the parameter set");
  for (const auto& p : params)
    if (!p.grad.allFinite()) throw NonFiniteError("non-finite gradient in parameter " + p.name);

  Scalar clip = 1;
  if (cfg.clip_norm > 0) {
    const double norm = gradient_norm(params);
    if (norm > cfg.clip_norm) clip = Scalar(cfg.clip_norm / norm);
  }

  ++state.steps;
  const Scalar b1 = Scalar(cfg.beta1);
  const Scalar b2 = Scalar(cfg.beta2);
  const Scalar correct1 = Scalar(1.0 - std::pow(cfg.beta1, double(state.steps)));
  const Scalar correct2 = Scalar(1.0 - std::pow(cfg.beta2, double(state.steps)));
  const Scalar step = Scalar(lr);
  const Scalar eps = Scalar(cfg.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = state.first[i];
    auto& v = state.second[i];
    if (m.size() != p.size()) throw std::logic_error("optimizer state shape mismatch for " + p.name);
    const Vec<Scalar> g = p.grad * clip;
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    p.value -= step * (m / correct1) / ((v / correct2).sqrt() + eps);
  }
}

template void adam_step(ParameterSet<float>&, AdamState<float>&, double, const AdamConfig&);
template void adam_step(ParameterSet<double>&, AdamState<double>&, double, const AdamConfig&);
template double gradient_norm(const ParameterSet<float>&);
template double gradient_norm(const ParameterSet<double>&);

}  // namespace vqw2v
