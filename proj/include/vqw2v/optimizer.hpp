#pragma once

#include "vqw2v/parameters.hpp"

#include <vector>

namespace vqw2v {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // global gradient-norm clip; 0 disables
};

template <typename Scalar>
struct AdamState {
  Index steps = 0;
  std::vector<Vec<Scalar>> first;   // one per parameter, registration order
  std::vector<Vec<Scalar>> second;
};

/// One Adam update from the parameters' current gradients. Throws
/// NonFiniteError (naming the parameter) on a NaN/Inf gradient.
template <typename Scalar>
void adam_step(ParameterSet<Scalar>& params, AdamState<Scalar>& state, double lr,
               const AdamConfig& cfg = {});

/// Global L2 norm over all gradients.
template <typename Scalar>
double gradient_norm(const ParameterSet<Scalar>& params);

}  // namespace vqw2v
