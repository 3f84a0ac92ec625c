#pragma once

#include "vqw2v/tensor.hpp"

namespace vqw2v {

enum class DecayShape { kCosine, kLinear };

/// Linear warmup from lr_start to lr_peak, then decay to lr_end at total_steps.
struct LrSchedule {
  Index warmup_steps = 500;
  double lr_start = 1e-7;
  double lr_peak = 5e-3;
  double lr_end = 1e-6;
  Index total_steps = 400000;
  DecayShape shape = DecayShape::kCosine;

  /// 500 warmup steps 1e-7 -> 5e-3, cosine to 1e-6 over 400k updates.
  static LrSchedule vq();
  /// 10k warmup steps to 1e-5, linear decay to zero over 250k updates.
  static LrSchedule mlm();

  void validate() const;
};

double lr_at(Index step, const LrSchedule& s);

/// Gumbel temperature: linear from start to end over the first
/// anneal_fraction of total_steps, then constant.
struct TempSchedule {
  double start = 2.0;
  double end = 0.5;
  double anneal_fraction = 0.7;
  Index total_steps = 400000;

  void validate() const;
};

double temperature_at(Index step, const TempSchedule& s);

}  // namespace vqw2v
