#include "vqw2v/schedule.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace vqw2v {

LrSchedule LrSchedule::vq() {
  return {500, 1e-7, 5e-3, 1e-6, 400000, DecayShape::kCosine};
}

LrSchedule LrSchedule::mlm() {
  return {10000, 0.0, 1e-5, 0.0, 250000, DecayShape::kLinear};
}

void LrSchedule::validate() const {
  if (warmup_steps < 0 || total_steps < 1 || warmup_steps > total_steps)
    throw std::invalid_argument("lr schedule needs 0 <= warmup <= total, total >= 1");
  if (lr_start > lr_peak || lr_end > lr_peak)
    throw std::invalid_argument("lr schedule needs lr_start <= lr_peak and lr_end <= lr_peak");
}

double lr_at(Index step, const LrSchedule& s) {
  s.validate();
  if (step < 0 || step > s.total_steps)
    throw std::out_of_range("step " + std::to_string(step) + " outside [0, " +
                            std::to_string(s.total_steps) + "]");
  // std::lerp is exact at both endpoints.
  if (step < s.warmup_steps)
    return std::lerp(s.lr_start, s.lr_peak, double(step) / double(s.warmup_steps));
  const Index span = s.total_steps - s.warmup_steps;
  if (span == 0) return s.lr_peak;
  const double progress = double(step - s.warmup_steps) / double(span);
  const double w = s.shape == DecayShape::kCosine
                       ? 0.5 * (1.0 - std::cos(std::numbers::pi * progress))
                       : progress;
  return std::lerp(s.lr_peak, s.lr_end, w);
}

void TempSchedule::validate() const {
  if (!(start > 0) || !(end > 0)) throw std::invalid_argument("temperatures must be positive");
  if (anneal_fraction <= 0 || anneal_fraction > 1)
    throw std::invalid_argument("anneal fraction must be in (0, 1]");
  if (total_steps < 1) throw std::invalid_argument("temperature schedule needs total_steps >= 1");
}

double temperature_at(Index step, const TempSchedule& s) {
  s.validate();
  if (step < 0) throw std::out_of_range("negative step");
  const double anneal_steps = s.anneal_fraction * double(s.total_steps);
  const double t = std::min(1.0, double(step) / anneal_steps);
  return std::lerp(s.start, s.end, t);
}

}  // namespace vqw2v
