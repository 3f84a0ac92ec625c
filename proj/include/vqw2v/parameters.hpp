#pragma once

#include "vqw2v/rng.hpp"
#include "vqw2v/tensor.hpp"

#include <cmath>
#include <deque>
#include <map>
#include <string>

namespace vqw2v {

/// Owns every trainable array of a model in registration order. Addresses
/// are stable, so modules keep plain pointers into the set.
template <typename Scalar>
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;

  Parameter<Scalar>& add(const std::string& name, Shape shape) {
    if (by_name_.count(name)) throw std::logic_error("duplicate parameter " + name);
    by_name_[name] = params_.size();
    return params_.emplace_back(name, std::move(shape));
  }

  Parameter<Scalar>& at(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw std::out_of_range("unknown parameter " + name);
    return params_[it->second];
  }
  const Parameter<Scalar>& at(const std::string& name) const {
    return const_cast<ParameterSet*>(this)->at(name);
  }
  bool contains(const std::string& name) const { return by_name_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  Parameter<Scalar>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<Scalar>& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  Index count() const {
    Index n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::deque<Parameter<Scalar>> params_;
  std::map<std::string, std::size_t> by_name_;
};

/// He/Kaiming uniform: U(-b, b) with b = sqrt(6 / fan_in).
template <typename Scalar>
void kaiming_uniform(Parameter<Scalar>& p, Index fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / double(fan_in));
  for (Index i = 0; i < p.size(); ++i) p.value[i] = Scalar(uniform(rng, -bound, bound));
}

template <typename Scalar>
void uniform_fill(Parameter<Scalar>& p, double bound, Rng& rng) {
  for (Index i = 0; i < p.size(); ++i) p.value[i] = Scalar(uniform(rng, -bound, bound));
}

}  // namespace vqw2v
