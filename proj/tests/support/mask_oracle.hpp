#pragma once

// Exact expectations for the span-mask sampler.

#include "vqw2v/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace vqw2v::testing {

// log C(n, k) via lgamma; C(n, k) = 0 when k > n.
inline double log_choose(Index n, Index k) {
  return std::lgamma(double(n) + 1) - std::lgamma(double(k) + 1) - std::lgamma(double(n - k) + 1);
}

// Exact expected masked fraction: position t is masked unless none of the
// S distinct starts falls in the min(t + 1, M) slots that cover it.
inline double expected_masked_fraction(Index length, Index starts, Index span) {
  double total = 0;
  for (Index t = 0; t < length; ++t) {
    const Index cover = std::min(t + 1, span);
    const double miss = length - cover < starts ? 0.0
                                                : std::exp(log_choose(length - cover, starts) - log_choose(length, starts));
    total += 1 - miss;
  }
  return total / double(length);
}

// Same expectation by brute force over every start set (small sizes only).
inline double enumerate_masked_fraction(Index length, Index starts, Index span) {
  std::vector<int> pick(std::size_t(length), 0);
  std::fill(pick.end() - std::ptrdiff_t(starts), pick.end(), 1);
  double sum = 0, count = 0;
  do {
    std::vector<char> hit(std::size_t(length), 0);
    for (Index s = 0; s < length; ++s)
      if (pick[std::size_t(s)])
        for (Index t = s; t < std::min(s + span, length); ++t) hit[std::size_t(t)] = 1;
    sum += double(std::count(hit.begin(), hit.end(), 1));
    count += 1;
  } while (std::next_permutation(pick.begin(), pick.end()));
  return sum / count / double(length);
}

}  // namespace vqw2v::testing
