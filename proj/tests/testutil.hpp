#pragma once

#include <random>
#include <vector>

// Draws n observations y = theta + N(0, sd^2) with theta from a discrete
// mixture; shared across test binaries.
inline std::vector<double> mixture_sample(std::mt19937_64& rng, int n,
                                          const std::vector<double>& atoms,
                                          const std::vector<double>& weights,
                                          double sd = 1.0) {
  std::discrete_distribution<int> pick(weights.begin(), weights.end());
  std::normal_distribution<double> noise(0.0, sd);
  std::vector<double> y(static_cast<std::size_t>(n));
  for (auto& v : y) v = atoms[static_cast<std::size_t>(pick(rng))] + noise(rng);
  return y;
}
