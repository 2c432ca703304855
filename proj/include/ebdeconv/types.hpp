#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <vector>

namespace ebd {

// Equally spaced (or log-spaced) candidate support points for a mixing
// distribution. Construction helpers live in kernels.hpp.
struct Grid {
  std::vector<double> points;

  std::size_t size() const { return points.size(); }
  double operator[](std::size_t j) const { return points[j]; }
};

// Discrete distribution over scalar atoms or over (first, second) pairs.
// For bivariate heterogeneity the first coordinate is the location and the
// second the positive scale; `second` stays empty in the scalar case.
struct DiscreteDistribution {
  std::vector<double> atoms;
  std::vector<double> second;
  std::vector<double> weights;

  bool bivariate() const { return !second.empty(); }
  std::size_t size() const { return atoms.size(); }

  void validate() const;  // sizes, weight simplex, positive second coordinate
};

double mean(const DiscreteDistribution& d);      // first-coordinate mean
double variance(const DiscreteDistribution& d);  // first-coordinate variance

// Dense likelihood matrix A with A(i,j) = density of observation i at grid
// point j, stored with an optional per-row log shift: the true density is
// exp(log_shift[i]) * A(i,j). Plain kernel assembly leaves log_shift at zero;
// state-space likelihood rows are shifted by their row maximum so that the
// stored entries stay in (0, 1].
struct LikelihoodMatrix {
  Eigen::MatrixXd A;
  std::vector<double> log_shift;

  Eigen::Index rows() const { return A.rows(); }
  Eigen::Index cols() const { return A.cols(); }
  double shift_sum() const;

  void validate() const;  // finite entries, every row strictly positive somewhere
};

}  // namespace ebd
