#include "ebdeconv/types.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "ebdeconv/errors.hpp"

namespace ebd {

void DiscreteDistribution::validate() const {
  if (atoms.size() != weights.size())
    throw ValidationError("distribution: atoms and weights differ in length");
  if (!second.empty() && second.size() != atoms.size())
    throw ValidationError("distribution: second coordinate length mismatch");
  if (atoms.empty()) throw ValidationError("distribution: empty support");
  double s = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ValidationError("distribution: negative weight");
    s += w;
  }
  if (std::abs(s - 1.0) > 1e-12)
    throw ValidationError("distribution: weights sum to " + std::to_string(s));
  for (double t : second)
    if (!(t > 0.0)) throw ValidationError("distribution: nonpositive scale atom");
}

double mean(const DiscreteDistribution& d) {
  double m = 0.0;
  for (std::size_t k = 0; k < d.atoms.size(); ++k) m += d.weights[k] * d.atoms[k];
  return m;
}

double variance(const DiscreteDistribution& d) {
  double m = mean(d), v = 0.0;
  for (std::size_t k = 0; k < d.atoms.size(); ++k) {
    double c = d.atoms[k] - m;
    v += d.weights[k] * c * c;
  }
  return v;
}

double LikelihoodMatrix::shift_sum() const {
  return std::accumulate(log_shift.begin(), log_shift.end(), 0.0);
}

void LikelihoodMatrix::validate() const {
  if (!log_shift.empty() && log_shift.size() != static_cast<std::size_t>(A.rows()))
    throw ValidationError("likelihood matrix: log shift length mismatch");
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    double row_max = 0.0;
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
      double a = A(i, j);
      if (!std::isfinite(a) || a < 0.0)
        throw NumericError("likelihood matrix: bad entry at row " + std::to_string(i));
      row_max = std::max(row_max, a);
    }
    if (row_max <= 0.0)
      throw NumericError("likelihood matrix: observation " + std::to_string(i) +
                         " has zero density on the whole grid");
  }
}

}  // namespace ebd
