#pragma once

#include <span>
#include <vector>

#include "ebdeconv/types.hpp"

namespace ebd {

enum class KernelFamily {
  GaussianLocation,   // y | t ~ N(t, sd_i^2)
  Poisson,            // y | t ~ Poisson(t)
  Binomial,           // y | t ~ Binomial(trials_i, t)
  GammaScale,         // y | t ~ Gamma(shape_i, scale = t / shape_i), mean t
  StudentTLocation,   // (y - t) / scale_i ~ t_{df_i}
};

// Kernel family plus per-observation parameters. A parameter vector of
// length one broadcasts to every observation; otherwise it must match the
// data length. Unused vectors stay empty.
struct KernelSpec {
  KernelFamily family = KernelFamily::GaussianLocation;
  std::vector<double> sd;      // GaussianLocation
  std::vector<double> trials;  // Binomial (integer-valued)
  std::vector<double> shape;   // GammaScale
  std::vector<double> df;      // StudentTLocation
  std::vector<double> scale;   // StudentTLocation

  static KernelSpec gaussian(double sd = 1.0);
  static KernelSpec gaussian(std::vector<double> sds);
  static KernelSpec poisson();
  static KernelSpec binomial(double trials);
  static KernelSpec binomial(std::vector<double> trials);
  static KernelSpec gamma_scale(std::vector<double> shapes);
  static KernelSpec student_t(std::vector<double> dfs, std::vector<double> scales);

  double param(const std::vector<double>& v, std::size_t i) const;
  void validate(std::size_t n_obs) const;
};

// Equally spaced grid spanning the data range widened by padding * range on
// each side. All-equal data fall back to a unit half-width window around the
// common value.
Grid build_grid(std::span<const double> data, std::size_t m, double padding = 0.05);

// Degenerate ranges (hi == lo) collapse to a single point.
Grid build_linear_grid(double lo, double hi, std::size_t m);
Grid build_log_grid(double lo, double hi, std::size_t m);  // log-spaced, lo > 0

// Success-probability grid on (eps, 1 - eps), linear.
Grid build_prob_grid(std::size_t m, double eps = 1e-4);

// Log density of observation i's kernel at value y with parameter t.
double log_kernel_density(const KernelSpec& k, std::size_t i, double y, double t);
double kernel_density(const KernelSpec& k, std::size_t i, double y, double t);

// A(i,j) = kernel density of data[i] at grid[j]. Throws NumericError naming
// the observation if a whole row falls below 1e-300.
LikelihoodMatrix build_likelihood_matrix(std::span<const double> data,
                                         const KernelSpec& kernel,
                                         const Grid& grid);

// f = A g for a mixing weight vector on the grid; throws if any entry
// underflows to zero.
Eigen::VectorXd marginal_density(const LikelihoodMatrix& A, const Eigen::VectorXd& g);

}  // namespace ebd
