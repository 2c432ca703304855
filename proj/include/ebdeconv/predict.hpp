#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ebdeconv/types.hpp"

namespace ebd {

// Posterior over the atoms of a fitted bivariate heterogeneity distribution
// given a unit's observed prefix. Support is carried over unchanged; only the
// weights move.
struct UnitPosterior {
  std::vector<double> alpha;
  std::vector<double> theta;
  std::vector<double> weights;
  std::size_t size() const { return alpha.size(); }
};

// Weights proportional to prior mass times the conditional likelihood of the
// quasi-differenced prefix y_t - rho * y_{t-1}, t = 2..T0, computed in log
// space. Agrees with the sufficient-statistic factorization of the same
// likelihood to within roundoff.
UnitPosterior unit_posterior(const DiscreteDistribution& H, std::span<const double> prefix,
                             double rho);

// The paper's recursion is y' = alpha + rho y + sqrt(theta) u; with the
// stationary convention the intercept is (1 - rho) alpha instead so that the
// long-run mean is alpha itself.
enum class DriftConvention { StationaryAlpha, RawAlpha };

struct PredictionEnsemble {
  Eigen::MatrixXd paths;  // (M * m) rows, horizon columns; row = draw * m + path
  double rho = 0.0;
  double last_value = 0.0;
  std::size_t paths_per_draw = 0;  // m
  std::size_t draws = 0;           // M
  std::uint64_t seed = 0;
  DriftConvention drift = DriftConvention::StationaryAlpha;
};

// Draws (alpha, theta) from the posterior M times, then extends the observed
// trajectory m times per draw with Gaussian innovations. Counter-based
// per-(draw, path) random streams make the result a pure function of the seed.
PredictionEnsemble simulate_paths(const UnitPosterior& post, double rho, double last_value,
                                  std::size_t horizon, std::size_t m, std::size_t M,
                                  std::uint64_t seed,
                                  DriftConvention drift = DriftConvention::StationaryAlpha);

struct FanBands {
  std::vector<double> probs;
  Eigen::MatrixXd quantiles;  // horizon rows, one column per probability
};

// Per-period empirical quantiles with the linear-interpolation convention
// h = (n - 1) p (the common "type 7" definition).
FanBands quantile_bands(const PredictionEnsemble& ensemble, const std::vector<double>& probs);

std::vector<double> default_band_probs();  // 0.05, 0.10, ..., 0.95

// Smallest symmetric-in-rank envelope [x_(k), x_(n+1-k)] per period such that
// at least `level` of the paths lie inside it at every period simultaneously.
struct UniformBand {
  std::vector<double> lower;
  std::vector<double> upper;
  double achieved = 0.0;  // fraction of paths fully inside
  int depth = 0;          // the rank k actually used
};

UniformBand uniform_band(const PredictionEnsemble& ensemble, double level);

// Consecutive differences along each path, seeded by the observed last value.
std::vector<double> ensemble_increments(const PredictionEnsemble& ensemble);

// Gaussian kernel density on a 512-point grid (Silverman bandwidth) with the
// log and -1/sqrt transforms; rows where the density is at most 1e-12 are
// dropped.
struct IncrementDensityTable {
  std::vector<double> x;
  std::vector<double> f;
  std::vector<double> log_f;
  std::vector<double> neg_inv_sqrt_f;
  std::size_t size() const { return x.size(); }
};

IncrementDensityTable increment_density_table(std::span<const double> increments);
IncrementDensityTable increment_density_table(const PredictionEnsemble& ensemble);

}  // namespace ebd
