#pragma once

#include <cstdint>
#include <vector>

#include "ebdeconv/kernels.hpp"
#include "ebdeconv/npmle.hpp"
#include "ebdeconv/types.hpp"

namespace ebd {

// Balanced or unbalanced panel; values are ordered by period within a unit.
struct PanelUnit {
  std::int64_t id = 0;
  std::vector<double> values;
};

struct PanelDataset {
  std::vector<PanelUnit> units;
  void validate() const;  // n >= 1, each unit >= 2 finite values
};

// Per-unit mean and variance of the (optionally quasi-differenced) values.
// With rho != 0 the first period is consumed: m_i = L_i - 1 values
// y_t - rho * y_{t-1}; their mean is centered at (1 - rho) * alpha_i and the
// sample variance follows a gamma with shape r_i = (m_i - 1) / 2 and mean
// theta_i. The noise scale is fixed at 1 (not identified separately).
struct SufficientStats {
  double rho = 0.0;
  bool differenced = false;
  std::vector<double> mean;   // ybar_i
  std::vector<double> var;    // S_i, divisor m_i - 1
  std::vector<double> first;  // y_{i1}, kept for the stationary initial factor
  std::vector<int> len;       // m_i after differencing
  std::vector<double> shape;  // r_i = (m_i - 1) / 2
  std::size_t size() const { return mean.size(); }
};

SufficientStats sufficient_stats(const PanelDataset& panel, double rho,
                                 bool force_difference = false);

// Log of the constant relating the iid Gaussian likelihood of a unit's values
// to the product of the mean and variance sampling densities; the variance
// parameter cancels, so this depends only on the observed statistics.
double sufficient_loglik_constant(const SufficientStats& stats);

// Data-driven default grids: alpha linear over the range of ybar / (1 - rho),
// theta log-spaced over the range of S.
struct PanelGrids {
  Grid alpha;
  Grid theta;
};

PanelGrids default_panel_grids(const SufficientStats& stats, std::size_t alpha_m = 60,
                               std::size_t theta_m = 60);

// Two-step fit treating the heterogeneity coordinates as independent:
// a gamma-kernel mixture for the variances, then a Student-t location
// mixture for the means with per-unit scale sqrt(S_i / m_i) and df m_i - 1.
struct IndependentFit {
  NpmleSolution theta;
  NpmleSolution alpha;
};

IndependentFit fit_independent_heterogeneity(const SufficientStats& stats,
                                             const Grid& theta_grid, const Grid& alpha_grid,
                                             const SolverConfig& cfg = {});

enum class InitialCondition { Drop, Stationary };

// Joint mixture over the (alpha, theta) product grid; the likelihood column
// for (alpha_k, theta_l) is the Gaussian mean density times the gamma
// variance density, optionally times the stationary density of the first
// period. The result's mixing distribution is bivariate.
struct BivariateFit {
  NpmleSolution solution;
  bool grid_warning = false;  // more than 10^4 columns requested
};

BivariateFit fit_bivariate_heterogeneity(const SufficientStats& stats,
                                         const Grid& alpha_grid, const Grid& theta_grid,
                                         const SolverConfig& cfg = {},
                                         InitialCondition initial = InitialCondition::Drop);

// Profile log likelihood over a grid of autoregression coefficients: for each
// rho the statistics and the bivariate mixture are recomputed, and the
// factorization constant is added so values are comparable across rho.
struct ProfileCurve {
  std::vector<double> rho_grid;
  std::vector<double> loglik;
  double rho_hat = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  std::vector<double> crossings;  // all level crossings, left to right
  bool multimodal = false;
  bool degenerate = false;  // single-point grid
};

ProfileCurve profile_loglik(const PanelDataset& panel, const std::vector<double>& rho_grid,
                            std::size_t alpha_m = 60, std::size_t theta_m = 60,
                            const SolverConfig& cfg = {},
                            InitialCondition initial = InitialCondition::Drop);

}  // namespace ebd
