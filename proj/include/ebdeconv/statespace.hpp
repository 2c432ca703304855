#pragma once

#include <span>
#include <string>
#include <vector>

#include "ebdeconv/npmle.hpp"
#include "ebdeconv/panel.hpp"
#include "ebdeconv/types.hpp"

namespace ebd {

// Trajectory model around a unit-specific level mu: an AR(1) component with
// innovation scale sigma_nu plus an MA(1) component with coefficient theta_ma
// and innovation scale sigma_eta.
struct ArmaParams {
  double rho = 0.0;
  double theta_ma = 0.0;
  double sigma_nu = 0.0;
  double sigma_eta = 1.0;

  void validate() const;  // |rho| < 1, scales nonnegative and not both zero
};

// Canonical three-state form y_t = mu + (1,0,0) s_t with
// s_t = transition s_{t-1} + noise, noise ~ N(0, noise_cov); the filter
// starts from the stationary state covariance (discrete Lyapunov solve).
struct StateSpaceSystem {
  Eigen::Matrix3d transition;
  Eigen::Matrix3d noise_cov;
  Eigen::Matrix3d initial_cov;

  static StateSpaceSystem from_params(const ArmaParams& params);
};

double arma_loglik_trajectory(const StateSpaceSystem& sys, double mu,
                              std::span<const double> traj);
double arma_loglik_trajectory(const ArmaParams& params, double mu,
                              std::span<const double> traj);

// A(i, j) = exp(trajectory loglik of unit i at mu_grid[j] - row max); the row
// max is stored as the log shift so reported mixture logliks are unshifted.
LikelihoodMatrix build_arma_likelihood_matrix(const ArmaParams& params,
                                              const PanelDataset& panel,
                                              const Grid& mu_grid);

struct ArmaLatticePoint {
  ArmaParams params;
  double loglik = 0.0;
  bool certified = false;
  bool failed = false;
  std::string error;
};

struct ArmaProfileFit {
  ArmaParams best;
  NpmleSolution g_mu;
  std::vector<ArmaLatticePoint> table;  // ordered as the input lattice
  std::size_t best_index = 0;
};

// Cartesian product in lexicographic (rho, theta_ma, sigma_nu, sigma_eta)
// order. Invalid combinations are kept; the profile records them as failed.
std::vector<ArmaParams> build_arma_lattice(const std::vector<double>& rhos,
                                           const std::vector<double>& theta_mas,
                                           const std::vector<double>& sigma_nus,
                                           const std::vector<double>& sigma_etas);

// Solves the location mixture at every lattice point and returns the argmax
// (ties broken by lexicographically smallest parameters) with its mixing
// distribution. Per-point failures are recorded in the table, not rethrown;
// only an all-failed lattice is an error.
ArmaProfileFit fit_arma_profile(const PanelDataset& panel,
                                const std::vector<ArmaParams>& lattice, const Grid& mu_grid,
                                const SolverConfig& cfg = {});

// Indices of the k best non-failed rows, best first; profile reports show the
// leaders because the surface can be nearly flat along scale ridges.
std::vector<std::size_t> top_lattice_indices(const std::vector<ArmaLatticePoint>& table,
                                             std::size_t k);

}  // namespace ebd
