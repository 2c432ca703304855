#pragma once

#include <vector>

#include "ebdeconv/types.hpp"

namespace ebd {

struct SolverConfig {
  double tol = 1e-6;        // certificate tolerance on the gradient residual
  int max_iter = 2000;      // iteration budget (Newton steps, or EM sweeps)
  double prune_eps = 1e-3;  // mass threshold for the reported support
  enum class Algorithm { DualInteriorPoint, EmBaseline };
  Algorithm algorithm = Algorithm::DualInteriorPoint;
};

// Mixture maximum-likelihood fit over a fixed candidate grid. `weights` keeps
// the full unpruned simplex vector; `mixing` is the pruned, renormalized
// support. `kkt_gap` is max_j sum_i A(i,j)/f_i - n, nonpositive up to tol at
// an optimum, and `dual` is a feasible dual vector (about 1 / fitted marginal)
// so the objective value is bracketed by weak duality.
struct NpmleSolution {
  DiscreteDistribution mixing;
  Eigen::VectorXd weights;
  Eigen::VectorXd dual;
  double loglik = 0.0;  // includes per-row log shifts, computed before pruning
  double kkt_gap = 0.0;
  int iterations = 0;
  bool certified = false;
};

NpmleSolution solve_npmle(const LikelihoodMatrix& L, const Grid& grid,
                          const SolverConfig& cfg = {});

// Column j of L corresponds to the atom (atoms[j], second[j]); `second` may
// be empty for a scalar mixing distribution.
NpmleSolution solve_npmle(const LikelihoodMatrix& L, const std::vector<double>& atoms,
                          const std::vector<double>& second, const SolverConfig& cfg = {});

// One multiplicative fixed-point sweep g'_j = g_j * (1/n) * sum_i A(i,j)/f_i.
// Never decreases the mixture log-likelihood.
Eigen::VectorXd em_step(const LikelihoodMatrix& L, const Eigen::VectorXd& g);

// Gradient residual d_j = sum_i A(i,j)/f_i - n for the simplex problem.
Eigen::VectorXd kkt_residual(const LikelihoodMatrix& L, const Eigen::VectorXd& g);

// Drops atoms with weight < eps and renormalizes; eps = 0 is the identity.
DiscreteDistribution prune_atoms(const DiscreteDistribution& d, double eps);

}  // namespace ebd
