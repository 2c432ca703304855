#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "ebdeconv/kernels.hpp"
#include "ebdeconv/types.hpp"

namespace ebd {

// Two-point classification: theta is +1 with probability p, -1 otherwise,
// observed with unit Gaussian noise. The optimal cut moves off the origin by
// half the prior log odds.
struct BinaryRule {
  double p = 0.5;
  double threshold = 0.0;  // classify +1 when y + threshold >= 0
  double risk = 0.0;       // per-observation misclassification probability at p
  double decide(double y) const { return y + threshold >= 0.0 ? 1.0 : -1.0; }
};

BinaryRule binary_two_point(double p);
BinaryRule binary_two_point(const std::vector<double>& data);

// Error probability of the rule sgn(y + threshold) when theta = +1 w.p. p.
double binary_rule_risk(double p, double threshold);

enum class ShrinkageMode { JamesStein, EfronMorris };

struct ShrinkageEstimate {
  std::vector<double> values;
  double factor = 1.0;
  double center = 0.0;
};

ShrinkageEstimate linear_shrinkage(const std::vector<double>& y, ShrinkageMode mode,
                                   bool positive_part = false);

// Regression-of-theta-on-y reading of the shrinkage map: the fitted line
// ybar + slope * (y - ybar) with slope 1 - (n-2)/S~.
struct StiglerLine {
  double intercept = 0.0;
  double slope = 1.0;
};

StiglerLine stigler_line(const std::vector<double>& y);

struct PosteriorSummary {
  double mean = 0.0;
  double variance = 0.0;
  DiscreteDistribution atom_posterior;
};

// Posterior mean/variance of theta given y under a discrete mixing
// distribution and Gaussian location noise, evaluated in log space.
PosteriorSummary tweedie_rule(const KernelSpec& kernel, const DiscreteDistribution& G,
                              double y);

// Poisson analogue; mean is nondecreasing in y.
PosteriorSummary poisson_g_rule(const DiscreteDistribution& G, int y);

// Frequency-ratio rule for Poisson counts: delta(y) = (y+1) f(y+1) / f(y)
// with f the empirical pmf. Entries where either frequency vanishes are
// flagged; monotonicity is not enforced.
struct RobbinsTable {
  std::vector<double> freq;   // empirical pmf on 0..max(count)
  std::vector<double> delta;  // NaN where undefined
  std::vector<char> defined;
};

RobbinsTable robbins_poisson(const std::vector<int>& counts);

// Variance-moderated t statistics: each sample variance (v df) is shrunk
// toward s02 with v0 pseudo-replicates, and p-values use v0 + v df.
struct ModeratedTResult {
  std::vector<double> t;
  std::vector<double> p;
  std::vector<double> moderated_var;
};

ModeratedTResult moderated_t(const std::vector<double>& means,
                             const std::vector<double>& vars, int replicates, double v0,
                             double s02);

// Marginal maximum likelihood for the variance prior sigma^{-2} ~
// (v0 s02)^{-1} chi^2_{v0}; v0 comes back infinite when the variances carry
// no spread beyond chi-square sampling noise.
struct InverseChisqHyper {
  double v0 = 0.0;
  double s02 = 1.0;
};

InverseChisqHyper fit_inverse_chisq_hyper(const std::vector<double>& vars, int v);

// Conjugate two-level Gaussian chain y ~ N(A1 theta1, C1),
// theta1 ~ N(A2 theta2, C2): posterior of theta1 and marginal of y.
struct HierarchyPosterior {
  Eigen::VectorXd posterior_mean;
  Eigen::MatrixXd posterior_cov;
  Eigen::VectorXd marginal_mean;
  Eigen::MatrixXd marginal_cov;
};

HierarchyPosterior gaussian_hierarchy_posterior(const Eigen::MatrixXd& A1,
                                                const Eigen::MatrixXd& C1,
                                                const Eigen::MatrixXd& A2,
                                                const Eigen::MatrixXd& C2,
                                                const Eigen::VectorXd& theta2,
                                                const Eigen::VectorXd& y);

enum class Loss { Squared, Absolute };

// Per-observation Bayes risk of a scalar decision rule: integrates the loss
// against the observation density for every atom of G. Continuous kernels use
// adaptive quadrature; count kernels are summed exactly.
double compound_risk(const std::function<double(double)>& rule,
                     const DiscreteDistribution& G, const KernelSpec& kernel, Loss loss);

// Risk of the optimal (posterior-mean) rule under Gaussian noise, computed
// from the mixture density alone: 1 - integral of (f')^2 / f. Cross-check for
// compound_risk of the posterior-mean rule.
double oracle_gaussian_risk(const DiscreteDistribution& G, double sd = 1.0);

}  // namespace ebd
