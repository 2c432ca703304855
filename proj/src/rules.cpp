#include "ebdeconv/rules.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <cmath>
#include <limits>
#include <numeric>

#include "ebdeconv/errors.hpp"
#include "ebdeconv/quadrature.hpp"

namespace ebd {

namespace {

constexpr double kProbClamp = 1e-6;
constexpr double kInf = std::numeric_limits<double>::infinity();

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double mean_of(const std::vector<double>& y) {
  return std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
}

// Posterior over the atoms of G given one observation, all in log space.
PosteriorSummary atom_posterior_summary(const DiscreteDistribution& G,
                                        const std::function<double(double)>& logdens) {
  const std::size_t m = G.atoms.size();
  std::vector<double> lw(m);
  double top = -kInf;
  for (std::size_t j = 0; j < m; ++j) {
    lw[j] = G.weights[j] > 0.0 ? std::log(G.weights[j]) + logdens(G.atoms[j]) : -kInf;
    top = std::max(top, lw[j]);
  }
  if (!(top > -kInf))
    throw NumericError("posterior: marginal density underflowed at every atom");
  double total = 0.0;
  PosteriorSummary out;
  out.atom_posterior.atoms = G.atoms;
  out.atom_posterior.second = G.second;
  out.atom_posterior.weights.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    double w = std::exp(lw[j] - top);
    out.atom_posterior.weights[j] = w;
    total += w;
  }
  double mean = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    out.atom_posterior.weights[j] /= total;
    mean += out.atom_posterior.weights[j] * G.atoms[j];
  }
  double var = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    double c = G.atoms[j] - mean;
    var += out.atom_posterior.weights[j] * c * c;
  }
  out.mean = mean;
  out.variance = var;
  return out;
}

double loss_value(Loss loss, double delta, double theta) {
  double d = delta - theta;
  return loss == Loss::Squared ? d * d : std::abs(d);
}

// Log density of the scaled-F marginal of a sample variance x when the
// underlying precision has v0 df around s02 and the variance estimate has v.
double log_var_marginal(double x, int v, double v0, double s02) {
  double d1 = static_cast<double>(v), d2 = v0;
  double z = x / s02;
  double lf = 0.5 * d1 * std::log(d1 / d2) + (0.5 * d1 - 1.0) * std::log(z) -
              0.5 * (d1 + d2) * std::log1p(d1 * z / d2) -
              (std::lgamma(0.5 * d1) + std::lgamma(0.5 * d2) - std::lgamma(0.5 * (d1 + d2)));
  return lf - std::log(s02);
}

double trigamma_inverse(double target) {
  // psi'(x) is decreasing from +inf to 0 on (0, inf)
  double lo = 1e-8, hi = 1e8;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    if (boost::math::trigamma(mid) > target)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

// Nelder-Mead on R^2, small and deterministic.
std::array<double, 2> nelder_mead_2d(const std::function<double(double, double)>& f,
                                     std::array<double, 2> x0, double step, int iters) {
  struct Pt {
    std::array<double, 2> x;
    double v;
  };
  std::array<Pt, 3> s;
  s[0] = {x0, f(x0[0], x0[1])};
  s[1] = {{x0[0] + step, x0[1]}, 0.0};
  s[1].v = f(s[1].x[0], s[1].x[1]);
  s[2] = {{x0[0], x0[1] + step}, 0.0};
  s[2].v = f(s[2].x[0], s[2].x[1]);
  auto order = [&] { std::sort(s.begin(), s.end(), [](const Pt& a, const Pt& b) { return a.v < b.v; }); };
  for (int it = 0; it < iters; ++it) {
    order();
    if (std::abs(s[2].v - s[0].v) < 1e-12 * (1.0 + std::abs(s[0].v))) break;
    std::array<double, 2> c = {0.5 * (s[0].x[0] + s[1].x[0]), 0.5 * (s[0].x[1] + s[1].x[1])};
    auto at = [&](double t) -> Pt {
      std::array<double, 2> x = {c[0] + t * (c[0] - s[2].x[0]), c[1] + t * (c[1] - s[2].x[1])};
      return {x, f(x[0], x[1])};
    };
    Pt r = at(1.0);
    if (r.v < s[0].v) {
      Pt e = at(2.0);
      s[2] = e.v < r.v ? e : r;
    } else if (r.v < s[1].v) {
      s[2] = r;
    } else {
      Pt k = at(r.v < s[2].v ? 0.5 : -0.5);
      if (k.v < std::min(r.v, s[2].v)) {
        s[2] = k;
      } else {  // shrink toward the best vertex
        for (int j = 1; j < 3; ++j) {
          s[j].x[0] = 0.5 * (s[j].x[0] + s[0].x[0]);
          s[j].x[1] = 0.5 * (s[j].x[1] + s[0].x[1]);
          s[j].v = f(s[j].x[0], s[j].x[1]);
        }
      }
    }
  }
  order();
  return s[0].x;
}

}  // namespace

double binary_rule_risk(double p, double threshold) {
  return p * norm_cdf(-1.0 - threshold) + (1.0 - p) * norm_cdf(-1.0 + threshold);
}

BinaryRule binary_two_point(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw ValidationError("binary rule: p must lie strictly inside (0, 1)");
  BinaryRule rule;
  rule.p = p;
  rule.threshold = 0.5 * std::log(p / (1.0 - p));
  rule.risk = binary_rule_risk(p, rule.threshold);
  return rule;
}

BinaryRule binary_two_point(const std::vector<double>& data) {
  if (data.empty()) throw ValidationError("binary rule: empty data");
  double p = std::clamp(0.5 * (mean_of(data) + 1.0), kProbClamp, 1.0 - kProbClamp);
  return binary_two_point(p);
}

ShrinkageEstimate linear_shrinkage(const std::vector<double>& y, ShrinkageMode mode,
                                   bool positive_part) {
  const std::size_t n = y.size();
  const std::size_t least = mode == ShrinkageMode::JamesStein ? 3 : 4;
  if (n < least) throw ValidationError("shrinkage: too few coordinates");
  ShrinkageEstimate out;
  double drop;
  if (mode == ShrinkageMode::JamesStein) {
    out.center = 0.0;
    drop = static_cast<double>(n - 2);
  } else {
    out.center = mean_of(y);
    drop = static_cast<double>(n - 3);
  }
  double s = 0.0;
  for (double v : y) s += (v - out.center) * (v - out.center);
  if (s == 0.0) {
    if (!positive_part) throw ValidationError("shrinkage: zero spread around the center");
    out.factor = 0.0;
  } else {
    out.factor = 1.0 - drop / s;
    if (positive_part && out.factor < 0.0) out.factor = 0.0;
  }
  out.values.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    out.values[i] = out.center + out.factor * (y[i] - out.center);
  return out;
}

StiglerLine stigler_line(const std::vector<double>& y) {
  if (y.size() < 4) throw ValidationError("shrinkage line: too few coordinates");
  double ybar = mean_of(y);
  double s = 0.0;
  for (double v : y) s += (v - ybar) * (v - ybar);
  if (s == 0.0) throw ValidationError("shrinkage line: zero spread");
  StiglerLine line;
  line.slope = 1.0 - static_cast<double>(y.size() - 2) / s;
  line.intercept = ybar * static_cast<double>(y.size() - 2) / s;
  return line;
}

PosteriorSummary tweedie_rule(const KernelSpec& kernel, const DiscreteDistribution& G,
                              double y) {
  if (kernel.family != KernelFamily::GaussianLocation)
    throw ValidationError("posterior rule: expected a Gaussian location kernel");
  G.validate();
  return atom_posterior_summary(
      G, [&](double t) { return log_kernel_density(kernel, 0, y, t); });
}

PosteriorSummary poisson_g_rule(const DiscreteDistribution& G, int y) {
  if (y < 0) throw ValidationError("posterior rule: negative count");
  G.validate();
  for (double t : G.atoms)
    if (!(t > 0.0)) throw ValidationError("posterior rule: atoms must be positive means");
  KernelSpec k = KernelSpec::poisson();
  return atom_posterior_summary(
      G, [&](double t) { return log_kernel_density(k, 0, static_cast<double>(y), t); });
}

RobbinsTable robbins_poisson(const std::vector<int>& counts) {
  if (counts.empty()) throw ValidationError("count rule: empty data");
  int top = 0;
  for (int c : counts) {
    if (c < 0) throw ValidationError("count rule: negative count");
    top = std::max(top, c);
  }
  RobbinsTable table;
  table.freq.assign(static_cast<std::size_t>(top) + 1, 0.0);
  for (int c : counts) table.freq[static_cast<std::size_t>(c)] += 1.0;
  for (double& f : table.freq) f /= static_cast<double>(counts.size());
  table.delta.assign(table.freq.size(), std::numeric_limits<double>::quiet_NaN());
  table.defined.assign(table.freq.size(), 0);
  for (std::size_t y = 0; y < table.freq.size(); ++y) {
    double fy = table.freq[y];
    double fy1 = y + 1 < table.freq.size() ? table.freq[y + 1] : 0.0;
    if (fy > 0.0 && fy1 > 0.0) {
      table.delta[y] = static_cast<double>(y + 1) * fy1 / fy;
      table.defined[y] = 1;
    }
  }
  return table;
}

ModeratedTResult moderated_t(const std::vector<double>& means,
                             const std::vector<double>& vars, int replicates, double v0,
                             double s02) {
  if (means.size() != vars.size())
    throw ValidationError("moderated t: mean and variance lengths differ");
  if (replicates < 2) throw ValidationError("moderated t: need at least 2 replicates");
  if (!(v0 >= 0.0)) throw ValidationError("moderated t: prior df must be nonnegative");
  if (!(s02 > 0.0)) throw ValidationError("moderated t: prior scale must be positive");
  const double v = static_cast<double>(replicates - 1);
  ModeratedTResult out;
  out.t.resize(means.size());
  out.p.resize(means.size());
  out.moderated_var.resize(means.size());
  const bool infinite_prior = std::isinf(v0);
  boost::math::students_t_distribution<double> tdist(infinite_prior ? 1.0 : v0 + v);
  for (std::size_t i = 0; i < means.size(); ++i) {
    if (!(vars[i] >= 0.0)) throw ValidationError("moderated t: negative variance");
    double s2 = infinite_prior ? s02 : (v0 * s02 + v * vars[i]) / (v0 + v);
    if (!(s2 > 0.0)) throw ValidationError("moderated t: zero moderated variance");
    out.moderated_var[i] = s2;
    double t = means[i] / std::sqrt(s2);
    out.t[i] = t;
    out.p[i] = infinite_prior ? 2.0 * norm_cdf(-std::abs(t))
                              : 2.0 * boost::math::cdf(boost::math::complement(tdist, std::abs(t)));
  }
  return out;
}

InverseChisqHyper fit_inverse_chisq_hyper(const std::vector<double>& vars, int v) {
  if (vars.size() < 10) throw ValidationError("variance prior fit: need at least 10 units");
  if (v < 1) throw ValidationError("variance prior fit: df must be at least 1");
  for (double x : vars)
    if (!(x > 0.0)) throw ValidationError("variance prior fit: variances must be positive");
  const double n = static_cast<double>(vars.size());
  const double vd = static_cast<double>(v);

  double mean_x = mean_of(vars);
  double mean_log = 0.0, var_log = 0.0;
  for (double x : vars) mean_log += std::log(x);
  mean_log /= n;
  for (double x : vars) var_log += (std::log(x) - mean_log) * (std::log(x) - mean_log);
  var_log /= n;

  // The log of a scaled F has variance psi'(v/2) + psi'(v0/2); spread at or
  // below the chi-square noise floor pins v0 at infinity.
  double excess = var_log - boost::math::trigamma(0.5 * vd);
  if (!(excess > 1e-10)) return {kInf, mean_x};

  double v0_init = 2.0 * trigamma_inverse(excess);
  double ls02_init =
      mean_log - (boost::math::digamma(0.5 * vd) - boost::math::digamma(0.5 * v0_init) +
                  std::log(v0_init / vd));
  auto negll = [&](double lv0, double ls02) {
    double v0 = std::exp(lv0), s02 = std::exp(ls02);
    double total = 0.0;
    for (double x : vars) total += log_var_marginal(x, v, v0, s02);
    return -total;
  };
  auto best = nelder_mead_2d(negll, {std::log(v0_init), ls02_init}, 0.5, 300);
  double v0 = std::exp(best[0]);
  if (v0 > 1e8) return {kInf, mean_x};
  return {v0, std::exp(best[1])};
}

HierarchyPosterior gaussian_hierarchy_posterior(const Eigen::MatrixXd& A1,
                                                const Eigen::MatrixXd& C1,
                                                const Eigen::MatrixXd& A2,
                                                const Eigen::MatrixXd& C2,
                                                const Eigen::VectorXd& theta2,
                                                const Eigen::VectorXd& y) {
  const Eigen::Index n = A1.rows(), p = A1.cols();
  if (C1.rows() != n || C1.cols() != n || C2.rows() != p || C2.cols() != p ||
      A2.rows() != p || A2.cols() != theta2.size() || y.size() != n)
    throw ValidationError("hierarchy posterior: dimension mismatch");
  Eigen::LLT<Eigen::MatrixXd> llt1(C1), llt2(C2);
  if (llt1.info() != Eigen::Success || llt2.info() != Eigen::Success)
    throw ValidationError("hierarchy posterior: covariance not positive definite");

  Eigen::MatrixXd C1iA1 = llt1.solve(A1);
  Eigen::VectorXd prior_mean = A2 * theta2;
  Eigen::MatrixXd Binv = A1.transpose() * C1iA1 + llt2.solve(Eigen::MatrixXd::Identity(p, p));
  Eigen::VectorXd b = A1.transpose() * llt1.solve(y) + llt2.solve(prior_mean);
  Eigen::LLT<Eigen::MatrixXd> lltB(0.5 * (Binv + Binv.transpose()));
  if (lltB.info() != Eigen::Success)
    throw ValidationError("hierarchy posterior: posterior precision not positive definite");

  HierarchyPosterior out;
  out.posterior_cov = lltB.solve(Eigen::MatrixXd::Identity(p, p));
  out.posterior_mean = lltB.solve(b);
  out.marginal_mean = A1 * prior_mean;
  out.marginal_cov = C1 + A1 * C2 * A1.transpose();
  return out;
}

double compound_risk(const std::function<double(double)>& rule,
                     const DiscreteDistribution& G, const KernelSpec& kernel, Loss loss) {
  G.validate();
  kernel.validate(1);
  double total = 0.0;
  for (std::size_t j = 0; j < G.atoms.size(); ++j) {
    const double theta = G.atoms[j];
    if (G.weights[j] == 0.0) continue;
    double atom_risk = 0.0;
    switch (kernel.family) {
      case KernelFamily::Poisson: {
        double mass = 0.0;
        double cap = theta + 12.0 * std::sqrt(theta) + 30.0;
        for (int y = 0; y <= static_cast<int>(cap); ++y) {
          double pr = kernel_density(kernel, 0, y, theta);
          atom_risk += pr * loss_value(loss, rule(y), theta);
          mass += pr;
          if (mass > 1.0 - 1e-13 && y > theta) break;
        }
        break;
      }
      case KernelFamily::Binomial: {
        int m = static_cast<int>(kernel.param(kernel.trials, 0));
        for (int y = 0; y <= m; ++y)
          atom_risk += kernel_density(kernel, 0, y, theta) * loss_value(loss, rule(y), theta);
        break;
      }
      case KernelFamily::GaussianLocation: {
        double sd = kernel.param(kernel.sd, 0);
        atom_risk = integrate(
            [&](double y) {
              return kernel_density(kernel, 0, y, theta) * loss_value(loss, rule(y), theta);
            },
            theta - 12.0 * sd, theta + 12.0 * sd, 1e-8);
        break;
      }
      case KernelFamily::GammaScale: {
        double r = kernel.param(kernel.shape, 0);
        boost::math::gamma_distribution<double> gd(r, theta / r);
        atom_risk = integrate(
            [&](double y) {
              return kernel_density(kernel, 0, y, theta) * loss_value(loss, rule(y), theta);
            },
            boost::math::quantile(gd, 1e-13), boost::math::quantile(gd, 1.0 - 1e-13), 1e-8);
        break;
      }
      case KernelFamily::StudentTLocation: {
        double df = kernel.param(kernel.df, 0), sc = kernel.param(kernel.scale, 0);
        boost::math::students_t_distribution<double> td(df);
        double w = sc * boost::math::quantile(td, 1.0 - 1e-12);
        atom_risk = integrate(
            [&](double y) {
              return kernel_density(kernel, 0, y, theta) * loss_value(loss, rule(y), theta);
            },
            theta - w, theta + w, 1e-8);
        break;
      }
    }
    total += G.weights[j] * atom_risk;
  }
  return total;
}

double oracle_gaussian_risk(const DiscreteDistribution& G, double sd) {
  G.validate();
  if (!(sd > 0.0)) throw ValidationError("oracle risk: sd must be positive");
  auto lohi = std::minmax_element(G.atoms.begin(), G.atoms.end());
  double lo = *lohi.first - 12.0 * sd, hi = *lohi.second + 12.0 * sd;
  const double s2 = sd * sd;
  // integrand f''/2 - (f')^2/(4 f) integrates to -I(f)/4 for mixture densities
  double correction = integrate(
      [&](double y) {
        double f = 0.0, fp = 0.0, fpp = 0.0;
        for (std::size_t j = 0; j < G.atoms.size(); ++j) {
          double z = (y - G.atoms[j]) / sd;
          double phi = std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * M_PI));
          double w = G.weights[j] * phi;
          f += w;
          fp += w * (-z / sd);
          fpp += w * (z * z - 1.0) / s2;
        }
        if (f < 1e-280) return 0.0;
        return 0.5 * fpp - 0.25 * fp * fp / f;
      },
      lo, hi, 1e-9);
  return s2 + 4.0 * s2 * s2 * correction;
}

}  // namespace ebd
