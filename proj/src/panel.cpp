#include "ebdeconv/panel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ebdeconv/errors.hpp"

namespace ebd {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;
// Half the 0.95 quantile of chi-squared with one degree of freedom.
constexpr double kWilksHalfDeviance = 1.9207294103470622;

}  // namespace

void PanelDataset::validate() const {
  if (units.empty()) throw ValidationError("panel: no units");
  for (const PanelUnit& u : units) {
    if (u.values.size() < 2)
      throw ValidationError("panel: unit " + std::to_string(u.id) +
                            " has fewer than 2 periods");
    for (double y : u.values)
      if (!std::isfinite(y))
        throw ValidationError("panel: unit " + std::to_string(u.id) +
                              " has a non-finite value");
  }
}

SufficientStats sufficient_stats(const PanelDataset& panel, double rho,
                                 bool force_difference) {
  panel.validate();
  if (!(std::abs(rho) <= 1.0))
    throw ValidationError("panel: |rho| must be at most 1");
  const bool diff = force_difference || rho != 0.0;
  SufficientStats st;
  st.rho = rho;
  st.differenced = diff;
  st.mean.reserve(panel.units.size());
  st.var.reserve(panel.units.size());
  st.first.reserve(panel.units.size());
  st.len.reserve(panel.units.size());
  st.shape.reserve(panel.units.size());
  std::vector<double> w;
  for (const PanelUnit& u : panel.units) {
    const std::size_t L = u.values.size();
    if (diff && L < 3)
      throw ValidationError("panel: unit " + std::to_string(u.id) +
                            " too short for differencing (needs 3 periods)");
    w.clear();
    if (diff) {
      for (std::size_t t = 1; t < L; ++t)
        w.push_back(u.values[t] - rho * u.values[t - 1]);
    } else {
      w.assign(u.values.begin(), u.values.end());
    }
    const auto m = static_cast<double>(w.size());
    double ybar = 0.0;
    for (double x : w) ybar += x;
    ybar /= m;
    double ss = 0.0;
    for (double x : w) ss += (x - ybar) * (x - ybar);
    st.mean.push_back(ybar);
    st.var.push_back(ss / (m - 1.0));
    st.first.push_back(u.values.front());
    st.len.push_back(static_cast<int>(w.size()));
    st.shape.push_back(0.5 * (m - 1.0));
  }
  return st;
}

double sufficient_loglik_constant(const SufficientStats& stats) {
  double total = 0.0;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const double m = stats.len[i];
    const double r = stats.shape[i];
    const double s = stats.var[i];
    if (!(s > 0.0))
      throw NumericError("panel: factorization constant diverges at zero variance "
                         "statistic (unit index " + std::to_string(i) + ")");
    total += -0.5 * (m - 1.0) * kLog2Pi - 0.5 * std::log(m) -
             (r - 1.0) * std::log(s) + std::lgamma(r) - r * std::log(r);
  }
  return total;
}

PanelGrids default_panel_grids(const SufficientStats& stats, std::size_t alpha_m,
                               std::size_t theta_m) {
  if (stats.size() == 0) throw ValidationError("panel grids: empty statistics");
  double smin = std::numeric_limits<double>::infinity();
  double smax = -std::numeric_limits<double>::infinity();
  for (double s : stats.var) {
    smin = std::min(smin, s);
    smax = std::max(smax, s);
  }
  if (!(smax > 0.0))
    throw ValidationError("panel grids: all variance statistics are zero");
  if (!(smin > 0.0)) smin = smax * 1e-8;
  const double denom = 1.0 - stats.rho;
  double alo = std::numeric_limits<double>::infinity();
  double ahi = -std::numeric_limits<double>::infinity();
  for (double yb : stats.mean) {
    const double a = std::abs(denom) < 1e-8 ? yb : yb / denom;
    alo = std::min(alo, a);
    ahi = std::max(ahi, a);
  }
  PanelGrids g;
  g.alpha = build_linear_grid(alo, ahi, alpha_m);
  g.theta = build_log_grid(smin, smax, theta_m);
  return g;
}

IndependentFit fit_independent_heterogeneity(const SufficientStats& stats,
                                             const Grid& theta_grid, const Grid& alpha_grid,
                                             const SolverConfig& cfg) {
  if (stats.size() == 0) throw ValidationError("panel: empty statistics");
  IndependentFit fit;
  {
    LikelihoodMatrix L =
        build_likelihood_matrix(stats.var, KernelSpec::gamma_scale(stats.shape), theta_grid);
    fit.theta = solve_npmle(L, theta_grid, cfg);
  }
  {
    std::vector<double> dfs(stats.size()), scales(stats.size());
    for (std::size_t i = 0; i < stats.size(); ++i) {
      dfs[i] = static_cast<double>(stats.len[i]) - 1.0;
      scales[i] = std::sqrt(stats.var[i] / static_cast<double>(stats.len[i]));
    }
    LikelihoodMatrix L =
        build_likelihood_matrix(stats.mean, KernelSpec::student_t(dfs, scales), alpha_grid);
    fit.alpha = solve_npmle(L, alpha_grid, cfg);
  }
  return fit;
}

BivariateFit fit_bivariate_heterogeneity(const SufficientStats& stats,
                                         const Grid& alpha_grid, const Grid& theta_grid,
                                         const SolverConfig& cfg, InitialCondition initial) {
  if (stats.size() == 0) throw ValidationError("panel: empty statistics");
  if (alpha_grid.size() == 0 || theta_grid.size() == 0)
    throw ValidationError("panel: empty heterogeneity grid");
  for (double a : alpha_grid.points)
    if (!std::isfinite(a)) throw ValidationError("panel: non-finite alpha grid point");
  for (double t : theta_grid.points)
    if (!(t > 0.0) || !std::isfinite(t))
      throw ValidationError("panel: theta grid must be positive and finite");
  const bool stationary = initial == InitialCondition::Stationary;
  if (stationary) {
    if (!stats.differenced)
      throw ValidationError("panel: stationary initial condition requires differenced "
                            "statistics");
    if (!(std::abs(stats.rho) < 1.0))
      throw ValidationError("panel: stationary initial condition requires |rho| < 1");
  }

  const std::size_t n = stats.size();
  const std::size_t ka = alpha_grid.size();
  const std::size_t kt = theta_grid.size();
  const std::size_t kcols = ka * kt;
  BivariateFit out;
  out.grid_warning = kcols > 10000;

  const double mu_scale = 1.0 - stats.rho;
  const double stat_prec = 1.0 - stats.rho * stats.rho;
  std::vector<double> log_theta(kt);
  for (std::size_t l = 0; l < kt; ++l) log_theta[l] = std::log(theta_grid[l]);

  LikelihoodMatrix L;
  L.A.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(kcols));
  L.log_shift.assign(n, 0.0);
  std::vector<double> row(kcols);
  for (std::size_t i = 0; i < n; ++i) {
    const double m = stats.len[i];
    const double r = stats.shape[i];
    const double s = stats.var[i];
    const double yb = stats.mean[i];
    const double y1 = stats.first[i];
    const double log_m = std::log(m);
    const double c_gamma =
        (r == 1.0 ? 0.0 : (r - 1.0) * std::log(s)) - std::lgamma(r) + r * std::log(r);
    double row_max = -std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < kt; ++l) {
      const double th = theta_grid[l];
      const double gam = c_gamma - s * r / th - r * log_theta[l];
      const double mean_const = -0.5 * (kLog2Pi + log_theta[l] - log_m);
      const double mean_prec = m / (2.0 * th);
      double init_const = 0.0, init_prec = 0.0;
      if (stationary) {
        init_const = -0.5 * (kLog2Pi + log_theta[l] - std::log(stat_prec));
        init_prec = stat_prec / (2.0 * th);
      }
      const double base = gam + mean_const + init_const;
      for (std::size_t k = 0; k < ka; ++k) {
        const double da = yb - mu_scale * alpha_grid[k];
        double v = base - mean_prec * da * da;
        if (stationary) {
          const double d1 = y1 - alpha_grid[k];
          v -= init_prec * d1 * d1;
        }
        row[k * kt + l] = v;
        row_max = std::max(row_max, v);
      }
    }
    if (!std::isfinite(row_max))
      throw NumericError("panel: degenerate bivariate likelihood for unit index " +
                         std::to_string(i));
    for (std::size_t j = 0; j < kcols; ++j)
      L.A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          std::exp(row[j] - row_max);
    L.log_shift[i] = row_max;
  }

  std::vector<double> atoms(kcols), second(kcols);
  for (std::size_t k = 0; k < ka; ++k)
    for (std::size_t l = 0; l < kt; ++l) {
      atoms[k * kt + l] = alpha_grid[k];
      second[k * kt + l] = theta_grid[l];
    }
  out.solution = solve_npmle(L, atoms, second, cfg);
  return out;
}

ProfileCurve profile_loglik(const PanelDataset& panel, const std::vector<double>& rho_grid,
                            std::size_t alpha_m, std::size_t theta_m,
                            const SolverConfig& cfg, InitialCondition initial) {
  if (rho_grid.empty()) throw ValidationError("profile: empty rho grid");
  for (double rho : rho_grid)
    if (!(std::abs(rho) < 1.0))
      throw ValidationError("profile: rho grid must lie inside (-1, 1)");
  for (std::size_t i = 1; i < rho_grid.size(); ++i)
    if (!(rho_grid[i] > rho_grid[i - 1]))
      throw ValidationError("profile: rho grid must be strictly increasing");

  ProfileCurve out;
  out.rho_grid = rho_grid;
  out.loglik.reserve(rho_grid.size());
  for (double rho : rho_grid) {
    SufficientStats stats = sufficient_stats(panel, rho, true);
    PanelGrids grids = default_panel_grids(stats, alpha_m, theta_m);
    BivariateFit fit = fit_bivariate_heterogeneity(stats, grids.alpha, grids.theta, cfg,
                                                   initial);
    const double ll = fit.solution.loglik + sufficient_loglik_constant(stats);
    if (!std::isfinite(ll))
      throw NumericError("profile: non-finite profile value at rho = " +
                         std::to_string(rho));
    out.loglik.push_back(ll);
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i < rho_grid.size(); ++i)
    if (out.loglik[i] > out.loglik[best]) best = i;
  out.rho_hat = rho_grid[best];

  if (rho_grid.size() == 1) {
    out.degenerate = true;
    out.ci_lo = out.ci_hi = out.rho_hat;
    return out;
  }

  const double level = out.loglik[best] - kWilksHalfDeviance;
  for (std::size_t i = 1; i < rho_grid.size(); ++i) {
    const bool in_prev = out.loglik[i - 1] >= level;
    const bool in_next = out.loglik[i] >= level;
    if (in_prev == in_next) continue;
    const double t = (level - out.loglik[i - 1]) / (out.loglik[i] - out.loglik[i - 1]);
    out.crossings.push_back(rho_grid[i - 1] + t * (rho_grid[i] - rho_grid[i - 1]));
  }
  out.multimodal = out.crossings.size() > 2;
  out.ci_lo = rho_grid.front();
  out.ci_hi = rho_grid.back();
  for (double c : out.crossings)
    if (c <= out.rho_hat) out.ci_lo = c;
  for (double c : out.crossings)
    if (c >= out.rho_hat) {
      out.ci_hi = c;
      break;
    }
  return out;
}

}  // namespace ebd
