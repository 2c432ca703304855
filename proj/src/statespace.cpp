#include "ebdeconv/statespace.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ebdeconv/errors.hpp"

namespace ebd {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

bool lex_less(const ArmaParams& a, const ArmaParams& b) {
  if (a.rho != b.rho) return a.rho < b.rho;
  if (a.theta_ma != b.theta_ma) return a.theta_ma < b.theta_ma;
  if (a.sigma_nu != b.sigma_nu) return a.sigma_nu < b.sigma_nu;
  return a.sigma_eta < b.sigma_eta;
}

}  // namespace

void ArmaParams::validate() const {
  if (!std::isfinite(rho) || !std::isfinite(theta_ma) || !std::isfinite(sigma_nu) ||
      !std::isfinite(sigma_eta))
    throw ValidationError("arma: non-finite parameter");
  if (!(std::abs(rho) < 1.0)) throw ValidationError("arma: |rho| must be below 1");
  if (sigma_nu < 0.0 || sigma_eta < 0.0)
    throw ValidationError("arma: innovation scales must be nonnegative");
  if (sigma_nu == 0.0 && sigma_eta == 0.0)
    throw ValidationError("arma: at least one innovation scale must be positive");
}

StateSpaceSystem StateSpaceSystem::from_params(const ArmaParams& p) {
  p.validate();
  StateSpaceSystem sys;
  sys.transition.setZero();
  sys.transition(0, 0) = p.rho;
  sys.transition(0, 1) = 1.0;
  sys.transition(1, 2) = 1.0;

  Eigen::Matrix<double, 3, 2> load;
  load << p.sigma_eta, p.sigma_nu,
      p.sigma_eta * (p.theta_ma - p.rho), 0.0,
      -p.theta_ma * p.rho * p.sigma_eta, 0.0;
  sys.noise_cov = load * load.transpose();

  // Stationary covariance: P = T P T' + Q via the vectorized linear system.
  Eigen::Matrix<double, 9, 9> lhs = Eigen::Matrix<double, 9, 9>::Identity();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      lhs.block<3, 3>(3 * i, 3 * j) -= sys.transition(i, j) * sys.transition;
  Eigen::Matrix<double, 9, 1> q;
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) q[3 * j + i] = sys.noise_cov(i, j);
  Eigen::Matrix<double, 9, 1> v = lhs.fullPivLu().solve(q);
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) sys.initial_cov(i, j) = v[3 * j + i];
  sys.initial_cov = (0.5 * (sys.initial_cov + sys.initial_cov.transpose())).eval();
  return sys;
}

double arma_loglik_trajectory(const StateSpaceSystem& sys, double mu,
                              std::span<const double> traj) {
  if (traj.empty()) throw ValidationError("arma: empty trajectory");
  if (!std::isfinite(mu)) throw ValidationError("arma: non-finite location");

  Eigen::Vector3d a = Eigen::Vector3d::Zero();
  Eigen::Matrix3d P = sys.initial_cov;
  double ll = 0.0;
  for (double y : traj) {
    if (!std::isfinite(y)) throw ValidationError("arma: non-finite trajectory value");
    const double f = P(0, 0);
    if (!(f > 1e-300) || !std::isfinite(f))
      throw NumericError("arma: degenerate innovation variance in the filter");
    const double resid = y - mu - a[0];
    ll -= 0.5 * (kLog2Pi + std::log(f) + resid * resid / f);

    const Eigen::Vector3d gain = P.col(0) / f;
    const Eigen::RowVector3d top = P.row(0);
    a += gain * resid;
    P.noalias() -= gain * top;
    a = (sys.transition * a).eval();
    P = (sys.transition * P * sys.transition.transpose() + sys.noise_cov).eval();
    P = (0.5 * (P + P.transpose())).eval();
  }
  return ll;
}

double arma_loglik_trajectory(const ArmaParams& params, double mu,
                              std::span<const double> traj) {
  return arma_loglik_trajectory(StateSpaceSystem::from_params(params), mu, traj);
}

LikelihoodMatrix build_arma_likelihood_matrix(const ArmaParams& params,
                                              const PanelDataset& panel,
                                              const Grid& mu_grid) {
  panel.validate();
  if (mu_grid.size() == 0) throw ValidationError("arma: empty location grid");
  const StateSpaceSystem sys = StateSpaceSystem::from_params(params);

  const auto n = static_cast<Eigen::Index>(panel.units.size());
  const auto m = static_cast<Eigen::Index>(mu_grid.size());
  LikelihoodMatrix L;
  L.A.resize(n, m);
  L.log_shift.assign(panel.units.size(), 0.0);
  std::vector<double> row(mu_grid.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const PanelUnit& u = panel.units[static_cast<std::size_t>(i)];
    double row_max = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < mu_grid.size(); ++j) {
      row[j] = arma_loglik_trajectory(sys, mu_grid[j], u.values);
      row_max = std::max(row_max, row[j]);
    }
    if (!std::isfinite(row_max))
      throw NumericError("arma: trajectory for unit " + std::to_string(u.id) +
                         " has degenerate likelihood on the whole grid");
    for (std::size_t j = 0; j < mu_grid.size(); ++j)
      L.A(i, static_cast<Eigen::Index>(j)) = std::exp(row[j] - row_max);
    L.log_shift[static_cast<std::size_t>(i)] = row_max;
  }
  return L;
}

std::vector<ArmaParams> build_arma_lattice(const std::vector<double>& rhos,
                                           const std::vector<double>& theta_mas,
                                           const std::vector<double>& sigma_nus,
                                           const std::vector<double>& sigma_etas) {
  if (rhos.empty() || theta_mas.empty() || sigma_nus.empty() || sigma_etas.empty())
    throw ValidationError("arma lattice: empty coordinate range");
  std::vector<ArmaParams> lattice;
  lattice.reserve(rhos.size() * theta_mas.size() * sigma_nus.size() * sigma_etas.size());
  for (double r : rhos)
    for (double t : theta_mas)
      for (double sn : sigma_nus)
        for (double se : sigma_etas) lattice.push_back({r, t, sn, se});
  return lattice;
}

ArmaProfileFit fit_arma_profile(const PanelDataset& panel,
                                const std::vector<ArmaParams>& lattice, const Grid& mu_grid,
                                const SolverConfig& cfg) {
  if (lattice.empty()) throw ValidationError("arma profile: empty lattice");
  panel.validate();

  ArmaProfileFit fit;
  fit.table.resize(lattice.size());
  const std::size_t npos = lattice.size();
  std::size_t best = npos;
  for (std::size_t idx = 0; idx < lattice.size(); ++idx) {
    ArmaLatticePoint& row = fit.table[idx];
    row.params = lattice[idx];
    try {
      LikelihoodMatrix L = build_arma_likelihood_matrix(lattice[idx], panel, mu_grid);
      NpmleSolution sol = solve_npmle(L, mu_grid, cfg);
      row.loglik = sol.loglik;
      row.certified = sol.certified;
      const bool better =
          best == npos || row.loglik > fit.table[best].loglik ||
          (row.loglik == fit.table[best].loglik && lex_less(row.params, fit.best));
      if (better) {
        best = idx;
        fit.best = row.params;
        fit.g_mu = std::move(sol);
      }
    } catch (const std::runtime_error& e) {
      row.loglik = std::numeric_limits<double>::quiet_NaN();
      row.failed = true;
      row.error = e.what();
    }
  }
  if (best == npos)
    throw NumericError("arma profile: every lattice point failed: " +
                       fit.table.front().error);
  fit.best_index = best;
  return fit;
}

std::vector<std::size_t> top_lattice_indices(const std::vector<ArmaLatticePoint>& table,
                                             std::size_t k) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < table.size(); ++i)
    if (!table[i].failed) order.push_back(i);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (table[a].loglik != table[b].loglik) return table[a].loglik > table[b].loglik;
    return lex_less(table[a].params, table[b].params);
  });
  if (order.size() > k) order.resize(k);
  return order;
}

}  // namespace ebd
