#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "ebdeconv/errors.hpp"
#include "ebdeconv/kernels.hpp"
#include "ebdeconv/npmle.hpp"
#include "ebdeconv/panel.hpp"
#include "ebdeconv/statespace.hpp"

using namespace ebd;

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

// Joint covariance of the trajectory: AR(1) part plus MA(1) part.
Eigen::MatrixXd joint_cov(const ArmaParams& p, int T) {
  Eigen::MatrixXd S(T, T);
  const double ar_var = p.sigma_nu * p.sigma_nu / (1.0 - p.rho * p.rho);
  const double ma_var = p.sigma_eta * p.sigma_eta;
  for (int s = 0; s < T; ++s)
    for (int t = 0; t < T; ++t) {
      const int h = std::abs(s - t);
      double v = ar_var * std::pow(p.rho, h);
      if (h == 0) v += ma_var * (1.0 + p.theta_ma * p.theta_ma);
      if (h == 1) v += ma_var * p.theta_ma;
      S(s, t) = v;
    }
  return S;
}

double joint_loglik(const ArmaParams& p, double mu, const std::vector<double>& y) {
  const int T = static_cast<int>(y.size());
  Eigen::MatrixXd S = joint_cov(p, T);
  Eigen::VectorXd d(T);
  for (int t = 0; t < T; ++t) d[t] = y[static_cast<std::size_t>(t)] - mu;
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  REQUIRE(llt.info() == Eigen::Success);
  double logdet = 0.0;
  for (int t = 0; t < T; ++t) logdet += 2.0 * std::log(llt.matrixL()(t, t));
  const double quad = d.dot(llt.solve(d));
  return -0.5 * (T * kLog2Pi + logdet + quad);
}

// Trajectories y_t = mu + AR(1) + MA(1) with stationary starts.
PanelDataset simulate_arma_panel(std::uint64_t seed, const std::vector<double>& mus,
                                 const ArmaParams& p, std::size_t T) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  PanelDataset panel;
  for (std::size_t i = 0; i < mus.size(); ++i) {
    PanelUnit u;
    u.id = static_cast<std::int64_t>(i + 1);
    double x = p.sigma_nu / std::sqrt(1.0 - p.rho * p.rho) * z(rng);
    double prev = z(rng);
    for (std::size_t t = 0; t < T; ++t) {
      if (t > 0) x = p.rho * x + p.sigma_nu * z(rng);
      const double cur = z(rng);
      u.values.push_back(mus[i] + x + p.sigma_eta * (cur + p.theta_ma * prev));
      prev = cur;
    }
    panel.units.push_back(std::move(u));
  }
  return panel;
}

}  // namespace

TEST_CASE("parameter validation") {
  auto check = [](double r, double t, double sn, double se) {
    ArmaParams{r, t, sn, se}.validate();
  };
  CHECK_THROWS_AS(check(1.0, 0.0, 0.5, 0.5), ValidationError);
  CHECK_THROWS_AS(check(0.0, 0.0, 0.0, 0.0), ValidationError);
  CHECK_THROWS_AS(check(0.0, 0.0, -0.1, 0.5), ValidationError);
  CHECK_NOTHROW(check(0.5, 0.2, 0.3, 0.4));
  CHECK_NOTHROW(check(-0.3, 1.4, 0.0, 0.4));
}

TEST_CASE("stationary covariance solves the fixed point") {
  const ArmaParams p{0.7, 0.3, 0.4, 0.9};
  StateSpaceSystem sys = StateSpaceSystem::from_params(p);
  Eigen::Matrix3d resid = sys.initial_cov - sys.transition * sys.initial_cov *
                                                sys.transition.transpose() -
                          sys.noise_cov;
  CHECK(resid.cwiseAbs().maxCoeff() <= 1e-12);

  const double want = p.sigma_nu * p.sigma_nu / (1.0 - p.rho * p.rho) +
                      p.sigma_eta * p.sigma_eta * (1.0 + p.theta_ma * p.theta_ma);
  CHECK(sys.initial_cov(0, 0) == doctest::Approx(want).epsilon(1e-12));

  const double y = 1.17, mu = 0.4;
  const double one = arma_loglik_trajectory(p, mu, std::vector<double>{y});
  const double d = y - mu;
  CHECK(one == doctest::Approx(-0.5 * (kLog2Pi + std::log(want) + d * d / want))
                   .epsilon(1e-12));
}

TEST_CASE("pure measurement noise reduces to iid Gaussian") {
  const double se = 0.7, mu = 0.3;
  const ArmaParams p{0.0, 0.0, 0.0, se};
  const std::vector<double> y{0.1, 1.2, -0.4, 0.8, 0.0};
  double direct = 0.0;
  for (double v : y) {
    const double z = (v - mu) / se;
    direct += -0.5 * (kLog2Pi + z * z) - std::log(se);
  }
  CHECK(arma_loglik_trajectory(p, mu, y) == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("filter matches the joint Gaussian density") {
  const ArmaParams p{0.5, 0.2, 0.3, 0.4};
  const std::vector<double> y{1.3, 0.6, 1.9};
  CHECK(std::abs(arma_loglik_trajectory(p, 1.0, y) - joint_loglik(p, 1.0, y)) <= 1e-8);

  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> ur(-0.9, 0.9), ut(-1.2, 1.2), us(0.0, 1.5),
      uy(-2.0, 2.0);
  for (int rep = 0; rep < 100; ++rep) {
    ArmaParams q;
    q.rho = ur(rng);
    q.theta_ma = ut(rng);
    q.sigma_nu = rep % 10 == 0 ? 0.0 : us(rng);
    q.sigma_eta = 0.05 + us(rng);
    const int T = 1 + rep % 6;
    std::vector<double> traj(static_cast<std::size_t>(T));
    for (double& v : traj) v = uy(rng);
    const double mu = uy(rng);
    const double kf = arma_loglik_trajectory(q, mu, traj);
    const double joint = joint_loglik(q, mu, traj);
    CHECK(std::abs(kf - joint) <= 1e-8 * std::max(1.0, std::abs(joint)));
  }
}

TEST_CASE("shifting trajectory and location together preserves the likelihood") {
  const ArmaParams p{0.5, 0.2, 0.3, 0.4};
  const std::vector<double> y{1.3, 0.6, 1.9, 0.2, -0.5};
  std::vector<double> shifted = y;
  for (double& v : shifted) v += 3.7;
  CHECK(arma_loglik_trajectory(p, 0.4, y) ==
        doctest::Approx(arma_loglik_trajectory(p, 0.4 + 3.7, shifted)).epsilon(1e-9));
}

TEST_CASE("likelihood matrix shifting and bookkeeping") {
  const ArmaParams p{0.4, 0.3, 0.5, 0.6};

  PanelDataset single;
  single.units.push_back({1, {0.3, 0.9}});
  Grid point{{0.5}};
  LikelihoodMatrix one = build_arma_likelihood_matrix(p, single, point);
  CHECK(one.A(0, 0) == 1.0);
  CHECK(one.log_shift[0] ==
        doctest::Approx(arma_loglik_trajectory(p, 0.5, single.units[0].values))
            .epsilon(1e-14));

  PanelDataset panel;
  std::mt19937_64 rng(77);
  std::normal_distribution<double> z;
  for (int i = 0; i < 8; ++i) {
    PanelUnit u;
    u.id = i + 1;
    for (int t = 0; t < 5; ++t) u.values.push_back(0.3 * i + z(rng));
    panel.units.push_back(std::move(u));
  }
  Grid grid = build_linear_grid(-1.0, 3.0, 12);
  LikelihoodMatrix L = build_arma_likelihood_matrix(p, panel, grid);
  NpmleSolution sol = solve_npmle(L, grid);
  double direct = 0.0;
  for (const PanelUnit& u : panel.units) {
    std::vector<double> lw(grid.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < grid.size(); ++j) {
      lw[j] = arma_loglik_trajectory(p, grid[j], u.values);
      mx = std::max(mx, lw[j]);
    }
    double acc = 0.0;
    for (std::size_t j = 0; j < grid.size(); ++j)
      acc += std::exp(lw[j] - mx) * sol.weights[static_cast<Eigen::Index>(j)];
    direct += mx + std::log(acc);
  }
  CHECK(sol.loglik == doctest::Approx(direct).epsilon(1e-10));
}

TEST_CASE("iid parameters reproduce the Gaussian location kernel matrix") {
  const double se = 1.3;
  PanelDataset panel;
  std::vector<double> y1, y2;
  for (int i = 0; i < 12; ++i) {
    const double a = 0.2 * i - 1.0, b = 0.1 * i + 0.4;
    panel.units.push_back({i + 1, {a, b}});
    y1.push_back(a);
    y2.push_back(b);
  }
  Grid grid = build_linear_grid(-1.5, 2.0, 9);
  LikelihoodMatrix La = build_arma_likelihood_matrix({0.0, 0.0, 0.0, se}, panel, grid);
  LikelihoodMatrix L1 = build_likelihood_matrix(y1, KernelSpec::gaussian(se), grid);
  LikelihoodMatrix L2 = build_likelihood_matrix(y2, KernelSpec::gaussian(se), grid);
  for (Eigen::Index i = 0; i < La.rows(); ++i)
    for (Eigen::Index j = 0; j < La.cols(); ++j) {
      const double arma =
          La.A(i, j) * std::exp(La.log_shift[static_cast<std::size_t>(i)]);
      const double prod = L1.A(i, j) * L2.A(i, j);
      CHECK(arma == doctest::Approx(prod).epsilon(1e-12));
    }
}

TEST_CASE("mixture optimum value is invariant to column order") {
  const ArmaParams p{0.5, 0.15, 0.2, 0.5};
  PanelDataset panel =
      simulate_arma_panel(555, std::vector<double>(60, 0.0), p, 8);
  for (std::size_t i = 0; i < panel.units.size(); ++i)
    if (i % 2 == 1)
      for (double& v : panel.units[i].values) v += 2.0;

  Grid grid = build_linear_grid(-1.5, 3.5, 40);
  LikelihoodMatrix L = build_arma_likelihood_matrix(p, panel, grid);
  NpmleSolution sol = solve_npmle(L, grid);

  Grid rev = grid;
  std::reverse(rev.points.begin(), rev.points.end());
  LikelihoodMatrix Lr = L;
  Lr.A = L.A.rowwise().reverse().eval();
  NpmleSolution sol_r = solve_npmle(Lr, rev);
  CHECK(sol.loglik == doctest::Approx(sol_r.loglik).epsilon(1e-6));
  CHECK(sol.certified);
  CHECK(sol_r.certified);
}

TEST_CASE("pure autoregression matches the quasi-differenced panel likelihood") {
  const double rho = 0.6, sn = 0.8;
  const ArmaParams p{rho, 0.0, sn, 0.0};
  PanelDataset panel;
  panel.units.push_back({1, {0.4, 1.2, 0.1, 0.9, 0.7, -0.2}});
  panel.units.push_back({2, {2.0, 1.1, 1.8, 2.4, 1.5}});
  SufficientStats st = sufficient_stats(panel, rho);
  const double theta = sn * sn;

  for (double mu : {0.2, 0.9, -0.4}) {
    double kf = 0.0, initial = 0.0;
    for (const PanelUnit& u : panel.units) {
      kf += arma_loglik_trajectory(p, mu, u.values);
      const double v0 = theta / (1.0 - rho * rho);
      const double d = u.values[0] - mu;
      initial += -0.5 * (kLog2Pi + std::log(v0) + d * d / v0);
    }
    double conditional = sufficient_loglik_constant(st);
    for (std::size_t i = 0; i < st.size(); ++i) {
      const double m = st.len[i];
      const double dv = st.mean[i] - (1.0 - rho) * mu;
      conditional += -0.5 * (kLog2Pi + std::log(theta / m) + dv * dv / (theta / m));
      const double r = st.shape[i];
      conditional += (r - 1.0) * std::log(st.var[i]) - st.var[i] * r / theta -
                     std::lgamma(r) - r * std::log(theta / r);
    }
    CHECK(std::abs(kf - initial - conditional) <= 1e-8);
  }
}

TEST_CASE("lattice construction and failure bookkeeping") {
  std::vector<ArmaParams> lattice =
      build_arma_lattice({0.2, 0.5}, {0.1}, {0.0, 0.3}, {0.5});
  REQUIRE(lattice.size() == 4);
  CHECK(lattice[0].rho == 0.2);
  CHECK(lattice[0].sigma_nu == 0.0);
  CHECK(lattice[1].sigma_nu == 0.3);
  CHECK(lattice[3].rho == 0.5);
  CHECK_THROWS_AS(build_arma_lattice({}, {0.0}, {0.1}, {0.5}), ValidationError);

  PanelDataset panel =
      simulate_arma_panel(81, {0.0, 1.0, -0.5, 0.3, 0.8, 0.1}, {0.3, 0.1, 0.2, 0.5}, 6);
  Grid grid = build_linear_grid(-1.5, 2.0, 15);

  std::vector<ArmaParams> mixed{{0.3, 0.1, 0.2, 0.5}, {0.3, 0.1, 0.0, 0.0}};
  ArmaProfileFit fit = fit_arma_profile(panel, mixed, grid);
  REQUIRE(fit.table.size() == 2);
  CHECK(!fit.table[0].failed);
  CHECK(fit.table[1].failed);
  CHECK(!fit.table[1].error.empty());
  CHECK(fit.best_index == 0);
  CHECK(fit.g_mu.certified);

  ArmaProfileFit single = fit_arma_profile(panel, {{0.3, 0.1, 0.2, 0.5}}, grid);
  CHECK(single.best_index == 0);
  CHECK(single.best.rho == 0.3);

  CHECK_THROWS_AS(fit_arma_profile(panel, {{0.3, 0.1, 0.0, 0.0}}, grid), NumericError);
  CHECK_THROWS_AS(fit_arma_profile(panel, {}, grid), ValidationError);
}

TEST_CASE("profile argmax lands on simulated truth over a local lattice") {
  const ArmaParams truth{0.5, 0.15, 0.2, 0.5};
  const std::size_t n = 250, T = 12;
  std::vector<double> mus(n);
  for (std::size_t i = 0; i < n; ++i) mus[i] = (i % 2 == 0) ? -1.0 : 1.0;
  PanelDataset panel = simulate_arma_panel(9119, mus, truth, T);

  std::vector<double> unit_means(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : panel.units[i].values) s += v;
    unit_means[i] = s / static_cast<double>(T);
  }
  Grid mu_grid = build_grid(unit_means, 50);

  std::vector<ArmaParams> lattice = build_arma_lattice(
      {0.45, 0.5, 0.55}, {0.10, 0.15, 0.20}, {truth.sigma_nu}, {truth.sigma_eta});
  ArmaProfileFit fit = fit_arma_profile(panel, lattice, mu_grid);
  for (const ArmaLatticePoint& row : fit.table) {
    CHECK(!row.failed);
    CHECK(row.certified);
  }
  CHECK(fit.best.rho == 0.5);
  CHECK(fit.best.theta_ma == 0.15);

  std::vector<std::size_t> top = top_lattice_indices(fit.table, 5);
  REQUIRE(top.size() == 5);
  CHECK(top[0] == fit.best_index);
  CHECK(fit.table[top[0]].loglik >= fit.table[top[1]].loglik);

  double low = 0.0, high = 0.0;
  for (std::size_t j = 0; j < fit.g_mu.mixing.size(); ++j) {
    if (std::abs(fit.g_mu.mixing.atoms[j] + 1.0) <= 0.35)
      low += fit.g_mu.mixing.weights[j];
    if (std::abs(fit.g_mu.mixing.atoms[j] - 1.0) <= 0.35)
      high += fit.g_mu.mixing.weights[j];
  }
  CHECK(low >= 0.35);
  CHECK(high >= 0.35);
}
