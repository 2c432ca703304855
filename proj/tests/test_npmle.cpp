#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ebdeconv/errors.hpp"
#include "ebdeconv/kernels.hpp"
#include "ebdeconv/npmle.hpp"
#include "testutil.hpp"

using namespace ebd;

namespace {

NpmleSolution solve_gaussian(const std::vector<double>& y, std::size_t m,
                             SolverConfig cfg = {}) {
  Grid grid = build_grid(y, m);
  LikelihoodMatrix L = build_likelihood_matrix(y, KernelSpec::gaussian(1.0), grid);
  return solve_npmle(L, grid, cfg);
}

}  // namespace

TEST_CASE("constant data collapses to a point mass") {
  std::vector<double> y(40, 2.0);
  Grid grid{{1.0, 2.0, 3.0}};
  LikelihoodMatrix L = build_likelihood_matrix(y, KernelSpec::gaussian(1.0), grid);
  NpmleSolution sol = solve_npmle(L, grid);
  REQUIRE(sol.mixing.size() == 1);
  CHECK(sol.mixing.atoms[0] == 2.0);
  CHECK(sol.mixing.weights[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sol.loglik == doctest::Approx(40.0 * std::log(0.3989422804014327)).epsilon(1e-12));
  CHECK(sol.certified);
  CHECK(sol.kkt_gap <= 1e-6);
}

TEST_CASE("well separated clusters recover exact proportions") {
  // With clusters 10 kernel widths apart the cross terms underflow, so the
  // exact optimum puts the empirical proportions on the two support points.
  std::vector<double> y;
  for (int i = 0; i < 30; ++i) y.push_back(-5.0);
  for (int i = 0; i < 70; ++i) y.push_back(5.0);
  Grid grid{{-5.0, 5.0}};
  LikelihoodMatrix L = build_likelihood_matrix(y, KernelSpec::gaussian(0.1), grid);
  NpmleSolution sol = solve_npmle(L, grid);
  REQUIRE(sol.mixing.size() == 2);
  CHECK(sol.mixing.weights[0] == doctest::Approx(0.3).epsilon(1e-9));
  CHECK(sol.mixing.weights[1] == doctest::Approx(0.7).epsilon(1e-9));
  CHECK(sol.certified);

  // golden-section scan of the one-free-parameter likelihood as an oracle
  auto negll = [&](double w) {
    Eigen::VectorXd g(2);
    g << w, 1.0 - w;
    Eigen::VectorXd f = L.A * g;
    return -f.array().log().sum();
  };
  double lo = 1e-9, hi = 1.0 - 1e-9, phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = hi - phi * (hi - lo), d = lo + phi * (hi - lo);
  for (int it = 0; it < 200; ++it) {
    if (negll(c) < negll(d)) {
      hi = d;
    } else {
      lo = c;
    }
    c = hi - phi * (hi - lo);
    d = lo + phi * (hi - lo);
  }
  double w_star = 0.5 * (lo + hi);
  CHECK(sol.mixing.weights[0] == doctest::Approx(w_star).epsilon(1e-7));
  CHECK(-negll(w_star) <= sol.loglik + 1e-9);
}

TEST_CASE("interior point at least matches a long fixed-point run") {
  std::mt19937_64 rng(11);
  std::vector<double> y = mixture_sample(rng, 400, {-1.5, 0.0, 2.0}, {0.3, 0.4, 0.3});
  Grid grid = build_grid(y, 120);
  LikelihoodMatrix L = build_likelihood_matrix(y, KernelSpec::gaussian(1.0), grid);

  SolverConfig ip;
  ip.tol = 1e-8;
  NpmleSolution fast = solve_npmle(L, grid, ip);
  CHECK(fast.certified);
  CHECK(fast.kkt_gap <= 1e-8);

  SolverConfig em;
  em.algorithm = SolverConfig::Algorithm::EmBaseline;
  em.max_iter = 10000;
  NpmleSolution slow = solve_npmle(L, grid, em);
  CHECK(fast.loglik >= slow.loglik - 1e-6);
  CHECK(fast.loglik - slow.loglik <= 0.5);  // same basin; EM is just far slower
}

TEST_CASE("fixed point sweep never decreases the objective") {
  std::mt19937_64 rng(5);
  std::vector<double> y = mixture_sample(rng, 150, {-1.0, 1.0}, {0.5, 0.5});
  Grid grid = build_grid(y, 40);
  LikelihoodMatrix L = build_likelihood_matrix(y, KernelSpec::gaussian(1.0), grid);
  Eigen::VectorXd g = Eigen::VectorXd::Constant(40, 1.0 / 40.0);
  double prev = marginal_density(L, g).array().log().sum();
  for (int it = 0; it < 300; ++it) {
    g = em_step(L, g);
    double cur = marginal_density(L, g).array().log().sum();
    REQUIRE(cur >= prev - 1e-12);
    prev = cur;
  }
  CHECK(std::abs(g.sum() - 1.0) <= 1e-12);
}

TEST_CASE("certificate quantities at the optimum") {
  std::mt19937_64 rng(23);
  std::vector<double> y = mixture_sample(rng, 300, {0.0, 3.0}, {0.6, 0.4});
  NpmleSolution sol = solve_gaussian(y, 100);
  REQUIRE(sol.certified);

  Grid grid = build_grid(y, 100);
  LikelihoodMatrix L = build_likelihood_matrix(y, KernelSpec::gaussian(1.0), grid);
  Eigen::VectorXd d = kkt_residual(L, sol.weights);
  CHECK(d.maxCoeff() <= 1e-6);
  CHECK(d.maxCoeff() == doctest::Approx(sol.kkt_gap).epsilon(1e-9));
  for (Eigen::Index j = 0; j < sol.weights.size(); ++j)
    if (sol.weights[j] > 1e-3) CHECK(std::abs(d[j]) <= 1e-6);

  // weak duality bracket: dual value never exceeds the primal objective and
  // the gap is within the certificate tolerance
  REQUIRE(sol.dual.minCoeff() > 0.0);
  Eigen::VectorXd colsum = L.A.transpose() * sol.dual;
  CHECK(colsum.maxCoeff() <= 300.0 * (1.0 + 1e-12));
  double dual_value = sol.dual.array().log().sum();
  double primal_value = sol.loglik;  // sum log f at the fitted weights
  CHECK(dual_value <= -primal_value + 1e-9);
  CHECK(-primal_value - dual_value <= 1e-6);
}

TEST_CASE("row permutation leaves the fit unchanged") {
  std::mt19937_64 rng(31);
  std::vector<double> y = mixture_sample(rng, 120, {-2.0, 1.0}, {0.5, 0.5});
  Grid grid = build_grid(y, 60);
  LikelihoodMatrix L = build_likelihood_matrix(y, KernelSpec::gaussian(1.0), grid);
  NpmleSolution a = solve_npmle(L, grid);

  std::vector<double> y2 = y;
  std::shuffle(y2.begin(), y2.end(), rng);
  LikelihoodMatrix L2 = build_likelihood_matrix(y2, KernelSpec::gaussian(1.0), grid);
  NpmleSolution b = solve_npmle(L2, grid);
  REQUIRE(a.weights.size() == b.weights.size());
  CHECK((a.weights - b.weights).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK(a.loglik == doctest::Approx(b.loglik).epsilon(1e-10));
}

TEST_CASE("per-row scaling with recorded shifts changes nothing but the level") {
  std::mt19937_64 rng(77);
  std::vector<double> y = mixture_sample(rng, 100, {0.0, 2.5}, {0.5, 0.5});
  Grid grid = build_grid(y, 50);
  LikelihoodMatrix L = build_likelihood_matrix(y, KernelSpec::gaussian(1.0), grid);
  NpmleSolution plain = solve_npmle(L, grid);

  LikelihoodMatrix shifted = L;
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (Eigen::Index i = 0; i < L.rows(); ++i) {
    double s = u(rng);
    shifted.log_shift[static_cast<std::size_t>(i)] = s;
    shifted.A.row(i) *= std::exp(-s);
  }
  NpmleSolution scaled = solve_npmle(shifted, grid);
  CHECK((plain.weights - scaled.weights).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK(plain.loglik == doctest::Approx(scaled.loglik).epsilon(1e-10));
  CHECK(plain.kkt_gap == doctest::Approx(scaled.kkt_gap).epsilon(1e-6));
}

TEST_CASE("column sampling path certifies on wide grids") {
  std::mt19937_64 rng(13);
  std::vector<double> y = mixture_sample(rng, 250, {-1.0, 0.5, 3.0}, {0.25, 0.5, 0.25});
  Grid grid = build_grid(y, 900);
  LikelihoodMatrix L = build_likelihood_matrix(y, KernelSpec::gaussian(1.0), grid);
  NpmleSolution sol = solve_npmle(L, grid);
  CHECK(sol.certified);
  CHECK(sol.kkt_gap <= 1e-6);

  SolverConfig em;
  em.algorithm = SolverConfig::Algorithm::EmBaseline;
  em.max_iter = 3000;
  NpmleSolution base = solve_npmle(L, grid, em);
  CHECK(sol.loglik >= base.loglik - 1e-6);
}

TEST_CASE("support stays logarithmic in the sample size") {
  // sub-Gaussian mixing: five atoms on [-2, 3]; n = 1000 per replication
  std::mt19937_64 rng(2024);
  int worst = 0;
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> y = mixture_sample(
        rng, 1000, {-2.0, -0.5, 0.0, 1.0, 3.0}, {0.2, 0.2, 0.2, 0.2, 0.2});
    NpmleSolution sol = solve_gaussian(y, 150);
    REQUIRE(sol.certified);
    worst = std::max(worst, static_cast<int>(sol.mixing.size()));
  }
  CHECK(worst <= static_cast<int>(6.0 * std::log(1000.0)));  // about 41
}

TEST_CASE("pruning drops light atoms and renormalizes") {
  DiscreteDistribution d;
  d.atoms = {0.0, 1.0, 2.0};
  d.weights = {0.5, 0.3, 0.2};
  DiscreteDistribution p = prune_atoms(d, 0.25);
  REQUIRE(p.size() == 2);
  CHECK(p.weights[0] == doctest::Approx(0.625).epsilon(1e-14));
  CHECK(p.weights[1] == doctest::Approx(0.375).epsilon(1e-14));

  DiscreteDistribution id = prune_atoms(d, 0.0);
  CHECK(id.size() == 3);
  CHECK(id.weights[1] == doctest::Approx(0.3).epsilon(1e-14));

  DiscreteDistribution tiny;
  tiny.atoms = {0.0, 1.0};
  tiny.weights = {0.9995, 0.0005};
  DiscreteDistribution q = prune_atoms(tiny, 1e-3);
  REQUIRE(q.size() == 1);
  CHECK(q.weights[0] == 1.0);

  CHECK_THROWS_AS(prune_atoms(d, 0.9), ValidationError);
  CHECK_THROWS_AS(prune_atoms(d, -0.1), ValidationError);
}

TEST_CASE("solver input validation") {
  std::vector<double> y{0.0, 1.0};
  Grid grid{{0.0, 1.0}};
  LikelihoodMatrix L = build_likelihood_matrix(y, KernelSpec::gaussian(1.0), grid);
  SolverConfig bad;
  bad.tol = 0.0;
  CHECK_THROWS_AS(solve_npmle(L, grid, bad), ValidationError);
  bad = SolverConfig{};
  bad.max_iter = 0;
  CHECK_THROWS_AS(solve_npmle(L, grid, bad), ValidationError);
  CHECK_THROWS_AS(solve_npmle(L, {0.0}, {}, SolverConfig{}), ValidationError);

  Eigen::VectorXd g(3);
  g << 0.5, 0.25, 0.25;
  CHECK_THROWS_AS(em_step(L, g), ValidationError);
  CHECK_THROWS_AS(kkt_residual(L, g), ValidationError);
}
