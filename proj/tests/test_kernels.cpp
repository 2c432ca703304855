#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/SVD>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <random>

#include "ebdeconv/errors.hpp"
#include "ebdeconv/kernels.hpp"
#include "ebdeconv/quadrature.hpp"

using namespace ebd;

namespace {
constexpr double kPhi0 = 0.3989422804014327;  // standard normal density at 0
}

TEST_CASE("grid spans padded data range") {
  std::vector<double> data{-2.0, 2.0};
  Grid g = build_grid(data, 2, 0.25);
  REQUIRE(g.size() == 2);
  CHECK(g[0] == doctest::Approx(-3.0).epsilon(1e-14));
  CHECK(g[1] == doctest::Approx(3.0).epsilon(1e-14));

  std::vector<double> wide{0.0, 10.0};
  Grid d = build_grid(wide, 5);
  CHECK(d[0] == doctest::Approx(-0.5));
  CHECK(d[4] == doctest::Approx(10.5));
}

TEST_CASE("grid handles constant data with a unit window") {
  std::vector<double> data{3.5, 3.5, 3.5};
  Grid g = build_grid(data, 11, 0.05);
  REQUIRE(g.size() == 11);
  CHECK(g[0] == doctest::Approx(2.5));
  CHECK(g[10] == doctest::Approx(4.5));
  CHECK(g[5] == doctest::Approx(3.5));
}

TEST_CASE("linear, log and probability grids") {
  Grid lin = build_linear_grid(0.0, 1.0, 11);
  CHECK(lin[3] == doctest::Approx(0.3));
  CHECK(lin.points.back() == 1.0);

  Grid lg = build_log_grid(1e-2, 1e2, 5);
  REQUIRE(lg.size() == 5);
  CHECK(lg[1] == doctest::Approx(1e-1).epsilon(1e-12));
  CHECK(lg[4] == 1e2);

  Grid pg = build_prob_grid(100);
  CHECK(pg[0] == doctest::Approx(1e-4));
  CHECK(pg.points.back() == doctest::Approx(1.0 - 1e-4));

  CHECK_THROWS_AS(build_grid(std::vector<double>{}, 5), ValidationError);
  CHECK_THROWS_AS(build_grid(std::vector<double>{1.0}, 0), ValidationError);
  CHECK_THROWS_AS(build_grid(std::vector<double>{1.0}, 5, -0.1), ValidationError);
  CHECK_THROWS_AS(build_log_grid(0.0, 1.0, 5), ValidationError);
  CHECK_THROWS_AS(build_linear_grid(1.0, 0.0, 5), ValidationError);
}

TEST_CASE("gaussian kernel density") {
  KernelSpec k = KernelSpec::gaussian(2.0);
  CHECK(kernel_density(k, 0, 1.0, 1.0) == doctest::Approx(kPhi0 / 2.0).epsilon(1e-14));
  CHECK(kernel_density(k, 0, 3.0, 1.0) ==
        doctest::Approx(std::exp(-0.5) * kPhi0 / 2.0).epsilon(1e-14));

  KernelSpec het = KernelSpec::gaussian(std::vector<double>{1.0, 0.5});
  CHECK(kernel_density(het, 1, 0.0, 0.0) == doctest::Approx(2.0 * kPhi0).epsilon(1e-14));

  double mass = integrate([&](double y) { return kernel_density(k, 0, y, 1.3); },
                          1.3 - 24.0, 1.3 + 24.0, 1e-9);
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("poisson kernel density") {
  KernelSpec k = KernelSpec::poisson();
  CHECK(kernel_density(k, 0, 3.0, 2.0) ==
        doctest::Approx(std::exp(-2.0) * 8.0 / 6.0).epsilon(1e-14));
  CHECK(kernel_density(k, 0, 0.0, 0.0) == 1.0);
  CHECK(kernel_density(k, 0, 2.0, 0.0) == 0.0);
  CHECK_THROWS_AS(kernel_density(k, 0, 2.0, -1.0), ValidationError);
  CHECK_THROWS_AS(kernel_density(k, 0, 2.5, 1.0), ValidationError);

  double sum = 0.0;
  for (int y = 0; y <= 200; ++y) sum += kernel_density(k, 0, y, 3.7);
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("binomial kernel density") {
  KernelSpec k = KernelSpec::binomial(9.0);
  CHECK(kernel_density(k, 0, 9.0, 0.5) == doctest::Approx(0.001953125).epsilon(1e-13));
  CHECK_THROWS_AS(kernel_density(k, 0, 4.0, 0.0), ValidationError);
  CHECK_THROWS_AS(kernel_density(k, 0, 4.0, 1.0), ValidationError);
  CHECK_THROWS_AS(kernel_density(k, 0, 10.0, 0.5), ValidationError);

  double sum = 0.0;
  for (int y = 0; y <= 9; ++y) sum += kernel_density(k, 0, y, 0.37);
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("gamma scale kernel has mean t and unit mass") {
  KernelSpec k = KernelSpec::gamma_scale({2.5});
  double t = 1.7;
  double mass = integrate([&](double s) { return kernel_density(k, 0, s, t); }, 0.0,
                          80.0, 1e-9);
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-6));
  double mean = integrate([&](double s) { return s * kernel_density(k, 0, s, t); }, 0.0,
                          80.0, 1e-9);
  CHECK(mean == doctest::Approx(t).epsilon(1e-6));
  CHECK_THROWS_AS(kernel_density(k, 0, 1.0, 0.0), ValidationError);
}

TEST_CASE("student t location kernel matches the reference distribution") {
  KernelSpec k = KernelSpec::student_t({3.0}, {0.8});
  boost::math::students_t ref(3.0);
  for (double y : {-1.0, 0.4, 2.7}) {
    double z = (y - 0.4) / 0.8;
    CHECK(kernel_density(k, 0, y, 0.4) ==
          doctest::Approx(boost::math::pdf(ref, z) / 0.8).epsilon(1e-12));
  }
  double mass = integrate([&](double y) { return kernel_density(k, 0, y, 0.4); },
                          -2000.0, 2000.0, 1e-9);
  CHECK(mass == doctest::Approx(1.0).epsilon(2e-6));
}

TEST_CASE("likelihood matrix holds kernel values") {
  std::vector<double> y{0.0, 1.0};
  Grid grid{{0.0, 1.0}};
  KernelSpec k = KernelSpec::gaussian(1.0);
  LikelihoodMatrix L = build_likelihood_matrix(y, k, grid);
  REQUIRE(L.rows() == 2);
  REQUIRE(L.cols() == 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      CHECK(L.A(i, j) == doctest::Approx(kernel_density(k, i, y[i], grid[j])).epsilon(1e-15));
  CHECK(L.shift_sum() == 0.0);
}

TEST_CASE("likelihood matrix rejects observations with no support") {
  std::vector<double> y{0.0, 1000.0};
  Grid grid{{-1.0, 0.0, 1.0}};
  CHECK_THROWS_AS(build_likelihood_matrix(y, KernelSpec::gaussian(1.0), grid),
                  NumericError);
}

TEST_CASE("marginal density is the weighted row sum and rejects underflow") {
  std::vector<double> y{0.0, 0.5};
  Grid grid{{-0.5, 0.5}};
  LikelihoodMatrix L = build_likelihood_matrix(y, KernelSpec::gaussian(1.0), grid);
  Eigen::VectorXd g(2);
  g << 0.25, 0.75;
  Eigen::VectorXd f = marginal_density(L, g);
  CHECK(f[0] == doctest::Approx(0.25 * L.A(0, 0) + 0.75 * L.A(0, 1)).epsilon(1e-15));

  LikelihoodMatrix Z = L;
  Z.A.col(0).setZero();
  Eigen::VectorXd g0(2);
  g0 << 1.0, 0.0;
  CHECK_THROWS_AS(marginal_density(Z, g0), NumericError);
  Eigen::VectorXd bad(3);
  bad << 0.5, 0.25, 0.25;
  CHECK_THROWS_AS(marginal_density(L, bad), ValidationError);
}

TEST_CASE("kernel parameter validation") {
  std::vector<double> y{1.0, 2.0, 3.0};
  Grid grid{{0.0, 1.0}};
  KernelSpec bad = KernelSpec::gaussian(std::vector<double>{1.0, 2.0});
  CHECK_THROWS_AS(build_likelihood_matrix(y, bad, grid), ValidationError);
  CHECK_THROWS_AS(build_likelihood_matrix(y, KernelSpec::gaussian(-1.0), grid),
                  ValidationError);
  KernelSpec frac = KernelSpec::binomial(2.5);
  CHECK_THROWS_AS(build_likelihood_matrix(std::vector<double>{1.0}, frac, grid),
                  ValidationError);
}

TEST_CASE("bounded trials cap the likelihood matrix rank") {
  // 320 rows of binomial(9) counts drawn from a three-point success mixture:
  // every column is a degree-9 polynomial surface in p, so the matrix rank
  // cannot exceed 10 no matter how fine the probability grid is.
  std::mt19937_64 rng(42);
  std::vector<double> probs{0.2, 0.5, 0.8};
  std::vector<double> counts(320);
  for (auto& c : counts) {
    double p = probs[rng() % 3];
    std::binomial_distribution<int> draw(9, p);
    c = draw(rng);
  }
  Grid grid = build_prob_grid(100);
  LikelihoodMatrix L = build_likelihood_matrix(counts, KernelSpec::binomial(9.0), grid);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(L.A);
  const auto& sv = svd.singularValues();
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv[i] > 1e-10 * sv[0]) ++rank;
  CHECK(rank <= 10);
}
