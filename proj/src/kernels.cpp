#include "ebdeconv/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ebdeconv/errors.hpp"

namespace ebd {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double lchoose(double n, double k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

void check_param_vec(const std::vector<double>& v, std::size_t n, const char* name,
                     bool positive) {
  if (v.empty())
    throw ValidationError(std::string("kernel: missing parameter '") + name + "'");
  if (v.size() != 1 && v.size() != n)
    throw ValidationError(std::string("kernel: parameter '") + name +
                          "' must broadcast or match the data length");
  if (positive)
    for (double x : v)
      if (!(x > 0.0) || !std::isfinite(x))
        throw ValidationError(std::string("kernel: parameter '") + name +
                              "' must be positive and finite");
}

}  // namespace

KernelSpec KernelSpec::gaussian(double sd) { return gaussian(std::vector<double>{sd}); }

KernelSpec KernelSpec::gaussian(std::vector<double> sds) {
  KernelSpec k;
  k.family = KernelFamily::GaussianLocation;
  k.sd = std::move(sds);
  return k;
}

KernelSpec KernelSpec::poisson() {
  KernelSpec k;
  k.family = KernelFamily::Poisson;
  return k;
}

KernelSpec KernelSpec::binomial(double trials) { return binomial(std::vector<double>{trials}); }

KernelSpec KernelSpec::binomial(std::vector<double> trials) {
  KernelSpec k;
  k.family = KernelFamily::Binomial;
  k.trials = std::move(trials);
  return k;
}

KernelSpec KernelSpec::gamma_scale(std::vector<double> shapes) {
  KernelSpec k;
  k.family = KernelFamily::GammaScale;
  k.shape = std::move(shapes);
  return k;
}

KernelSpec KernelSpec::student_t(std::vector<double> dfs, std::vector<double> scales) {
  KernelSpec k;
  k.family = KernelFamily::StudentTLocation;
  k.df = std::move(dfs);
  k.scale = std::move(scales);
  return k;
}

double KernelSpec::param(const std::vector<double>& v, std::size_t i) const {
  return v.size() == 1 ? v[0] : v[i];
}

void KernelSpec::validate(std::size_t n_obs) const {
  switch (family) {
    case KernelFamily::GaussianLocation:
      check_param_vec(sd, n_obs, "sd", true);
      break;
    case KernelFamily::Poisson:
      break;
    case KernelFamily::Binomial:
      check_param_vec(trials, n_obs, "trials", true);
      for (double m : trials)
        if (m != std::floor(m) || m < 1.0)
          throw ValidationError("kernel: trial counts must be positive integers");
      break;
    case KernelFamily::GammaScale:
      check_param_vec(shape, n_obs, "shape", true);
      break;
    case KernelFamily::StudentTLocation:
      check_param_vec(df, n_obs, "df", true);
      check_param_vec(scale, n_obs, "scale", true);
      break;
  }
}

Grid build_grid(std::span<const double> data, std::size_t m, double padding) {
  if (data.empty()) throw ValidationError("grid: no data");
  if (m == 0) throw ValidationError("grid: zero points requested");
  if (!(padding >= 0.0)) throw ValidationError("grid: negative padding");
  auto [lo_it, hi_it] = std::minmax_element(data.begin(), data.end());
  double lo = *lo_it, hi = *hi_it;
  if (!std::isfinite(lo) || !std::isfinite(hi))
    throw ValidationError("grid: non-finite data");
  if (lo == hi) {
    lo -= 1.0;
    hi += 1.0;
  } else {
    double pad = padding * (hi - lo);
    lo -= pad;
    hi += pad;
  }
  return build_linear_grid(lo, hi, m);
}

Grid build_linear_grid(double lo, double hi, std::size_t m) {
  if (m == 0) throw ValidationError("grid: zero points requested");
  if (!(hi >= lo)) throw ValidationError("grid: upper end below lower end");
  Grid g;
  if (m == 1 || hi == lo) {
    g.points.assign(1, 0.5 * (lo + hi));
    return g;
  }
  g.points.resize(m);
  double step = (hi - lo) / static_cast<double>(m - 1);
  for (std::size_t j = 0; j < m; ++j) g.points[j] = lo + step * static_cast<double>(j);
  g.points.back() = hi;
  return g;
}

Grid build_log_grid(double lo, double hi, std::size_t m) {
  if (!(lo > 0.0)) throw ValidationError("grid: log spacing needs positive lower end");
  if (!(hi >= lo)) throw ValidationError("grid: upper end below lower end");
  if (hi == lo) return Grid{{lo}};
  Grid g = build_linear_grid(std::log(lo), std::log(hi), m);
  for (double& x : g.points) x = std::exp(x);
  g.points.back() = hi;
  return g;
}

Grid build_prob_grid(std::size_t m, double eps) {
  if (!(eps > 0.0 && eps < 0.5)) throw ValidationError("grid: probability margin out of range");
  return build_linear_grid(eps, 1.0 - eps, m);
}

double log_kernel_density(const KernelSpec& k, std::size_t i, double y, double t) {
  switch (k.family) {
    case KernelFamily::GaussianLocation: {
      double sd = k.param(k.sd, i);
      double z = (y - t) / sd;
      return -0.5 * z * z - std::log(sd) - 0.5 * kLog2Pi;
    }
    case KernelFamily::Poisson: {
      if (!(t >= 0.0)) throw ValidationError("kernel: Poisson mean must be nonnegative");
      if (y < 0.0 || y != std::floor(y))
        throw ValidationError("kernel: Poisson data must be nonnegative integers");
      if (t == 0.0) return y == 0.0 ? 0.0 : kNegInf;
      return y * std::log(t) - t - std::lgamma(y + 1.0);
    }
    case KernelFamily::Binomial: {
      double m = k.param(k.trials, i);
      if (!(t > 0.0 && t < 1.0))
        throw ValidationError("kernel: binomial probability must lie in (0, 1)");
      if (y < 0.0 || y > m || y != std::floor(y))
        throw ValidationError("kernel: binomial count outside 0..trials");
      return lchoose(m, y) + y * std::log(t) + (m - y) * std::log1p(-t);
    }
    case KernelFamily::GammaScale: {
      double r = k.param(k.shape, i);
      if (!(t > 0.0)) throw ValidationError("kernel: gamma mean must be positive");
      if (y < 0.0) return kNegInf;
      double b = t / r;
      if (y == 0.0) {
        if (r > 1.0) return kNegInf;
        if (r == 1.0) return -std::log(b);
        return std::numeric_limits<double>::infinity();
      }
      return (r - 1.0) * std::log(y) - y / b - std::lgamma(r) - r * std::log(b);
    }
    case KernelFamily::StudentTLocation: {
      double v = k.param(k.df, i);
      double s = k.param(k.scale, i);
      double z = (y - t) / s;
      return std::lgamma(0.5 * (v + 1.0)) - std::lgamma(0.5 * v) -
             0.5 * std::log(v * M_PI) - std::log(s) -
             0.5 * (v + 1.0) * std::log1p(z * z / v);
    }
  }
  throw ValidationError("kernel: unknown family");
}

double kernel_density(const KernelSpec& k, std::size_t i, double y, double t) {
  return std::exp(log_kernel_density(k, i, y, t));
}

LikelihoodMatrix build_likelihood_matrix(std::span<const double> data,
                                         const KernelSpec& kernel, const Grid& grid) {
  if (data.empty()) throw ValidationError("likelihood matrix: no data");
  if (grid.size() == 0) throw ValidationError("likelihood matrix: empty grid");
  kernel.validate(data.size());
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto m = static_cast<Eigen::Index>(grid.size());
  LikelihoodMatrix L;
  L.A.resize(n, m);
  L.log_shift.assign(data.size(), 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    double row_max = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      double a = std::exp(log_kernel_density(kernel, static_cast<std::size_t>(i),
                                             data[static_cast<std::size_t>(i)],
                                             grid[static_cast<std::size_t>(j)]));
      if (!std::isfinite(a))
        throw NumericError("likelihood matrix: non-finite density at row " +
                           std::to_string(i));
      L.A(i, j) = a;
      row_max = std::max(row_max, a);
    }
    if (row_max < 1e-300)
      throw NumericError("likelihood matrix: observation " + std::to_string(i) +
                         " (value " + std::to_string(data[static_cast<std::size_t>(i)]) +
                         ") has vanishing density on the whole grid");
  }
  return L;
}

Eigen::VectorXd marginal_density(const LikelihoodMatrix& L, const Eigen::VectorXd& g) {
  if (g.size() != L.cols())
    throw ValidationError("marginal density: weight length does not match grid");
  Eigen::VectorXd f = L.A * g;
  for (Eigen::Index i = 0; i < f.size(); ++i)
    if (!(f[i] > 0.0))
      throw NumericError("marginal density: underflow at observation " + std::to_string(i));
  return f;
}

}  // namespace ebd
