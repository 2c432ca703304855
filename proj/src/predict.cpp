#include "ebdeconv/predict.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "ebdeconv/errors.hpp"

namespace ebd {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t chain(std::uint64_t key, std::uint64_t idx) {
  return splitmix64(key ^ splitmix64(idx));
}

double to_unit(std::uint64_t v) {
  return static_cast<double>(v >> 11) * 0x1.0p-53;  // [0, 1)
}

double normal_at(std::uint64_t key, std::uint64_t counter) {
  const double u1 = to_unit(chain(key, 2 * counter));
  const double u2 = to_unit(chain(key, 2 * counter + 1));
  const double r = std::sqrt(-2.0 * std::log1p(-u1));
  return r * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t pick_atom(const std::vector<double>& weights, double u) {
  double acc = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    acc += weights[k];
    if (u < acc) return k;
  }
  return weights.size() - 1;
}

std::vector<double> sorted_column(const PredictionEnsemble& ensemble, Eigen::Index col) {
  std::vector<double> v(static_cast<std::size_t>(ensemble.paths.rows()));
  for (Eigen::Index i = 0; i < ensemble.paths.rows(); ++i)
    v[static_cast<std::size_t>(i)] = ensemble.paths(i, col);
  std::sort(v.begin(), v.end());
  return v;
}

double type7_quantile(const std::vector<double>& sorted, double p) {
  const double h = static_cast<double>(sorted.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

void validate_ensemble(const PredictionEnsemble& ensemble) {
  if (ensemble.paths.rows() == 0 || ensemble.paths.cols() == 0)
    throw ValidationError("prediction ensemble is empty");
}

}  // namespace

UnitPosterior unit_posterior(const DiscreteDistribution& H, std::span<const double> prefix,
                             double rho) {
  H.validate();
  if (!H.bivariate())
    throw ValidationError("unit posterior needs a bivariate (location, scale) distribution");
  if (prefix.size() < 2) throw ValidationError("prefix needs at least two observations");
  for (double y : prefix)
    if (!std::isfinite(y)) throw ValidationError("prefix contains a non-finite value");
  if (!std::isfinite(rho) || std::abs(rho) > 1.0)
    throw ValidationError("autoregressive coefficient must lie in [-1, 1]");

  const std::size_t k = H.size();
  UnitPosterior post;
  post.alpha = H.atoms;
  post.theta = H.second;
  post.weights.assign(k, 0.0);

  std::vector<double> logw(k);
  for (std::size_t j = 0; j < k; ++j) {
    const double mu = (1.0 - rho) * H.atoms[j];
    const double theta = H.second[j];
    double ll = H.weights[j] > 0.0 ? std::log(H.weights[j])
                                   : -std::numeric_limits<double>::infinity();
    for (std::size_t t = 1; t < prefix.size(); ++t) {
      const double d = prefix[t] - rho * prefix[t - 1] - mu;
      ll += -0.5 * (kLog2Pi + std::log(theta)) - d * d / (2.0 * theta);
    }
    logw[j] = ll;
  }

  const double shift = *std::max_element(logw.begin(), logw.end());
  if (!std::isfinite(shift))
    throw NumericError("all posterior weights underflowed for this prefix");
  double total = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    post.weights[j] = std::exp(logw[j] - shift);
    total += post.weights[j];
  }
  for (double& w : post.weights) w /= total;
  return post;
}

PredictionEnsemble simulate_paths(const UnitPosterior& post, double rho, double last_value,
                                  std::size_t horizon, std::size_t m, std::size_t M,
                                  std::uint64_t seed, DriftConvention drift) {
  if (post.size() == 0 || post.theta.size() != post.size() || post.weights.size() != post.size())
    throw ValidationError("posterior atoms, scales, and weights must align and be nonempty");
  for (std::size_t j = 0; j < post.size(); ++j) {
    if (!std::isfinite(post.alpha[j]) || !std::isfinite(post.theta[j]) || post.theta[j] < 0.0)
      throw ValidationError("posterior atoms must be finite with nonnegative scale");
    if (!(post.weights[j] >= 0.0)) throw ValidationError("posterior weights must be nonnegative");
  }
  if (horizon == 0 || m == 0 || M == 0)
    throw ValidationError("horizon and path counts must be positive");
  if (!std::isfinite(rho) || !std::isfinite(last_value))
    throw ValidationError("autoregressive coefficient and last value must be finite");

  PredictionEnsemble out;
  out.paths.resize(static_cast<Eigen::Index>(M * m), static_cast<Eigen::Index>(horizon));
  out.rho = rho;
  out.last_value = last_value;
  out.paths_per_draw = m;
  out.draws = M;
  out.seed = seed;
  out.drift = drift;

  for (std::size_t j = 0; j < M; ++j) {
    const std::uint64_t draw_key = chain(chain(seed, 1), j);
    const std::size_t atom = pick_atom(post.weights, to_unit(chain(draw_key, 0)));
    const double alpha = post.alpha[atom];
    const double sd = std::sqrt(post.theta[atom]);
    const double intercept = drift == DriftConvention::StationaryAlpha ? (1.0 - rho) * alpha
                                                                       : alpha;
    for (std::size_t p = 0; p < m; ++p) {
      const std::uint64_t path_key = chain(chain(draw_key, 2), p);
      double y = last_value;
      const auto row = static_cast<Eigen::Index>(j * m + p);
      for (std::size_t s = 0; s < horizon; ++s) {
        y = intercept + rho * y + sd * normal_at(path_key, s);
        out.paths(row, static_cast<Eigen::Index>(s)) = y;
      }
    }
  }
  return out;
}

FanBands quantile_bands(const PredictionEnsemble& ensemble, const std::vector<double>& probs) {
  validate_ensemble(ensemble);
  if (probs.empty()) throw ValidationError("quantile probabilities must be nonempty");
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] > 0.0 && probs[i] < 1.0))
      throw ValidationError("quantile probabilities must lie strictly inside (0, 1)");
    if (i > 0 && probs[i] <= probs[i - 1])
      throw ValidationError("quantile probabilities must be strictly increasing");
  }

  FanBands bands;
  bands.probs = probs;
  bands.quantiles.resize(ensemble.paths.cols(), static_cast<Eigen::Index>(probs.size()));
  for (Eigen::Index t = 0; t < ensemble.paths.cols(); ++t) {
    const std::vector<double> col = sorted_column(ensemble, t);
    for (std::size_t i = 0; i < probs.size(); ++i)
      bands.quantiles(t, static_cast<Eigen::Index>(i)) = type7_quantile(col, probs[i]);
  }
  return bands;
}

std::vector<double> default_band_probs() {
  std::vector<double> probs;
  for (int i = 1; i <= 19; ++i) probs.push_back(0.05 * i);
  return probs;
}

UniformBand uniform_band(const PredictionEnsemble& ensemble, double level) {
  validate_ensemble(ensemble);
  if (!(level > 0.0 && level < 1.0))
    throw ValidationError("coverage level must lie strictly inside (0, 1)");
  const auto n = static_cast<std::size_t>(ensemble.paths.rows());
  if (static_cast<double>(n) < 2.0 / (1.0 - level))
    throw ValidationError("too few paths to resolve the requested coverage level");
  const auto horizon = static_cast<std::size_t>(ensemble.paths.cols());

  std::vector<std::vector<double>> cols(horizon);
  for (std::size_t t = 0; t < horizon; ++t)
    cols[t] = sorted_column(ensemble, static_cast<Eigen::Index>(t));

  const auto coverage = [&](std::size_t depth) {
    std::size_t inside = 0;
    for (std::size_t i = 0; i < n; ++i) {
      bool ok = true;
      for (std::size_t t = 0; t < horizon && ok; ++t) {
        const double y = ensemble.paths(static_cast<Eigen::Index>(i),
                                        static_cast<Eigen::Index>(t));
        ok = y >= cols[t][depth - 1] && y <= cols[t][n - depth];
      }
      if (ok) ++inside;
    }
    return static_cast<double>(inside) / static_cast<double>(n);
  };

  // Coverage is nonincreasing in the rank depth, so find the deepest envelope
  // still covering the requested fraction by bisection; depth 1 is min/max and
  // always covers everything.
  std::size_t lo = 1;
  std::size_t hi = n / 2;
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo + 1) / 2;
    if (coverage(mid) >= level)
      lo = mid;
    else
      hi = mid - 1;
  }

  UniformBand band;
  band.depth = static_cast<int>(lo);
  band.achieved = coverage(lo);
  band.lower.resize(horizon);
  band.upper.resize(horizon);
  for (std::size_t t = 0; t < horizon; ++t) {
    band.lower[t] = cols[t][lo - 1];
    band.upper[t] = cols[t][n - lo];
  }
  return band;
}

std::vector<double> ensemble_increments(const PredictionEnsemble& ensemble) {
  validate_ensemble(ensemble);
  std::vector<double> inc;
  inc.reserve(static_cast<std::size_t>(ensemble.paths.size()));
  for (Eigen::Index i = 0; i < ensemble.paths.rows(); ++i) {
    double prev = ensemble.last_value;
    for (Eigen::Index t = 0; t < ensemble.paths.cols(); ++t) {
      inc.push_back(ensemble.paths(i, t) - prev);
      prev = ensemble.paths(i, t);
    }
  }
  return inc;
}

IncrementDensityTable increment_density_table(std::span<const double> increments) {
  const std::size_t n = increments.size();
  if (n < 100) throw ValidationError("increment density needs at least 100 values");
  double mean = 0.0;
  for (double v : increments) {
    if (!std::isfinite(v)) throw ValidationError("increments contain a non-finite value");
    mean += v;
  }
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : increments) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));

  std::vector<double> sorted(increments.begin(), increments.end());
  std::sort(sorted.begin(), sorted.end());
  const double iqr = type7_quantile(sorted, 0.75) - type7_quantile(sorted, 0.25);

  double spread = std::min(sd, iqr / 1.34);
  if (spread <= 0.0) spread = sd;
  if (spread <= 0.0) throw ValidationError("increments are degenerate; density is a point mass");
  const double h = 0.9 * spread * std::pow(static_cast<double>(n), -0.2);

  constexpr int kGridSize = 512;
  const double lo = sorted.front() - 3.0 * h;
  const double hi = sorted.back() + 3.0 * h;
  const double step = (hi - lo) / (kGridSize - 1);

  IncrementDensityTable table;
  const double norm = 1.0 / (static_cast<double>(n) * h * std::sqrt(2.0 * std::numbers::pi));
  for (int g = 0; g < kGridSize; ++g) {
    const double x = lo + step * g;
    double f = 0.0;
    for (double v : increments) {
      const double z = (x - v) / h;
      f += std::exp(-0.5 * z * z);
    }
    f *= norm;
    if (f <= 1e-12) continue;
    table.x.push_back(x);
    table.f.push_back(f);
    table.log_f.push_back(std::log(f));
    table.neg_inv_sqrt_f.push_back(-1.0 / std::sqrt(f));
  }
  return table;
}

IncrementDensityTable increment_density_table(const PredictionEnsemble& ensemble) {
  const std::vector<double> inc = ensemble_increments(ensemble);
  return increment_density_table(inc);
}

}  // namespace ebd
