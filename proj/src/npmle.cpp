#include "ebdeconv/npmle.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "ebdeconv/errors.hpp"
#include "ebdeconv/kernels.hpp"

#if defined(__SSE2__)
#include <xmmintrin.h>
#endif

namespace ebd {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Likelihood tails produce swarms of subnormal products that run orders of
// magnitude slower than normal arithmetic; flush them to zero while solving.
struct FlushDenormals {
#if defined(__SSE2__)
  unsigned int saved = _mm_getcsr();
  FlushDenormals() { _mm_setcsr(saved | 0x8040); }  // FTZ | DAZ
  ~FlushDenormals() { _mm_setcsr(saved); }
#endif
};

constexpr Index kRestrictAbove = 600;   // barrier works on a column sample past this
constexpr Index kRestrictTarget = 384;  // size of that sample
constexpr Index kAddPerRound = 64;      // violated columns added per refinement round
constexpr int kRefineRounds = 60;

// Maximizes t * sum(log nu) + sum(log s), s = n - A^T nu, by damped Newton
// steps with a feasibility-capped line search. The Hessian solve goes through
// the smaller of the two dimensions: a direct n x n Cholesky, or the Woodbury
// identity through a k x k system when there are fewer columns than rows.
struct Barrier {
  const MatrixXd& A;
  VectorXd nu, s;
  double t = 1.0;
  int steps = 0;

  explicit Barrier(const MatrixXd& A_) : A(A_) {}

  void refresh_slack() {
    s = VectorXd::Constant(A.cols(), static_cast<double>(A.rows())) - A.transpose() * nu;
  }

  double value() const {
    return t * nu.array().log().sum() + s.array().log().sum();
  }

  // One Newton step; returns the decrement lambda^2 (negative on failure).
  double step() {
    const Index nr = A.rows(), k = A.cols();
    VectorXd sinv = s.cwiseInverse();
    VectorXd grad = t * nu.cwiseInverse() - A * sinv;
    VectorXd delta(nr);
    if (k < nr) {
      // (D + A W A^T)^{-1} = Dinv - Dinv A (Winv + A^T Dinv A)^{-1} A^T Dinv
      VectorXd dinv = nu.array().square() / t;
      MatrixXd C = dinv.cwiseSqrt().asDiagonal() * A;
      MatrixXd M = MatrixXd::Zero(k, k);
      M.selfadjointView<Eigen::Lower>().rankUpdate(C.transpose());
      M.diagonal() += s.cwiseProduct(s);
      Eigen::LLT<MatrixXd> llt(M.selfadjointView<Eigen::Lower>());
      if (llt.info() != Eigen::Success) return -1.0;
      VectorXd dg = dinv.cwiseProduct(grad);
      delta = dg - dinv.cwiseProduct(A * llt.solve(A.transpose() * dg));
    } else {
      MatrixXd B = A * sinv.asDiagonal();
      MatrixXd H = MatrixXd::Zero(nr, nr);
      H.selfadjointView<Eigen::Lower>().rankUpdate(B);
      H.diagonal() += t * nu.array().square().inverse().matrix();
      Eigen::LLT<MatrixXd> llt(H.selfadjointView<Eigen::Lower>());
      if (llt.info() != Eigen::Success) return -1.0;
      delta = llt.solve(grad);
    }
    double lambda2 = grad.dot(delta);
    if (!(lambda2 > 0.0)) return lambda2;

    VectorXd at_delta = A.transpose() * delta;
    double alpha = 1.0;
    for (Index i = 0; i < nr; ++i)
      if (delta[i] < 0.0) alpha = std::min(alpha, -0.99 * nu[i] / delta[i]);
    for (Index j = 0; j < k; ++j)
      if (at_delta[j] > 0.0) alpha = std::min(alpha, 0.99 * s[j] / at_delta[j]);

    double f0 = value();
    for (int back = 0; back < 50; ++back) {
      VectorXd nu_try = nu + alpha * delta;
      VectorXd s_try = s - alpha * at_delta;
      if (nu_try.minCoeff() > 0.0 && s_try.minCoeff() > 0.0) {
        double f1 = t * nu_try.array().log().sum() + s_try.array().log().sum();
        if (f1 >= f0 + 0.25 * alpha * lambda2) {
          nu.swap(nu_try);
          s.swap(s_try);
          ++steps;
          return lambda2;
        }
      }
      alpha *= 0.5;
    }
    return -1.0;  // line search failed
  }

  // Path-following until the barrier gap k/t reaches the target.
  void run(double gap0, double gap_target, int budget) {
    const double k = static_cast<double>(A.cols());
    t = std::clamp(k / std::max(gap0, 1e-12), 1.0, 1e10);
    const double t_final = k / gap_target;
    while (true) {
      for (int it = 0; it < 60; ++it) {
        if (steps >= budget) return;
        double dec = step();
        if (dec < 2e-9) break;  // centered enough, or numerically stuck
      }
      if (t >= t_final || steps >= budget) return;
      t = std::min(t * 20.0, t_final);
      refresh_slack();  // kill accumulated drift once per stage
    }
  }
};

VectorXd em_sweeps(const MatrixXd& A, VectorXd g, int sweeps) {
  const double n = static_cast<double>(A.rows());
  VectorXd f(A.rows());
  for (int it = 0; it < sweeps; ++it) {
    f.noalias() = A * g;
    g = g.cwiseProduct(A.transpose() * f.cwiseInverse()) / n;
  }
  return g;
}

// Active-set Newton refinement of the weights on a fixed support (indices into
// the full column set). Minimizes -sum log(As g) over the simplex: equality
// Newton steps, atoms squeezed against the boundary get deleted outright, and
// a step is also accepted when it shrinks the gradient residual, which stays
// measurable long after objective differences drop below roundoff. Stops once
// max_j |sum_i A(i,j)/f_i - n|, the quantity the certificate will measure, is
// far below the tolerance. Returns Newton steps used.
int polish_support(const MatrixXd& A_full, std::vector<Index>& support, VectorXd& g,
                   double tol, int budget) {
  int used = 0;
  const Index n = A_full.rows();
  const double nd = static_cast<double>(n);
  const double target = 0.25 * tol;

  MatrixXd As;
  bool rebuild = true;
  int stalls = 0;
  for (int it = 0; it < 400; ++it) {
    Index k = static_cast<Index>(support.size());
    if (k == 0) throw NumericError("mixture solve: support collapsed");
    if (rebuild) {
      rebuild = false;
      As.resize(n, k);
      for (Index c = 0; c < k; ++c)
        As.col(c) = A_full.col(support[static_cast<std::size_t>(c)]);
    }
    g /= g.sum();
    VectorXd f = As * g;
    if (!(f.minCoeff() > 0.0)) throw NumericError("mixture solve: zero marginal in refinement");
    VectorXd finv = f.cwiseInverse();
    VectorXd r = (As.transpose() * finv).array() - nd;
    double resid = r.cwiseAbs().maxCoeff();
    if (resid <= target) break;
    if (used >= budget || stalls >= 4) break;

    // delete atoms pinned at the boundary whose gradient keeps them there,
    // unless some data row depends on them for its density mass
    auto drop = [&](const std::vector<char>& out) -> bool {
      VectorXd f2 = f;
      for (Index j = 0; j < k; ++j)
        if (out[static_cast<std::size_t>(j)]) f2 -= g[j] * As.col(j);
      if (!(f2.minCoeff() > 0.0)) return false;
      std::vector<Index> sup2;
      std::vector<double> g2;
      for (Index j = 0; j < k; ++j)
        if (!out[static_cast<std::size_t>(j)]) {
          sup2.push_back(support[static_cast<std::size_t>(j)]);
          g2.push_back(g[j]);
        }
      if (sup2.empty()) return false;
      support = std::move(sup2);
      g = Eigen::Map<VectorXd>(g2.data(), static_cast<Index>(g2.size()));
      rebuild = true;
      return true;
    };
    {
      std::vector<char> out(static_cast<std::size_t>(k), 0);
      bool any = false;
      for (Index j = 0; j < k; ++j)
        if (g[j] < 1e-12 && r[j] < 0.0) out[static_cast<std::size_t>(j)] = 1, any = true;
      if (any && drop(out)) continue;
    }

    MatrixXd C = finv.asDiagonal() * As;
    MatrixXd H0 = MatrixXd::Zero(k, k);
    H0.selfadjointView<Eigen::Lower>().rankUpdate(C.transpose());
    double ridge = 1e-14 * H0.diagonal().maxCoeff();
    Eigen::LDLT<MatrixXd> ldlt;
    for (int attempt = 0; attempt < 3; ++attempt) {
      MatrixXd H = H0;
      H.diagonal().array() += ridge;
      ldlt.compute(H.selfadjointView<Eigen::Lower>());
      if (ldlt.info() == Eigen::Success) break;
      ridge *= 1e6;
    }
    ++used;
    if (ldlt.info() != Eigen::Success) {
      g = em_sweeps(As, g, 50);
      ++stalls;
      continue;
    }
    VectorXd q = -(As.transpose() * finv);
    VectorXd x1 = ldlt.solve(q);
    VectorXd x2 = ldlt.solve(VectorXd::Ones(k));
    double lam = -x1.sum() / x2.sum();
    VectorXd delta = -x1 - lam * x2;
    double dec = -q.dot(delta);
    if (!(dec > 0.0) || !delta.allFinite()) {
      g = em_sweeps(As, g, 50);
      ++stalls;
      continue;
    }

    double alpha = 1.0;
    Index binding = -1;
    for (Index j = 0; j < k; ++j)
      if (delta[j] < 0.0) {
        double cap = -0.995 * g[j] / delta[j];
        if (cap < alpha) alpha = cap, binding = j;
      }
    if (binding >= 0 && alpha < 1e-8 && g[binding] < 1e-8) {
      std::vector<char> out(static_cast<std::size_t>(k), 0);
      out[static_cast<std::size_t>(binding)] = 1;
      if (drop(out)) continue;
    }

    double obj0 = f.array().log().sum();
    bool moved = false;
    for (int back = 0; back < 40 && !moved; ++back, alpha *= 0.5) {
      VectorXd g_try = g + alpha * delta;
      if (g_try.minCoeff() < 0.0) continue;
      VectorXd f_try = As * g_try;
      if (!(f_try.minCoeff() > 0.0)) continue;
      if (f_try.array().log().sum() >= obj0 + 0.25 * alpha * dec) {
        g.swap(g_try);
        moved = true;
      } else if (resid <= 1.0 && back < 8) {
        double resid_try =
            ((As.transpose() * f_try.cwiseInverse()).array() - nd).abs().maxCoeff();
        if (resid_try <= 0.9 * resid) {
          g.swap(g_try);
          moved = true;
        }
      }
    }
    if (!moved) {
      if (binding >= 0 && g[binding] < 1e-6) {
        std::vector<char> out(static_cast<std::size_t>(k), 0);
        out[static_cast<std::size_t>(binding)] = 1;
        if (drop(out)) continue;
      }
      g = em_sweeps(As, g, 50);
      ++stalls;
      continue;
    }
    std::vector<char> out(static_cast<std::size_t>(k), 0);
    bool any = false;
    for (Index j = 0; j < k; ++j)
      if (g[j] <= 1e-15) out[static_cast<std::size_t>(j)] = 1, any = true;
    if (any) drop(out);
  }
  g /= g.sum();
  return used;
}

struct CoreResult {
  VectorXd g, dual;
  double loglik = 0.0, kkt_gap = 0.0;
  int iterations = 0;
  bool certified = false;
};

CoreResult finish(const LikelihoodMatrix& L, const SolverConfig& cfg, VectorXd g,
                  int iterations, bool converged) {
  const double n = static_cast<double>(L.rows());
  CoreResult out;
  out.iterations = iterations;
  VectorXd f = L.A * g;
  double loglik = 0.0;
  for (Index i = 0; i < f.size(); ++i) {
    if (!(f[i] > 0.0)) throw NumericError("mixture solve: zero fitted marginal");
    loglik += std::log(f[i]);
  }
  out.loglik = loglik + L.shift_sum();
  VectorXd d = (L.A.transpose() * f.cwiseInverse()).array() - n;
  out.kkt_gap = d.maxCoeff();
  bool support_ok = true;
  for (Index j = 0; j < g.size(); ++j)
    if (g[j] > cfg.prune_eps && std::abs(d[j]) > cfg.tol) support_ok = false;
  out.certified = converged && support_ok && out.kkt_gap <= cfg.tol;
  out.dual = f.cwiseInverse();
  double worst = (out.kkt_gap + n) / n;  // rescale into the feasible region
  if (worst > 1.0) out.dual /= worst;
  out.g = std::move(g);
  return out;
}

CoreResult solve_core(const LikelihoodMatrix& L, const SolverConfig& cfg) {
  FlushDenormals ftz_guard;
  L.validate();
  if (cfg.tol <= 0.0) throw ValidationError("solver: tolerance must be positive");
  if (cfg.max_iter < 1) throw ValidationError("solver: iteration budget must be positive");
  const Index n = L.rows(), m = L.cols();
  const MatrixXd& A = L.A;

  if (cfg.algorithm == SolverConfig::Algorithm::EmBaseline) {
    VectorXd g = em_sweeps(A, VectorXd::Constant(m, 1.0 / static_cast<double>(m)),
                           cfg.max_iter);
    return finish(L, cfg, std::move(g), cfg.max_iter, true);
  }

  // Phase 1: barrier solve on a column sample to locate the support.
  std::vector<Index> cols;
  if (m <= kRestrictAbove) {
    cols.resize(static_cast<std::size_t>(m));
    std::iota(cols.begin(), cols.end(), Index{0});
  } else {
    Index stride = (m + kRestrictTarget - 1) / kRestrictTarget;
    for (Index j = 0; j < m; j += stride) cols.push_back(j);
    for (Index i = 0; i < n; ++i) {
      Index best;
      A.row(i).maxCoeff(&best);
      cols.push_back(best);
    }
    std::sort(cols.begin(), cols.end());
    cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
  }
  const Index k = static_cast<Index>(cols.size());
  MatrixXd AR(n, k);
  for (Index c = 0; c < k; ++c) AR.col(c) = A.col(cols[static_cast<std::size_t>(c)]);

  int iterations = 0;
  VectorXd g0 = em_sweeps(AR, VectorXd::Constant(k, 1.0 / static_cast<double>(k)), 120);
  VectorXd f0 = AR * g0;
  if (!(f0.minCoeff() > 0.0)) throw NumericError("mixture solve: zero marginal at start");

  Barrier barrier(AR);
  barrier.nu = f0.cwiseInverse();
  double scale = 0.995 * static_cast<double>(n) / (AR.transpose() * barrier.nu).maxCoeff();
  if (scale < 1.0) barrier.nu *= scale;
  barrier.refresh_slack();
  double gap0 = std::max(-f0.array().log().sum() - barrier.nu.array().log().sum(), 1e-10);
  barrier.run(gap0, 1e-4, cfg.max_iter);
  iterations += barrier.steps;

  // Support recovery from the slacks. The barrier smears each atom across its
  // grid neighbors, so keep only local maxima of the recovered weights; the
  // refinement rounds re-admit any neighbor the optimum actually needs. Widen
  // the cut, then give up on peaks-only, if a data row loses all of its mass.
  VectorXd g_tilde = (barrier.t * barrier.s.array()).inverse().matrix();
  double tau = std::max(1e-8, 1e-3 / static_cast<double>(m)) * g_tilde.sum();
  std::vector<Index> support;
  VectorXd gs;
  bool recovered = false;
  auto recover = [&](double cut, bool peaks_only) -> bool {
    support.clear();
    std::vector<double> gv;
    for (Index c = 0; c < k; ++c) {
      if (!(g_tilde[c] > cut)) continue;
      if (peaks_only && ((c > 0 && g_tilde[c] < g_tilde[c - 1]) ||
                         (c + 1 < k && g_tilde[c] < g_tilde[c + 1])))
        continue;
      support.push_back(cols[static_cast<std::size_t>(c)]);
      gv.push_back(g_tilde[c]);
    }
    if (support.empty()) return false;
    gs = Eigen::Map<VectorXd>(gv.data(), static_cast<Index>(gv.size()));
    gs /= gs.sum();
    VectorXd fs = VectorXd::Zero(n);
    for (std::size_t c = 0; c < support.size(); ++c)
      fs += gs[static_cast<Index>(c)] * A.col(support[c]);
    return fs.minCoeff() > 0.0;
  };
  for (int pass = 0; pass < 2 && !recovered; ++pass) {
    double cut = tau;
    for (int widen = 0; widen < 5 && !recovered; ++widen, cut *= 1e-2)
      recovered = recover(cut, pass == 0);
  }
  if (!recovered) throw NumericError("mixture solve: could not seed a feasible support");

  // Phase 2: refine on the support, check every column, admit violators.
  bool converged = false;
  VectorXd g_full = VectorXd::Zero(m);
  for (int round = 0; round < kRefineRounds; ++round) {
    iterations += polish_support(A, support, gs, cfg.tol,
                                 std::max(cfg.max_iter - iterations, 0));
    g_full.setZero();
    for (std::size_t c = 0; c < support.size(); ++c)
      g_full[support[c]] = gs[static_cast<Index>(c)];

    VectorXd f = A * g_full;
    if (!(f.minCoeff() > 0.0)) throw NumericError("mixture solve: zero fitted marginal");
    VectorXd d = (A.transpose() * f.cwiseInverse()).array() - static_cast<double>(n);
    if (d.maxCoeff() <= cfg.tol) {
      converged = true;
      break;
    }
    if (iterations >= cfg.max_iter) break;

    std::vector<Index> in_support(static_cast<std::size_t>(m), 0);
    for (Index j : support) in_support[static_cast<std::size_t>(j)] = 1;
    std::vector<Index> order;
    for (Index j = 0; j < m; ++j)
      if (!in_support[static_cast<std::size_t>(j)] && d[j] > cfg.tol) order.push_back(j);
    if (order.empty()) continue;  // violations sit on the support; polish again
    std::sort(order.begin(), order.end(), [&](Index a, Index b) { return d[a] > d[b]; });
    if (static_cast<Index>(order.size()) > kAddPerRound) order.resize(kAddPerRound);

    double w_new = 1e-4 / static_cast<double>(order.size());
    VectorXd gs2(gs.size() + static_cast<Index>(order.size()));
    gs2.head(gs.size()) = gs * (1.0 - 1e-4);
    for (std::size_t c = 0; c < order.size(); ++c) {
      support.push_back(order[c]);
      gs2[gs.size() + static_cast<Index>(c)] = w_new;
    }
    gs = std::move(gs2);
  }

  return finish(L, cfg, std::move(g_full), iterations, converged);
}

DiscreteDistribution make_mixing(const std::vector<double>& atoms,
                                 const std::vector<double>& second, const VectorXd& g,
                                 double prune_eps) {
  DiscreteDistribution full;
  full.atoms = atoms;
  full.second = second;
  full.weights.assign(g.data(), g.data() + g.size());
  return prune_atoms(full, prune_eps);
}

}  // namespace

NpmleSolution solve_npmle(const LikelihoodMatrix& L, const std::vector<double>& atoms,
                          const std::vector<double>& second, const SolverConfig& cfg) {
  if (static_cast<Index>(atoms.size()) != L.cols())
    throw ValidationError("solver: atom list does not match likelihood columns");
  if (!second.empty() && second.size() != atoms.size())
    throw ValidationError("solver: second coordinate length mismatch");
  CoreResult core = solve_core(L, cfg);
  NpmleSolution sol;
  sol.mixing = make_mixing(atoms, second, core.g, cfg.prune_eps);
  sol.weights = std::move(core.g);
  sol.dual = std::move(core.dual);
  sol.loglik = core.loglik;
  sol.kkt_gap = core.kkt_gap;
  sol.iterations = core.iterations;
  sol.certified = core.certified;
  return sol;
}

NpmleSolution solve_npmle(const LikelihoodMatrix& L, const Grid& grid,
                          const SolverConfig& cfg) {
  return solve_npmle(L, grid.points, {}, cfg);
}

Eigen::VectorXd em_step(const LikelihoodMatrix& L, const Eigen::VectorXd& g) {
  if (g.size() != L.cols()) throw ValidationError("em step: weight length mismatch");
  VectorXd f = marginal_density(L, g);
  return g.cwiseProduct(L.A.transpose() * f.cwiseInverse()) /
         static_cast<double>(L.rows());
}

Eigen::VectorXd kkt_residual(const LikelihoodMatrix& L, const Eigen::VectorXd& g) {
  if (g.size() != L.cols()) throw ValidationError("kkt residual: weight length mismatch");
  VectorXd f = marginal_density(L, g);
  return (L.A.transpose() * f.cwiseInverse()).array() - static_cast<double>(L.rows());
}

DiscreteDistribution prune_atoms(const DiscreteDistribution& d, double eps) {
  if (!(eps >= 0.0)) throw ValidationError("prune: negative threshold");
  DiscreteDistribution out;
  double kept = 0.0;
  for (std::size_t j = 0; j < d.atoms.size(); ++j) {
    if (d.weights[j] < eps) continue;
    out.atoms.push_back(d.atoms[j]);
    if (!d.second.empty()) out.second.push_back(d.second[j]);
    out.weights.push_back(d.weights[j]);
    kept += d.weights[j];
  }
  if (out.atoms.empty() || kept <= 0.0)
    throw ValidationError("prune: threshold removed every atom");
  for (double& w : out.weights) w /= kept;
  return out;
}

}  // namespace ebd
