#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ebdeconv/errors.hpp"
#include "ebdeconv/kernels.hpp"
#include "ebdeconv/npmle.hpp"
#include "ebdeconv/panel.hpp"
#include "ebdeconv/predict.hpp"
#include "ebdeconv/rules.hpp"
#include "ebdeconv/statespace.hpp"
#include "ebdeconv/types.hpp"
#include "support.hpp"

using namespace ebd;
using cli::format_double;
using cli::json;
using cli::Report;

namespace {

std::string g_out;  // last requested report directory, for error.json placement

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct SolverFlags {
  double tol = 1e-6;
  int max_iter = 2000;
  double prune_eps = 1e-3;
};

void add_solver_flags(CLI::App* cmd, SolverFlags& f) {
  cmd->add_option("--tol", f.tol, "certificate tolerance")->capture_default_str();
  cmd->add_option("--max-iter", f.max_iter, "iteration budget")->capture_default_str();
  cmd->add_option("--prune-eps", f.prune_eps, "support mass cutoff")->capture_default_str();
}

SolverConfig to_solver_config(const SolverFlags& f) {
  SolverConfig cfg;
  cfg.tol = f.tol;
  cfg.max_iter = f.max_iter;
  cfg.prune_eps = f.prune_eps;
  return cfg;
}

void echo_solver(json& options, const SolverFlags& f) {
  options["tol"] = f.tol;
  options["max-iter"] = f.max_iter;
  options["prune-eps"] = f.prune_eps;
}

int read_thread_cap() {
  const char* env = std::getenv("EBDECONV_THREADS");
  if (env == nullptr) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*env == '\0' || *end != '\0' || v < 1)
    throw ValidationError("EBDECONV_THREADS must be a positive integer");
  return static_cast<int>(v);
}

json make_config(const std::string& command, json options) {
  json cfg;
  cfg["command"] = command;
  cfg["options"] = std::move(options);
  cfg["threads"] = read_thread_cap();
  return cfg;
}

int finish_certified(const Report& rep, bool certified, double kkt_gap) {
  rep.finish();
  std::printf("report written to %s\n", rep.dir.c_str());
  if (certified) return 0;
  cli::write_error_report(rep.dir.string(), "numeric",
                          "solver certificate failed (kkt_gap=" + format_double(kkt_gap) +
                              ")");
  std::fprintf(stderr, "error: solver certificate failed (kkt_gap=%s)\n",
               format_double(kkt_gap).c_str());
  return 3;
}

int finish_plain(const Report& rep) {
  rep.finish();
  std::printf("report written to %s\n", rep.dir.c_str());
  return 0;
}

// ---------------------------------------------------------------- npmle ----

struct NpmleOpts {
  std::string data;
  std::string kernel = "gaussian";
  double sd = 1.0;
  double trials = 1.0;
  double shape = 1.0;
  std::size_t grid_size = 300;
  double grid_lo = kNaN;
  double grid_hi = kNaN;
  SolverFlags solver;
  std::string out;
};

KernelSpec make_kernel(const std::string& name, double sd, double trials, double shape) {
  if (name == "gaussian") return KernelSpec::gaussian(sd);
  if (name == "poisson") return KernelSpec::poisson();
  if (name == "binomial") return KernelSpec::binomial(trials);
  return KernelSpec::gamma_scale({shape});
}

Grid make_obs_grid(const std::string& kernel, std::span<const double> data, std::size_t m,
                   double lo, double hi) {
  if (std::isfinite(lo) || std::isfinite(hi)) {
    if (!(std::isfinite(lo) && std::isfinite(hi) && hi >= lo))
      throw ValidationError("--grid-lo and --grid-hi must both be given with hi >= lo");
    return build_linear_grid(lo, hi, m);
  }
  if (kernel == "binomial") return build_prob_grid(m);
  if (kernel == "poisson" || kernel == "gamma") {
    const auto [mn, mx] = std::minmax_element(data.begin(), data.end());
    const double glo = std::max(0.05, *mn * 0.8);
    const double ghi = std::max(*mx * 1.2, glo * 2.0);
    return build_log_grid(glo, ghi, m);
  }
  return build_grid(data, m);
}

int run_npmle(const NpmleOpts& o) {
  g_out = o.out;
  json options = {{"data", o.data},     {"kernel", o.kernel},
                  {"sd", o.sd},         {"trials", o.trials},
                  {"shape", o.shape},   {"grid-size", o.grid_size},
                  {"grid-lo", o.grid_lo}, {"grid-hi", o.grid_hi},
                  {"out", o.out}};
  echo_solver(options, o.solver);
  Report rep(o.out, make_config("npmle", options));
  rep.digest_input(o.data);

  const std::vector<double> data = cli::ingest_observations(o.data);
  const KernelSpec kernel = make_kernel(o.kernel, o.sd, o.trials, o.shape);
  const Grid grid = make_obs_grid(o.kernel, data, o.grid_size, o.grid_lo, o.grid_hi);
  const LikelihoodMatrix L = build_likelihood_matrix(data, kernel, grid);
  const NpmleSolution sol = solve_npmle(L, grid, to_solver_config(o.solver));

  std::vector<std::vector<double>> rows;
  for (std::size_t j = 0; j < sol.mixing.size(); ++j)
    rows.push_back({sol.mixing.atoms[j], sol.mixing.weights[j]});
  rep.write_csv("ghat.csv", {"atom", "weight"}, rows);

  rep.summary["n"] = data.size();
  rep.summary["grid_size"] = grid.size();
  rep.summary["loglik"] = sol.loglik;
  rep.summary["kkt_gap"] = sol.kkt_gap;
  rep.summary["iterations"] = sol.iterations;
  rep.summary["certified"] = sol.certified;
  rep.summary["support_size"] = sol.mixing.size();
  return finish_certified(rep, sol.certified, sol.kkt_gap);
}

// ---------------------------------------------------------------- rules ----

struct RulesOpts {
  bool binary = false;
  bool tweedie = false;
  double p = 0.5;
  std::string data;
  double sd = 1.0;
  std::size_t grid_size = 300;
  std::size_t table_size = 200;
  SolverFlags solver;
  std::string out;
};

int run_rules(const RulesOpts& o) {
  g_out = o.out;
  if (o.binary == o.tweedie)
    throw ValidationError("choose exactly one of --binary or --tweedie");
  json options = {{"binary", o.binary}, {"tweedie", o.tweedie},   {"p", o.p},
                  {"data", o.data},     {"sd", o.sd},             {"grid-size", o.grid_size},
                  {"table-size", o.table_size}, {"out", o.out}};
  echo_solver(options, o.solver);
  Report rep(o.out, make_config("rules", options));

  if (o.binary) {
    const BinaryRule rule = binary_two_point(o.p);
    const double equal_odds = binary_rule_risk(0.5, 0.0);
    rep.write_csv("binary.csv", {"p", "threshold", "risk"},
                  {{o.p, rule.threshold, rule.risk}});
    rep.summary["p"] = o.p;
    rep.summary["threshold"] = rule.threshold;
    rep.summary["risk"] = rule.risk;
    rep.summary["risk_equal_odds"] = equal_odds;
    rep.summary["risk_reduction"] = 1.0 - rule.risk / equal_odds;
    return finish_plain(rep);
  }

  if (o.data.empty()) throw ValidationError("--tweedie needs --data");
  rep.digest_input(o.data);
  const std::vector<double> data = cli::ingest_observations(o.data);
  const KernelSpec kernel = KernelSpec::gaussian(o.sd);
  const Grid grid = build_grid(data, o.grid_size);
  const LikelihoodMatrix L = build_likelihood_matrix(data, kernel, grid);
  const NpmleSolution sol = solve_npmle(L, grid, to_solver_config(o.solver));

  const Grid ygrid = build_grid(data, o.table_size);
  std::vector<std::vector<double>> rule_rows;
  for (std::size_t i = 0; i < ygrid.size(); ++i) {
    const PosteriorSummary ps = tweedie_rule(kernel, sol.mixing, ygrid[i]);
    rule_rows.push_back({ygrid[i], ps.mean, ps.variance});
  }
  rep.write_csv("rule.csv", {"y", "delta", "variance"}, rule_rows);

  const ShrinkageEstimate js = linear_shrinkage(data, ShrinkageMode::JamesStein, true);
  std::vector<std::vector<double>> stein_rows;
  for (std::size_t i = 0; i < ygrid.size(); ++i)
    stein_rows.push_back({ygrid[i], js.center + js.factor * (ygrid[i] - js.center)});
  rep.write_csv("stein.csv", {"y", "stein"}, stein_rows);

  rep.summary["n"] = data.size();
  rep.summary["loglik"] = sol.loglik;
  rep.summary["kkt_gap"] = sol.kkt_gap;
  rep.summary["certified"] = sol.certified;
  rep.summary["support_size"] = sol.mixing.size();
  rep.summary["stein_factor"] = js.factor;
  return finish_certified(rep, sol.certified, sol.kkt_gap);
}

// ------------------------------------------------------------- panel-fit ---

struct PanelFitOpts {
  std::string panel;
  double rho = 0.0;
  std::string initial = "drop";
  std::size_t alpha_grid = 60;
  std::size_t theta_grid = 60;
  SolverFlags solver;
  std::string out;
};

void write_hhat(const Report& rep, const NpmleSolution& sol) {
  std::vector<std::vector<double>> rows;
  for (std::size_t j = 0; j < sol.mixing.size(); ++j)
    rows.push_back({sol.mixing.atoms[j], sol.mixing.second[j], sol.mixing.weights[j]});
  rep.write_csv("hhat.csv", {"alpha", "theta", "weight"}, rows);
}

int run_panel_fit(const PanelFitOpts& o) {
  g_out = o.out;
  json options = {{"panel", o.panel},
                  {"rho", o.rho},
                  {"initial", o.initial},
                  {"alpha-grid-size", o.alpha_grid},
                  {"theta-grid-size", o.theta_grid},
                  {"out", o.out}};
  echo_solver(options, o.solver);
  Report rep(o.out, make_config("panel-fit", options));
  rep.digest_input(o.panel);

  const PanelDataset panel = cli::ingest_panel(o.panel);
  const bool stationary = o.initial == "stationary";
  const SufficientStats stats = sufficient_stats(panel, o.rho, stationary);
  const PanelGrids grids = default_panel_grids(stats, o.alpha_grid, o.theta_grid);
  const BivariateFit fit = fit_bivariate_heterogeneity(
      stats, grids.alpha, grids.theta, to_solver_config(o.solver),
      stationary ? InitialCondition::Stationary : InitialCondition::Drop);

  write_hhat(rep, fit.solution);
  rep.summary["n_units"] = panel.units.size();
  rep.summary["rho"] = o.rho;
  rep.summary["initial"] = o.initial;
  rep.summary["loglik_mixture"] = fit.solution.loglik;
  rep.summary["loglik"] = fit.solution.loglik + sufficient_loglik_constant(stats);
  rep.summary["kkt_gap"] = fit.solution.kkt_gap;
  rep.summary["iterations"] = fit.solution.iterations;
  rep.summary["certified"] = fit.solution.certified;
  rep.summary["support_size"] = fit.solution.mixing.size();
  rep.summary["grid_warning"] = fit.grid_warning;
  return finish_certified(rep, fit.solution.certified, fit.solution.kkt_gap);
}

// --------------------------------------------------------------- profile ---

struct ProfileOpts {
  std::string panel;
  std::string rho_grid;
  std::string initial = "drop";
  std::size_t alpha_grid = 60;
  std::size_t theta_grid = 60;
  SolverFlags solver;
  std::string out;
};

int run_profile(const ProfileOpts& o) {
  g_out = o.out;
  json options = {{"panel", o.panel},
                  {"rho-grid", o.rho_grid},
                  {"initial", o.initial},
                  {"alpha-grid-size", o.alpha_grid},
                  {"theta-grid-size", o.theta_grid},
                  {"out", o.out}};
  echo_solver(options, o.solver);
  Report rep(o.out, make_config("profile", options));
  rep.digest_input(o.panel);

  const PanelDataset panel = cli::ingest_panel(o.panel);
  const std::vector<double> rhos = cli::parse_range(o.rho_grid);
  const InitialCondition initial =
      o.initial == "stationary" ? InitialCondition::Stationary : InitialCondition::Drop;
  const SolverConfig cfg = to_solver_config(o.solver);
  const ProfileCurve curve =
      profile_loglik(panel, rhos, o.alpha_grid, o.theta_grid, cfg, initial);

  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < curve.rho_grid.size(); ++i)
    rows.push_back({curve.rho_grid[i], curve.loglik[i]});
  rep.write_csv("profile.csv", {"rho", "loglik"}, rows);

  const SufficientStats stats = sufficient_stats(panel, curve.rho_hat, true);
  const PanelGrids grids = default_panel_grids(stats, o.alpha_grid, o.theta_grid);
  const BivariateFit refit =
      fit_bivariate_heterogeneity(stats, grids.alpha, grids.theta, cfg, initial);
  write_hhat(rep, refit.solution);

  rep.summary["n_units"] = panel.units.size();
  rep.summary["rho_hat"] = curve.rho_hat;
  rep.summary["ci_lo"] = curve.ci_lo;
  rep.summary["ci_hi"] = curve.ci_hi;
  rep.summary["crossings"] = curve.crossings.size();
  rep.summary["multimodal"] = curve.multimodal;
  rep.summary["degenerate"] = curve.degenerate;
  rep.summary["loglik"] = refit.solution.loglik + sufficient_loglik_constant(stats);
  rep.summary["kkt_gap"] = refit.solution.kkt_gap;
  rep.summary["certified"] = refit.solution.certified;
  rep.summary["support_size"] = refit.solution.mixing.size();
  return finish_certified(rep, refit.solution.certified, refit.solution.kkt_gap);
}

// --------------------------------------------------------------- arma-fit --

struct ArmaFitOpts {
  std::string panel;
  std::string rho_grid;
  std::string theta_ma_grid;
  std::string sigma_nu_grid;
  std::string sigma_eta_grid;
  std::size_t mu_grid = 50;
  SolverFlags solver;
  std::string out;
};

int run_arma_fit(const ArmaFitOpts& o) {
  g_out = o.out;
  json options = {{"panel", o.panel},
                  {"rho-grid", o.rho_grid},
                  {"theta-ma-grid", o.theta_ma_grid},
                  {"sigma-nu-grid", o.sigma_nu_grid},
                  {"sigma-eta-grid", o.sigma_eta_grid},
                  {"mu-grid-size", o.mu_grid},
                  {"out", o.out}};
  echo_solver(options, o.solver);
  Report rep(o.out, make_config("arma-fit", options));
  rep.digest_input(o.panel);

  const PanelDataset panel = cli::ingest_panel(o.panel);
  const std::vector<ArmaParams> lattice =
      build_arma_lattice(cli::parse_range(o.rho_grid), cli::parse_range(o.theta_ma_grid),
                         cli::parse_range(o.sigma_nu_grid),
                         cli::parse_range(o.sigma_eta_grid));

  std::vector<double> unit_means;
  for (const PanelUnit& u : panel.units) {
    double s = 0.0;
    for (double v : u.values) s += v;
    unit_means.push_back(s / static_cast<double>(u.values.size()));
  }
  const Grid mu_grid = build_grid(unit_means, o.mu_grid);

  const ArmaProfileFit fit =
      fit_arma_profile(panel, lattice, mu_grid, to_solver_config(o.solver));

  std::vector<std::vector<double>> rows;
  for (const ArmaLatticePoint& pt : fit.table)
    rows.push_back({pt.params.rho, pt.params.theta_ma, pt.params.sigma_nu,
                    pt.params.sigma_eta, pt.loglik, pt.certified ? 1.0 : 0.0});
  rep.write_csv("arma_profile.csv",
                {"rho", "theta_ma", "sigma_nu", "sigma_eta", "loglik", "certified"}, rows);

  std::vector<std::vector<double>> gmu;
  for (std::size_t j = 0; j < fit.g_mu.mixing.size(); ++j)
    gmu.push_back({fit.g_mu.mixing.atoms[j], fit.g_mu.mixing.weights[j]});
  rep.write_csv("gmu.csv", {"mu", "weight"}, gmu);

  std::size_t failed = 0;
  for (const ArmaLatticePoint& pt : fit.table) failed += pt.failed ? 1 : 0;
  const ArmaLatticePoint& best = fit.table[fit.best_index];
  rep.summary["n_units"] = panel.units.size();
  rep.summary["lattice_size"] = fit.table.size();
  rep.summary["failed_points"] = failed;
  rep.summary["best_index"] = fit.best_index;
  rep.summary["rho"] = best.params.rho;
  rep.summary["theta_ma"] = best.params.theta_ma;
  rep.summary["sigma_nu"] = best.params.sigma_nu;
  rep.summary["sigma_eta"] = best.params.sigma_eta;
  rep.summary["loglik"] = best.loglik;
  rep.summary["certified"] = best.certified;
  rep.summary["leaders"] = top_lattice_indices(fit.table, 5);
  return finish_certified(rep, best.certified, fit.g_mu.kkt_gap);
}

// ---------------------------------------------------------------- predict --

struct PredictOpts {
  std::string panel;
  std::string hhat;
  std::int64_t unit = 0;
  double rho = 0.0;
  std::size_t horizon = 10;
  std::size_t m = 50;
  std::size_t M = 50;
  std::uint64_t seed = 17;
  std::string drift = "stationary-alpha";
  double level = 0.9;
  std::string out;
};

DiscreteDistribution read_hhat(const std::string& path) {
  const cli::Csv csv = cli::read_csv(path);
  cli::require_header(csv, {"alpha", "theta", "weight"}, path);
  DiscreteDistribution H;
  for (std::size_t i = 0; i < csv.rows.size(); ++i) {
    if (csv.rows[i].size() != 3)
      throw ValidationError("expected three columns in row " + std::to_string(i + 1));
    H.atoms.push_back(cli::parse_number(csv.rows[i][0], i + 1));
    H.second.push_back(cli::parse_number(csv.rows[i][1], i + 1));
    H.weights.push_back(cli::parse_number(csv.rows[i][2], i + 1));
  }
  double total = 0.0;
  for (double w : H.weights) total += w;
  if (!(total > 0.0)) throw ValidationError("mixing weights in " + path + " sum to zero");
  for (double& w : H.weights) w /= total;
  H.validate();
  return H;
}

std::vector<std::string> bands_header(const std::vector<double>& probs) {
  std::vector<std::string> header{"period"};
  for (double p : probs) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "p%02d", static_cast<int>(std::lround(p * 100)));
    header.emplace_back(buf);
  }
  return header;
}

int run_predict(const PredictOpts& o) {
  g_out = o.out;
  json options = {{"panel", o.panel}, {"hhat", o.hhat},     {"unit", o.unit},
                  {"rho", o.rho},     {"horizon", o.horizon}, {"m", o.m},
                  {"M", o.M},         {"seed", o.seed},     {"drift", o.drift},
                  {"level", o.level}, {"out", o.out}};
  Report rep(o.out, make_config("predict", options));
  rep.digest_input(o.panel);
  rep.digest_input(o.hhat);

  const PanelDataset panel = cli::ingest_panel(o.panel);
  const PanelUnit* unit = nullptr;
  for (const PanelUnit& u : panel.units)
    if (u.id == o.unit) unit = &u;
  if (unit == nullptr)
    throw ValidationError("unit " + std::to_string(o.unit) + " not found in panel");

  const DiscreteDistribution H = read_hhat(o.hhat);
  const UnitPosterior post = unit_posterior(H, unit->values, o.rho);

  std::vector<std::vector<double>> post_rows;
  for (std::size_t j = 0; j < post.size(); ++j)
    post_rows.push_back({post.alpha[j], post.theta[j], post.weights[j]});
  rep.write_csv("posterior.csv", {"alpha", "theta", "weight"}, post_rows);

  const DriftConvention drift = o.drift == "raw-alpha" ? DriftConvention::RawAlpha
                                                       : DriftConvention::StationaryAlpha;
  const PredictionEnsemble ens = simulate_paths(post, o.rho, unit->values.back(),
                                                o.horizon, o.m, o.M, o.seed, drift);

  const std::vector<double> probs = default_band_probs();
  const FanBands fan = quantile_bands(ens, probs);
  std::vector<std::vector<double>> band_rows;
  for (Eigen::Index t = 0; t < fan.quantiles.rows(); ++t) {
    std::vector<double> row{static_cast<double>(t + 1)};
    for (Eigen::Index i = 0; i < fan.quantiles.cols(); ++i)
      row.push_back(fan.quantiles(t, i));
    band_rows.push_back(std::move(row));
  }
  rep.write_csv("bands.csv", bands_header(probs), band_rows);

  const UniformBand uni = uniform_band(ens, o.level);
  std::vector<std::vector<double>> uni_rows;
  for (std::size_t t = 0; t < uni.lower.size(); ++t)
    uni_rows.push_back({static_cast<double>(t + 1), uni.lower[t], uni.upper[t]});
  rep.write_csv("uniform.csv", {"period", "lower", "upper"}, uni_rows);

  const bool enough_increments = o.m * o.M * o.horizon >= 100;
  if (enough_increments) {
    const IncrementDensityTable table = increment_density_table(ens);
    std::vector<std::vector<double>> inc_rows;
    for (std::size_t i = 0; i < table.size(); ++i)
      inc_rows.push_back({table.x[i], table.f[i], table.log_f[i], table.neg_inv_sqrt_f[i]});
    rep.write_csv("increments.csv", {"x", "f", "logf", "neg_inv_sqrt_f"}, inc_rows);
  }

  rep.summary["unit"] = o.unit;
  rep.summary["prefix_length"] = unit->values.size();
  rep.summary["last_value"] = unit->values.back();
  rep.summary["rho"] = o.rho;
  rep.summary["horizon"] = o.horizon;
  rep.summary["paths"] = o.m * o.M;
  rep.summary["seed"] = o.seed;
  rep.summary["drift"] = o.drift;
  rep.summary["band_level"] = o.level;
  rep.summary["band_depth"] = uni.depth;
  rep.summary["band_achieved"] = uni.achieved;
  rep.summary["increment_table"] = enough_increments;
  return finish_plain(rep);
}

// ----------------------------------------------------------- simulate-demo -

struct DemoOpts {
  std::string which;
  std::uint64_t seed = 17;
  std::size_t n = 0;        // 0 = setting default
  std::size_t periods = 0;  // 0 = setting default
  std::string out;
};

int run_demo(const DemoOpts& o) {
  g_out = o.out;
  json options = {{"which", o.which}, {"seed", o.seed}, {"n", o.n},
                  {"periods", o.periods}, {"out", o.out}};
  Report rep(o.out, make_config("simulate-demo", options));
  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> z;
  json truth;

  if (o.which == "lognormal") {
    const std::size_t n = o.n == 0 ? 1000 : o.n;
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < n; ++i) {
      const double theta = std::exp(z(rng));
      rows.push_back({theta + z(rng)});
    }
    rep.write_csv("observations.csv", {"value"}, rows);
    truth = {{"model", "lognormal location mixture"},
             {"n", n},
             {"log_mean", 0.0},
             {"log_sd", 1.0},
             {"noise_sd", 1.0}};
    rep.summary["outputs"]["observations.csv"] = cli::fnv1a_hex(rep.dir / "observations.csv");
  } else if (o.which == "panel") {
    const std::size_t n = o.n == 0 ? 400 : o.n;
    const std::size_t L = o.periods == 0 ? 15 : o.periods;
    const double rho = 0.5;
    const std::vector<double> alphas = {-1.0, 1.0};
    const std::vector<double> thetas = {0.5, 2.0};
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = i % 2;
      double y = alphas[k] + std::sqrt(thetas[k] / (1.0 - rho * rho)) * z(rng);
      for (std::size_t t = 0; t < L; ++t) {
        if (t > 0)
          y = (1.0 - rho) * alphas[k] + rho * y + std::sqrt(thetas[k]) * z(rng);
        rows.push_back({static_cast<double>(i + 1), static_cast<double>(t + 1), y});
      }
    }
    rep.write_csv("panel.csv", {"unit_id", "period", "value"}, rows);
    truth = {{"model", "AR(1) with bivariate heterogeneity"},
             {"n", n},
             {"periods", L},
             {"rho", rho},
             {"alpha_atoms", alphas},
             {"theta_atoms", thetas},
             {"weights", {0.5, 0.5}}};
    rep.summary["outputs"]["panel.csv"] = cli::fnv1a_hex(rep.dir / "panel.csv");
  } else if (o.which == "arma") {
    const std::size_t n = o.n == 0 ? 250 : o.n;
    const std::size_t T = o.periods == 0 ? 12 : o.periods;
    const ArmaParams p{0.5, 0.15, 0.2, 0.5};
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < n; ++i) {
      const double mu = i % 2 == 0 ? -1.0 : 1.0;
      double x = p.sigma_nu / std::sqrt(1.0 - p.rho * p.rho) * z(rng);
      double prev = z(rng);
      for (std::size_t t = 0; t < T; ++t) {
        if (t > 0) x = p.rho * x + p.sigma_nu * z(rng);
        const double cur = z(rng);
        const double y = mu + x + p.sigma_eta * (cur + p.theta_ma * prev);
        prev = cur;
        rows.push_back({static_cast<double>(i + 1), static_cast<double>(t + 1), y});
      }
    }
    rep.write_csv("panel.csv", {"unit_id", "period", "value"}, rows);
    truth = {{"model", "ARMA(1,1) around unit level"},
             {"n", n},
             {"periods", T},
             {"rho", p.rho},
             {"theta_ma", p.theta_ma},
             {"sigma_nu", p.sigma_nu},
             {"sigma_eta", p.sigma_eta},
             {"mu_atoms", {-1.0, 1.0}}};
    rep.summary["outputs"]["panel.csv"] = cli::fnv1a_hex(rep.dir / "panel.csv");
  } else {
    throw ValidationError("--which must be lognormal, panel, or arma");
  }

  truth["seed"] = o.seed;
  rep.write_json("truth.json", truth);
  rep.summary["which"] = o.which;
  rep.summary["seed"] = o.seed;
  return finish_plain(rep);
}

// ------------------------------------------------------------------ wiring -

int run(const std::vector<std::string>& args);

int replay_config(const std::vector<std::string>& args) {
  if (args.size() < 2) throw ValidationError("--config needs a file path");
  std::ifstream in(args[1]);
  if (!in) throw ValidationError("cannot open config file: " + args[1]);
  json cfg = json::parse(in, nullptr, true);
  if (!cfg.contains("command") || !cfg.contains("options"))
    throw ValidationError("config file lacks command/options");

  const std::vector<std::string> extra(args.begin() + 2, args.end());
  bool extra_out = false;
  for (const std::string& a : extra)
    if (a.rfind("--out", 0) == 0) extra_out = true;

  std::vector<std::string> rebuilt{cfg.at("command").get<std::string>()};
  for (const auto& [key, value] : cfg.at("options").items()) {
    if (key == "out" && extra_out) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) rebuilt.push_back("--" + key);
    } else if (value.is_string()) {
      rebuilt.push_back("--" + key + "=" + value.get<std::string>());
    } else if (value.is_number_unsigned()) {
      rebuilt.push_back("--" + key + "=" +
                        std::to_string(value.get<unsigned long long>()));
    } else if (value.is_number_integer()) {
      rebuilt.push_back("--" + key + "=" + std::to_string(value.get<long long>()));
    } else if (value.is_number_float()) {
      const double d = value.get<double>();
      if (std::isnan(d)) continue;
      rebuilt.push_back("--" + key + "=" + format_double(d));
    }
  }
  rebuilt.insert(rebuilt.end(), extra.begin(), extra.end());
  return run(rebuilt);
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"Empirical Bayes deconvolution toolkit"};
  app.require_subcommand(1);
  int rc = 0;

  NpmleOpts np;
  auto* np_cmd = app.add_subcommand("npmle", "fit a nonparametric mixing distribution");
  np_cmd->add_option("--data", np.data, "observations CSV (header: value)")->required();
  np_cmd->add_option("--kernel", np.kernel, "noise family")
      ->check(CLI::IsMember({"gaussian", "poisson", "binomial", "gamma"}))
      ->capture_default_str();
  np_cmd->add_option("--sd", np.sd, "gaussian noise scale")->capture_default_str();
  np_cmd->add_option("--trials", np.trials, "binomial trial count")->capture_default_str();
  np_cmd->add_option("--shape", np.shape, "gamma shape")->capture_default_str();
  np_cmd->add_option("--grid-size", np.grid_size, "support grid size")
      ->capture_default_str();
  np_cmd->add_option("--grid-lo", np.grid_lo, "explicit grid lower end");
  np_cmd->add_option("--grid-hi", np.grid_hi, "explicit grid upper end");
  add_solver_flags(np_cmd, np.solver);
  np_cmd->add_option("--out", np.out, "report directory")->required();
  np_cmd->callback([&] { rc = run_npmle(np); });

  RulesOpts ru;
  auto* ru_cmd = app.add_subcommand("rules", "classical compound decision rules");
  ru_cmd->add_flag("--binary", ru.binary, "two-point classification rule");
  ru_cmd->add_flag("--tweedie", ru.tweedie, "posterior mean rule from a fitted mixture");
  ru_cmd->add_option("--p", ru.p, "prior probability of +1")->capture_default_str();
  ru_cmd->add_option("--data", ru.data, "observations CSV for --tweedie");
  ru_cmd->add_option("--sd", ru.sd, "gaussian noise scale")->capture_default_str();
  ru_cmd->add_option("--grid-size", ru.grid_size, "support grid size")
      ->capture_default_str();
  ru_cmd->add_option("--table-size", ru.table_size, "rule table length")
      ->capture_default_str();
  add_solver_flags(ru_cmd, ru.solver);
  ru_cmd->add_option("--out", ru.out, "report directory")->required();
  ru_cmd->callback([&] { rc = run_rules(ru); });

  PanelFitOpts pf;
  auto* pf_cmd = app.add_subcommand("panel-fit", "bivariate heterogeneity at fixed rho");
  pf_cmd->add_option("--panel", pf.panel, "panel CSV (unit_id,period,value)")->required();
  pf_cmd->add_option("--rho", pf.rho, "autoregression coefficient")->capture_default_str();
  pf_cmd->add_option("--initial", pf.initial, "first-period treatment")
      ->check(CLI::IsMember({"drop", "stationary"}))
      ->capture_default_str();
  pf_cmd->add_option("--alpha-grid-size", pf.alpha_grid, "location grid size")
      ->capture_default_str();
  pf_cmd->add_option("--theta-grid-size", pf.theta_grid, "scale grid size")
      ->capture_default_str();
  add_solver_flags(pf_cmd, pf.solver);
  pf_cmd->add_option("--out", pf.out, "report directory")->required();
  pf_cmd->callback([&] { rc = run_panel_fit(pf); });

  ProfileOpts pr;
  auto* pr_cmd = app.add_subcommand("profile", "profile likelihood over rho");
  pr_cmd->add_option("--panel", pr.panel, "panel CSV (unit_id,period,value)")->required();
  pr_cmd->add_option("--rho-grid", pr.rho_grid, "rho sweep a:b:step")->required();
  pr_cmd->add_option("--initial", pr.initial, "first-period treatment")
      ->check(CLI::IsMember({"drop", "stationary"}))
      ->capture_default_str();
  pr_cmd->add_option("--alpha-grid-size", pr.alpha_grid, "location grid size")
      ->capture_default_str();
  pr_cmd->add_option("--theta-grid-size", pr.theta_grid, "scale grid size")
      ->capture_default_str();
  add_solver_flags(pr_cmd, pr.solver);
  pr_cmd->add_option("--out", pr.out, "report directory")->required();
  pr_cmd->callback([&] { rc = run_profile(pr); });

  ArmaFitOpts af;
  auto* af_cmd = app.add_subcommand("arma-fit", "lattice profile of the trajectory model");
  af_cmd->add_option("--panel", af.panel, "panel CSV (unit_id,period,value)")->required();
  af_cmd->add_option("--rho-grid", af.rho_grid, "rho sweep a:b:step")->required();
  af_cmd->add_option("--theta-ma-grid", af.theta_ma_grid, "MA coefficient sweep")
      ->required();
  af_cmd->add_option("--sigma-nu-grid", af.sigma_nu_grid, "AR innovation scale sweep")
      ->required();
  af_cmd->add_option("--sigma-eta-grid", af.sigma_eta_grid, "MA innovation scale sweep")
      ->required();
  af_cmd->add_option("--mu-grid-size", af.mu_grid, "level grid size")
      ->capture_default_str();
  add_solver_flags(af_cmd, af.solver);
  af_cmd->add_option("--out", af.out, "report directory")->required();
  af_cmd->callback([&] { rc = run_arma_fit(af); });

  PredictOpts pd;
  auto* pd_cmd = app.add_subcommand("predict", "posterior predictive paths and bands");
  pd_cmd->add_option("--panel", pd.panel, "panel CSV (unit_id,period,value)")->required();
  pd_cmd->add_option("--hhat", pd.hhat, "fitted mixture CSV (alpha,theta,weight)")
      ->required();
  pd_cmd->add_option("--unit", pd.unit, "unit id to forecast")->required();
  pd_cmd->add_option("--rho", pd.rho, "autoregression coefficient")->capture_default_str();
  pd_cmd->add_option("--horizon", pd.horizon, "periods ahead")->capture_default_str();
  pd_cmd->add_option("--m", pd.m, "paths per posterior draw")->capture_default_str();
  pd_cmd->add_option("--M", pd.M, "posterior draws")->capture_default_str();
  pd_cmd->add_option("--seed", pd.seed, "simulation seed")->capture_default_str();
  pd_cmd->add_option("--drift", pd.drift, "intercept convention")
      ->check(CLI::IsMember({"stationary-alpha", "raw-alpha"}))
      ->capture_default_str();
  pd_cmd->add_option("--level", pd.level, "uniform band coverage")->capture_default_str();
  pd_cmd->add_option("--out", pd.out, "report directory")->required();
  pd_cmd->callback([&] { rc = run_predict(pd); });

  DemoOpts de;
  auto* de_cmd = app.add_subcommand("simulate-demo", "regenerate a synthetic dataset");
  de_cmd->add_option("--which", de.which, "lognormal, panel, or arma")->required();
  de_cmd->add_option("--seed", de.seed, "generator seed")->capture_default_str();
  de_cmd->add_option("--n", de.n, "observations or units (0 = setting default)")
      ->capture_default_str();
  de_cmd->add_option("--periods", de.periods, "periods per unit (0 = setting default)")
      ->capture_default_str();
  de_cmd->add_option("--out", de.out, "report directory")->required();
  de_cmd->callback([&] { rc = run_demo(de); });

  std::vector<const char*> argv;
  argv.push_back("ebdeconv");
  for (const std::string& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  try {
    if (!args.empty() && args[0] == "--config") return replay_config(args);
    return run(args);
  } catch (const ValidationError& e) {
    cli::write_error_report(g_out, "validation", e.what());
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    cli::write_error_report(g_out, "numeric", e.what());
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    cli::write_error_report(g_out, "internal", e.what());
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
