// mingrad: command-line harness for the gradient-estimator experiments.
//
// Each subcommand writes CSV tables and a manifest.json into --out
// (default ./runs/<experiment>-<seed>/). Exit status: 0 on success, 1 on
// invalid input, 2 on numerical failure or a failed check.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cli_config.hpp"
#include "mingrad/mingrad.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mingrad::cli {
namespace {

struct Common {
  std::uint64_t seed = 0;
  std::string out;
  std::size_t jobs = default_jobs();
  std::string config;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed, "Random seed for instances, outer points and streams");
  sub->add_option("--out", c.out, "Output directory (default: ./runs/<experiment>-<seed>/)");
  sub->add_option("--jobs", c.jobs, "Worker threads for independent repetitions; 1 runs sequentially")
      ->check(CLI::PositiveNumber);
  sub->add_option("--config", c.config, "JSON file whose keys mirror flag names; flags override it");
}

// Collects output files and writes the manifest last.
class RunOutput {
 public:
  RunOutput(std::string experiment, const Common& c, const CLI::App& sub, std::vector<std::string> argv)
      : dir_(c.out.empty() ? fs::path("runs") / (experiment + "-" + std::to_string(c.seed)) : fs::path(c.out)),
        start_(std::chrono::system_clock::now()),
        steady_(std::chrono::steady_clock::now()) {
    manifest_.experiment = std::move(experiment);
    manifest_.command_line = std::move(argv);
    manifest_.config = resolved_config(sub);
    manifest_.seed = c.seed;
    manifest_.started = utc_timestamp(start_);
  }

  void write(const std::string& name, const std::string& content) {
    write_file_atomic(dir_ / name, content);
    manifest_.outputs.push_back(name);
  }
  void write(const std::string& name, const CsvTable& table) { write(name, table.str()); }

  void set_instance_hash(std::string h) { manifest_.instance_hash = std::move(h); }
  json& results() { return manifest_.results; }

  void finish() {
    manifest_.finished = utc_timestamp();
    manifest_.duration_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - steady_).count();
    write_file_atomic(dir_ / "manifest.json", manifest_.to_json().dump(2) + "\n");
    std::cout << "wrote " << manifest_.outputs.size() << " table(s) and manifest.json to " << dir_.string() << "\n";
  }

 private:
  fs::path dir_;
  std::chrono::system_clock::time_point start_;
  std::chrono::steady_clock::time_point steady_;
  RunManifest manifest_;
};

std::vector<EstimatorKind> parse_estimators(const std::vector<std::string>& names) {
  if (names.empty()) throw InvalidArgument("estimator list is empty");
  std::vector<EstimatorKind> out;
  for (const std::string& s : names) out.push_back(parse_estimator(s));
  return out;
}

std::vector<CostPath> parse_paths(const std::vector<std::string>& names) {
  std::vector<CostPath> out;
  for (const std::string& s : names) {
    if (s == "g1") out.push_back(CostPath::Analytic);
    else if (s == "g2-reverse") out.push_back(CostPath::AutomaticReverse);
    else if (s == "g2-forward") out.push_back(CostPath::AutomaticForward);
    else if (s == "g3") out.push_back(CostPath::Implicit);
    else throw InvalidArgument("unknown cost path '" + s + "' (expected g1, g2-reverse, g2-forward or g3)");
  }
  if (out.empty()) throw InvalidArgument("cost path list is empty");
  return out;
}

// Fits whose failure is reported in the manifest instead of aborting.
json try_fit(const std::function<RateFit()>& f) {
  try {
    return f().to_json();
  } catch (const InsufficientData& e) {
    return {{"error", e.what()}};
  }
}

json fit_json(const LinearCost& f) {
  return {{"intercept", json_number(f.intercept)}, {"slope", json_number(f.slope)}, {"r2", json_number(f.r2)}};
}

void print_check(const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS  " : "FAIL  ") << name << "  " << detail << "\n";
}

struct ProblemOptions {
  std::string loss = "ridge";
  std::size_t n = 50;
  std::size_t m = 100;
  std::optional<double> lambda;
  bool lambda_inv_n = false;
  int p = 4;
  double epsilon = 0.1;

  void add(CLI::App* sub) {
    sub->add_option("--loss", loss, "Inner loss: ridge, logistic, least-pth, entropic-ot or scaled-norm");
    sub->add_option("--n", n, "Outer dimension (rows of D, or source support size)")->check(CLI::PositiveNumber);
    sub->add_option("--m", m, "Inner dimension (columns of D, or target support size)")->check(CLI::PositiveNumber);
    sub->add_option("--lambda", lambda, "Ridge/logistic regularization (default: 1/n)");
    sub->add_flag("--lambda-inv-n", lambda_inv_n, "Set lambda = 1/n explicitly");
    sub->add_option("--p", p, "Exponent of the least-p-th loss (even, >= 2)");
    sub->add_option("--epsilon", epsilon, "Entropic regularization of the OT loss");
  }

  double lam() const {
    if (lambda_inv_n || !lambda) return 1.0 / static_cast<double>(n);
    if (!(*lambda >= 0.0)) throw InvalidArgument("--lambda must be >= 0");
    return *lambda;
  }

  ProblemInstance make(std::uint64_t seed) const {
    switch (parse_problem_kind(loss)) {
      case ProblemKind::Ridge: return make_ridge(n, m, lam(), seed);
      case ProblemKind::Logistic: return make_logistic(n, m, lam(), seed);
      case ProblemKind::LeastPth: return make_least_pth(n, m, p, seed);
      case ProblemKind::EntropicOT:
        if (!(epsilon > 0.0)) throw InvalidArgument("--epsilon must be > 0");
        return make_entropic_ot(n, m, epsilon, seed);
      case ProblemKind::ScaledNorm: return make_scaled_norm(n, m);
    }
    throw InvalidArgument("unknown loss " + loss);
  }
};

struct ReferenceOptions {
  std::size_t T = 2000000;
  double tol = 1e-13;

  void add(CLI::App* sub) {
    sub->add_option("--ref-T", T, "Maximum inner steps of the reference run")->check(CLI::PositiveNumber);
    sub->add_option("--ref-tol", tol, "Reference stopping tolerance on |grad_z L|");
  }
};

// ---------------------------------------------------------------- curve

struct CurveCmd {
  Common common;
  ProblemOptions problem;
  ReferenceOptions reference;
  std::size_t T = 2000;
  std::size_t record_every = 10;
  std::optional<double> rho;
  std::vector<std::string> estimators{"g1", "g2", "g3"};
  double start_fraction = 0.25;

  void add(CLI::App* sub) {
    problem.add(sub);
    reference.add(sub);
    sub->add_option("--T", T, "Inner iterations");
    sub->add_option("--record-every", record_every, "Record errors every k steps")->check(CLI::PositiveNumber);
    sub->add_option("--rho", rho, "Constant GD step size (default: 1/L_z)");
    sub->add_option("--estimators", estimators, "Estimators to evaluate")->delimiter(',');
    sub->add_option("--start-fraction", start_fraction, "Automatic fit window starts at this fraction of its end");
    add_common(sub, common);
  }

  int run(const CLI::App& sub, const std::vector<std::string>& argv) {
    const ProblemInstance prob = problem.make(common.seed);
    const Vector x = sample_outer_point(prob, common.seed);
    CurveConfig cc;
    cc.inner = gd_config(prob, x, T);
    cc.inner.record_every = record_every;
    if (rho) {
      if (cc.inner.solver != SolverKind::GD) throw InvalidArgument("--rho applies to gradient descent only");
      cc.inner.schedule = StepSchedule::constant(*rho);
    }
    cc.estimators = parse_estimators(estimators);
    cc.implicit = default_implicit_options(prob, x);
    const ReferenceGradient ref = require_converged(compute_reference(prob, x, reference.T, reference.tol));
    std::optional<Matrix> J_ref;
    if (prob.kind() != ProblemKind::LeastPth) J_ref = reference_jacobian(prob, x, ref.z_ref, cc.implicit);
    const RateCurve curve = rate_curve(prob, x, cc, ref, J_ref ? &*J_ref : nullptr);

    RunOutput out("curve", common, sub, argv);
    out.set_instance_hash(instance_hash(prob));
    out.write("curve.csv", curve.to_csv(false));
    CsvTable timing({"t", "step_ns"});
    for (std::size_t i = 0; i < curve.t.size(); ++i)
      timing.add_row({std::to_string(curve.t[i]), std::to_string(curve.step_ns[i])});
    out.write("curve_timing.csv", timing);

    const FitScale scale = prob.kind() == ProblemKind::LeastPth ? FitScale::LogLog : FitScale::SemiLog;
    FitOptions fo;
    fo.reference_scale = ref.g_star.norm();
    fo.start_fraction = scale == FitScale::SemiLog ? start_fraction : 0.0;
    const std::vector<double> t(curve.t.begin(), curve.t.end());
    json& r = out.results();
    r["g_star_norm"] = json_number(ref.g_star.norm());
    r["reference_steps"] = ref.T_ref;
    r["rho"] = json_number(cc.inner.schedule.at(0));
    r["fits"]["z_err"] = try_fit([&] { return fit_rate(t, curve.z_err, scale, fo); });
    const bool has_g1 = std::find(cc.estimators.begin(), cc.estimators.end(), EstimatorKind::Analytic) != cc.estimators.end();
    for (EstimatorKind k : cc.estimators) {
      const std::string name = to_string(k);
      r["fits"][name] = try_fit([&] { return fit_rate(t, curve.errors(k), scale, fo); });
      try {
        if (k == EstimatorKind::Analytic) {
          const SlopeRatio s = slope_ratio(t, curve.errors(k), curve.z_err, scale, fo);
          r["slope_ratio"]["g1/z"] = json_number(s.ratio);
        } else if (has_g1) {
          const SlopeRatio s = slope_ratio(t, curve.errors(k), curve.errors(EstimatorKind::Analytic), scale, fo);
          r["slope_ratio"][name + "/g1"] = json_number(s.ratio);
        }
      } catch (const InsufficientData& e) {
        r["slope_ratio"][name] = e.what();
      }
      std::cout << name << " error at t=" << curve.t.back() << ": " << format_double(curve.errors(k).back()) << "\n";
    }
    if (r.contains("slope_ratio")) std::cout << "slope ratios: " << r["slope_ratio"].dump() << "\n";
    out.finish();
    return 0;
  }
};

// ------------------------------------------------------------ sgd-noise

struct NoiseCmd {
  Common common;
  ProblemOptions problem;
  ReferenceOptions reference;
  double rho_min = 1e-3;
  double rho_max = 1e-1;
  std::size_t rho_count = 10;
  std::size_t R = 20;
  double horizon = 400.0;
  std::size_t T_min = 1000;
  double trailing = 0.2;
  std::size_t samples = 50;
  std::vector<std::string> estimators{"g1", "g2", "g3"};

  NoiseCmd() {
    problem.loss = "logistic";
    problem.n = 30;
    problem.m = 50;
  }

  void add(CLI::App* sub) {
    problem.add(sub);
    reference.add(sub);
    sub->add_option("--rho-min", rho_min, "Smallest constant step size");
    sub->add_option("--rho-max", rho_max, "Largest constant step size");
    sub->add_option("--rho-count", rho_count, "Number of log-spaced step sizes")->check(CLI::PositiveNumber);
    sub->add_option("--R", R, "Independent repetitions per step size")->check(CLI::PositiveNumber);
    sub->add_option("--horizon", horizon, "Run length T = max(T-min, horizon / rho)");
    sub->add_option("--T-min", T_min, "Minimum run length");
    sub->add_option("--trailing-fraction", trailing, "Plateau averaged over this trailing part of each run");
    sub->add_option("--samples", samples, "Error evaluations in the trailing window");
    sub->add_option("--estimators", estimators, "Estimators to evaluate")->delimiter(',');
    add_common(sub, common);
  }

  int run(const CLI::App& sub, const std::vector<std::string>& argv) {
    if (!(rho_min > 0.0 && rho_max >= rho_min)) throw InvalidArgument("need 0 < rho-min <= rho-max");
    const ProblemInstance prob = problem.make(common.seed);
    const Vector x = sample_outer_point(prob, common.seed);
    NoiseSweepConfig cfg;
    for (std::size_t i = 0; i < rho_count; ++i) {
      const double f = rho_count == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(rho_count - 1);
      cfg.rho_grid.push_back(rho_min * std::pow(rho_max / rho_min, f));
    }
    cfg.R = R;
    cfg.horizon = horizon;
    cfg.T_min = T_min;
    cfg.trailing_fraction = trailing;
    cfg.samples = samples;
    cfg.estimators = parse_estimators(estimators);
    cfg.implicit = default_implicit_options(prob, x);
    cfg.seed = common.seed;
    cfg.jobs = common.jobs;
    const ReferenceGradient ref = require_converged(compute_reference(prob, x, reference.T, reference.tol));
    const NoiseSweepResult res = sgd_noise_sweep(prob, x, cfg, ref);

    RunOutput out("sgd-noise", common, sub, argv);
    out.set_instance_hash(instance_hash(prob));
    out.write("noise.csv", res.to_csv());
    for (EstimatorKind k : res.estimators) {
      out.results()["slopes"][to_string(k)] = res.slope(k).to_json();
      std::cout << to_string(k) << " plateau-vs-rho slope " << format_double(res.slope(k).slope) << "\n";
    }
    out.finish();
    return 0;
  }
};

// ------------------------------------------------------------ sgd-decay

struct DecayCmd {
  Common common;
  ProblemOptions problem;
  ReferenceOptions reference;
  double rho0 = 10.0;
  double alpha = 0.8;
  std::size_t T = 100000;
  std::size_t R = 20;
  std::size_t records = 60;
  double fit_lo = 0.0;
  std::vector<std::string> estimators{"g1", "g2", "g3"};

  DecayCmd() {
    problem.loss = "logistic";
    problem.n = 30;
    problem.m = 50;
  }

  void add(CLI::App* sub) {
    problem.add(sub);
    reference.add(sub);
    sub->add_option("--rho0", rho0, "Step size scale in rho_t = rho0 (t + 1)^(-alpha)");
    sub->add_option("--alpha", alpha, "Step size decay exponent, in (0, 1)");
    sub->add_option("--T", T, "Inner iterations")->check(CLI::PositiveNumber);
    sub->add_option("--R", R, "Independent repetitions")->check(CLI::PositiveNumber);
    sub->add_option("--records", records, "Log-spaced recording points in [1, T]")->check(CLI::PositiveNumber);
    sub->add_option("--fit-lo", fit_lo, "Start of the log-log fit window (default: T/10)");
    sub->add_option("--estimators", estimators, "Estimators to evaluate")->delimiter(',');
    add_common(sub, common);
  }

  int run(const CLI::App& sub, const std::vector<std::string>& argv) {
    const ProblemInstance prob = problem.make(common.seed);
    const Vector x = sample_outer_point(prob, common.seed);
    DecayConfig cfg;
    cfg.rho0 = rho0;
    cfg.alpha = alpha;
    cfg.T = T;
    cfg.R = R;
    cfg.record_at = log_spaced_steps(1, T, records);
    cfg.fit_lo = fit_lo;
    cfg.estimators = parse_estimators(estimators);
    cfg.implicit = default_implicit_options(prob, x);
    cfg.seed = common.seed;
    cfg.jobs = common.jobs;
    const ReferenceGradient ref = require_converged(compute_reference(prob, x, reference.T, reference.tol));
    const DecayResult res = sgd_decay_curve(prob, x, cfg, ref);

    RunOutput out("sgd-decay", common, sub, argv);
    out.set_instance_hash(instance_hash(prob));
    out.write("decay.csv", res.to_csv());
    for (EstimatorKind k : res.estimators) {
      out.results()["fits"][to_string(k)] = res.fit(k).to_json();
      std::cout << to_string(k) << " log-log slope " << format_double(res.fit(k).slope) << "\n";
    }
    out.finish();
    return 0;
  }
};

// ------------------------------------------------------ quadratic-check

struct QuadraticCmd {
  Common common;
  std::size_t n = 50;
  std::size_t m = 100;
  std::vector<std::size_t> t_list{1, 5, 25, 100};
  double tol = 1e-10;

  void add(CLI::App* sub) {
    sub->add_option("--n", n, "Outer dimension")->check(CLI::PositiveNumber);
    sub->add_option("--m", m, "Inner dimension")->check(CLI::PositiveNumber);
    sub->add_option("--t-list", t_list, "Steps t at which g2_t is compared with g1_2t")->delimiter(',');
    sub->add_option("--tol", tol, "Relative tolerance");
    add_common(sub, common);
  }

  int run(const CLI::App& sub, const std::vector<std::string>& argv) {
    if (t_list.empty()) throw InvalidArgument("--t-list is empty");
    const ProblemInstance prob = make_ridge(n, m, 0.0, common.seed);
    const Vector x = sample_outer_point(prob, common.seed);
    const std::size_t t_max = *std::max_element(t_list.begin(), t_list.end());
    const InnerConfig cfg = gd_config(prob, x, 2 * t_max);
    const ImplicitOptions io = default_implicit_options(prob, x);
    std::vector<SolverState> states;
    iterate(prob, x, cfg, nullptr, [&](const SolverState& s) { states.push_back(s); });

    CsvTable table({"t", "g2_vs_g1_2t", "g2_bound", "g3_norm", "g3_bound", "pass"});
    bool all = true;
    for (std::size_t t : t_list) {
      const Vector g1 = estimate_g1(states[2 * t], prob, x).g;
      const double d = (estimate_g2(states[t], prob, x).g - g1).norm();
      const double bound = tol * (1.0 + g1.norm());
      const double g3 = estimate_g3(states[t], prob, x, io).g.norm();
      const bool ok = d <= bound && g3 <= tol;
      all = all && ok;
      table.add_row({std::to_string(t), format_double(d), format_double(bound), format_double(g3), format_double(tol),
                     ok ? "1" : "0"});
      print_check("t=" + std::to_string(t), ok,
                  "|g2_t - g1_2t| = " + format_double(d) + ", |g3_t| = " + format_double(g3));
    }
    RunOutput out("quadratic-check", common, sub, argv);
    out.set_instance_hash(instance_hash(prob));
    out.write("quadratic.csv", table);
    out.results()["pass"] = all;
    out.finish();
    return all ? 0 : 2;
  }
};

// ------------------------------------------------- jacobian-closed-form

struct JacobianCmd {
  Common common;
  std::size_t n = 5;
  std::size_t m = 8;
  std::size_t T = 200;
  double kappa = 0.5;
  double tol = 1e-12;

  void add(CLI::App* sub) {
    sub->add_option("--n", n, "Outer dimension")->check(CLI::PositiveNumber);
    sub->add_option("--m", m, "Inner dimension")->check(CLI::PositiveNumber);
    sub->add_option("--T", T, "Inner iterations")->check(CLI::PositiveNumber);
    sub->add_option("--kappa", kappa, "Contraction factor 1 - rho sum(x), in (0, 1)");
    sub->add_option("--tol", tol, "Entrywise tolerance per step: |J_t - closed form| <= tol t");
    add_common(sub, common);
  }

  int run(const CLI::App& sub, const std::vector<std::string>& argv) {
    if (!(kappa > 0.0 && kappa < 1.0)) throw InvalidArgument("--kappa must be in (0, 1)");
    const ProblemInstance prob = make_scaled_norm(n, m);
    const Vector x = sample_outer_point(prob, common.seed);
    const double rho = (1.0 - kappa) / x.sum();
    InnerConfig cfg;
    cfg.schedule = StepSchedule::constant(rho);
    cfg.T = T;
    cfg.z0 = Vector::LinSpaced(static_cast<Eigen::Index>(m), 1.0, 2.0);
    const Vector ones = Vector::Ones(static_cast<Eigen::Index>(n));
    CsvTable table({"t", "max_deviation", "bound"});
    bool all = true;
    double worst = 0.0;
    iterate(prob, x, cfg, nullptr, [&](const SolverState& s) {
      if (s.t == 0) return;
      const double t = static_cast<double>(s.t);
      const Matrix want = -rho * t * std::pow(kappa, t - 1.0) * ones * cfg.z0->transpose();
      const double dev = (s.J - want).cwiseAbs().maxCoeff();
      all = all && dev <= tol * t;
      worst = std::max(worst, dev / t);
      table.add_row({std::to_string(s.t), format_double(dev), format_double(tol * t)});
    });
    print_check("closed-form Jacobian", all, "max_t |J_t - J_closed|_max / t = " + format_double(worst));
    RunOutput out("jacobian-closed-form", common, sub, argv);
    out.set_instance_hash(instance_hash(prob));
    out.write("jacobian.csv", table);
    out.results()["pass"] = all;
    out.results()["max_scaled_deviation"] = json_number(worst);
    out.finish();
    return all ? 0 : 2;
  }
};

// ---------------------------------------------------- bilevel-contrast

struct BilevelCmd {
  Common common;
  ReferenceOptions reference;
  std::size_t n = 50;
  std::size_t m = 100;
  std::optional<double> lambda;
  std::size_t T = 1500;
  std::size_t record_every = 5;
  double b_scale = 0.1;
  double start_fraction = 0.25;

  void add(CLI::App* sub) {
    reference.add(sub);
    sub->add_option("--n", n, "Outer dimension")->check(CLI::PositiveNumber);
    sub->add_option("--m", m, "Inner dimension")->check(CLI::PositiveNumber);
    sub->add_option("--lambda", lambda, "Ridge regularization of the inner problem (default: 1/n)");
    sub->add_option("--T", T, "Inner iterations");
    sub->add_option("--record-every", record_every, "Record errors every k steps")->check(CLI::PositiveNumber);
    sub->add_option("--b-scale", b_scale, "Standard deviation of the entries of B in L' = <c, z> + x^T B z");
    sub->add_option("--start-fraction", start_fraction, "Automatic fit window starts at this fraction of its end");
    add_common(sub, common);
  }

  int run(const CLI::App& sub, const std::vector<std::string>& argv) {
    const double lam = lambda.value_or(1.0 / static_cast<double>(n));
    const ProblemInstance prob = make_ridge(n, m, lam, common.seed);
    const Vector x = sample_outer_point(prob, common.seed);
    RngStream rng(common.seed, 7);
    LinearOuterLoss outer;
    outer.c.resize(prob.cols());
    for (Eigen::Index i = 0; i < outer.c.size(); ++i) outer.c(i) = rng.normal();
    outer.B.resize(prob.rows(), prob.cols());
    for (Eigen::Index i = 0; i < outer.B.rows(); ++i)
      for (Eigen::Index j = 0; j < outer.B.cols(); ++j) outer.B(i, j) = b_scale * rng.normal();
    const ReferenceGradient ref = require_converged(compute_reference(prob, x, reference.T, reference.tol));
    const ImplicitOptions io = default_implicit_options(prob, x);
    const Vector g_star = bilevel_reference(prob, outer, x, ref.z_ref, io);
    const Vector g1_limit = outer.grad_x(ref.z_ref, x);

    std::vector<double> t, e1, e2, e3, ez;
    InnerConfig cfg = gd_config(prob, x, T);
    iterate(prob, x, cfg, nullptr, [&](const SolverState& s) {
      if (s.t % record_every != 0 && s.t != T) return;
      const BilevelEstimates b = bilevel_estimates(s, prob, outer, x, io);
      t.push_back(static_cast<double>(s.t));
      e1.push_back((b.g1.g - g1_limit).norm());
      e2.push_back((b.g2.g - g_star).norm());
      e3.push_back((b.g3.g - g_star).norm());
      ez.push_back((s.z - ref.z_ref).norm());
    });
    CsvTable table({"t", "z_err", "g1_err", "g2_err", "g3_err"});
    for (std::size_t i = 0; i < t.size(); ++i) {
      table.add_row({format_double(t[i]), format_double(ez[i]), format_double(e1[i]), format_double(e2[i]),
                     format_double(e3[i])});
    }
    RunOutput out("bilevel-contrast", common, sub, argv);
    out.set_instance_hash(instance_hash(prob));
    out.write("bilevel.csv", table);
    FitOptions fo;
    fo.reference_scale = g_star.norm();
    fo.start_fraction = start_fraction;
    json& r = out.results();
    r["g1_limit_gap"] = json_number((g1_limit - g_star).norm());
    r["fits"]["g1"] = try_fit([&] { return fit_rate(t, e1, FitScale::SemiLog, fo); });
    r["fits"]["g2"] = try_fit([&] { return fit_rate(t, e2, FitScale::SemiLog, fo); });
    r["fits"]["g3"] = try_fit([&] { return fit_rate(t, e3, FitScale::SemiLog, fo); });
    try {
      const SlopeRatio s = slope_ratio(t, e2, e1, FitScale::SemiLog, fo);
      r["slope_ratio_g2_g1"] = json_number(s.ratio);
      std::cout << "slope(g'2) / slope(g'1) = " << format_double(s.ratio) << "\n";
    } catch (const InsufficientData& e) {
      r["slope_ratio_g2_g1"] = e.what();
    }
    std::cout << "|g'1 limit - true gradient| = " << format_double((g1_limit - g_star).norm()) << "\n";
    out.finish();
    return 0;
  }
};

// ----------------------------------------------------------- barycenter

struct BarycenterCmd {
  Common common;
  std::size_t n = 100;
  std::size_t m = 100;
  std::size_t N = 5;
  double epsilon = 0.05;
  double eta = 0.05;
  std::size_t Q = 1500;
  std::vector<std::size_t> tau_list{10, 20, 50};
  std::vector<std::string> estimators{"g1", "g2"};
  std::size_t monitor_every = 0;
  bool strict_domain = false;
  std::size_t ref_steps = 5000;

  void add(CLI::App* sub) {
    sub->add_option("--n", n, "Barycenter support size")->check(CLI::PositiveNumber);
    sub->add_option("--m", m, "Support size of the input histograms")->check(CLI::PositiveNumber);
    sub->add_option("--N", N, "Number of input histograms")->check(CLI::PositiveNumber);
    sub->add_option("--epsilon", epsilon, "Entropic regularization");
    sub->add_option("--eta", eta, "Mirror descent step size");
    sub->add_option("--Q", Q, "Outer iterations");
    sub->add_option("--tau-list", tau_list, "Sinkhorn sweeps per gradient estimate")->delimiter(',');
    sub->add_option("--estimators", estimators, "Estimators to compare")->delimiter(',');
    sub->add_option("--monitor-every", monitor_every, "Evaluate the exact objective every k steps (0: never)");
    sub->add_flag("--strict-domain", strict_domain, "Fail instead of clamping underflowing iterate entries");
    sub->add_option("--ref-steps", ref_steps, "Maximum mirror steps of the reference solve");
    add_common(sub, common);
  }

  int run(const CLI::App& sub, const std::vector<std::string>& argv) {
    if (!(epsilon > 0.0)) throw InvalidArgument("--epsilon must be > 0");
    const std::vector<EstimatorKind> kinds = parse_estimators(estimators);
    const BarycenterProblem bp = make_barycenter(n, m, N, epsilon, common.seed);
    const Vector x0 = Vector::Constant(static_cast<Eigen::Index>(n), 1.0 / static_cast<double>(n));
    BarycenterReferenceOptions ro;
    ro.max_steps = ref_steps;
    const BarycenterReference ref = barycenter_reference(bp, x0, ro, common.jobs);

    RunOutput out("barycenter", common, sub, argv);
    out.set_instance_hash(instance_hash(bp));
    CsvTable summary({"estimator", "tau", "gap", "distance", "simplex_error", "floored", "monotonicity_violations"});
    CsvTable timing({"estimator", "tau", "wall_s"});
    json& r = out.results();
    r["reference"] = {{"objective", json_number(ref.objective)},
                      {"residual", json_number(ref.residual)},
                      {"steps", ref.steps}};
    for (std::size_t tau : tau_list) {
      for (EstimatorKind k : kinds) {
        OuterRunConfig cfg;
        cfg.estimator = k;
        cfg.t_inner = tau;
        cfg.eta = eta;
        cfg.Q = Q;
        cfg.seed = common.seed;
        cfg.jobs = common.jobs;
        BarycenterRunOptions bo;
        bo.monitor_every = monitor_every;
        bo.strict_domain = strict_domain;
        bo.x_star = ref.x;
        const OuterTrace tr = mirror_descent_barycenter(bp, x0, cfg, bo);
        double simplex = 0.0;
        for (const OuterRecord& rec : tr.records) simplex = std::max(simplex, std::abs(rec.x.sum() - 1.0));
        const double gap = barycenter_gap(bp, tr.back().x, ref.x, {}, common.jobs);
        const std::string name = to_string(k);
        summary.add_row({name, std::to_string(tau), format_double(gap), format_double(tr.back().error),
                         format_double(simplex), tr.floored ? "1" : "0", std::to_string(tr.monotonicity_violations)});
        timing.add_row({name, std::to_string(tau), format_double(static_cast<double>(tr.back().wall_ns) * 1e-9)});
        out.write("trace-" + name + "-" + std::to_string(tau) + ".csv", tr.to_csv(false));
        r["gap"][name][std::to_string(tau)] = json_number(gap);
        std::cout << name << " tau=" << tau << " gap " << format_double(gap) << "\n";
      }
    }
    out.write("barycenter.csv", summary);
    out.write("barycenter_timing.csv", timing);
    out.finish();
    return 0;
  }
};

// -------------------------------------------------------- inexact-outer

struct InexactCmd {
  Common common;
  std::size_t n = 30;
  std::size_t m = 10;
  double lambda = 0.1;
  double nu = 0.1;
  std::size_t K = 1;
  std::vector<std::size_t> t_list{5, 10, 20, 40};
  std::size_t Q = 800;
  std::optional<double> eta;
  std::string estimator = "g1";
  bool stochastic = false;

  void add(CLI::App* sub) {
    sub->add_option("--n", n, "Outer dimension")->check(CLI::PositiveNumber);
    sub->add_option("--m", m, "Inner dimension")->check(CLI::PositiveNumber);
    sub->add_option("--lambda", lambda, "Ridge regularization of the inner problem");
    sub->add_option("--nu", nu, "Outer regularization nu/2 |x|^2");
    sub->add_option("--K", K, "Number of targets y_v")->check(CLI::PositiveNumber);
    sub->add_option("--t-list", t_list, "Inner steps per gradient estimate")->delimiter(',');
    sub->add_option("--Q", Q, "Outer iterations");
    sub->add_option("--eta", eta, "Outer step size (default: 1/(2 L_x))");
    sub->add_option("--estimator", estimator, "Gradient estimator: g1, g2 or g3");
    sub->add_flag("--stochastic", stochastic, "Sample one target per step instead of averaging");
    add_common(sub, common);
  }

  int run(const CLI::App& sub, const std::vector<std::string>& argv) {
    if (t_list.empty()) throw InvalidArgument("--t-list is empty");
    if (Q < 1) throw InvalidArgument("--Q must be >= 1");
    const RidgeOuterTestbed tb = make_outer_testbed(n, m, K, lambda, nu, common.seed);
    const Vector x0 = Vector::Zero(tb.inner().rows());
    RunOutput out("inexact-outer", common, sub, argv);
    out.set_instance_hash(instance_hash(tb.inner()));
    CsvTable table({"t_inner", "grad_error", "final_gap"});
    std::vector<double> logD, logd;
    for (std::size_t t : t_list) {
      OuterRunConfig cfg;
      cfg.estimator = parse_estimator(estimator);
      cfg.t_inner = t;
      cfg.eta = eta.value_or(1.0 / (2.0 * tb.L_x()));
      cfg.Q = Q;
      cfg.seed = common.seed;
      cfg.jobs = common.jobs;
      const OuterTrace tr = stochastic ? inexact_sgd(tb, x0, cfg) : inexact_gd(tb, x0, cfg);
      const double D = tr.records[tr.records.size() - 2].grad_error;
      const double d = tr.back().gap;
      table.add_row({std::to_string(t), format_double(D), format_double(d)});
      out.write("trace-t" + std::to_string(t) + ".csv", tr.to_csv(false));
      logD.push_back(std::log(D));
      logd.push_back(std::log(d));
      std::cout << "t_inner=" << t << " Delta " << format_double(D) << " delta " << format_double(d) << "\n";
    }
    out.write("inexact.csv", table);
    json& r = out.results();
    r["mu_x"] = json_number(tb.mu_x());
    r["L_x"] = json_number(tb.L_x());
    if (logD.size() >= 2) {
      const LinearCost f = fit_linear(logD, logd);
      r["plateau_slope"] = fit_json(f);
      std::cout << "log delta vs log Delta slope " << format_double(f.slope) << "\n";
    }
    out.finish();
    return 0;
  }
};

// --------------------------------------------------------------- timing

struct TimingCmd {
  Common common;
  std::size_t n = 100;
  std::size_t m = 200;
  double lambda = 0.01;
  std::vector<std::size_t> t_list{1, 100, 200, 300, 400, 500, 600, 700, 800, 900, 1000};
  std::size_t reps = 20;
  std::vector<std::string> paths{"g1", "g2-reverse", "g3"};

  void add(CLI::App* sub) {
    sub->add_option("--n", n, "Outer dimension")->check(CLI::PositiveNumber);
    sub->add_option("--m", m, "Inner dimension")->check(CLI::PositiveNumber);
    sub->add_option("--lambda", lambda, "Ridge regularization");
    sub->add_option("--t-list", t_list, "Inner step counts to time")->delimiter(',');
    sub->add_option("--reps", reps, "Repetitions per (t, estimator)")->check(CLI::PositiveNumber);
    sub->add_option("--paths", paths, "Cost paths: g1, g2-reverse, g2-forward, g3")->delimiter(',');
    add_common(sub, common);
  }

  int run(const CLI::App& sub, const std::vector<std::string>& argv) {
    const ProblemInstance prob = make_ridge(n, m, lambda, common.seed);
    const Vector x = sample_outer_point(prob, common.seed);
    TimingConfig tc;
    tc.t_grid = t_list;
    tc.reps = reps;
    tc.paths = parse_paths(paths);
    const TimingResult res = timing_benchmark(prob, x, gd_config(prob, x, 0), tc, default_implicit_options(prob, x));

    RunOutput out("timing", common, sub, argv);
    out.set_instance_hash(instance_hash(prob));
    out.write("timing.csv", res.to_csv());
    json& r = out.results();
    for (CostPath p : res.paths) {
      r["fits"][to_string(p)] = fit_json(res.fit(p));
      std::cout << to_string(p) << " ns per step " << format_double(res.fit(p).slope) << " (R^2 "
                << format_double(res.fit(p).r2) << ")\n";
    }
    r["c"] = json_number(res.c);
    const bool has_t1 = std::find(t_list.begin(), t_list.end(), std::size_t{1}) != t_list.end();
    const auto has = [&](CostPath p) { return std::find(res.paths.begin(), res.paths.end(), p) != res.paths.end(); };
    if (has_t1 && has(CostPath::Analytic) && has(CostPath::Implicit)) {
      r["g3_over_g1_at_t1"] = json_number(res.median(CostPath::Implicit, 1) / res.median(CostPath::Analytic, 1));
    }
    std::cout << "overhead factor c = " << format_double(res.c) << "\n";
    out.finish();
    return 0;
  }
};

// ------------------------------------------------------------- selftest

struct SelftestCmd {
  Common common;

  void add(CLI::App* sub) { add_common(sub, common); }

  int run(const CLI::App& sub, const std::vector<std::string>& argv) {
    const std::vector<SelfCheck> checks = run_selftest();
    CsvTable table({"check", "pass", "detail"});
    bool all = true;
    for (const SelfCheck& c : checks) {
      print_check(c.name, c.passed, c.detail);
      table.add_row({c.name, c.passed ? "1" : "0", c.detail});
      all = all && c.passed;
    }
    RunOutput out("selftest", common, sub, argv);
    out.write("selftest.csv", table);
    out.results()["pass"] = all;
    out.finish();
    return all ? 0 : 2;
  }
};

int run_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  const std::vector<std::string> original(argv, argv + argc);

  CLI::App app{"Gradient estimators for min-defined functions: experiments and checks", "mingrad"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));
  app.footer("Exit status: 0 success, 1 invalid input, 2 numerical failure or failed check.");

  CurveCmd curve;
  NoiseCmd noise;
  DecayCmd decay;
  QuadraticCmd quadratic;
  JacobianCmd jacobian;
  BilevelCmd bilevel;
  BarycenterCmd barycenter;
  InexactCmd inexact;
  TimingCmd timing;
  SelftestCmd selftest;

  struct Entry {
    CLI::App* sub;
    std::function<int(const CLI::App&, const std::vector<std::string>&)> run;
  };
  std::vector<Entry> entries;
  auto reg = [&](const char* name, const char* help, auto& cmd) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->option_defaults()->always_capture_default();
    cmd.add(sub);
    entries.push_back({sub, [&cmd](const CLI::App& s, const std::vector<std::string>& a) { return cmd.run(s, a); }});
  };
  reg("curve", "Error curves of the iterate and each estimator along one deterministic run", curve);
  reg("sgd-noise", "Plateau of each estimator's error under constant-step SGD across step sizes", noise);
  reg("sgd-decay", "Error decay of each estimator under SGD with decreasing steps", decay);
  reg("quadratic-check", "Check g2_t = g1_2t and g3 = 0 on an unregularized quadratic", quadratic);
  reg("jacobian-closed-form", "Check the propagated Jacobian against its closed form on a scaled norm", jacobian);
  reg("bilevel-contrast", "Estimator error rates for a bi-level objective with a linear outer loss", bilevel);
  reg("barycenter", "Entropic Wasserstein barycenter by mirror descent with inexact gradients", barycenter);
  reg("inexact-outer", "Outer gradient descent on a Ridge testbed with inexact inner solves", inexact);
  reg("timing", "Wall-clock cost of each estimator against the number of inner steps", timing);
  reg("selftest", "Run the built-in consistency checks", selftest);

  const std::string config_path = find_config_path(args);
  if (!config_path.empty()) {
    const std::vector<std::string> extra = config_arguments(load_config(config_path), args);
    args.insert(args.end(), extra.begin(), extra.end());
  }
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  for (const Entry& e : entries)
    if (e.sub->parsed()) return e.run(*e.sub, original);
  return 1;
}

}  // namespace
}  // namespace mingrad::cli

int main(int argc, char** argv) {
  try {
    return mingrad::cli::run_main(argc, argv);
  } catch (const mingrad::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.numerical() ? 2 : 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
