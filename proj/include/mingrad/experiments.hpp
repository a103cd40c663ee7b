#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "mingrad/errors.hpp"
#include "mingrad/estimators.hpp"
#include "mingrad/io.hpp"
#include "mingrad/numerics.hpp"
#include "mingrad/parallel.hpp"
#include "mingrad/problems.hpp"
#include "mingrad/solvers.hpp"

namespace mingrad {

enum class FitScale { SemiLog, LogLog };

inline std::string to_string(FitScale s) { return s == FitScale::SemiLog ? "semilog" : "loglog"; }

// Least-squares fit of log(error) against t (SemiLog) or log t (LogLog).
struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double t_lo = 0.0;
  double t_hi = 0.0;
  FitScale scale = FitScale::SemiLog;
  std::size_t points = 0;

  nlohmann::json to_json() const {
    return {{"slope", json_number(slope)}, {"intercept", json_number(intercept)}, {"r2", json_number(r2)},
            {"window", {t_lo, t_hi}}, {"scale", to_string(scale)}, {"points", points}};
  }
};

struct FitOptions {
  // Explicit window bounds; unset bounds are chosen automatically.
  std::optional<double> t_lo;
  std::optional<double> t_hi;
  // Points with error below 1e2 * machine epsilon * reference_scale are
  // treated as numerical floor and dropped.
  double reference_scale = 1.0;
  // Automatic window end: the last improvement of the running minimum
  // before `stall` consecutive points fail to improve it. 0 disables.
  std::size_t stall = 10;
  // When a stall is found, points within this factor of the median error
  // after the stall are also dropped.
  double floor_margin = 10.0;
  // Automatic window start as a fraction of the window end.
  double start_fraction = 0.0;
};

// Index one past the last point of the pre-floor part of a curve.
inline std::size_t floor_onset(const std::vector<double>& err, std::size_t stall) {
  if (stall == 0 || err.empty()) return err.size();
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_i = 0;
  std::size_t run = 0;
  for (std::size_t i = 0; i < err.size(); ++i) {
    if (std::isfinite(err[i]) && err[i] < best) {
      best = err[i];
      best_i = i;
      run = 0;
    } else if (++run >= stall) {
      return best_i + 1;
    }
  }
  return err.size();
}

// Linear-interpolated quantile of an unsorted sample.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(v.size());
}

inline RateFit fit_rate(const std::vector<double>& t, const std::vector<double>& err, FitScale scale,
                        const FitOptions& opt = {}) {
  if (t.size() != err.size()) throw InvalidArgument("fit_rate: t and error have different lengths");
  double floor = 1e2 * std::numeric_limits<double>::epsilon() * opt.reference_scale;
  std::size_t end = floor_onset(err, opt.stall);
  if (end < err.size() && opt.floor_margin > 0.0) {
    std::vector<double> tail;
    for (std::size_t i = end; i < err.size(); ++i)
      if (std::isfinite(err[i])) tail.push_back(err[i]);
    if (!tail.empty()) floor = std::max(floor, opt.floor_margin * quantile(tail, 0.5));
  }
  if (opt.t_hi) end = t.size();
  auto usable = [&](std::size_t i) {
    return std::isfinite(err[i]) && err[i] > floor && (scale == FitScale::SemiLog || t[i] > 0.0);
  };
  double t_min = std::numeric_limits<double>::infinity();
  double t_max = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < end; ++i) {
    if (!usable(i)) continue;
    t_min = std::min(t_min, t[i]);
    t_max = std::max(t_max, t[i]);
  }
  const double t_hi = opt.t_hi.value_or(t_max);
  const double t_lo = opt.t_lo.value_or(opt.start_fraction > 0.0 ? opt.start_fraction * t_hi : t_min);
  std::vector<double> X, Y;
  for (std::size_t i = 0; i < end; ++i) {
    if (t[i] < t_lo || t[i] > t_hi || !usable(i)) continue;
    X.push_back(scale == FitScale::LogLog ? std::log(t[i]) : t[i]);
    Y.push_back(std::log(err[i]));
  }
  if (X.size() < 5) {
    throw InsufficientData("fit_rate: " + std::to_string(X.size()) + " points above floor in window [" +
                           format_double(t_lo) + ", " + format_double(t_hi) + "], need 5");
  }
  const double k = static_cast<double>(X.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    mx += X[i];
    my += Y[i];
  }
  mx /= k;
  my /= k;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    sxx += (X[i] - mx) * (X[i] - mx);
    sxy += (X[i] - mx) * (Y[i] - my);
    syy += (Y[i] - my) * (Y[i] - my);
  }
  if (sxx == 0.0) throw InsufficientData("fit_rate: window has a single abscissa");
  RateFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ssr = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    const double e = Y[i] - (f.intercept + f.slope * X[i]);
    ssr += e * e;
  }
  f.r2 = syy > 0.0 ? std::clamp(1.0 - ssr / syy, 0.0, 1.0) : 1.0;
  f.t_lo = t_lo;
  f.t_hi = t_hi;
  f.scale = scale;
  f.points = X.size();
  return f;
}

inline RateFit fit_rate(const std::vector<std::size_t>& t, const std::vector<double>& err, FitScale scale,
                        const FitOptions& opt = {}) {
  return fit_rate(std::vector<double>(t.begin(), t.end()), err, scale, opt);
}

struct SlopeRatio {
  RateFit num;
  RateFit den;
  double ratio = std::numeric_limits<double>::quiet_NaN();
};

// Fits `num` with the automatic window, then fits `den` on that same window,
// so that both slopes describe the same range of t.
inline SlopeRatio slope_ratio(const std::vector<double>& t, const std::vector<double>& num,
                              const std::vector<double>& den, FitScale scale, const FitOptions& opt = {}) {
  SlopeRatio r;
  r.num = fit_rate(t, num, scale, opt);
  FitOptions same = opt;
  same.t_lo = r.num.t_lo;
  same.t_hi = r.num.t_hi;
  same.stall = 0;
  r.den = fit_rate(t, den, scale, same);
  r.ratio = r.num.slope / r.den.slope;
  return r;
}

// Sorted unique integers, roughly geometrically spaced over [lo, hi].
inline std::vector<std::size_t> log_spaced_steps(std::size_t lo, std::size_t hi, std::size_t count) {
  std::set<std::size_t> s;
  if (lo == 0) {
    s.insert(0);
    lo = 1;
  }
  if (hi < lo || count == 0) return {s.begin(), s.end()};
  const double a = std::log(static_cast<double>(lo));
  const double b = std::log(static_cast<double>(hi));
  for (std::size_t i = 0; i < count; ++i) {
    const double f = count == 1 ? 1.0 : static_cast<double>(i) / static_cast<double>(count - 1);
    s.insert(static_cast<std::size_t>(std::llround(std::exp(a + f * (b - a)))));
  }
  return {s.begin(), s.end()};
}

inline std::vector<std::size_t> linear_steps(std::size_t T, std::size_t every) {
  if (every == 0) throw InvalidArgument("linear_steps: step must be >= 1");
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t <= T; t += every) out.push_back(t);
  if (out.back() != T) out.push_back(T);
  return out;
}

// Two-sided p-value of the slope in an ordinary least-squares regression of
// y on x.
inline double trend_p_value(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 3 || y.size() != n) return std::numeric_limits<double>::quiet_NaN();
  const double mx = mean(x), my = mean(y);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) return std::numeric_limits<double>::quiet_NaN();
  const double b = sxy / sxx;
  double ssr = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = y[i] - my - b * (x[i] - mx);
    ssr += e * e;
  }
  const double df = static_cast<double>(n - 2);
  const double se = std::sqrt(ssr / df / sxx);
  if (se == 0.0) return b == 0.0 ? 1.0 : 0.0;
  boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(b / se)));
}

struct CurveConfig {
  InnerConfig inner;
  std::vector<EstimatorKind> estimators{EstimatorKind::Analytic, EstimatorKind::Automatic, EstimatorKind::Implicit};
  // Steps at which errors are recorded; empty means every inner.record_every.
  std::vector<std::size_t> record_at;
  ImplicitOptions implicit;
};

// Errors of the iterate, the Jacobian and each estimator along one run.
struct RateCurve {
  std::vector<std::size_t> t;
  std::vector<double> z_err;
  std::vector<double> jac_err;
  std::vector<EstimatorKind> estimators;
  std::vector<std::vector<double>> err;
  std::vector<std::int64_t> step_ns;

  const std::vector<double>& errors(EstimatorKind k) const {
    for (std::size_t i = 0; i < estimators.size(); ++i)
      if (estimators[i] == k) return err[i];
    throw InvalidArgument("rate curve has no " + to_string(k) + " column");
  }

  CsvTable to_csv(bool include_timing = true) const {
    std::vector<std::string> header{"t", "z_err", "jac_err"};
    for (EstimatorKind k : estimators) header.push_back(to_string(k) + "_err");
    if (include_timing) header.push_back("step_ns");
    CsvTable table(header);
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::vector<std::string> row{std::to_string(t[i]), format_double(z_err[i]), format_double(jac_err[i])};
      for (const auto& e : err) row.push_back(format_double(e[i]));
      if (include_timing) row.push_back(std::to_string(step_ns[i]));
      table.add_row(std::move(row));
    }
    return table;
  }
};

// Runs the inner solver and records |z_t - z_ref|, |J_t - J_ref|_F (NaN
// without J_ref) and |g^i_t - g*| at the requested steps. An implicit
// estimate whose linear system is singular is recorded as NaN.
inline RateCurve rate_curve(const ProblemInstance& prob, const Vector& x, const CurveConfig& cfg,
                            const ReferenceGradient& ref, const Matrix* J_ref = nullptr) {
  const bool need_j = std::find(cfg.estimators.begin(), cfg.estimators.end(), EstimatorKind::Automatic) !=
                          cfg.estimators.end() ||
                      J_ref != nullptr;
  // GCC 11 reports a spurious maybe-uninitialized on copying the optional z0
#if defined(__GNUC__) && !defined(__clang__)
#pragma GCC diagnostic push
#pragma GCC diagnostic ignored "-Wmaybe-uninitialized"
#endif
  InnerConfig inner = cfg.inner;
#if defined(__GNUC__) && !defined(__clang__)
#pragma GCC diagnostic pop
#endif
  inner.track_jacobian = need_j;
  inner.record_tape = false;
  std::vector<std::size_t> when = cfg.record_at.empty() ? linear_steps(inner.T, std::max<std::size_t>(1, inner.record_every))
                                                        : cfg.record_at;
  std::sort(when.begin(), when.end());
  RateCurve curve;
  curve.estimators = cfg.estimators;
  curve.err.resize(cfg.estimators.size());
  std::size_t next = 0;
  auto last = std::chrono::steady_clock::now();
  iterate(prob, x, inner, nullptr, [&](const SolverState& s) {
    const auto now = std::chrono::steady_clock::now();
    const std::int64_t step = std::chrono::duration_cast<std::chrono::nanoseconds>(now - last).count();
    while (next < when.size() && when[next] < s.t) ++next;
    if (next < when.size() && when[next] == s.t) {
      curve.t.push_back(s.t);
      curve.z_err.push_back((s.z - ref.z_ref).norm());
      curve.jac_err.push_back(J_ref && s.tracks_jacobian() ? (s.J - *J_ref).norm()
                                                           : std::numeric_limits<double>::quiet_NaN());
      for (std::size_t k = 0; k < cfg.estimators.size(); ++k) {
        double e = std::numeric_limits<double>::quiet_NaN();
        try {
          e = (estimate(cfg.estimators[k], s, prob, x, cfg.implicit).g - ref.g_star).norm();
        } catch (const SingularSystem&) {
        }
        curve.err[k].push_back(e);
      }
      curve.step_ns.push_back(s.t == 0 ? 0 : step);
      ++next;
    }
    last = std::chrono::steady_clock::now();
  });
  return curve;
}

struct NoiseSweepConfig {
  std::vector<double> rho_grid;
  std::size_t R = 20;
  // Horizon T = max(T_min, ceil(horizon / rho)) unless T_fixed is set.
  double horizon = 400.0;
  std::size_t T_min = 1000;
  std::optional<std::size_t> T_fixed;
  double trailing_fraction = 0.2;
  std::size_t samples = 50;
  std::vector<EstimatorKind> estimators{EstimatorKind::Analytic, EstimatorKind::Automatic, EstimatorKind::Implicit};
  ImplicitOptions implicit;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

struct NoisePoint {
  double rho = 0.0;
  std::size_t T = 0;
  std::vector<double> plateau;    // per estimator, mean over samples and reps
  std::vector<double> std_error;  // per estimator, over reps
  std::vector<double> trend_p;    // per estimator, slope test on the window
};

struct NoiseSweepResult {
  std::vector<EstimatorKind> estimators;
  std::vector<NoisePoint> points;
  std::vector<RateFit> slopes;  // log plateau vs log rho, per estimator

  const RateFit& slope(EstimatorKind k) const {
    for (std::size_t i = 0; i < estimators.size(); ++i)
      if (estimators[i] == k) return slopes[i];
    throw InvalidArgument("noise sweep has no " + to_string(k) + " column");
  }

  CsvTable to_csv() const {
    std::vector<std::string> header{"rho", "T"};
    for (EstimatorKind k : estimators) {
      header.push_back(to_string(k) + "_plateau");
      header.push_back(to_string(k) + "_stderr");
      header.push_back(to_string(k) + "_trend_p");
    }
    CsvTable table(header);
    for (const NoisePoint& p : points) {
      std::vector<std::string> row{format_double(p.rho), std::to_string(p.T)};
      for (std::size_t k = 0; k < estimators.size(); ++k) {
        row.push_back(format_double(p.plateau[k]));
        row.push_back(format_double(p.std_error[k]));
        row.push_back(format_double(p.trend_p[k]));
      }
      table.add_row(std::move(row));
    }
    return table;
  }
};

namespace detail {

inline bool wants(const std::vector<EstimatorKind>& v, EstimatorKind k) {
  return std::find(v.begin(), v.end(), k) != v.end();
}

inline std::uint64_t pair_stream(std::size_t a, std::size_t b) {
  return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint64_t>(b);
}

}  // namespace detail

// Constant-step SGD from z0 = 0 for each rho; the plateau of |g^i - g*| is
// the mean over the trailing window and over R independent streams.
inline NoiseSweepResult sgd_noise_sweep(const ProblemInstance& prob, const Vector& x, const NoiseSweepConfig& cfg,
                                        const ReferenceGradient& ref) {
  if (cfg.rho_grid.empty()) throw InvalidArgument("sgd_noise_sweep: empty rho grid");
  if (cfg.R < 1) throw InvalidArgument("sgd_noise_sweep: R must be >= 1");
  if (!(cfg.trailing_fraction > 0.0 && cfg.trailing_fraction <= 1.0)) {
    throw InvalidArgument("sgd_noise_sweep: trailing fraction must be in (0, 1]");
  }
  const std::size_t E = cfg.estimators.size();
  const std::size_t P = cfg.rho_grid.size();
  std::vector<std::size_t> horizon(P);
  std::vector<std::vector<std::size_t>> sample_t(P);
  for (std::size_t p = 0; p < P; ++p) {
    const double rho = cfg.rho_grid[p];
    if (!(rho > 0.0)) throw InvalidArgument("sgd_noise_sweep: step sizes must be > 0");
    horizon[p] = cfg.T_fixed ? *cfg.T_fixed
                             : std::max(cfg.T_min, static_cast<std::size_t>(std::ceil(cfg.horizon / rho)));
    const auto T = horizon[p];
    const auto start = static_cast<std::size_t>(std::floor((1.0 - cfg.trailing_fraction) * static_cast<double>(T)));
    const std::size_t k = std::max<std::size_t>(2, cfg.samples);
    std::set<std::size_t> s;
    for (std::size_t i = 0; i < k; ++i) s.insert(start + (T - start) * i / (k - 1));
    sample_t[p] = {s.begin(), s.end()};
  }
  // errors[p][r][e][sample]
  std::vector<std::vector<std::vector<std::vector<double>>>> errors(
      P, std::vector<std::vector<std::vector<double>>>(cfg.R));
  parallel_for(P * cfg.R, cfg.jobs, [&](std::size_t job) {
    const std::size_t p = job / cfg.R;
    const std::size_t r = job % cfg.R;
    InnerConfig inner;
    inner.solver = SolverKind::SGD;
    inner.schedule = StepSchedule::constant(cfg.rho_grid[p]);
    inner.T = horizon[p];
    inner.track_jacobian = detail::wants(cfg.estimators, EstimatorKind::Automatic);
    inner.seed = cfg.seed;
    inner.stream = detail::pair_stream(p, r);
    auto& out = errors[p][r];
    out.assign(E, {});
    const auto& when = sample_t[p];
    std::size_t next = 0;
    iterate(prob, x, inner, nullptr, [&](const SolverState& s) {
      if (next < when.size() && when[next] == s.t) {
        for (std::size_t e = 0; e < E; ++e) {
          double v = std::numeric_limits<double>::quiet_NaN();
          try {
            v = (estimate(cfg.estimators[e], s, prob, x, cfg.implicit).g - ref.g_star).norm();
          } catch (const SingularSystem&) {
          }
          out[e].push_back(v);
        }
        ++next;
      }
    });
  });

  NoiseSweepResult res;
  res.estimators = cfg.estimators;
  for (std::size_t p = 0; p < P; ++p) {
    NoisePoint pt;
    pt.rho = cfg.rho_grid[p];
    pt.T = horizon[p];
    const std::size_t K = sample_t[p].size();
    for (std::size_t e = 0; e < E; ++e) {
      std::vector<double> rep_means(cfg.R);
      std::vector<double> avg(K, 0.0);
      for (std::size_t r = 0; r < cfg.R; ++r) {
        rep_means[r] = mean(errors[p][r][e]);
        for (std::size_t i = 0; i < K; ++i) avg[i] += errors[p][r][e][i] / static_cast<double>(cfg.R);
      }
      const double mu = mean(rep_means);
      double var = 0.0;
      for (double v : rep_means) var += (v - mu) * (v - mu);
      var = cfg.R > 1 ? var / static_cast<double>(cfg.R - 1) : 0.0;
      pt.plateau.push_back(mu);
      pt.std_error.push_back(std::sqrt(var / static_cast<double>(cfg.R)));
      std::vector<double> ts(sample_t[p].begin(), sample_t[p].end());
      pt.trend_p.push_back(trend_p_value(ts, avg));
    }
    res.points.push_back(std::move(pt));
  }
  FitOptions fo;
  fo.stall = 0;
  fo.reference_scale = 0.0;
  for (std::size_t e = 0; e < E; ++e) {
    std::vector<double> rho, plat;
    for (const NoisePoint& pt : res.points) {
      rho.push_back(pt.rho);
      plat.push_back(pt.plateau[e]);
    }
    res.slopes.push_back(fit_rate(rho, plat, FitScale::LogLog, fo));
  }
  return res;
}

struct DecayConfig {
  double rho0 = 1.0;
  double alpha = 0.8;
  std::size_t T = 100000;
  std::size_t R = 20;
  std::vector<std::size_t> record_at;  // default: 60 log-spaced steps in [1, T]
  double fit_lo = 0.0;                 // default: T / 10
  std::vector<EstimatorKind> estimators{EstimatorKind::Analytic, EstimatorKind::Automatic, EstimatorKind::Implicit};
  ImplicitOptions implicit;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

struct DecayResult {
  std::vector<std::size_t> t;
  std::vector<EstimatorKind> estimators;
  std::vector<std::vector<double>> mean_err;  // [estimator][t]
  std::vector<std::vector<double>> d1;
  std::vector<std::vector<double>> d9;
  std::vector<RateFit> fits;

  const RateFit& fit(EstimatorKind k) const {
    for (std::size_t i = 0; i < estimators.size(); ++i)
      if (estimators[i] == k) return fits[i];
    throw InvalidArgument("decay curve has no " + to_string(k) + " column");
  }

  CsvTable to_csv() const {
    std::vector<std::string> header{"t"};
    for (EstimatorKind k : estimators) {
      header.push_back(to_string(k) + "_mean");
      header.push_back(to_string(k) + "_d1");
      header.push_back(to_string(k) + "_d9");
    }
    CsvTable table(header);
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::vector<std::string> row{std::to_string(t[i])};
      for (std::size_t e = 0; e < estimators.size(); ++e) {
        row.push_back(format_double(mean_err[e][i]));
        row.push_back(format_double(d1[e][i]));
        row.push_back(format_double(d9[e][i]));
      }
      table.add_row(std::move(row));
    }
    return table;
  }
};

// SGD with rho_t = rho0 (t + 1)^(-alpha); mean and deciles of |g^i - g*|
// over R streams, with log-log fits on [fit_lo, T].
inline DecayResult sgd_decay_curve(const ProblemInstance& prob, const Vector& x, const DecayConfig& cfg,
                                   const ReferenceGradient& ref) {
  if (cfg.R < 1) throw InvalidArgument("sgd_decay_curve: R must be >= 1");
  const StepSchedule schedule = StepSchedule::polynomial(cfg.rho0, cfg.alpha);
  std::vector<std::size_t> when = cfg.record_at.empty() ? log_spaced_steps(1, cfg.T, 60) : cfg.record_at;
  std::sort(when.begin(), when.end());
  const std::size_t E = cfg.estimators.size();
  std::vector<std::vector<std::vector<double>>> errors(cfg.R);  // [rep][estimator][t]
  parallel_for(cfg.R, cfg.jobs, [&](std::size_t r) {
    InnerConfig inner;
    inner.solver = SolverKind::SGD;
    inner.schedule = schedule;
    inner.T = cfg.T;
    inner.track_jacobian = detail::wants(cfg.estimators, EstimatorKind::Automatic);
    inner.seed = cfg.seed;
    inner.stream = detail::pair_stream(1u << 20, r);
    auto& out = errors[r];
    out.assign(E, {});
    std::size_t next = 0;
    iterate(prob, x, inner, nullptr, [&](const SolverState& s) {
      while (next < when.size() && when[next] < s.t) ++next;
      if (next < when.size() && when[next] == s.t) {
        for (std::size_t e = 0; e < E; ++e) {
          double v = std::numeric_limits<double>::quiet_NaN();
          try {
            v = (estimate(cfg.estimators[e], s, prob, x, cfg.implicit).g - ref.g_star).norm();
          } catch (const SingularSystem&) {
          }
          out[e].push_back(v);
        }
        ++next;
      }
    });
  });
  DecayResult res;
  res.estimators = cfg.estimators;
  for (std::size_t t : when)
    if (t <= cfg.T) res.t.push_back(t);
  const std::size_t K = res.t.size();
  res.mean_err.assign(E, std::vector<double>(K));
  res.d1 = res.mean_err;
  res.d9 = res.mean_err;
  for (std::size_t e = 0; e < E; ++e) {
    for (std::size_t i = 0; i < K; ++i) {
      std::vector<double> col(cfg.R);
      for (std::size_t r = 0; r < cfg.R; ++r) col[r] = errors[r][e][i];
      res.mean_err[e][i] = mean(col);
      res.d1[e][i] = quantile(col, 0.1);
      res.d9[e][i] = quantile(col, 0.9);
    }
    FitOptions fo;
    fo.stall = 0;
    fo.t_lo = cfg.fit_lo > 0.0 ? cfg.fit_lo : static_cast<double>(cfg.T) / 10.0;
    fo.t_hi = static_cast<double>(cfg.T);
    res.fits.push_back(fit_rate(res.t, res.mean_err[e], FitScale::LogLog, fo));
  }
  return res;
}

enum class CostPath { Analytic, AutomaticReverse, AutomaticForward, Implicit };

inline std::string to_string(CostPath p) {
  switch (p) {
    case CostPath::Analytic: return "g1";
    case CostPath::AutomaticReverse: return "g2-reverse";
    case CostPath::AutomaticForward: return "g2-forward";
    case CostPath::Implicit: return "g3";
  }
  return "unknown";
}

struct TimingConfig {
  std::vector<std::size_t> t_grid;
  std::size_t reps = 50;
  std::vector<CostPath> paths{CostPath::Analytic, CostPath::AutomaticReverse, CostPath::Implicit};
};

struct TimingRow {
  std::size_t t = 0;
  CostPath path = CostPath::Analytic;
  double median_ns = 0.0;
  double d1_ns = 0.0;
  double d9_ns = 0.0;
};

struct LinearCost {
  double intercept = 0.0;
  double slope = 0.0;
  double r2 = 0.0;
};

struct TimingResult {
  std::vector<TimingRow> rows;
  std::vector<CostPath> paths;
  std::vector<LinearCost> fits;  // per path, median cost against t
  double c = std::numeric_limits<double>::quiet_NaN();

  const LinearCost& fit(CostPath p) const {
    for (std::size_t i = 0; i < paths.size(); ++i)
      if (paths[i] == p) return fits[i];
    throw InvalidArgument("timing result has no " + to_string(p) + " path");
  }
  double median(CostPath p, std::size_t t) const {
    for (const TimingRow& r : rows)
      if (r.path == p && r.t == t) return r.median_ns;
    throw InvalidArgument("timing result has no row for " + to_string(p) + " at t=" + std::to_string(t));
  }

  CsvTable to_csv() const {
    CsvTable table({"t", "estimator", "median_ns", "d1_ns", "d9_ns"});
    for (const TimingRow& r : rows) {
      table.add_row({std::to_string(r.t), to_string(r.path), format_double(r.median_ns), format_double(r.d1_ns),
                     format_double(r.d9_ns)});
    }
    return table;
  }
};

inline LinearCost fit_linear(const std::vector<double>& x, const std::vector<double>& y) {
  const double mx = mean(x), my = mean(y);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  LinearCost f;
  f.slope = sxx > 0.0 ? sxy / sxx : 0.0;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0.0 && sxx > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
  return f;
}

// Wall-clock cost of computing each estimator from scratch after t inner
// steps: the inner run plus the estimator itself.
inline double time_estimator_once(const ProblemInstance& prob, const Vector& x, InnerConfig inner, CostPath path,
                                  const ImplicitOptions& implicit) {
  const auto start = std::chrono::steady_clock::now();
  double sink = 0.0;
  switch (path) {
    case CostPath::Analytic: {
      inner.track_jacobian = false;
      sink = estimate_g1(advance_to(prob, x, inner), prob, x).g.sum();
      break;
    }
    case CostPath::AutomaticReverse: {
      inner.track_jacobian = false;
      Tape tape;
      advance_to(prob, x, inner, &tape);
      sink = reverse_unroll(tape, prob, x).sum();
      break;
    }
    case CostPath::AutomaticForward: {
      inner.track_jacobian = true;
      sink = estimate_g2(advance_to(prob, x, inner), prob, x).g.sum();
      break;
    }
    case CostPath::Implicit: {
      inner.track_jacobian = false;
      sink = estimate_g3(advance_to(prob, x, inner), prob, x, implicit).g.sum();
      break;
    }
  }
  const auto stop = std::chrono::steady_clock::now();
  if (!std::isfinite(sink)) throw NonFinite(inner.T, "timed estimate");
  return static_cast<double>(std::chrono::duration_cast<std::chrono::nanoseconds>(stop - start).count());
}

// Median and first/last decile of the cost per (t, path); linear fits of
// the median against t; c is the ratio of the reverse-path slope to the
// analytic slope. Repetitions interleave paths and t values.
inline TimingResult timing_benchmark(const ProblemInstance& prob, const Vector& x, const InnerConfig& base,
                                     const TimingConfig& cfg, const ImplicitOptions& implicit = {}) {
  if (cfg.t_grid.empty() || cfg.reps < 1) throw InvalidArgument("timing_benchmark: empty grid or no repetitions");
  const std::size_t G = cfg.t_grid.size();
  const std::size_t P = cfg.paths.size();
  std::vector<std::vector<std::vector<double>>> samples(P, std::vector<std::vector<double>>(G));
  for (std::size_t rep = 0; rep < cfg.reps; ++rep) {
    for (std::size_t g = 0; g < G; ++g) {
      for (std::size_t p = 0; p < P; ++p) {
        InnerConfig inner = base;
        inner.T = cfg.t_grid[g];
        samples[p][g].push_back(time_estimator_once(prob, x, inner, cfg.paths[p], implicit));
      }
    }
  }
  TimingResult res;
  res.paths = cfg.paths;
  for (std::size_t p = 0; p < P; ++p) {
    std::vector<double> ts, med;
    for (std::size_t g = 0; g < G; ++g) {
      TimingRow row;
      row.t = cfg.t_grid[g];
      row.path = cfg.paths[p];
      row.median_ns = quantile(samples[p][g], 0.5);
      row.d1_ns = quantile(samples[p][g], 0.1);
      row.d9_ns = quantile(samples[p][g], 0.9);
      res.rows.push_back(row);
      ts.push_back(static_cast<double>(row.t));
      med.push_back(row.median_ns);
    }
    res.fits.push_back(fit_linear(ts, med));
  }
  const auto has = [&](CostPath p) { return std::find(cfg.paths.begin(), cfg.paths.end(), p) != cfg.paths.end(); };
  if (has(CostPath::Analytic) && has(CostPath::AutomaticReverse)) {
    res.c = res.fit(CostPath::AutomaticReverse).slope / res.fit(CostPath::Analytic).slope;
  }
  return res;
}

}  // namespace mingrad
