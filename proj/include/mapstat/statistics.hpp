#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "mapstat/common.hpp"
#include "mapstat/observable.hpp"
#include "mapstat/rng.hpp"
#include "mapstat/thread_pool.hpp"
#include "mapstat/ulam.hpp"

namespace mapstat {

// ============================================================================
// Trajectory ensembles and limit-theorem statistics.
//
// Forward generation iterates the map from a stationary start. Dyadic-slope
// maps collapse to 0 under forward float iteration in ~53 steps, so
// Lebesgue-invariant full-branch maps are generated backwards instead:
// random inverse branches weighted by 1/|T'|, path read in reverse. The
// reversed read makes partial sums suffix sums of the generated sequence.
// ============================================================================

enum class GenerationMode { forward, backward };

struct EnsembleOptions {
  std::size_t trajectories = 1000;
  std::size_t steps = 4096;
  std::uint64_t seed = 1;
  int threads = 1;
  GenerationMode mode = GenerationMode::forward;
  std::size_t min_checkpoint = 16;
  std::optional<double> center;  // default: mean under the discretized measure
};

struct EnsembleResult {
  std::vector<std::size_t> checkpoints;      // ascending n/2^j, >= min
  std::vector<std::vector<double>> sums;     // [trajectory][checkpoint]
  std::vector<std::vector<double>> max_abs;  // max_{k<=cp} |S_k|
  double center_used = 0.0;
  std::size_t steps = 0;
  std::uint64_t seed = 0;
};

namespace detail {

struct BackwardSampler {
  std::vector<double> cum_weights;  // branch choice CDF

  explicit BackwardSampler(const IntervalMap& m) {
    double acc = 0.0;
    for (std::size_t k = 0; k < m.branch_count(); ++k) {
      const Branch& b = m.branch(k);
      if (std::min(b.image_lo, b.image_hi) > 1e-12 ||
          std::max(b.image_lo, b.image_hi) < 1.0 - 1e-12)
        throw config_error(
            "backward generation requires every branch to map onto [0,1]");
      double w = b.hi - b.lo;
      double d1 = std::abs(b.derivative(b.lo + 0.25 * w));
      double d2 = std::abs(b.derivative(b.hi - 0.25 * w));
      if (std::abs(d1 - d2) > 1e-12 * d1)
        throw config_error(
            "backward generation requires piecewise-linear branches");
      acc += 1.0 / d1;
      cum_weights.push_back(acc);
    }
    if (std::abs(acc - 1.0) > 1e-9)
      throw config_error(
          "backward generation requires a Lebesgue-invariant map "
          "(sum of 1/|T'| is " +
          std::to_string(acc) + ")");
    cum_weights.back() = 1.0;
  }

  std::size_t pick(double u) const {
    auto it = std::upper_bound(cum_weights.begin(), cum_weights.end(), u);
    std::size_t k = std::size_t(it - cum_weights.begin());
    return std::min(k, cum_weights.size() - 1);
  }
};

}  // namespace detail

inline std::vector<std::size_t> dyadic_checkpoints(std::size_t n,
                                                   std::size_t min_cp) {
  std::vector<std::size_t> cps;
  for (std::size_t k = n; k >= min_cp; k /= 2) {
    cps.push_back(k);
    if (k == 0) break;
  }
  std::sort(cps.begin(), cps.end());
  return cps;
}

inline EnsembleResult simulate_ensemble(const UlamOperator& op,
                                        const Observable& f,
                                        const EnsembleOptions& opts) {
  if (opts.steps < opts.min_checkpoint)
    throw config_error("simulate_ensemble: steps below first checkpoint");
  EnsembleResult res;
  res.steps = opts.steps;
  res.seed = opts.seed;
  res.checkpoints = dyadic_checkpoints(opts.steps, opts.min_checkpoint);
  res.center_used = opts.center ? *opts.center : op.nu(f);
  const std::size_t R = opts.trajectories;
  const std::size_t n = opts.steps;
  const std::size_t C = res.checkpoints.size();
  res.sums.assign(R, std::vector<double>(C, 0.0));
  res.max_abs.assign(R, std::vector<double>(C, 0.0));
  const double c0 = res.center_used;
  const double floor_x = std::nextafter(0.0, 1.0);

  if (opts.mode == GenerationMode::forward) {
    auto cdf = stationary_cdf(op);
    parallel_for(R, opts.threads, [&](std::size_t r) {
      rng_stream rng(opts.seed, r);
      double x = sample_stationary(op, cdf, rng);
      double s = 0.0, mx = 0.0;
      std::size_t ci = 0;
      for (std::size_t t = 1; t <= n; ++t) {
        s += f.eval(std::max(x, floor_x)) - c0;
        x = op.map().step(x);
        mx = std::max(mx, std::abs(s));
        if (ci < C && t == res.checkpoints[ci]) {
          res.sums[r][ci] = s;
          res.max_abs[r][ci] = mx;
          ++ci;
        }
      }
    });
  } else {
    detail::BackwardSampler sampler(op.map());
    const IntervalMap& m = op.map();
    parallel_for(R, opts.threads, [&](std::size_t r) {
      rng_stream rng(opts.seed, r);
      // generate y_0..y_n with T(y_{i+1}) = y_i; the path is x_t = y_{n-t},
      // so S_k = A_n - A_{n-k} with A_i the running sum of f(y_1..y_i)
      std::vector<double> A(n + 1);
      double y = rng.u01();
      A[0] = 0.0;
      for (std::size_t i = 1; i <= n; ++i) {
        std::size_t k = sampler.pick(rng.u01());
        y = m.inverse_branch(k, y);
        A[i] = A[i - 1] + (f.eval(std::max(y, floor_x)) - c0);
      }
      const double An = A[n];
      for (std::size_t c = 0; c < C; ++c)
        res.sums[r][c] = An - A[n - res.checkpoints[c]];
      // suffix extrema of A give running maxima of |S_k| up to each cp
      double amin = A[n - 1], amax = A[n - 1];
      std::size_t c = 0;
      for (std::size_t j = n - 1;; --j) {
        amin = std::min(amin, A[j]);
        amax = std::max(amax, A[j]);
        while (c < C && j == n - res.checkpoints[c]) {
          res.max_abs[r][c] = std::max(An - amin, amax - An);
          ++c;
        }
        if (j == 0) break;
      }
    });
  }
  return res;
}

// ============================================================================
// Variance routes.
// ============================================================================

// integral of f^2 against the discretized invariant density; exact where a
// closed-form second antiderivative exists, 16-point Gauss elsewhere
inline double nu_of_square(const UlamOperator& op, const Observable& f) {
  std::vector<double> cuts = op.grid().edges;
  for (const auto& t : f.terms()) {
    cuts.push_back(t.piece.lo);
    cuts.push_back(t.piece.hi);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  double s = 0.0;
  std::size_t bin = 0;
  for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
    double lo = cuts[c], hi = cuts[c + 1];
    if (!(hi > lo) || hi <= 0.0 || lo >= 1.0) continue;
    while (bin + 1 < op.bins() && op.grid().edges[bin + 1] <= lo) ++bin;
    // count active terms on this segment
    const Term* active = nullptr;
    int n_active = 0;
    for (const auto& t : f.terms())
      if (t.piece.lo < hi && t.piece.hi > lo && t.weight != 0.0) {
        ++n_active;
        active = &t;
      }
    double seg;
    if (n_active == 0)
      continue;
    else if (n_active == 1 && active->piece.antideriv2)
      seg = sq(active->weight) * active->piece.integral2(lo, hi);
    else
      seg = detail::gauss16([&](double x) { return sq(f.eval(x)); }, lo, hi);
    s += op.density()[bin] * seg;
  }
  return s;
}

struct Sigma2Options {
  int max_lag = 64;
  double abs_tol = 1e-10;
  int consecutive_below = 3;
  int exact_budget_n = 12;
};

struct Sigma2Result {
  double sigma2 = 0.0;
  double var0 = 0.0;                 // nu(f^2) - nu(f)^2
  std::vector<double> covariances;   // lag 1..lags_used
  double tail_estimate = 0.0;        // geometric continuation of 2*sum
  int lags_used = 0;
  bool converged = false;
};

// sigma^2 = var0 + 2 sum_{k>=1} cov_k via the discretized operator; stops
// once `consecutive_below` successive covariances drop under abs_tol
inline Sigma2Result sigma2_operator(const UlamOperator& op, const Observable& f,
                                    const Sigma2Options& opts = {}) {
  Sigma2Result r;
  const double mean = op.nu(f);
  r.var0 = nu_of_square(op, f) - sq(mean);
  auto fbar = op.cell_averages(f);
  std::vector<double> v;
  int below = 0;
  for (int k = 1; k <= opts.max_lag; ++k) {
    bool exact = k <= opts.exact_budget_n &&
                 std::pow(double(op.map().branch_count()), k) <= double(1u << 21);
    if (exact)
      v = apply_kernel(op, f, k, KernelMode::exact).values;
    else
      v = op.reversed_apply(v);
    double cov = 0.0;
    for (std::size_t i = 0; i < op.bins(); ++i)
      cov += op.pi()[i] * fbar[i] * v[i];
    cov -= sq(mean);
    r.covariances.push_back(cov);
    r.lags_used = k;
    below = std::abs(cov) < opts.abs_tol ? below + 1 : 0;
    if (below >= opts.consecutive_below) {
      r.converged = true;
      break;
    }
  }
  double twicesum = 0.0;
  for (double c : r.covariances) twicesum += 2.0 * c;
  // geometric continuation from the last decaying stretch
  std::vector<double> xs, ys;
  for (int k = std::max(1, r.lags_used - 10); k <= r.lags_used; ++k) {
    double a = std::abs(r.covariances[std::size_t(k - 1)]);
    if (a > 1e-300) {
      xs.push_back(double(k));
      ys.push_back(std::log(a));
    }
  }
  if (!r.converged && xs.size() >= 3) {
    double rho = std::exp(linear_fit(xs, ys).slope);
    if (rho > 0.0 && rho < 0.999) {
      double last = std::abs(r.covariances.back());
      r.tail_estimate = 2.0 * last * rho / (1.0 - rho);
      r.converged = true;
    }
  }
  r.sigma2 = r.var0 + twicesum + r.tail_estimate;
  return r;
}

inline std::vector<std::pair<std::size_t, double>> ensemble_variance(
    const EnsembleResult& ens) {
  std::vector<std::pair<std::size_t, double>> out;
  for (std::size_t c = 0; c < ens.checkpoints.size(); ++c) {
    mean_var mv;
    for (std::size_t r = 0; r < ens.sums.size(); ++r) mv.add(ens.sums[r][c]);
    out.push_back({ens.checkpoints[c], mv.variance() / double(ens.checkpoints[c])});
  }
  return out;
}

// ============================================================================
// Distributional diagnostics.
// ============================================================================

// exact two-sided KS statistic of samples against N(0, sigma^2)
inline double ks_normal(std::vector<double> samples, double sigma) {
  if (samples.empty()) throw config_error("ks_normal: no samples");
  std::sort(samples.begin(), samples.end());
  const double N = double(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    double F = normal_cdf(samples[i] / sigma);
    d = std::max(d, std::max(F - double(i) / N, double(i + 1) / N - F));
  }
  return d;
}

struct WipCheck {
  struct Entry {
    double s, t;         // checkpoint fractions of n
    double empirical;    // Cov(S_{ns}, S_{nt}) / n
    double expected;     // sigma^2 * min(s, t)
  };
  std::vector<Entry> entries;
  double max_error = 0.0;
};

inline WipCheck wip_covariance_check(const EnsembleResult& ens, double sigma2) {
  WipCheck w;
  const std::size_t R = ens.sums.size();
  const std::size_t C = ens.checkpoints.size();
  const double n = double(ens.steps);
  std::vector<double> means(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t r = 0; r < R; ++r) means[c] += ens.sums[r][c];
    means[c] /= double(R);
  }
  for (std::size_t a = 0; a < C; ++a)
    for (std::size_t b = a; b < C; ++b) {
      double cov = 0.0;
      for (std::size_t r = 0; r < R; ++r)
        cov += (ens.sums[r][a] - means[a]) * (ens.sums[r][b] - means[b]);
      cov /= double(R - 1);
      WipCheck::Entry e;
      e.s = double(ens.checkpoints[a]) / n;
      e.t = double(ens.checkpoints[b]) / n;
      e.empirical = cov / n;
      e.expected = sigma2 * std::min(e.s, e.t);
      w.entries.push_back(e);
      w.max_error = std::max(w.max_error, std::abs(e.empirical - e.expected));
    }
  return w;
}

// ============================================================================
// Law of the iterated logarithm diagnostics.
// ============================================================================

struct LilResult {
  std::vector<double> u;  // max_k |S_k| / sqrt(n loglog n) per trajectory
  double threshold = 0.0;
  double exceed_fraction = 0.0;
  struct SeriesPoint {
    std::size_t n_j;
    double p_hat;  // fraction with max_{k<=n_j} |S_k| >= x sqrt(n_j LL n_j)
  };
  std::vector<SeriesPoint> series;
  bool series_nonincreasing = true;
};

inline LilResult lil_statistic(const EnsembleResult& ens, double threshold) {
  LilResult out;
  out.threshold = threshold;
  const std::size_t R = ens.sums.size();
  const std::size_t C = ens.checkpoints.size();
  const double n = double(ens.steps);
  double norm = std::sqrt(n * log_log_guarded(n));
  out.u.resize(R);
  std::size_t exceed = 0;
  for (std::size_t r = 0; r < R; ++r) {
    out.u[r] = ens.max_abs[r][C - 1] / norm;
    if (out.u[r] > threshold) ++exceed;
  }
  out.exceed_fraction = double(exceed) / double(R);
  for (std::size_t c = 0; c < C; ++c) {
    double nj = double(ens.checkpoints[c]);
    double cut = threshold * std::sqrt(nj * log_log_guarded(nj));
    std::size_t cnt = 0;
    for (std::size_t r = 0; r < R; ++r)
      if (ens.max_abs[r][c] >= cut) ++cnt;
    out.series.push_back({ens.checkpoints[c], double(cnt) / double(R)});
  }
  for (std::size_t c = 1; c < out.series.size(); ++c)
    if (out.series[c].p_hat > out.series[c - 1].p_hat + 1e-12)
      out.series_nonincreasing = false;
  return out;
}

// ============================================================================
// Variance-growth model comparison: Var(S_n)/n constant vs a log n + b.
// The log model nests the constant one, so the decision is one-sided: prefer
// the log model only when it beats the constant fit by `ratio_threshold`.
// ============================================================================

struct NormalizationScan {
  std::vector<std::size_t> ns;
  std::vector<double> var_over_n;
  double rss_const = 0.0;
  double rss_log = 0.0;
  double ratio = 0.0;
  enum class Decision { constant, n_log_n } decision = Decision::constant;
};

inline NormalizationScan normalization_scan(const EnsembleResult& ens,
                                            double ratio_threshold = 1.5) {
  NormalizationScan out;
  auto vars = ensemble_variance(ens);
  std::vector<double> x, y;
  for (auto [nk, v] : vars) {
    out.ns.push_back(nk);
    out.var_over_n.push_back(v);
    x.push_back(std::log(double(nk)));
    y.push_back(v);
  }
  if (x.size() < 3)
    throw config_error("normalization_scan: need >= 3 checkpoints");
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= double(y.size());
  for (double v : y) out.rss_const += sq(v - mean);
  out.rss_log = linear_fit(x, y).rss;
  out.ratio = out.rss_log > 0.0
                  ? out.rss_const / out.rss_log
                  : std::numeric_limits<double>::infinity();
  out.decision = out.ratio >= ratio_threshold
                     ? NormalizationScan::Decision::n_log_n
                     : NormalizationScan::Decision::constant;
  return out;
}

}  // namespace mapstat
