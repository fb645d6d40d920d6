#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mapstat/chain.hpp"
#include "mapstat/common.hpp"
#include "mapstat/observable.hpp"
#include "mapstat/rng.hpp"
#include "mapstat/ulam.hpp"

namespace mapstat {

// ============================================================================
// Martingale-coboundary decomposition on the discretized chain.
//
// For the truncated, centered observable X' (cell averages), the solution of
// the coboundary equation G = sum_{k>=0} K^k X' splits the partial sums into
// a martingale plus boundary terms:
//   sum_{i=1..k} X'(b_i) = M_k + H(b_0) - H(b_k),  H = G - X',
// where b_i is a path of the reversed (K-direction) chain and the increments
// d_i = G(b_i) - (RG)(b_{i-1}) have exactly zero conditional mean. Positions
// drawn uniformly inside bins turn bin sums into genuine orbit-value sums
// whose conditional expectations are the cell averages.
// ============================================================================

struct MartingaleOptions {
  double series_tol = 1e-13;  // stop when sup|K^k X'| drops below
  int series_max_terms = 4096;
};

struct MartingaleContext {
  double M = 0.0;           // norm parameter of the truncation level
  std::size_t n = 0;        // time horizon the level was tuned for
  double level = 0.0;       // M sqrt(n) / sqrt(loglog n)
  double nu_f = 0.0;        // mean of f
  std::vector<double> xbar;    // centered cell averages of f
  std::vector<double> xbar_t;  // centered cell averages of the truncated part
  std::vector<double> xbar_r;  // xbar - xbar_t
  std::vector<double> G;       // coboundary sum
  std::vector<double> H;       // G - xbar_t (telescoping form)
  std::vector<double> RG;      // one chain step of G (martingale form)
  int series_terms = 0;
  double series_tail_sup = 0.0;
};

inline std::vector<double> coboundary_vector(const UlamOperator& op,
                                             const std::vector<double>& x,
                                             const MartingaleOptions& opts,
                                             int* terms_out = nullptr,
                                             double* tail_out = nullptr) {
  std::vector<double> G(x), v(x);
  int k = 0;
  double tail = sup_norm(v);
  for (; k < opts.series_max_terms; ++k) {
    v = op.reversed_apply(v);
    tail = sup_norm(v);
    if (tail < opts.series_tol) break;
    for (std::size_t i = 0; i < G.size(); ++i) G[i] += v[i];
  }
  if (tail >= opts.series_tol)
    throw convergence_error(
        "coboundary_vector: series did not contract below tolerance", tail);
  if (terms_out) *terms_out = k + 1;
  if (tail_out) *tail_out = tail;
  return G;
}

inline MartingaleContext make_martingale_context(
    const UlamOperator& op, const Observable& f, std::size_t n, double M,
    const MartingaleOptions& opts = {}) {
  MartingaleContext ctx;
  ctx.M = M;
  ctx.n = n;
  auto tr = truncate_gn(f, n, M);
  ctx.level = tr.level;
  ctx.nu_f = op.nu(f);
  double nu_t = op.nu(tr.g_n);
  ctx.xbar = op.cell_averages(f);
  for (double& v : ctx.xbar) v -= ctx.nu_f;
  ctx.xbar_t = op.cell_averages(tr.g_n);
  for (double& v : ctx.xbar_t) v -= nu_t;
  ctx.xbar_r.resize(ctx.xbar.size());
  for (std::size_t i = 0; i < ctx.xbar.size(); ++i)
    ctx.xbar_r[i] = ctx.xbar[i] - ctx.xbar_t[i];
  ctx.G = coboundary_vector(op, ctx.xbar_t, opts, &ctx.series_terms,
                            &ctx.series_tail_sup);
  ctx.H.resize(ctx.G.size());
  for (std::size_t i = 0; i < ctx.G.size(); ++i)
    ctx.H[i] = ctx.G[i] - ctx.xbar_t[i];
  ctx.RG = op.reversed_apply(ctx.G);
  return ctx;
}

// ============================================================================
// Reversed-chain paths with in-bin positions.
// ============================================================================

struct ChainPath {
  std::vector<std::uint32_t> bins;
  std::vector<double> positions;
};

inline ChainPath simulate_reversed_path(const UlamOperator& op, std::size_t n,
                                        rng_stream& rng) {
  const auto& R = op.reversed_rows();
  ChainPath path;
  path.bins.resize(n + 1);
  path.positions.resize(n + 1);
  auto cdf = stationary_cdf(op);
  auto place = [&](std::uint32_t b) {
    double lo = op.grid().edges[b], hi = op.grid().edges[b + 1];
    return lo + rng.u01() * (hi - lo);
  };
  double u = rng.u01();
  auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  std::uint32_t b = std::uint32_t(
      std::min<std::size_t>(std::size_t(it - cdf.begin()), op.bins() - 1));
  path.bins[0] = b;
  path.positions[0] = place(b);
  for (std::size_t i = 1; i <= n; ++i) {
    double v = rng.u01();
    double acc = 0.0;
    std::uint32_t nb = R[b].empty() ? b : R[b].back().first;
    for (auto [j, p] : R[b]) {
      acc += p;
      if (v <= acc) {
        nb = j;
        break;
      }
    }
    b = nb;
    path.bins[i] = b;
    path.positions[i] = place(b);
  }
  return path;
}

// ============================================================================
// Path decomposition.
// ============================================================================

struct MartingalePath {
  std::vector<double> increments;   // d_i, i = 1..n
  std::vector<double> martingale;   // M_k prefix sums
  std::vector<double> s_exact;      // sum of f(pos_i) - nu(f)
  std::vector<double> s_remainder;  // sum of truncation-remainder averages
  std::vector<double> residual;     // s_exact - (M_k + H(b0) - H(bk) + s_rem)
  double identity_residual = 0.0;   // max_k |residual_k| / sqrt(n)
};

inline MartingalePath martingale_path(const MartingaleContext& ctx,
                                      const Observable& f,
                                      const ChainPath& path) {
  const std::size_t n = path.bins.size() - 1;
  MartingalePath out;
  out.increments.resize(n);
  out.martingale.resize(n);
  out.s_exact.resize(n);
  out.s_remainder.resize(n);
  out.residual.resize(n);
  double Mk = 0.0, Sk = 0.0, Srem = 0.0, worst = 0.0;
  const double H0 = ctx.H[path.bins[0]];
  for (std::size_t i = 1; i <= n; ++i) {
    std::uint32_t b = path.bins[i], prev = path.bins[i - 1];
    double d = ctx.G[b] - ctx.RG[prev];
    Mk += d;
    Sk += f.eval(path.positions[i]) - ctx.nu_f;
    Srem += ctx.xbar_r[b];
    out.increments[i - 1] = d;
    out.martingale[i - 1] = Mk;
    out.s_exact[i - 1] = Sk;
    out.s_remainder[i - 1] = Srem;
    double res = Sk - (Mk + H0 - ctx.H[b] + Srem);
    out.residual[i - 1] = res;
    worst = std::max(worst, std::abs(res));
  }
  out.identity_residual = worst / std::sqrt(double(n));
  return out;
}

// conditional-mean regression: increments grouped by coarse cells of the
// previous bin; cells are stationary-mass quantiles
struct ConditionalMeanCheck {
  struct Cell {
    std::size_t visits = 0;
    double mean = 0.0;
    double stderr_ = 0.0;
    double tstat = 0.0;
  };
  std::vector<Cell> cells;
  double max_abs_tstat = 0.0;
  std::size_t cells_tested = 0;
};

inline ConditionalMeanCheck conditional_mean_check(
    const UlamOperator& op, const std::vector<const MartingalePath*>& paths,
    const std::vector<const ChainPath*>& raw, std::size_t n_cells = 24,
    std::size_t min_visits = 30) {
  // map bins to cells by cumulative pi
  std::vector<std::size_t> cell_of(op.bins());
  double acc = 0.0;
  for (std::size_t i = 0; i < op.bins(); ++i) {
    cell_of[i] = std::min(n_cells - 1, std::size_t(acc * double(n_cells)));
    acc += op.pi()[i];
  }
  std::vector<mean_var> accum(n_cells);
  for (std::size_t p = 0; p < paths.size(); ++p) {
    const auto& mp = *paths[p];
    const auto& cp = *raw[p];
    for (std::size_t i = 0; i < mp.increments.size(); ++i)
      accum[cell_of[cp.bins[i]]].add(mp.increments[i]);
  }
  ConditionalMeanCheck chk;
  chk.cells.resize(n_cells);
  for (std::size_t c = 0; c < n_cells; ++c) {
    auto& cell = chk.cells[c];
    cell.visits = std::size_t(accum[c].n);
    if (cell.visits < min_visits) continue;
    cell.mean = accum[c].mean;
    cell.stderr_ = std::sqrt(accum[c].variance() / double(cell.visits));
    cell.tstat = cell.stderr_ > 0.0 ? cell.mean / cell.stderr_ : 0.0;
    chk.max_abs_tstat = std::max(chk.max_abs_tstat, std::abs(cell.tstat));
    ++chk.cells_tested;
  }
  return chk;
}

// ============================================================================
// Exponential inequality for bounded-increment martingales.
// ============================================================================

inline double pinelis_h(double u) { return (1.0 + u) * std::log1p(u) - u; }

// P(max |M_k| >= x) <= 2 exp(-(2y/c^2) h(xc/(2y))) for increment bound c and
// predictable quadratic variation bound y
inline double pinelis_bound(double x, double y, double c) {
  if (!(x > 0.0 && y > 0.0 && c > 0.0))
    throw config_error("pinelis_bound: x, y, c must be positive");
  double u = x * c / (2.0 * y);
  return 2.0 * std::exp(-(2.0 * y / (c * c)) * pinelis_h(u));
}

// weaker closed form via h(u) >= (u/2) log(1+u)
inline double pinelis_bound_log_form(double x, double y, double c) {
  if (!(x > 0.0 && y > 0.0 && c > 0.0))
    throw config_error("pinelis_bound_log_form: x, y, c must be positive");
  return 2.0 * std::exp(-(x / (2.0 * c)) * std::log1p(x * c / (2.0 * y)));
}

// ============================================================================
// Scale constants tied to the mixing profile.
// ============================================================================

struct AsipConstants {
  double s_half = 0.0;  // sum_{k>=0} phi1(k)^{1/2}, with phi1(0) = 1
  double s_one = 0.0;   // sum_{k>=0} phi1(k), same convention
  double C = 0.0;       // 16 s_half
  double M = 0.0;
  std::size_t n = 0;
  double loglog_n = 0.0;
  double c_n = 0.0;  // increment scale   8 M sqrt(n) s_half / sqrt(LL n)
  double y_n = 0.0;  // variation scale   32 n s_half^2 M^2
  double x_n = 0.0;  // deviation scale   C M sqrt(n LL n)
};

inline AsipConstants asip_constants(const MixingProfile& prof,
                                    const DecayFit& fit, double M,
                                    std::size_t n) {
  auto sh = weighted_phi_series(prof.points, fit, 0.0, 0.5, false, 0, 1.0);
  auto so = weighted_phi_series(prof.points, fit, 0.0, 1.0, false, 0, 1.0);
  if (!sh.certified || !so.certified)
    throw numeric_error(
        "asip_constants: mixing profile tail not certified summable");
  AsipConstants a;
  a.s_half = sh.value();
  a.s_one = so.value();
  a.C = 16.0 * a.s_half;
  a.M = M;
  a.n = n;
  a.loglog_n = log_log_guarded(double(n));
  double rootn = std::sqrt(double(n));
  a.c_n = 8.0 * M * rootn * a.s_half / std::sqrt(a.loglog_n);
  a.y_n = 32.0 * double(n) * sq(a.s_half) * sq(M);
  a.x_n = a.C * M * std::sqrt(double(n) * a.loglog_n);
  return a;
}

// ============================================================================
// Series criteria from the mixing profile.
// ============================================================================

struct SeriesReport {
  double value = 0.0;
  bool convergent = false;
  SeriesResult detail;
};

// sum_k k^(1/sqrt3 - 1/2) phi2(k)^(1/2)
inline SeriesReport pair_mixing_condition(const MixingProfile& prof,
                                          const DecayFit& fit2) {
  SeriesReport r;
  r.detail = weighted_phi_series(prof.points, fit2,
                                 1.0 / std::sqrt(3.0) - 0.5, 0.5, true, 1);
  r.convergent = r.detail.certified;
  r.value = r.detail.value();
  return r;
}

// sum_k k^(sqrt3/2 - 1/4) phi1(k)^(3/4)
inline SeriesReport quartic_mixing_series(const MixingProfile& prof,
                                          const DecayFit& fit1) {
  SeriesReport r;
  r.detail = weighted_phi_series(prof.points, fit1,
                                 std::sqrt(3.0) / 2.0 - 0.25, 0.75, false, 1);
  r.convergent = r.detail.certified;
  r.value = r.detail.value();
  return r;
}

// ============================================================================
// Tail mass of the truncation remainder under the discretized measure:
//   sum_l |a_l| nu(|g_l| 1_{|g_l| > level});
// feeds the Markov bound P(max_k |S''_k| >= x) <= (2n/x) * this.
// ============================================================================

inline double nu_abs_tail(const UlamOperator& op, const Observable& f,
                          double level) {
  double total = 0.0;
  for (const auto& t : f.terms()) {
    if (t.weight == 0.0) continue;
    auto region = detail::clip_region(t.piece, level);
    auto against_density = [&](double lo, double hi) {
      if (!(hi > lo)) return 0.0;
      double s = 0.0;
      std::size_t i = op.grid().find(std::min(std::max(lo, 0.0), 1.0));
      for (; i < op.bins() && op.grid().edges[i] < hi; ++i) {
        double a = std::max(lo, op.grid().edges[i]);
        double b = std::min(hi, op.grid().edges[i + 1]);
        if (b > a) s += op.density()[i] * t.piece.integral(a, b);
      }
      return s;
    };
    double mass;
    if (region.empty())
      mass = std::abs(against_density(t.piece.lo, t.piece.hi));
    else
      mass = std::abs(against_density(t.piece.lo, region.c)) +
             std::abs(against_density(region.d, t.piece.hi));
    total += std::abs(t.weight) * mass;
  }
  return total;
}

}  // namespace mapstat
