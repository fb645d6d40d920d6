#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mapstat/common.hpp"
#include "mapstat/ulam.hpp"

namespace mapstat {

// ============================================================================
// Finite-state chain with uniform-mixing (phi) coefficients.
//
// States are ordered by position on [0,1], so threshold events {X <= t} are
// prefixes of the state order. phi1(k) is the sup over starting states and
// thresholds of the k-step conditional CDF deviation; phi2(k) additionally
// takes pairs of future times, using the centered indicator product
//   E[(1_{X_{i1}<=t1} - p1)(1_{X_{i2}<=t2} - p2) | X_0] - E[(...)(...)]
// over a finite window of time pairs. Coefficients are evaluated per lag;
// a monotonicity flag records whether the profile is non-increasing.
// ============================================================================

struct FiniteChain {
  std::vector<SparseRow> rows;  // row-stochastic transitions
  std::vector<double> pi;       // stationary distribution

  std::size_t states() const { return rows.size(); }

  static FiniteChain from_dense(const std::vector<std::vector<double>>& P) {
    const std::size_t S = P.size();
    if (S == 0) throw config_error("FiniteChain: empty matrix");
    FiniteChain c;
    c.rows.resize(S);
    for (std::size_t i = 0; i < S; ++i) {
      if (P[i].size() != S)
        throw config_error("FiniteChain: matrix is not square");
      double s = 0.0;
      for (std::size_t j = 0; j < S; ++j) {
        if (P[i][j] < -1e-15)
          throw config_error("FiniteChain: negative entry at row " +
                             std::to_string(i));
        if (P[i][j] > 0.0) c.rows[i].push_back({std::uint32_t(j), P[i][j]});
        s += P[i][j];
      }
      if (std::abs(s - 1.0) > 1e-12)
        throw config_error("FiniteChain: row " + std::to_string(i) +
                           " sums to " + std::to_string(s));
    }
    // stationary vector by power iteration
    std::vector<double> v(S, 1.0 / double(S)), nxt(S);
    double res = 1.0;
    for (int it = 0; it < 200000 && res > 1e-14; ++it) {
      std::fill(nxt.begin(), nxt.end(), 0.0);
      for (std::size_t i = 0; i < S; ++i)
        for (auto [j, p] : c.rows[i]) nxt[j] += v[i] * p;
      double tot = 0.0;
      for (double x : nxt) tot += x;
      res = 0.0;
      for (std::size_t i = 0; i < S; ++i) {
        nxt[i] /= tot;
        res += std::abs(nxt[i] - v[i]);
      }
      v.swap(nxt);
    }
    if (res > 1e-10)
      throw convergence_error("FiniteChain: stationary vector did not converge",
                              res);
    c.pi = std::move(v);
    return c;
  }

  static FiniteChain from_operator(const UlamOperator& op) {
    FiniteChain c;
    c.rows = op.reversed_rows();
    c.pi = op.pi();
    return c;
  }

  // distribution step: out_j = sum_i dist_i rows[i][j]
  std::vector<double> evolve(const std::vector<double>& dist) const {
    std::vector<double> out(states(), 0.0);
    for (std::size_t i = 0; i < states(); ++i) {
      double m = dist[i];
      if (m == 0.0) continue;
      for (auto [j, p] : rows[i]) out[j] += m * p;
    }
    return out;
  }

  // function step: out_i = sum_j rows[i][j] f_j
  std::vector<double> apply(const std::vector<double>& f) const {
    std::vector<double> out(states(), 0.0);
    for (std::size_t i = 0; i < states(); ++i) {
      double s = 0.0;
      for (auto [j, p] : rows[i]) s += p * f[j];
      out[i] = s;
    }
    return out;
  }

  std::vector<double> pi_cumulative() const {
    std::vector<double> cum(states());
    double acc = 0.0;
    for (std::size_t i = 0; i < states(); ++i) {
      acc += pi[i];
      cum[i] = acc;
    }
    return cum;
  }
};

struct PhiOptions {
  int max_lag = 32;
  int i1_window = 2;            // pair start times i1 in [k, k + i1_window]
  int gap_window = 4;           // pair gaps i2 - i1 - 1 in [0, gap_window]
  std::size_t pair_bins = 32;   // coarse thresholds/starts for large chains
  std::size_t exact_pair_state_cap = 64;
  std::size_t dense_state_cap = 2048;
};

struct PhiPoint {
  int lag = 0;
  double phi1 = 0.0;
  double phi2 = 0.0;
};

struct MixingProfile {
  std::vector<PhiPoint> points;
  bool phi1_nonincreasing = true;
  bool phi2_nonincreasing = true;
  bool pair_lower_bound_only = false;  // pair part evaluated on a coarse grid
};

namespace detail {

// dense row-major matrix advanced by the sparse chain from the right:
// out[s][.] = sum_j rows[s][j] * M[j][.]
inline void advance_dense(const FiniteChain& c, const std::vector<double>& M,
                          std::vector<double>& out, std::size_t width) {
  const std::size_t S = c.states();
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t s = 0; s < S; ++s) {
    double* dst = &out[s * width];
    for (auto [j, p] : c.rows[s]) {
      const double* src = &M[std::size_t(j) * width];
      for (std::size_t t = 0; t < width; ++t) dst[t] += p * src[t];
    }
  }
}

// start-distribution rows advanced one step: out[g][.] = G[g] * R
inline void advance_starts(const FiniteChain& c, const std::vector<double>& G,
                           std::vector<double>& out, std::size_t nstarts) {
  const std::size_t S = c.states();
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t g = 0; g < nstarts; ++g) {
    const double* src = &G[g * S];
    double* dst = &out[g * S];
    for (std::size_t i = 0; i < S; ++i) {
      double m = src[i];
      if (m == 0.0) continue;
      for (auto [j, p] : c.rows[i]) dst[j] += m * p;
    }
  }
}

// contiguous state groups of roughly equal stationary mass
inline std::vector<std::uint32_t> pi_quantile_bounds(const FiniteChain& c,
                                                     std::size_t groups) {
  const std::size_t S = c.states();
  groups = std::min(groups, S);
  std::vector<std::uint32_t> ub;  // inclusive upper state of each group
  double acc = 0.0;
  std::size_t next = 1;
  for (std::size_t i = 0; i < S; ++i) {
    acc += c.pi[i];
    if (acc >= double(next) / double(groups) - 1e-15 || i + 1 == S) {
      ub.push_back(std::uint32_t(i));
      while (acc >= double(next) / double(groups) - 1e-15 && next <= groups)
        ++next;
    }
  }
  ub.back() = std::uint32_t(S - 1);
  ub.erase(std::unique(ub.begin(), ub.end()), ub.end());
  return ub;
}

struct PairEngine {
  const FiniteChain* chain = nullptr;
  std::vector<std::uint32_t> thresholds;  // inclusive upper states
  std::size_t nstarts = 0;
  std::vector<double> G;       // nstarts x S start distributions at time 0
  std::vector<double> Cm;      // small powers cumulated: [m-1][a][tidx]
  std::vector<double> Jstat;   // stationary joint per gap: [d][t1][t2]
  std::vector<double> p_thr;   // stationary CDF at thresholds
  int max_ahead = 0;           // i1_window + 1 + gap_window

  void init(const FiniteChain& c, std::vector<std::uint32_t> thr,
            std::vector<double> starts, std::size_t ns, const PhiOptions& o) {
    chain = &c;
    thresholds = std::move(thr);
    nstarts = ns;
    G = std::move(starts);
    max_ahead = o.i1_window + 1 + o.gap_window;
    const std::size_t S = c.states();
    const std::size_t T = thresholds.size();
    auto cum = c.pi_cumulative();
    p_thr.resize(T);
    for (std::size_t t = 0; t < T; ++t) p_thr[t] = cum[thresholds[t]];

    // Cm[m][a][t] = P(X_m <= thr_t | X_0 = a), m = 1..gap_window+1
    const int M = o.gap_window + 1;
    Cm.assign(std::size_t(M) * S * T, 0.0);
    std::vector<double> col(S), nxt(S);
    for (std::size_t t = 0; t < T; ++t) {
      std::fill(col.begin(), col.end(), 0.0);
      for (std::size_t a = 0; a <= thresholds[t]; ++a) col[a] = 1.0;
      for (int m = 1; m <= M; ++m) {
        nxt = c.apply(col);
        col.swap(nxt);
        for (std::size_t a = 0; a < S; ++a)
          Cm[(std::size_t(m - 1) * S + a) * T + t] = col[a];
      }
    }
    // stationary joint: Jstat[d][t1][t2] = sum_{a<=thr_t1} pi_a Cm[d][a][t2]
    Jstat.assign(std::size_t(M) * T * T, 0.0);
    for (int d = 0; d < M; ++d) {
      std::vector<double> acc(T, 0.0);
      std::size_t t1 = 0;
      for (std::size_t a = 0; a < S; ++a) {
        const double* row = &Cm[(std::size_t(d) * S + a) * T];
        for (std::size_t t = 0; t < T; ++t) acc[t] += c.pi[a] * row[t];
        while (t1 < T && thresholds[t1] == a) {
          for (std::size_t t = 0; t < T; ++t)
            Jstat[(std::size_t(d) * T + t1) * T + t] = acc[t];
          ++t1;
        }
      }
    }
  }

  void step() {  // advance start distributions one lag
    std::vector<double> nxt(G.size());
    advance_starts(*chain, G, nxt, nstarts);
    G.swap(nxt);
  }

  // centered pair deviation maximized over starts, window times, thresholds
  double pair_sup(const PhiOptions& o) const {
    const std::size_t S = chain->states();
    const std::size_t T = thresholds.size();
    double best = 0.0;
    std::vector<double> Gi = G, tmp(G.size());
    for (int w = 0; w <= o.i1_window; ++w) {
      // Gi holds the start distributions at time i1 = k + w
      if (w > 0) {
        advance_starts(*chain, Gi, tmp, nstarts);
        Gi.swap(tmp);
      }
      for (std::size_t g = 0; g < nstarts; ++g) {
        const double* r = &Gi[g * S];
        for (int d = 0; d <= o.gap_window; ++d) {
          const double* C = &Cm[std::size_t(d) * S * T];
          // prefix walk over a, snapshotting J(t1, .) and M1 at thresholds
          std::vector<double> Jrow(T * T);
          std::vector<double> M1(T);
          std::vector<double> acc(T, 0.0);
          double mass = 0.0;
          std::size_t t1 = 0;
          for (std::size_t a = 0; a < S && t1 < T; ++a) {
            const double* row = &C[a * T];
            double m = r[a];
            if (m != 0.0)
              for (std::size_t t = 0; t < T; ++t) acc[t] += m * row[t];
            mass += m;
            while (t1 < T && thresholds[t1] == a) {
              for (std::size_t t = 0; t < T; ++t) Jrow[t1 * T + t] = acc[t];
              M1[t1] = mass;
              ++t1;
            }
          }
          std::vector<double> M2(T, 0.0);
          for (std::size_t a = 0; a < S; ++a) {
            double m = r[a];
            if (m == 0.0) continue;
            const double* row = &C[a * T];
            for (std::size_t t = 0; t < T; ++t) M2[t] += m * row[t];
          }
          const double* Js = &Jstat[std::size_t(d) * T * T];
          for (std::size_t a1 = 0; a1 < T; ++a1) {
            double p1 = p_thr[a1];
            for (std::size_t a2 = 0; a2 < T; ++a2) {
              double p2 = p_thr[a2];
              double v = (Jrow[a1 * T + a2] - Js[a1 * T + a2]) -
                         p1 * (M2[a2] - p2) - p2 * (M1[a1] - p1);
              best = std::max(best, std::abs(v));
            }
          }
        }
      }
    }
    return best;
  }
};

}  // namespace detail

// exact per-lag phi1 for lags 1..max_lag via cumulative k-step CDF matrices
inline std::vector<double> phi1_profile(const FiniteChain& c,
                                        const PhiOptions& opts = {}) {
  const std::size_t S = c.states();
  if (S > opts.dense_state_cap)
    throw config_error("phi1_profile: " + std::to_string(S) +
                       " states exceeds dense cap " +
                       std::to_string(opts.dense_state_cap));
  auto cum = c.pi_cumulative();
  // C[s][t] = P(X_k <= t | X_0 = s); starts as the k=0 step function
  std::vector<double> C(S * S, 0.0), nxt(S * S);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t t = s; t < S; ++t) C[s * S + t] = 1.0;
  std::vector<double> out;
  out.reserve(std::size_t(opts.max_lag));
  for (int k = 1; k <= opts.max_lag; ++k) {
    detail::advance_dense(c, C, nxt, S);
    C.swap(nxt);
    double best = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
      const double* row = &C[s * S];
      for (std::size_t t = 0; t < S; ++t)
        best = std::max(best, std::abs(row[t] - cum[t]));
    }
    out.push_back(best);
  }
  return out;
}

inline MixingProfile mixing_profile(const FiniteChain& c,
                                    const PhiOptions& opts = {}) {
  const std::size_t S = c.states();
  MixingProfile prof;
  auto phi1 = phi1_profile(c, opts);

  detail::PairEngine eng;
  if (S <= opts.exact_pair_state_cap) {
    std::vector<std::uint32_t> thr(S);
    for (std::size_t t = 0; t < S; ++t) thr[t] = std::uint32_t(t);
    std::vector<double> starts(S * S, 0.0);
    for (std::size_t s = 0; s < S; ++s) starts[s * S + s] = 1.0;
    eng.init(c, std::move(thr), std::move(starts), S, opts);
  } else {
    auto thr = detail::pi_quantile_bounds(c, opts.pair_bins);
    std::size_t ns = thr.size();
    std::vector<double> starts(ns * S, 0.0);
    std::size_t lo = 0;
    for (std::size_t g = 0; g < ns; ++g) {
      double mass = 0.0;
      for (std::size_t a = lo; a <= thr[g]; ++a) mass += c.pi[a];
      if (mass > 0.0)
        for (std::size_t a = lo; a <= thr[g]; ++a)
          starts[g * S + a] = c.pi[a] / mass;
      lo = thr[g] + 1;
    }
    eng.init(c, thr, std::move(starts), ns, opts);
    prof.pair_lower_bound_only = true;
  }

  for (int k = 1; k <= opts.max_lag; ++k) {
    eng.step();  // start distributions now at time k
    PhiPoint pt;
    pt.lag = k;
    pt.phi1 = phi1[std::size_t(k - 1)];
    pt.phi2 = std::max(pt.phi1, eng.pair_sup(opts));
    prof.points.push_back(pt);
  }
  for (std::size_t i = 1; i < prof.points.size(); ++i) {
    if (prof.points[i].phi1 > prof.points[i - 1].phi1 + 1e-14)
      prof.phi1_nonincreasing = false;
    if (prof.points[i].phi2 > prof.points[i - 1].phi2 + 1e-14)
      prof.phi2_nonincreasing = false;
  }
  return prof;
}

// ============================================================================
// Decay model fit and series with certified tails.
// ============================================================================

struct DecayFit {
  enum class Model { exponential, polynomial };
  Model model = Model::exponential;
  double amplitude = 0.0;  // C in C rho^k or C k^-q
  double rho = 0.0;        // exponential rate
  double exponent = 0.0;   // polynomial power q
  double rss_exponential = 0.0;
  double rss_polynomial = 0.0;
  int points_used = 0;
};

inline DecayFit fit_decay(const std::vector<PhiPoint>& pts,
                          bool use_phi2 = false, double floor = 1e-14) {
  std::vector<double> ks, logs;
  for (const auto& p : pts) {
    double v = use_phi2 ? p.phi2 : p.phi1;
    if (v > floor) {
      ks.push_back(double(p.lag));
      logs.push_back(std::log(v));
    }
  }
  DecayFit f;
  f.points_used = int(ks.size());
  if (ks.size() < 3)
    throw numeric_error("fit_decay: fewer than 3 usable points above floor");
  auto fe = linear_fit(ks, logs);
  std::vector<double> lks(ks.size());
  for (std::size_t i = 0; i < ks.size(); ++i) lks[i] = std::log(ks[i]);
  auto fp = linear_fit(lks, logs);
  f.rss_exponential = fe.rss;
  f.rss_polynomial = fp.rss;
  if (fe.rss <= fp.rss) {
    f.model = DecayFit::Model::exponential;
    f.amplitude = std::exp(fe.intercept);
    f.rho = std::exp(fe.slope);
    f.exponent = -fp.slope;
  } else {
    f.model = DecayFit::Model::polynomial;
    f.amplitude = std::exp(fp.intercept);
    f.exponent = -fp.slope;
    f.rho = std::exp(fe.slope);
  }
  return f;
}

struct SeriesResult {
  double partial = 0.0;   // sum over computed lags
  double extended = 0.0;  // model-extrapolated continuation
  double tail = 0.0;      // closed-form remainder bound
  bool certified = false; // model implies convergence
  double value() const { return partial + extended + tail; }
};

// sum_k k^a phi(k)^b over k >= k0, using computed profile values where
// available and the fitted decay model beyond; k^a at k=0 is treated as 1
inline SeriesResult weighted_phi_series(const std::vector<PhiPoint>& pts,
                                        const DecayFit& fit, double a, double b,
                                        bool use_phi2, int k0 = 1,
                                        double phi_at_zero = 1.0) {
  SeriesResult r;
  int last = 0;
  for (const auto& p : pts) {
    if (p.lag < k0) continue;
    double v = use_phi2 ? p.phi2 : p.phi1;
    double w = p.lag == 0 ? 1.0 : std::pow(double(p.lag), a);
    r.partial += w * std::pow(std::max(v, 0.0), b);
    last = std::max(last, p.lag);
  }
  if (k0 == 0) r.partial += std::pow(std::max(phi_at_zero, 0.0), b);

  auto model_phi = [&](double k) {
    if (fit.model == DecayFit::Model::exponential)
      return fit.amplitude * std::pow(fit.rho, k);
    return fit.amplitude * std::pow(k, -fit.exponent);
  };
  if (fit.model == DecayFit::Model::exponential) {
    if (fit.rho > 0.0 && fit.rho < 0.999) r.certified = true;
  } else {
    if (fit.exponent * b - a > 1.0) r.certified = true;
  }
  if (!r.certified) return r;

  int k = last + 1;
  double prev = 0.0;
  for (; k <= 200000; ++k) {
    double t = std::pow(double(k), a) * std::pow(model_phi(double(k)), b);
    r.extended += t;
    prev = t;
    if (t < 1e-16) break;
  }
  if (fit.model == DecayFit::Model::exponential) {
    double ratio = std::pow(fit.rho, b) *
                   std::pow(double(k + 1) / double(k), std::max(a, 0.0));
    if (ratio < 1.0)
      r.tail = prev * ratio / (1.0 - ratio);
    else
      r.certified = false;
  } else {
    double e = a - fit.exponent * b;  // < -1 when certified
    r.tail = std::pow(fit.amplitude, b) * std::pow(double(k), e + 1.0) /
             (-e - 1.0);
  }
  return r;
}

// ============================================================================
// Conditional-mean bound checks for monotone functions of the chain.
// ============================================================================

struct BoundCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds() const { return lhs <= rhs + 1e-12; }
};

// || E(f(X_k)|X_0) - E f ||_p  <=  2 (2 phi1(k))^((p-1)/p) ||f||_p
inline BoundCheck conditional_mean_bound(const FiniteChain& c,
                                         const std::vector<double>& f, int k,
                                         double p, double phi1_k) {
  std::vector<double> v = f;
  for (int t = 0; t < k; ++t) v = c.apply(v);
  double mean = 0.0, fnorm = 0.0;
  for (std::size_t i = 0; i < c.states(); ++i) {
    mean += c.pi[i] * v[i];
    fnorm += c.pi[i] * std::pow(std::abs(f[i]), p);
  }
  fnorm = std::pow(fnorm, 1.0 / p);
  double lhs = 0.0;
  for (std::size_t i = 0; i < c.states(); ++i)
    lhs += c.pi[i] * std::pow(std::abs(v[i] - mean), p);
  BoundCheck b;
  b.lhs = std::pow(lhs, 1.0 / p);
  b.rhs = 2.0 * std::pow(2.0 * phi1_k, (p - 1.0) / p) * fnorm;
  return b;
}

// || E(f(X_i)^0 g(X_j)^0 | X_0) - E(f^0 g^0) ||_{p/2}
//   <=  8 (4 phi2(k))^((p-2)/p) ||f||_p ||g||_p,  i >= j >= k
inline BoundCheck pair_mean_bound(const FiniteChain& c,
                                  const std::vector<double>& f,
                                  const std::vector<double>& g, int k, int j,
                                  int i, double p, double phi2_k) {
  if (!(i >= j && j >= k && k >= 1))
    throw config_error("pair_mean_bound: need i >= j >= k >= 1");
  const std::size_t S = c.states();
  double fm = 0.0, gm = 0.0, fn = 0.0, gn = 0.0;
  for (std::size_t s = 0; s < S; ++s) {
    fm += c.pi[s] * f[s];
    gm += c.pi[s] * g[s];
    fn += c.pi[s] * std::pow(std::abs(f[s]), p);
    gn += c.pi[s] * std::pow(std::abs(g[s]), p);
  }
  std::vector<double> f0(S), prod(S);
  for (std::size_t s = 0; s < S; ++s) f0[s] = f[s] - fm;
  std::vector<double> u = f0;
  for (int t = 0; t < i - j; ++t) u = c.apply(u);
  for (std::size_t s = 0; s < S; ++s) prod[s] = (g[s] - gm) * u[s];
  std::vector<double> w = prod;
  for (int t = 0; t < j; ++t) w = c.apply(w);
  double mean = 0.0;
  for (std::size_t s = 0; s < S; ++s) mean += c.pi[s] * prod[s];
  double q = p / 2.0;
  double lhs = 0.0;
  for (std::size_t s = 0; s < S; ++s)
    lhs += c.pi[s] * std::pow(std::abs(w[s] - mean), q);
  BoundCheck b;
  b.lhs = std::pow(lhs, 1.0 / q);
  b.rhs = 8.0 * std::pow(4.0 * phi2_k, (p - 2.0) / p) *
          std::pow(fn, 1.0 / p) * std::pow(gn, 1.0 / p);
  return b;
}

}  // namespace mapstat
