#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mapstat/common.hpp"
#include "mapstat/interval_map.hpp"
#include "mapstat/observable.hpp"
#include "mapstat/rng.hpp"

namespace mapstat {

// ============================================================================
// Ulam discretization of the transfer operator.
//
// P[i][j] = Leb(I_i cap T^{-1} I_j) / Leb(I_i), assembled exactly from
// inverse-branch preimages of the bin edges. The stationary row vector pi
// (pi P = pi) gives the invariant density h_i = pi_i / w_i, and the
// normalized operator K f = L(f h)/h acts on cell-average vectors as the
// reversed chain R[i][j] = pi_j P[j][i] / pi_i.
// ============================================================================

struct BinGrid {
  std::vector<double> edges;  // size B+1, edges[0]=0, edges[B]=1

  static BinGrid uniform(std::size_t bins) {
    if (bins < 1) throw config_error("BinGrid: bins must be >= 1");
    BinGrid g;
    g.edges.resize(bins + 1);
    for (std::size_t i = 0; i <= bins; ++i)
      g.edges[i] = double(i) / double(bins);
    g.edges.back() = 1.0;
    return g;
  }

  // widths grow geometrically away from 0; first bin has width `first_width`
  static BinGrid geometric(std::size_t bins, double first_width = 1e-8) {
    if (bins < 2) throw config_error("BinGrid: geometric grid needs >= 2 bins");
    if (!(first_width > 0.0 && first_width * double(bins) < 1.0))
      throw config_error("BinGrid: first_width out of range");
    // solve w0 (r^B - 1)/(r - 1) = 1 for r in log space to dodge overflow
    double lo = 1e-12, hi = 1.0;  // log r
    auto total = [&](double logr) {
      double B = double(bins);
      if (B * logr > 700.0) return std::numeric_limits<double>::infinity();
      return first_width * std::expm1(B * logr) / std::expm1(logr);
    };
    while (total(hi) < 1.0) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
      double mid = 0.5 * (lo + hi);
      if (total(mid) < 1.0)
        lo = mid;
      else
        hi = mid;
    }
    double r = std::exp(0.5 * (lo + hi));
    BinGrid g;
    g.edges.resize(bins + 1);
    g.edges[0] = 0.0;
    double w = first_width;
    for (std::size_t i = 0; i < bins; ++i) {
      g.edges[i + 1] = g.edges[i] + w;
      w *= r;
    }
    // pin the right endpoint; the solve leaves only float-level slack
    double scale = 1.0 / g.edges.back();
    for (auto& e : g.edges) e *= scale;
    g.edges.front() = 0.0;
    g.edges.back() = 1.0;
    return g;
  }

  std::size_t size() const { return edges.size() - 1; }
  double width(std::size_t i) const { return edges[i + 1] - edges[i]; }
  double mid(std::size_t i) const { return 0.5 * (edges[i] + edges[i + 1]); }

  // bin containing x; bins are [e_i, e_{i+1}) with the last closed
  std::size_t find(double x) const {
    if (!(x >= 0.0 && x <= 1.0))
      throw domain_error("BinGrid::find: x outside [0,1]");
    auto it = std::upper_bound(edges.begin(), edges.end(), x);
    std::size_t i = std::size_t(it - edges.begin());
    if (i == 0) return 0;
    if (i > size()) return size() - 1;
    return i - 1;
  }
};

struct UlamBuildOptions {
  double tol = 1e-12;
  int max_iterations = 100000;
  int cesaro_every = 100;  // averaging cadence for neutral-point maps
};

using SparseRow = std::vector<std::pair<std::uint32_t, double>>;

class UlamOperator {
public:
  UlamOperator(IntervalMap map, BinGrid grid, std::vector<SparseRow> rows,
               std::vector<double> pi, int iterations, double residual)
      : map_(std::move(map)),
        grid_(std::move(grid)),
        rows_(std::move(rows)),
        pi_(std::move(pi)),
        iterations_(iterations),
        residual_(residual) {
    h_.resize(pi_.size());
    for (std::size_t i = 0; i < pi_.size(); ++i)
      h_[i] = pi_[i] / grid_.width(i);
  }

  const IntervalMap& map() const { return map_; }
  const BinGrid& grid() const { return grid_; }
  std::size_t bins() const { return grid_.size(); }
  const std::vector<SparseRow>& rows() const { return rows_; }
  const std::vector<double>& pi() const { return pi_; }
  const std::vector<double>& density() const { return h_; }
  int iterations() const { return iterations_; }
  double residual() const { return residual_; }

  double row_sum_error() const {
    double worst = 0.0;
    for (const auto& row : rows_) {
      double s = 0.0;
      for (auto [j, p] : row) s += p;
      worst = std::max(worst, std::abs(s - 1.0));
    }
    return worst;
  }

  double stationarity_error() const {
    std::vector<double> nxt(pi_.size(), 0.0);
    for (std::size_t i = 0; i < rows_.size(); ++i)
      for (auto [j, p] : rows_[i]) nxt[j] += pi_[i] * p;
    double s = 0.0;
    for (std::size_t i = 0; i < pi_.size(); ++i) s += std::abs(nxt[i] - pi_[i]);
    return s;
  }

  // reversed (inverse-branch) chain: R[i][j] = pi_j P[j][i] / pi_i
  const std::vector<SparseRow>& reversed_rows() const {
    if (reversed_.empty()) {
      reversed_.assign(bins(), SparseRow{});
      for (std::uint32_t j = 0; j < bins(); ++j)
        for (auto [i, p] : rows_[j])
          if (pi_[i] > 1e-300)
            reversed_[i].push_back({j, pi_[j] * p / pi_[i]});
      for (auto& row : reversed_)
        std::sort(row.begin(), row.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
    }
    return reversed_;
  }

  // y = R x
  std::vector<double> reversed_apply(const std::vector<double>& x) const {
    const auto& R = reversed_rows();
    std::vector<double> y(bins(), 0.0);
    for (std::size_t i = 0; i < R.size(); ++i) {
      double s = 0.0;
      for (auto [j, p] : R[i]) s += p * x[j];
      y[i] = s;
    }
    return y;
  }

  std::vector<double> cell_averages(const Observable& f) const {
    std::vector<double> v(bins());
    for (std::size_t i = 0; i < bins(); ++i)
      v[i] = f.integral(grid_.edges[i], grid_.edges[i + 1]) / grid_.width(i);
    return v;
  }

  double nu(const Observable& f) const {
    double s = 0.0;
    for (std::size_t i = 0; i < bins(); ++i)
      s += f.integral(grid_.edges[i], grid_.edges[i + 1]) * h_[i];
    return s;
  }

  double nu_dot(const std::vector<double>& v) const {
    double s = 0.0;
    for (std::size_t i = 0; i < bins(); ++i) s += pi_[i] * v[i];
    return s;
  }

  double l2_nu_norm(const std::vector<double>& v) const {
    double s = 0.0;
    for (std::size_t i = 0; i < bins(); ++i) s += pi_[i] * v[i] * v[i];
    return std::sqrt(s);
  }

  PiecewiseConstantDensity density_fn() const {
    return PiecewiseConstantDensity{grid_.edges, h_};
  }

private:
  IntervalMap map_;
  BinGrid grid_;
  std::vector<SparseRow> rows_;
  std::vector<double> pi_;
  std::vector<double> h_;
  int iterations_;
  double residual_;
  mutable std::vector<SparseRow> reversed_;
};

namespace detail {

inline bool has_neutral_branch_end(const IntervalMap& m) {
  for (std::size_t k = 0; k < m.branch_count(); ++k) {
    const Branch& b = m.branch(k);
    if (std::abs(std::abs(b.derivative(b.lo)) - 1.0) < 1e-9 ||
        std::abs(std::abs(b.derivative(b.hi)) - 1.0) < 1e-9)
      return true;
  }
  return false;
}

}  // namespace detail

inline UlamOperator build_ulam(const IntervalMap& map, const BinGrid& grid,
                               const UlamBuildOptions& opts = {}) {
  const std::size_t B = grid.size();
  std::vector<SparseRow> rows(B);

  // exact preimage assembly branch by branch
  for (std::size_t k = 0; k < map.branch_count(); ++k) {
    const Branch& br = map.branch(k);
    double ylo = std::min(br.image_lo, br.image_hi);
    double yhi = std::max(br.image_lo, br.image_hi);
    // preimage of each edge that lies inside the branch image
    std::vector<double> pre(B + 1);
    for (std::size_t j = 0; j <= B; ++j) {
      double y = std::min(std::max(grid.edges[j], ylo), yhi);
      pre[j] = map.inverse_branch(k, y);
    }
    for (std::size_t j = 0; j < B; ++j) {
      double a = br.increasing ? pre[j] : pre[j + 1];
      double b = br.increasing ? pre[j + 1] : pre[j];
      if (!(b > a)) continue;
      // distribute [a, b] over the bins it crosses
      std::size_t i = grid.find(a);
      while (i < B && grid.edges[i + 1] <= a) ++i;
      for (; i < B && grid.edges[i] < b; ++i) {
        double lo = std::max(a, grid.edges[i]);
        double hi = std::min(b, grid.edges[i + 1]);
        if (hi > lo) rows[i].push_back({std::uint32_t(j), hi - lo});
      }
    }
  }

  // merge duplicate (i, j) contributions and divide by bin width
  for (std::size_t i = 0; i < B; ++i) {
    auto& row = rows[i];
    std::sort(row.begin(), row.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    SparseRow merged;
    for (const auto& e : row) {
      if (!merged.empty() && merged.back().first == e.first)
        merged.back().second += e.second;
      else
        merged.push_back(e);
    }
    double inv_w = 1.0 / grid.width(i);
    for (auto& e : merged) e.second *= inv_w;
    row = std::move(merged);
  }

  // stationary vector by power iteration; for neutral-point maps a Cesaro
  // average of the recent window is adopted whenever it has smaller residual
  const bool gpm = detail::has_neutral_branch_end(map);
  std::vector<double> pi(B), nxt(B), avg(B, 0.0);
  for (std::size_t i = 0; i < B; ++i) pi[i] = grid.width(i);
  auto step = [&](const std::vector<double>& src, std::vector<double>& dst) {
    std::fill(dst.begin(), dst.end(), 0.0);
    for (std::size_t i = 0; i < B; ++i) {
      double m = src[i];
      for (auto [j, p] : rows[i]) dst[j] += m * p;
    }
    double total = 0.0;
    for (double x : dst) total += x;
    for (double& x : dst) x /= total;
  };
  auto residual_of = [&](const std::vector<double>& v) {
    step(v, nxt);
    double r = 0.0;
    for (std::size_t i = 0; i < B; ++i) r += std::abs(nxt[i] - v[i]);
    return r;
  };

  double res = std::numeric_limits<double>::infinity();
  int it = 0;
  int window = 0;
  for (; it < opts.max_iterations; ++it) {
    step(pi, nxt);
    res = 0.0;
    for (std::size_t i = 0; i < B; ++i) res += std::abs(nxt[i] - pi[i]);
    pi.swap(nxt);
    if (gpm && opts.cesaro_every > 0) {
      for (std::size_t i = 0; i < B; ++i) avg[i] += pi[i];
      ++window;
      if (window == opts.cesaro_every) {
        for (double& x : avg) x /= double(window);
        if (residual_of(avg) < res) {
          pi = avg;
          res = residual_of(pi);
        }
        std::fill(avg.begin(), avg.end(), 0.0);
        window = 0;
      }
    }
    if (res <= opts.tol) break;
  }
  if (res > opts.tol)
    throw convergence_error(
        "build_ulam: power iteration for '" + map.name() + "' did not reach " +
            std::to_string(opts.tol) + " after " +
            std::to_string(opts.max_iterations) + " iterations (residual " +
            std::to_string(res) +
            "); maps with a neutral fixed point need a geometric-near-0 grid",
        res);

  return UlamOperator(map, grid, std::move(rows), std::move(pi), it + 1, res);
}

// ============================================================================
// K^n applied to an observable, reported as cell averages.
// ============================================================================

enum class KernelMode { automatic, matrix, exact };

struct KernelResult {
  std::vector<double> values;
  std::vector<std::uint32_t> unsupported;  // bins with density below the guard
  bool used_exact = false;
};

namespace detail {

// integral of f * h over the n-fold preimage of [u, v], by recursive
// branch decomposition
inline double preimage_integral(const UlamOperator& op, const Observable& f,
                                double u, double v, int n) {
  if (!(v > u)) return 0.0;
  if (n == 0) {
    double s = 0.0;
    const auto& g = op.grid();
    std::size_t i = g.find(std::min(std::max(u, 0.0), 1.0));
    for (; i < g.size() && g.edges[i] < v; ++i) {
      double lo = std::max(u, g.edges[i]);
      double hi = std::min(v, g.edges[i + 1]);
      if (hi > lo) s += op.density()[i] * f.integral(lo, hi);
    }
    return s;
  }
  double s = 0.0;
  const IntervalMap& m = op.map();
  for (std::size_t k = 0; k < m.branch_count(); ++k) {
    const Branch& br = m.branch(k);
    double ylo = std::min(br.image_lo, br.image_hi);
    double yhi = std::max(br.image_lo, br.image_hi);
    double a = std::max(u, ylo), b = std::min(v, yhi);
    if (!(b > a)) continue;
    double xa = m.inverse_branch(k, br.increasing ? a : b);
    double xb = m.inverse_branch(k, br.increasing ? b : a);
    s += preimage_integral(op, f, xa, xb, n - 1);
  }
  return s;
}

}  // namespace detail

inline KernelResult apply_kernel(const UlamOperator& op, const Observable& f,
                                 int n, KernelMode mode = KernelMode::automatic,
                                 std::size_t max_exact_intervals = (1u << 21)) {
  if (n < 0) throw config_error("apply_kernel: n must be >= 0");
  KernelResult out;
  const std::size_t B = op.bins();
  const double guard = 1e-14;
  for (std::uint32_t i = 0; i < B; ++i)
    if (op.density()[i] < guard) out.unsupported.push_back(i);

  bool exact = false;
  if (mode == KernelMode::exact)
    exact = true;
  else if (mode == KernelMode::automatic) {
    double count = 1.0;
    for (int t = 0; t < n && count <= double(max_exact_intervals); ++t)
      count *= double(op.map().branch_count());
    exact = count <= double(max_exact_intervals);
  }

  if (exact) {
    out.used_exact = true;
    out.values.resize(B);
    for (std::uint32_t i = 0; i < B; ++i) {
      if (op.density()[i] < guard) {
        out.values[i] = 0.0;
        continue;
      }
      double num = detail::preimage_integral(op, f, op.grid().edges[i],
                                             op.grid().edges[i + 1], n);
      out.values[i] = num / op.pi()[i];
    }
    return out;
  }

  std::vector<double> v = op.cell_averages(f);
  for (int t = 0; t < n; ++t) v = op.reversed_apply(v);
  for (std::uint32_t i : out.unsupported) v[i] = 0.0;
  out.values = std::move(v);
  return out;
}

// ============================================================================
// Operator-side statistics.
// ============================================================================

// nu(f_centered * (g composed with T^k)) via the K-pairing:
// cov_k = sum_i pi_i gbar_i (K^k f)_i - nu(f) nu(g)
inline double correlation(const UlamOperator& op, const Observable& f,
                          const Observable& g, int k,
                          KernelMode mode = KernelMode::automatic) {
  auto kf = apply_kernel(op, f, k, mode);
  auto gbar = op.cell_averages(g);
  double s = 0.0;
  for (std::size_t i = 0; i < op.bins(); ++i)
    s += op.pi()[i] * gbar[i] * kf.values[i];
  return s - op.nu(f) * op.nu(g);
}

struct GordinResult {
  std::vector<double> terms;  // ||K^n f - nu(f)||_{L2(nu)}, n = 0..N
  double partial_sum = 0.0;
  double tail_estimate = 0.0;
  double rho_hat = 0.0;       // fitted geometric decay of the terms
  bool tail_certified = false;
};

inline GordinResult gordin_sum(const UlamOperator& op, const Observable& f,
                               int N, int exact_budget_n = 12) {
  if (N < 2) throw config_error("gordin_sum: N must be >= 2");
  GordinResult r;
  double mean = op.nu(f);
  std::vector<double> v;
  for (int n = 0; n <= N; ++n) {
    if (n <= exact_budget_n &&
        std::pow(double(op.map().branch_count()), n) <= double(1u << 21)) {
      v = apply_kernel(op, f, n, KernelMode::exact).values;
    } else {
      v = op.reversed_apply(v);
    }
    std::vector<double> c(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) c[i] = v[i] - mean;
    r.terms.push_back(op.l2_nu_norm(c));
  }
  for (double t : r.terms) r.partial_sum += t;

  std::vector<double> xs, ys;
  for (int n = N / 2; n <= N; ++n)
    if (r.terms[n] > 1e-15) {
      xs.push_back(double(n));
      ys.push_back(std::log(r.terms[n]));
    }
  if (xs.size() >= 3) {
    double slope = linear_fit(xs, ys).slope;
    r.rho_hat = std::exp(slope);
    if (r.rho_hat < 0.999) {
      r.tail_estimate = r.terms.back() * r.rho_hat / (1.0 - r.rho_hat);
      r.tail_certified = true;
    }
  } else {
    // terms already at float noise: tail is negligible
    r.tail_certified = true;
  }
  return r;
}

// Inverse-CDF sampling from the discretized invariant measure: bin by pi,
// uniform within the bin (the density is bin-constant).
inline double sample_stationary(const UlamOperator& op,
                                const std::vector<double>& pi_cum,
                                rng_stream& rng) {
  double u = rng.u01();
  auto it = std::upper_bound(pi_cum.begin(), pi_cum.end(), u);
  std::size_t i = std::size_t(it - pi_cum.begin());
  if (i >= op.bins()) i = op.bins() - 1;
  double lo = op.grid().edges[i], hi = op.grid().edges[i + 1];
  return lo + rng.u01() * (hi - lo);
}

inline std::vector<double> stationary_cdf(const UlamOperator& op) {
  std::vector<double> cum(op.bins());
  double acc = 0.0;
  for (std::size_t i = 0; i < op.bins(); ++i) {
    acc += op.pi()[i];
    cum[i] = acc;
  }
  cum.back() = 1.0;
  return cum;
}

// L1 distance between the invariant densities of two discretizations
// (common-refinement integral), used for resolution-consistency checks.
inline double density_l1_distance(const UlamOperator& a, const UlamOperator& b) {
  const auto& ea = a.grid().edges;
  const auto& eb = b.grid().edges;
  std::vector<double> cuts;
  cuts.reserve(ea.size() + eb.size());
  cuts.insert(cuts.end(), ea.begin(), ea.end());
  cuts.insert(cuts.end(), eb.begin(), eb.end());
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  double s = 0.0;
  std::size_t ia = 0, ib = 0;
  for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
    double lo = cuts[c], hi = cuts[c + 1];
    if (!(hi > lo)) continue;
    while (ia + 1 < a.bins() && ea[ia + 1] <= lo) ++ia;
    while (ib + 1 < b.bins() && eb[ib + 1] <= lo) ++ib;
    s += std::abs(a.density()[ia] - b.density()[ib]) * (hi - lo);
  }
  return s;
}

}  // namespace mapstat
