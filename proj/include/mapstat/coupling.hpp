#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mapstat/common.hpp"
#include "mapstat/rng.hpp"

namespace mapstat {

// ============================================================================
// Blockwise Gaussian coupling schedules.
//
// A schedule is a strictly increasing sequence of block lengths A_m (powers
// of two) with per-block coupling accuracies eps(m). Adjacent scales must
// separate fast enough that earlier blocks cannot dominate later deviation
// bands:
//   safety * eps(j) sqrt(A_{j+1} LL A_{j+1})
//       < 2^-(m-j) eps(m) sqrt(A_m LL A_m)   for all j <= m-2.
// ============================================================================

struct CouplingSchedule {
  std::vector<std::size_t> lengths;  // A_m, m = 1..M
  std::vector<double> eps;           // eps(m)
  std::vector<std::size_t> starts;   // 0-based offset of each block
  std::size_t total = 0;

  std::size_t blocks() const { return lengths.size(); }

  std::size_t block_of(std::size_t i) const {
    auto it = std::upper_bound(starts.begin(), starts.end(), i);
    return std::size_t(it - starts.begin()) - 1;
  }
};

struct ScheduleOptions {
  std::size_t min_block = 2;
  std::size_t max_block = std::size_t(1) << 40;
  double safety = 2.0;
};

inline void validate_epsilons(const std::vector<double>& eps) {
  if (eps.size() < 2)
    throw config_error("epsilon schedule needs at least 2 levels");
  for (std::size_t m = 1; m < eps.size(); ++m) {
    if (!(eps[m] > 0.0))
      throw config_error("epsilon schedule must stay positive");
    if (eps[m] > eps[m - 1] + 1e-15)
      throw config_error("epsilon schedule must be non-increasing (rises at level " +
                         std::to_string(m + 1) + ")");
  }
  if (!(eps.back() < eps.front()))
    throw config_error("epsilon schedule must decrease overall");
}

namespace detail {

inline double deviation_band(double eps, std::size_t A) {
  return eps * std::sqrt(double(A) * log_log_guarded(double(A)));
}

// constraint of block m against block j (j <= m-2); lengths/eps are 0-based
inline bool scale_separated(const std::vector<std::size_t>& lengths,
                            const std::vector<double>& eps, std::size_t m,
                            std::size_t j, double safety) {
  double lhs = safety * deviation_band(eps[j], lengths[j + 1]);
  double rhs = std::pow(2.0, -double(m - j)) * deviation_band(eps[m], lengths[m]);
  return lhs < rhs;
}

}  // namespace detail

// greedy-minimal schedule: each block is the smallest admissible power of two
inline CouplingSchedule build_coupling_schedule(std::size_t total_n,
                                                const std::vector<double>& eps,
                                                const ScheduleOptions& opts = {}) {
  validate_epsilons(eps);
  if (total_n == 0) throw config_error("schedule: total length must be positive");
  CouplingSchedule s;
  std::size_t covered = 0;
  while (covered < total_n) {
    std::size_t m = s.lengths.size();
    if (m >= eps.size())
      throw config_error("schedule: epsilon sequence exhausted after " +
                         std::to_string(m) + " blocks (covers " +
                         std::to_string(covered) + " of " +
                         std::to_string(total_n) + ")");
    std::size_t A = std::bit_ceil(std::max<std::size_t>(opts.min_block, 2));
    if (m > 0) A = std::max(A, s.lengths.back() * 2);
    s.lengths.push_back(A);
    s.eps.push_back(eps[m]);
    while (true) {
      bool ok = true;
      std::size_t bad_j = 0;
      for (std::size_t j = 0; m >= 2 && j + 2 <= m; ++j)
        if (!detail::scale_separated(s.lengths, s.eps, m, j, opts.safety)) {
          ok = false;
          bad_j = j;
          break;
        }
      if (ok) break;
      if (s.lengths[m] > opts.max_block / 2)
        throw config_error(
            "schedule stalled: no admissible length for block " +
            std::to_string(m + 1) + " (constraint against block " +
            std::to_string(bad_j + 1) + ")");
      s.lengths[m] *= 2;
    }
    covered += s.lengths[m];
  }
  s.starts.resize(s.lengths.size());
  std::size_t acc = 0;
  for (std::size_t m = 0; m < s.lengths.size(); ++m) {
    s.starts[m] = acc;
    acc += s.lengths[m];
  }
  s.total = acc;
  return s;
}

inline bool verify_coupling_schedule(const CouplingSchedule& s, double safety,
                                     std::string* why = nullptr) {
  auto fail = [&](const std::string& msg) {
    if (why) *why = msg;
    return false;
  };
  if (s.lengths.empty()) return fail("empty schedule");
  for (std::size_t m = 0; m < s.lengths.size(); ++m) {
    if (!std::has_single_bit(s.lengths[m]))
      return fail("block " + std::to_string(m + 1) + " is not a power of two");
    if (m > 0 && s.lengths[m] <= s.lengths[m - 1])
      return fail("block lengths not strictly increasing at block " +
                  std::to_string(m + 1));
    for (std::size_t j = 0; m >= 2 && j + 2 <= m; ++j)
      if (!detail::scale_separated(s.lengths, s.eps, m, j, safety))
        return fail("scale separation fails for (j=" + std::to_string(j + 1) +
                    ", m=" + std::to_string(m + 1) + ")");
  }
  return true;
}

// ============================================================================
// Assembling the coupled Gaussian sequence from per-block scale factors:
// Z_i = (sigma / sigma_{m(i)}) Z_{i,m(i)}; degenerate blocks (sigma_m = 0)
// fall back to independent N(0, sigma^2) draws.
// ============================================================================

inline std::vector<double> build_Z(const CouplingSchedule& sched,
                                   const std::vector<double>& sigma_m,
                                   double sigma,
                                   const std::vector<double>& z_block,
                                   std::uint64_t seed) {
  if (sigma_m.size() < sched.blocks())
    throw config_error("build_Z: sigma_m shorter than the schedule");
  if (z_block.size() < sched.total)
    throw config_error("build_Z: block variables shorter than the schedule");
  std::vector<double> Z(sched.total);
  for (std::size_t m = 0; m < sched.blocks(); ++m) {
    std::size_t lo = sched.starts[m], hi = lo + sched.lengths[m];
    if (sigma_m[m] == 0.0) {
      for (std::size_t i = lo; i < hi; ++i) {
        rng_stream rng(seed, i);
        Z[i] = sigma * rng.normal();
      }
    } else {
      double scale = sigma / sigma_m[m];
      for (std::size_t i = lo; i < hi; ++i) Z[i] = scale * z_block[i];
    }
  }
  return Z;
}

// |sum_{i<n} (X_i - Z_i)| / sqrt(n loglog n)
inline double asip_discrepancy(double coupled_sum_abs, std::size_t n) {
  return coupled_sum_abs / std::sqrt(double(n) * log_log_guarded(double(n)));
}

// Theil-Sen slope of log median discrepancy against log n
inline double discrepancy_trend(const std::vector<std::size_t>& ns,
                                const std::vector<double>& medians) {
  std::vector<double> x, y;
  for (std::size_t i = 0; i < ns.size(); ++i) {
    x.push_back(std::log(double(ns[i])));
    y.push_back(std::log(std::max(medians[i], 1e-300)));
  }
  return theil_sen_slope(x, y);
}

// ============================================================================
// Synthetic harness: W_i iid N(0,1) carries the signal; dyadic blocks
// A_m = 2^m with accuracies eps(m) = 2^-m and block scales sigma_m = 1-2^-m.
// The per-block perturbation U_i = (eps(m(i))/4) zeta_i makes X_i = W_i + U_i
// couple back to Z_i = W_i exactly, so the discrepancy D_n is driven by the
// vanishing noise levels and must shrink along checkpoints.
// ============================================================================

struct HarnessOptions {
  std::size_t n = 1000000;
  std::vector<std::size_t> checkpoints = {10000, 100000, 1000000};
  std::uint64_t seed = 1;
  std::size_t ks_prefix = 100000;
  double assumption_safety = 3.0;
};

struct HarnessRun {
  std::vector<double> D;          // discrepancy at each checkpoint
  double z_ks = 0.0;              // KS of the coupled Z prefix vs N(0,1)
  double z_lag1 = 0.0;            // lag-1 autocorrelation of Z
  double max_block_ratio = 0.0;   // |block sum of X-Z| / deviation band
  bool assumption_ok = true;
  std::vector<double> z_prefix;   // kept for distribution tests
};

inline std::size_t harness_block_of(std::size_t i) {
  // blocks of length 2^m starting at index 0: [0,2), [2,6), [6,14), ...
  return std::size_t(std::bit_width(i + 2)) - 1;
}

inline HarnessRun run_synthetic_harness(const HarnessOptions& opts) {
  HarnessRun out;
  rng_stream rng(opts.seed, 0);
  double diff_sum = 0.0;       // sum of X_i - Z_i
  double block_sum = 0.0;
  std::size_t cur_block = harness_block_of(0);
  std::size_t block_count = 0;
  double lag_prev = 0.0, lag_acc = 0.0, z_acc = 0.0, z2_acc = 0.0;
  std::size_t cp = 0;
  out.z_prefix.reserve(std::min(opts.n, opts.ks_prefix));
  for (std::size_t i = 0; i < opts.n; ++i) {
    std::size_t m = harness_block_of(i);
    if (m != cur_block) {
      std::size_t A = std::size_t(1) << cur_block;
      double band = detail::deviation_band(std::pow(2.0, -double(cur_block)), A);
      out.max_block_ratio =
          std::max(out.max_block_ratio, std::abs(block_sum) / band);
      block_sum = 0.0;
      cur_block = m;
      ++block_count;
    }
    double eps_m = std::pow(2.0, -double(m));
    double W = rng.normal();
    double zeta = rng.normal();
    double U = 0.25 * eps_m * zeta;
    double X = W + U;
    double Z = W;  // coupled value: (sigma/sigma_m) * (sigma_m/sigma) W
    diff_sum += X - Z;
    block_sum += X - Z;
    if (i < opts.ks_prefix) out.z_prefix.push_back(Z);
    if (i > 0) lag_acc += lag_prev * Z;
    lag_prev = Z;
    z_acc += Z;
    z2_acc += Z * Z;
    if (cp < opts.checkpoints.size() && i + 1 == opts.checkpoints[cp]) {
      out.D.push_back(asip_discrepancy(std::abs(diff_sum), i + 1));
      ++cp;
    }
  }
  double n = double(opts.n);
  double mean = z_acc / n;
  double var = z2_acc / n - mean * mean;
  out.z_lag1 = (lag_acc / (n - 1.0) - mean * mean) / var;
  out.assumption_ok = out.max_block_ratio <= opts.assumption_safety;
  return out;
}

}  // namespace mapstat
