#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace mapstat {

// ============================================================================
// Error taxonomy.
//
// config_error   : bad inputs, contract violations at the API boundary.
// numeric_error  : a computation could not be certified (non-convergence,
//                  divergent profile, unbounded variation, ...).
// The CLI maps config_error to exit 1 and numeric_error to exit 2.
// ============================================================================

class error : public std::runtime_error {
public:
  explicit error(const std::string& what) : std::runtime_error(what) {}
};

class config_error : public error {
public:
  explicit config_error(const std::string& what) : error(what) {}
};

class numeric_error : public error {
public:
  explicit numeric_error(const std::string& what) : error(what) {}
};

class convergence_error : public numeric_error {
public:
  convergence_error(const std::string& what, double residual)
      : numeric_error(what), residual_(residual) {}
  double residual() const { return residual_; }

private:
  double residual_;
};

// ============================================================================
// Small numeric helpers shared across modules.
// ============================================================================

inline double sq(double x) { return x * x; }

// log log n with the guard log(max(log n, e)); >= 1 for all n >= 2.
inline double log_log_guarded(double n) {
  return std::log(std::max(std::log(n), std::exp(1.0)));
}

inline double l1_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += std::abs(x);
  return s;
}

inline double sup_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s = std::max(s, std::abs(x));
  return s;
}

// Mean and unbiased variance in one pass (Welford).
struct mean_var {
  double mean = 0.0;
  double m2 = 0.0;
  std::int64_t n = 0;
  void add(double x) {
    ++n;
    double d = x - mean;
    mean += d / double(n);
    m2 += d * (x - mean);
  }
  double variance() const { return n > 1 ? m2 / double(n - 1) : 0.0; }
};

// Least squares fit y ~ a + b*x; returns {a, b, rss}.
struct linear_fit_result {
  double intercept = 0.0;
  double slope = 0.0;
  double rss = 0.0;
};

inline linear_fit_result linear_fit(const std::vector<double>& x,
                                    const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw config_error("linear_fit: need >= 2 matching points");
  double n = double(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  double denom = n * sxx - sx * sx;
  if (std::abs(denom) < 1e-300) throw config_error("linear_fit: degenerate abscissae");
  linear_fit_result r;
  r.slope = (n * sxy - sx * sy) / denom;
  r.intercept = (sy - r.slope * sx) / n;
  for (std::size_t i = 0; i < x.size(); ++i)
    r.rss += sq(y[i] - r.intercept - r.slope * x[i]);
  return r;
}

// Median of a scratch copy.
inline double median_of(std::vector<double> v) {
  if (v.empty()) throw config_error("median_of: empty");
  std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  std::nth_element(v.begin(), v.begin() + mid - 1, v.end());
  return 0.5 * (v[mid - 1] + hi);
}

// Theil-Sen slope estimate: median of pairwise slopes. Robust against a few
// outliers, used for trend certification on small point sets.
inline double theil_sen_slope(const std::vector<double>& x,
                              const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw config_error("theil_sen_slope: need >= 2 matching points");
  std::vector<double> slopes;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j)
      if (x[j] != x[i]) slopes.push_back((y[j] - y[i]) / (x[j] - x[i]));
  if (slopes.empty()) throw config_error("theil_sen_slope: degenerate abscissae");
  return median_of(std::move(slopes));
}

// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace mapstat
