#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mapstat/common.hpp"

namespace mapstat {

// ============================================================================
// Piecewise expanding maps of [0,1].
//
// A map is an ordered list of branches whose domains tile [0,1]. Each branch
// is strictly monotone from its domain onto its image, with closed-form
// value/derivative and, where available, a closed-form inverse; otherwise
// inversion falls back to bisection. A shared endpoint of two adjacent
// branches is owned by the right branch.
// ============================================================================

class domain_error : public config_error {
public:
  explicit domain_error(const std::string& what) : config_error(what) {}
};

class out_of_image_error : public config_error {
public:
  explicit out_of_image_error(const std::string& what) : config_error(what) {}
};

struct Branch {
  double lo = 0.0, hi = 1.0;            // domain
  double image_lo = 0.0, image_hi = 1.0;  // image (as an interval)
  bool increasing = true;
  std::function<double(double)> value;
  std::function<double(double)> derivative;
  std::function<double(double)> second_derivative;  // optional
  std::function<double(double)> inverse;            // optional closed form
};

struct ValidationReport {
  bool partition_ok = false;
  bool images_ok = false;
  double min_abs_derivative = 0.0;   // over a per-branch grid
  bool strictly_expanding = false;   // min |T'| > 1
  bool has_neutral_point = false;    // |T'| = 1 at a branch endpoint
  double adler_sup = 0.0;            // sup |T''|/T'^2 away from neutral points
  std::optional<double> gpm_gamma_hat;  // fitted from T'' ~ c x^(gamma-1) near 0
  std::vector<std::string> notes;
  bool ok = false;
};

class IntervalMap {
public:
  IntervalMap(std::string name, std::vector<Branch> branches)
      : name_(std::move(name)), branches_(std::move(branches)) {
    if (branches_.empty()) throw config_error("IntervalMap: no branches");
    for (std::size_t k = 0; k + 1 < branches_.size(); ++k)
      if (!(branches_[k].lo < branches_[k].hi) ||
          std::abs(branches_[k].hi - branches_[k + 1].lo) > 1e-12)
        throw config_error("IntervalMap: branch domains must tile [0,1]");
    if (std::abs(branches_.front().lo) > 1e-12 ||
        std::abs(branches_.back().hi - 1.0) > 1e-12)
      throw config_error("IntervalMap: branch domains must tile [0,1]");
  }

  const std::string& name() const { return name_; }
  std::size_t branch_count() const { return branches_.size(); }
  const Branch& branch(std::size_t k) const {
    if (k >= branches_.size()) throw config_error("branch index out of range");
    return branches_[k];
  }

  // Index of the branch owning x; the right branch owns a shared endpoint.
  std::size_t branch_index(double x) const {
    check_domain(x);
    std::size_t k = branches_.size() - 1;
    while (k > 0 && x < branches_[k].lo) --k;
    return k;
  }

  double eval(double x) const {
    const Branch& b = branches_[branch_index(x)];
    double y = b.value(x);
    double ilo = std::min(b.image_lo, b.image_hi);
    double ihi = std::max(b.image_lo, b.image_hi);
    // clamp float overshoot at branch ends back into the image
    return std::min(std::max(y, ilo), ihi);
  }

  double derivative(double x) const {
    return branches_[branch_index(x)].derivative(x);
  }

  double second_derivative(double x) const {
    const Branch& b = branches_[branch_index(x)];
    if (b.second_derivative) return b.second_derivative(x);
    double h = 1e-5;
    double a = std::max(b.lo, x - h), c = std::min(b.hi, x + h);
    return (b.derivative(c) - b.derivative(a)) / (c - a);
  }

  // x in branch k's domain with T(x) = y, accurate to 1e-12.
  double inverse_branch(std::size_t k, double y) const {
    if (k >= branches_.size()) throw config_error("branch index out of range");
    const Branch& b = branches_[k];
    double ilo = std::min(b.image_lo, b.image_hi);
    double ihi = std::max(b.image_lo, b.image_hi);
    if (y < ilo - 1e-12 || y > ihi + 1e-12)
      throw out_of_image_error(name_ + ": y=" + std::to_string(y) +
                               " outside image of branch " + std::to_string(k));
    y = std::min(std::max(y, ilo), ihi);
    if (b.inverse) {
      double x = b.inverse(y);
      return std::min(std::max(x, b.lo), b.hi);
    }
    // image endpoints invert exactly; preimage tiles stay gapless
    if (y == b.image_lo) return b.increasing ? b.lo : b.hi;
    if (y == b.image_hi) return b.increasing ? b.hi : b.lo;
    // bisection to ulp resolution; branch values are strictly monotone
    double lo = b.lo, hi = b.hi;
    bool inc = b.increasing;
    for (int it = 0; it < 1100; ++it) {
      double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) break;
      double v = b.value(mid);
      if ((v < y) == inc)
        lo = mid;
      else
        hi = mid;
    }
    return 0.5 * (lo + hi);
  }

  // Forward orbit (x0, T x0, ..., T^(n-1) x0). Iterates are clamped to
  // [one ulp above 0, 1]: exact 0 is an absorbing artifact of float
  // arithmetic, not of the dynamics.
  std::vector<double> orbit(double x0, std::size_t n) const {
    check_domain(x0);
    std::vector<double> xs(n);
    double x = clamp_iterate(x0);
    for (std::size_t i = 0; i < n; ++i) {
      xs[i] = x;
      x = clamp_iterate(eval(x));
    }
    return xs;
  }

  double step(double x) const { return clamp_iterate(eval(x)); }

  ValidationReport validate() const;

private:
  static double clamp_iterate(double x) {
    const double floor_ = std::nextafter(0.0, 1.0);
    if (x < floor_) return floor_;
    if (x > 1.0) return 1.0;
    return x;
  }

  void check_domain(double x) const {
    if (!(x >= 0.0 && x <= 1.0))
      throw domain_error(name_ + ": x=" + std::to_string(x) + " outside [0,1]");
  }

  std::string name_;
  std::vector<Branch> branches_;
};

inline ValidationReport IntervalMap::validate() const {
  ValidationReport r;
  r.partition_ok = true;  // enforced at construction
  r.images_ok = true;
  for (std::size_t k = 0; k < branches_.size(); ++k) {
    const Branch& b = branches_[k];
    double ilo = std::min(b.image_lo, b.image_hi);
    double ihi = std::max(b.image_lo, b.image_hi);
    if (ilo < -1e-12 || ihi > 1.0 + 1e-12) r.images_ok = false;
    double ex_lo = b.increasing ? b.image_lo : b.image_hi;
    double ex_hi = b.increasing ? b.image_hi : b.image_lo;
    if (std::abs(b.value(b.lo) - ex_lo) > 1e-9 ||
        std::abs(b.value(b.hi) - ex_hi) > 1e-9)
      r.notes.push_back("branch " + std::to_string(k) +
                        ": declared image disagrees with endpoint values");
  }

  const int grid_n = 256;
  double min_d = std::numeric_limits<double>::infinity();
  bool neutral = false;
  for (const Branch& b : branches_) {
    for (int i = 0; i <= grid_n; ++i) {
      double x = b.lo + (b.hi - b.lo) * double(i) / grid_n;
      double d = std::abs(b.derivative(x));
      min_d = std::min(min_d, d);
    }
    if (std::abs(std::abs(b.derivative(b.lo)) - 1.0) < 1e-9 ||
        std::abs(std::abs(b.derivative(b.hi)) - 1.0) < 1e-9)
      neutral = true;
  }
  r.min_abs_derivative = min_d;
  r.has_neutral_point = neutral;
  r.strictly_expanding = min_d > 1.0 + 1e-12;

  // Distortion ratio |T''|/T'^2 on a grid; near a neutral endpoint the ratio
  // blows up by design, so sample away from it and fit the singularity
  // exponent instead.
  double adler = 0.0;
  for (const Branch& b : branches_) {
    for (int i = 0; i <= grid_n; ++i) {
      double x = b.lo + (b.hi - b.lo) * double(i) / grid_n;
      if (neutral && x < 1e-3) continue;
      double d1 = b.derivative(x);
      double d2 = b.second_derivative ? b.second_derivative(x)
                                      : second_derivative(std::min(std::max(x, 1e-9), 1.0));
      if (d1 != 0.0) adler = std::max(adler, std::abs(d2) / (d1 * d1));
    }
  }
  r.adler_sup = adler;

  if (neutral) {
    // T''(x) ~ c x^(gamma-1) near the neutral point: slope of log T'' against
    // log x recovers gamma - 1.
    std::vector<double> lx, ly;
    for (int i = 0; i < 32; ++i) {
      double x = std::pow(10.0, -6.0 + 4.0 * double(i) / 31.0);
      double d2 = second_derivative(x);
      if (d2 > 0.0) {
        lx.push_back(std::log(x));
        ly.push_back(std::log(d2));
      }
    }
    if (lx.size() >= 8) r.gpm_gamma_hat = 1.0 + linear_fit(lx, ly).slope;
  }

  r.notes.push_back("topological transitivity not verified");
  r.ok = r.partition_ok && r.images_ok &&
         (r.strictly_expanding || r.has_neutral_point);
  return r;
}

// ============================================================================
// Built-in maps.
// ============================================================================

inline IntervalMap make_doubling() {
  Branch b0{0.0, 0.5, 0.0, 1.0, true,
            [](double x) { return 2.0 * x; },
            [](double) { return 2.0; },
            [](double) { return 0.0; },
            [](double y) { return 0.5 * y; }};
  Branch b1{0.5, 1.0, 0.0, 1.0, true,
            [](double x) { return 2.0 * x - 1.0; },
            [](double) { return 2.0; },
            [](double) { return 0.0; },
            [](double y) { return 0.5 * (y + 1.0); }};
  return IntervalMap("doubling", {b0, b1});
}

inline IntervalMap make_tent() {
  Branch b0{0.0, 0.5, 0.0, 1.0, true,
            [](double x) { return 2.0 * x; },
            [](double) { return 2.0; },
            [](double) { return 0.0; },
            [](double y) { return 0.5 * y; }};
  Branch b1{0.5, 1.0, 1.0, 0.0, false,
            [](double x) { return 2.0 - 2.0 * x; },
            [](double) { return -2.0; },
            [](double) { return 0.0; },
            [](double y) { return 1.0 - 0.5 * y; }};
  return IntervalMap("tent", {b0, b1});
}

// Full-branch piecewise-linear map: branch k has slope s_k and maps its
// domain onto [0,1]; the domains are the consecutive intervals of width
// 1/s_k, so the slopes must satisfy sum 1/s_k = 1.
inline IntervalMap make_piecewise_linear(const std::vector<double>& slopes) {
  if (slopes.size() < 2) throw config_error("piecewise_linear: need >= 2 slopes");
  double total = 0.0;
  for (double s : slopes) {
    if (!(s > 1.0)) throw config_error("piecewise_linear: slopes must be > 1");
    total += 1.0 / s;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw config_error("piecewise_linear: widths 1/s_k must tile [0,1] (sum=" +
                       std::to_string(total) + ")");
  std::vector<Branch> bs;
  double lo = 0.0;
  for (std::size_t k = 0; k < slopes.size(); ++k) {
    double s = slopes[k];
    double hi = (k + 1 == slopes.size()) ? 1.0 : lo + 1.0 / s;
    double blo = lo;
    bs.push_back(Branch{blo, hi, 0.0, 1.0, true,
                        [s, blo](double x) { return s * (x - blo); },
                        [s](double) { return s; },
                        [](double) { return 0.0; },
                        [s, blo](double y) { return blo + y / s; }});
    lo = hi;
  }
  return IntervalMap("piecewise_linear", std::move(bs));
}

// Intermittent map with a neutral fixed point at 0:
//   T(x) = x (1 + 2^gamma x^gamma)  on [0, 1/2),   T(x) = 2x - 1  on [1/2, 1].
inline IntervalMap make_lsv(double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0))
    throw config_error("lsv: gamma must lie in (0,1)");
  double c = std::pow(2.0, gamma);
  Branch b0{0.0, 0.5, 0.0, 1.0, true,
            [c, gamma](double x) { return x * (1.0 + c * std::pow(x, gamma)); },
            [c, gamma](double x) { return 1.0 + (1.0 + gamma) * c * std::pow(x, gamma); },
            [c, gamma](double x) {
              return gamma * (1.0 + gamma) * c * std::pow(x, gamma - 1.0);
            },
            nullptr};
  Branch b1{0.5, 1.0, 0.0, 1.0, true,
            [](double x) { return 2.0 * x - 1.0; },
            [](double) { return 2.0; },
            [](double) { return 0.0; },
            [](double y) { return 0.5 * (y + 1.0); }};
  return IntervalMap("lsv", {b0, b1});
}

// Piecewise-linear map with explicit per-branch images (Markov examples,
// non-onto branches). Branch k maps [lo_k, hi_k] affinely onto its image.
struct LinearBranchSpec {
  double lo, hi, image_lo, image_hi;
  bool increasing = true;
};

inline IntervalMap make_custom_linear(const std::vector<LinearBranchSpec>& specs) {
  std::vector<Branch> bs;
  for (const auto& sp : specs) {
    if (!(sp.hi > sp.lo)) throw config_error("custom_linear: empty branch domain");
    double slope = (sp.image_hi - sp.image_lo) / (sp.hi - sp.lo);
    if (!sp.increasing) slope = -slope;
    if (std::abs(slope) <= 1.0)
      throw config_error("custom_linear: |slope| must exceed 1");
    double lo = sp.lo, ilo = sp.image_lo, ihi = sp.image_hi;
    bool inc = sp.increasing;
    double anchor = inc ? ilo : ihi;
    double s = inc ? std::abs(slope) : -std::abs(slope);
    bs.push_back(Branch{sp.lo, sp.hi, ilo, ihi, inc,
                        [s, lo, anchor](double x) { return anchor + s * (x - lo); },
                        [s](double) { return s; },
                        [](double) { return 0.0; },
                        [s, lo, anchor](double y) { return lo + (y - anchor) / s; }});
  }
  return IntervalMap("custom_linear", std::move(bs));
}

}  // namespace mapstat
