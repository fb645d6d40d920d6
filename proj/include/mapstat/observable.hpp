#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mapstat/common.hpp"

namespace mapstat {

// ============================================================================
// Observables: finite combinations f = sum_l a_l g_l of monotone pieces,
// with optional function-class tags.
//
// Each piece is monotone and one-signed where a built-in needs the clipped
// variation bound (a sign change is split into two pieces at the zero).
// A piece contributes 0 outside its support and at excluded endpoints, so
// adjacent half-open pieces partition cleanly.
// ============================================================================

class unbounded_variation_error : public numeric_error {
public:
  explicit unbounded_variation_error(const std::string& what)
      : numeric_error(what) {}
};

struct MonotonePiece {
  double lo = 0.0, hi = 1.0;
  bool include_lo = true, include_hi = true;
  int direction = 0;  // +1 nondecreasing, -1 nonincreasing, 0 constant
  std::function<double(double)> value;
  double limit_lo = 0.0, limit_hi = 0.0;  // one-sided limits, may be +-inf
  std::function<double(double)> antideriv;   // F' = value, optional
  std::function<double(double)> antideriv2;  // F' = value^2, optional

  bool contains(double x) const {
    if (x < lo || x > hi) return false;
    if (x == lo && !include_lo) return false;
    if (x == hi && !include_hi) return false;
    return true;
  }

  double eval(double x) const { return contains(x) ? value(x) : 0.0; }

  // integral of value over [u, v] (intersected with the support closure)
  double integral(double u, double v) const;
  // integral of value^2 over [u, v]
  double integral2(double u, double v) const;

  // x in [lo, hi] with value(x) = target; requires target between the
  // endpoint limits (monotone bisection)
  double solve(double target) const;
};

// 16-point Gauss-Legendre on [-1,1]; fallback when no antiderivative exists.
namespace detail {
inline const double gl16_x[8] = {
    0.0950125098376374, 0.2816035507792589, 0.4580167776572274,
    0.6178762444026438, 0.7554044083550030, 0.8656312023878318,
    0.9445750230732326, 0.9894009349916499};
inline const double gl16_w[8] = {
    0.1894506104550685, 0.1826034150449236, 0.1691565193950025,
    0.1495959888165767, 0.1246289712555339, 0.0951585116824928,
    0.0622535239386479, 0.0271524594117541};

template <class F>
double gauss16(const F& f, double a, double b) {
  double c = 0.5 * (a + b), h = 0.5 * (b - a), s = 0.0;
  for (int i = 0; i < 8; ++i)
    s += gl16_w[i] * (f(c - h * gl16_x[i]) + f(c + h * gl16_x[i]));
  return s * h;
}
}  // namespace detail

inline double MonotonePiece::integral(double u, double v) const {
  double a = std::max(u, lo), b = std::min(v, hi);
  if (!(b > a)) return 0.0;
  if (antideriv) return antideriv(b) - antideriv(a);
  return detail::gauss16(value, a, b);
}

inline double MonotonePiece::integral2(double u, double v) const {
  double a = std::max(u, lo), b = std::min(v, hi);
  if (!(b > a)) return 0.0;
  if (antideriv2) return antideriv2(b) - antideriv2(a);
  return detail::gauss16([this](double x) { return sq(value(x)); }, a, b);
}

inline double MonotonePiece::solve(double target) const {
  double a = lo, b = hi;
  bool inc = direction >= 0;
  for (int it = 0; it < 200 && b - a > 1e-16; ++it) {
    double mid = 0.5 * (a + b);
    if ((value(mid) < target) == inc)
      a = mid;
    else
      b = mid;
  }
  return 0.5 * (a + b);
}

// ============================================================================
// Tail functions H: [0,inf) -> [0,1], nonincreasing, H(t) -> 0. Used to tag
// unbounded observables: mu(|g| > t) <= H(t) per term.
// ============================================================================

class TailFunction {
public:
  static TailFunction power(double q) {
    if (!(q > 0)) throw config_error("TailFunction::power: q must be > 0");
    TailFunction h;
    h.fn_ = [q](double t) { return t <= 1.0 ? 1.0 : std::pow(t, -q); };
    return h;
  }

  // tail of a function bounded by m: 1 below m, 0 at and above m
  static TailFunction bounded_sup(double m) {
    if (!(m > 0)) throw config_error("TailFunction::bounded_sup: m must be > 0");
    TailFunction h;
    h.fn_ = [m](double t) { return t < m ? 1.0 : 0.0; };
    return h;
  }

  // right-continuous piecewise-linear interpolation through (t_i, v_i),
  // constant before the first knot, 0 after the last
  static TailFunction table(std::vector<double> ts, std::vector<double> vs) {
    if (ts.size() != vs.size() || ts.size() < 2)
      throw config_error("TailFunction::table: need >= 2 matching knots");
    for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
      if (!(ts[i] < ts[i + 1]))
        throw config_error("TailFunction::table: knots must increase");
      if (vs[i + 1] > vs[i] + 1e-12)
        throw config_error("TailFunction::table: values must not increase");
    }
    TailFunction h;
    h.fn_ = [ts = std::move(ts), vs = std::move(vs)](double t) {
      if (t <= ts.front()) return std::min(1.0, vs.front());
      if (t >= ts.back()) return 0.0;
      auto it = std::upper_bound(ts.begin(), ts.end(), t);
      std::size_t i = std::size_t(it - ts.begin()) - 1;
      double w = (t - ts[i]) / (ts[i + 1] - ts[i]);
      return vs[i] + w * (vs[i + 1] - vs[i]);
    };
    return h;
  }

  // H_m(x) = min(H(m), H(x))
  TailFunction capped_at(double m) const {
    TailFunction h;
    double cap = (*this)(m);
    auto base = fn_;
    h.fn_ = [base, cap](double t) { return std::min(cap, base(t)); };
    return h;
  }

  double operator()(double t) const { return fn_(t); }

  // grid checks; returns human-readable issues (empty = ok)
  std::vector<std::string> check() const {
    std::vector<std::string> issues;
    double prev = (*this)(0.0);
    if (prev > 1.0 + 1e-12 || prev < 0.0)
      issues.push_back("H(0) outside [0,1]");
    for (int i = 1; i <= 200; ++i) {
      double t = std::pow(10.0, -3.0 + 9.0 * double(i) / 200.0);
      double v = (*this)(t);
      if (v > prev + 1e-12) issues.push_back("H not nonincreasing near t=" + std::to_string(t));
      if (v < 0.0) issues.push_back("H negative near t=" + std::to_string(t));
      prev = v;
    }
    if ((*this)(1e6) > 1e-2)
      issues.push_back("H(1e6) > 1e-2: tail does not appear to vanish");
    return issues;
  }

private:
  std::function<double(double)> fn_;
};

// ============================================================================
// Observable
// ============================================================================

enum class ClassKind { untagged, l2_class, tail_class };

struct ClassTag {
  ClassKind kind = ClassKind::untagged;
  double M = 0.0;  // per-term norm bound for l2_class
  double p = 2.0;
};

struct Term {
  double weight = 1.0;
  MonotonePiece piece;
  std::optional<TailFunction> tail;  // required when tail-tagged
};

class Observable {
public:
  Observable(std::string name, std::vector<Term> terms,
             ClassTag tag = ClassTag{})
      : name_(std::move(name)), terms_(std::move(terms)), tag_(tag) {
    if (terms_.empty()) throw config_error("Observable: no terms");
    if (tag_.kind != ClassKind::untagged) {
      double wsum = 0.0;
      for (const auto& t : terms_) wsum += std::abs(t.weight);
      if (wsum > 1.0 + 1e-12)
        throw config_error("Observable '" + name_ +
                           "': tagged combination needs sum |a_l| <= 1, got " +
                           std::to_string(wsum));
    }
    if (tag_.kind == ClassKind::tail_class)
      for (const auto& t : terms_)
        if (!t.tail)
          throw config_error("Observable '" + name_ +
                             "': tail-tagged term lacks a tail function");
  }

  const std::string& name() const { return name_; }
  const std::vector<Term>& terms() const { return terms_; }
  const ClassTag& tag() const { return tag_; }

  double eval(double x) const {
    double s = 0.0;
    for (const auto& t : terms_) s += t.weight * t.piece.eval(x);
    return s;
  }

  // integral of f over [u, v] (Lebesgue)
  double integral(double u, double v) const {
    double s = 0.0;
    for (const auto& t : terms_) s += t.weight * t.piece.integral(u, v);
    return s;
  }

  double sup_abs_bound() const {
    double s = 0.0;
    for (const auto& t : terms_) {
      double m = std::max(std::abs(t.piece.limit_lo), std::abs(t.piece.limit_hi));
      s += std::abs(t.weight) * m;
    }
    return s;
  }

  Observable with_l2_tag(double M, double p = 2.0) const {
    return Observable(name_, terms_, ClassTag{ClassKind::l2_class, M, p});
  }

  Observable with_tail_tag(const TailFunction& H) const {
    std::vector<Term> ts = terms_;
    for (auto& t : ts) t.tail = H;
    return Observable(name_, std::move(ts),
                      ClassTag{ClassKind::tail_class, 0.0, 2.0});
  }

  Observable renamed(std::string name) const {
    return Observable(std::move(name), terms_, tag_);
  }

  // weighted sum of observables (tags dropped)
  static Observable combine(std::string name,
                            const std::vector<std::pair<double, Observable>>& parts) {
    std::vector<Term> ts;
    for (const auto& [c, f] : parts)
      for (const auto& t : f.terms()) {
        Term nt = t;
        nt.weight *= c;
        ts.push_back(std::move(nt));
      }
    return Observable(std::move(name), std::move(ts));
  }

private:
  std::string name_;
  std::vector<Term> terms_;
  ClassTag tag_;
};

inline double eval_observable(const Observable& f, double x) { return f.eval(x); }

// ============================================================================
// Built-ins
// ============================================================================

inline Observable make_centered_linear() {
  MonotonePiece p;
  p.lo = 0.0;
  p.hi = 1.0;
  p.direction = +1;
  p.value = [](double x) { return x - 0.5; };
  p.limit_lo = -0.5;
  p.limit_hi = 0.5;
  p.antideriv = [](double x) { return 0.5 * x * x - 0.5 * x; };
  p.antideriv2 = [](double x) {
    double u = x - 0.5;
    return u * u * u / 3.0;
  };
  return Observable("centered_linear", {Term{1.0, p, std::nullopt}});
}

inline Observable make_indicator(double lo, double hi, double weight = 1.0) {
  if (!(lo < hi) || lo < 0.0 || hi > 1.0)
    throw config_error("indicator: need 0 <= lo < hi <= 1");
  MonotonePiece p;
  p.lo = lo;
  p.hi = hi;
  p.direction = 0;
  p.value = [](double) { return 1.0; };
  p.limit_lo = 1.0;
  p.limit_hi = 1.0;
  p.antideriv = [](double x) { return x; };
  p.antideriv2 = [](double x) { return x; };
  return Observable("indicator", {Term{weight, p, std::nullopt}});
}

// f(x) = (x + shift)^(-a) on (0, 1]; unbounded at 0 when shift = 0
inline Observable make_power_law(double a, double shift = 0.0) {
  if (!(a > 0)) throw config_error("power_law: a must be > 0");
  if (shift < 0) throw config_error("power_law: shift must be >= 0");
  MonotonePiece p;
  p.lo = 0.0;
  p.hi = 1.0;
  p.include_lo = false;
  p.direction = -1;
  p.value = [a, shift](double x) { return std::pow(x + shift, -a); };
  p.limit_lo = shift > 0 ? std::pow(shift, -a)
                         : std::numeric_limits<double>::infinity();
  p.limit_hi = std::pow(1.0 + shift, -a);
  if (std::abs(a - 1.0) > 1e-12)
    p.antideriv = [a, shift](double x) {
      return std::pow(x + shift, 1.0 - a) / (1.0 - a);
    };
  else
    p.antideriv = [shift](double x) { return std::log(x + shift); };
  if (std::abs(2.0 * a - 1.0) > 1e-12)
    p.antideriv2 = [a, shift](double x) {
      return std::pow(x + shift, 1.0 - 2.0 * a) / (1.0 - 2.0 * a);
    };
  else
    p.antideriv2 = [shift](double x) { return std::log(x + shift); };
  return Observable("power_law", {Term{1.0, p, std::nullopt}});
}

// f(x) = x^(-a) |ln x|^(-b) on (0, x1] with x1 = exp(-max(1, b/a)), the range
// where the function is decreasing and |ln x| >= 1; zero elsewhere.
inline Observable make_log_damped_power(double a, double b) {
  if (!(a > 0) || !(b > 0))
    throw config_error("log_damped_power: a, b must be > 0");
  double x1 = std::exp(-std::max(1.0, b / a));
  MonotonePiece p;
  p.lo = 0.0;
  p.hi = x1;
  p.include_lo = false;
  p.direction = -1;
  p.value = [a, b](double x) {
    return std::pow(x, -a) * std::pow(-std::log(x), -b);
  };
  p.limit_lo = std::numeric_limits<double>::infinity();
  p.limit_hi = std::pow(x1, -a) * std::pow(-std::log(x1), -b);
  // no closed-form antiderivative; quadrature fallback applies
  return Observable("log_damped_power", {Term{1.0, p, std::nullopt}});
}

// cos(2 pi k x) split at its quarter-period points into 4k monotone,
// one-signed pieces. Raw: weights 1, amplitude 1. Normalized: weights
// 1/(4k), amplitude 4k (so the weights satisfy the tagged-class constraint
// and the combination still sums to cos).
inline Observable make_cosine(int k, bool normalized = false) {
  if (k < 1) throw config_error("cosine: k must be >= 1");
  double amp = normalized ? 4.0 * k : 1.0;
  double w = normalized ? 1.0 / (4.0 * k) : 1.0;
  std::vector<Term> terms;
  int n = 4 * k;
  for (int j = 0; j < n; ++j) {
    MonotonePiece p;
    p.lo = double(j) / n;
    p.hi = double(j + 1) / n;
    p.include_lo = true;
    p.include_hi = (j + 1 == n);
    int phase = j % 4;  // 1->0, 0->-1, -1->0, 0->1 over quarter periods
    p.direction = (phase == 0 || phase == 1) ? -1 : +1;
    double kk = double(k);
    p.value = [amp, kk](double x) { return amp * std::cos(2.0 * M_PI * kk * x); };
    p.limit_lo = amp * std::cos(2.0 * M_PI * kk * p.lo);
    p.limit_hi = amp * std::cos(2.0 * M_PI * kk * p.hi);
    // snap quarter-period endpoint limits to exact values
    auto snap = [](double v) {
      if (std::abs(v) < 1e-9) return 0.0;
      return v;
    };
    p.limit_lo = snap(p.limit_lo);
    p.limit_hi = snap(p.limit_hi);
    p.antideriv = [amp, kk](double x) {
      return amp * std::sin(2.0 * M_PI * kk * x) / (2.0 * M_PI * kk);
    };
    p.antideriv2 = [amp, kk](double x) {
      return amp * amp * (0.5 * x + std::sin(4.0 * M_PI * kk * x) / (8.0 * M_PI * kk));
    };
    terms.push_back(Term{w, p, std::nullopt});
  }
  return Observable(normalized ? "cosine_normalized" : "cosine",
                    std::move(terms));
}

// ============================================================================
// Variation norm: sup over partitions of |f(a0)| + sum |f(a_{i+1}) - f(a_i)|
// + |f(a_k)|; boundary jumps to 0 count. Exact at breakpoints, adaptive
// refinement between them (overlapping opposite-direction pieces).
// ============================================================================

namespace detail {

inline double left_limit(const Observable& f, double x) {
  double s = 0.0;
  for (const auto& t : f.terms()) {
    const auto& p = t.piece;
    if (p.lo < x && x <= p.hi) s += t.weight * (x == p.hi ? p.limit_hi : p.value(x));
  }
  return s;
}

inline double right_limit(const Observable& f, double x) {
  double s = 0.0;
  for (const auto& t : f.terms()) {
    const auto& p = t.piece;
    if (p.lo <= x && x < p.hi) s += t.weight * (x == p.lo ? p.limit_lo : p.value(x));
  }
  return s;
}

inline double interior_variation(const Observable& f, double u, double v,
                                 double fu, double fv, int depth) {
  double m = 0.5 * (u + v);
  double fm = f.eval(m);
  double straight = std::abs(fv - fu);
  double split = std::abs(fm - fu) + std::abs(fv - fm);
  if (depth > 36 || (depth > 10 && split - straight < 1e-13 * (1.0 + split)))
    return split;
  return interior_variation(f, u, m, fu, fm, depth + 1) +
         interior_variation(f, m, v, fm, fv, depth + 1);
}

}  // namespace detail

inline double variation_norm(const Observable& f) {
  for (const auto& t : f.terms())
    if (t.weight != 0.0 && (std::isinf(t.piece.limit_lo) || std::isinf(t.piece.limit_hi)))
      throw unbounded_variation_error(
          "variation_norm('" + f.name() + "'): infinite endpoint limit");
  std::vector<double> bps;
  for (const auto& t : f.terms()) {
    bps.push_back(t.piece.lo);
    bps.push_back(t.piece.hi);
  }
  std::sort(bps.begin(), bps.end());
  bps.erase(std::unique(bps.begin(), bps.end(),
                        [](double a, double b) { return std::abs(a - b) < 1e-15; }),
            bps.end());
  double total = 0.0;
  for (std::size_t i = 0; i < bps.size(); ++i) {
    double x = bps[i];
    double fm = detail::left_limit(f, x);
    double f0 = f.eval(x);
    double fp = detail::right_limit(f, x);
    total += std::abs(f0 - fm) + std::abs(fp - f0);
    if (i + 1 < bps.size()) {
      double y = bps[i + 1];
      // one-sided limits at the interval ends; pieces are continuous inside
      double fu = detail::right_limit(f, x);
      double fv = detail::left_limit(f, y);
      bool monotone = true;
      int dir = 0;
      for (const auto& t : f.terms()) {
        const auto& p = t.piece;
        if (p.lo <= x && y <= p.hi && t.weight != 0.0 && p.direction != 0) {
          int d = p.direction * (t.weight > 0 ? 1 : -1);
          if (dir == 0)
            dir = d;
          else if (dir != d)
            monotone = false;
        }
      }
      if (monotone)
        total += std::abs(fv - fu);
      else
        total += detail::interior_variation(f, x, y, fu, fv, 0);
    }
  }
  return total;
}

// ============================================================================
// Truncation-style decompositions.
// ============================================================================

namespace detail {

// sub-interval [c, d] of the piece support where |g| <= m; empty() if none
struct ClipRegion {
  double c = 0.0, d = -1.0;
  bool cut_lo = false, cut_hi = false;  // whether c/d are interior crossings
  bool empty() const { return !(d >= c); }
};

inline ClipRegion clip_region(const MonotonePiece& p, double m) {
  double vlo = p.limit_lo, vhi = p.limit_hi;
  double a = std::min(vlo, vhi), b = std::max(vlo, vhi);
  ClipRegion r;
  if (a > m || b < -m) return r;  // |g| > m everywhere
  r.c = p.lo;
  r.d = p.hi;
  // limit_lo / limit_hi are the values near the lo / hi support ends
  if (std::abs(vlo) > m) {
    r.c = p.solve(vlo > m ? m : -m);
    r.cut_lo = true;
  }
  if (std::abs(vhi) > m) {
    r.d = p.solve(vhi > m ? m : -m);
    r.cut_hi = true;
  }
  if (r.d < r.c) r = ClipRegion{};
  return r;
}

inline MonotonePiece restrict_piece(const MonotonePiece& p, double lo, double hi,
                                    bool include_lo, bool include_hi) {
  MonotonePiece q = p;
  q.lo = lo;
  q.hi = hi;
  q.include_lo = include_lo;
  q.include_hi = include_hi;
  q.limit_lo = (lo == p.lo) ? p.limit_lo : p.value(lo);
  q.limit_hi = (hi == p.hi) ? p.limit_hi : p.value(hi);
  return q;
}

// g restricted to the support minus [c, d]: still monotone (the gap sits
// where g crosses zero), represented as one piece so a clipped term keeps a
// single remainder term and the tagged weight budget is respected.
inline MonotonePiece masked_piece(const MonotonePiece& p, double c, double d) {
  MonotonePiece q = p;
  auto base = p.value;
  q.value = [base, c, d](double x) {
    return (x < c || x > d) ? base(x) : 0.0;
  };
  if (p.antideriv) {
    auto F = p.antideriv;
    q.antideriv = [F, c, d](double x) {
      if (x <= c) return F(x);
      if (x < d) return F(c);
      return F(c) + F(x) - F(d);
    };
  } else {
    q.antideriv = nullptr;
  }
  if (p.antideriv2) {
    auto F2 = p.antideriv2;
    q.antideriv2 = [F2, c, d](double x) {
      if (x <= c) return F2(x);
      if (x < d) return F2(c);
      return F2(c) + F2(x) - F2(d);
    };
  } else {
    q.antideriv2 = nullptr;
  }
  return q;
}

inline Term zero_term() {
  MonotonePiece z;
  z.lo = 0.0;
  z.hi = 1.0;
  z.direction = 0;
  z.value = [](double) { return 0.0; };
  z.limit_lo = z.limit_hi = 0.0;
  z.antideriv = [](double) { return 0.0; };
  z.antideriv2 = [](double) { return 0.0; };
  return Term{0.0, z, std::nullopt};
}

}  // namespace detail

struct HDecomposition {
  Observable bv_part;       // sum a_l g_l 1_{|g_l| <= m}
  Observable remainder;     // sum a_l g_l 1_{|g_l| > m}, tail-tagged
  double bv_variation = 0.0;
  double clip_level = 0.0;
};

// Split a tail-tagged observable at level m. Pointwise exact: bv + remainder
// reconstructs f because each term's support is partitioned.
inline HDecomposition decompose_H(const Observable& f, double m) {
  if (!(m > 0)) throw config_error("decompose_H: m must be > 0");
  if (f.tag().kind != ClassKind::tail_class)
    throw config_error("decompose_H: observable must carry a tail-class tag");
  std::vector<Term> bv, rem;
  for (const auto& t : f.terms()) {
    const auto& p = t.piece;
    auto r = detail::clip_region(p, m);
    if (r.empty()) {
      Term rt = t;
      rt.tail = t.tail->capped_at(m);
      rem.push_back(std::move(rt));
      continue;
    }
    bool ilo = r.cut_lo ? true : p.include_lo;
    bool ihi = r.cut_hi ? true : p.include_hi;
    bv.push_back(Term{t.weight, detail::restrict_piece(p, r.c, r.d, ilo, ihi),
                      std::nullopt});
    bool lo_cut = r.cut_lo && r.c > p.lo;
    bool hi_cut = r.cut_hi && r.d < p.hi;
    if (lo_cut && hi_cut) {
      rem.push_back(Term{t.weight, detail::masked_piece(p, r.c, r.d),
                         t.tail->capped_at(m)});
    } else if (lo_cut) {
      rem.push_back(Term{t.weight,
                         detail::restrict_piece(p, p.lo, r.c, p.include_lo, false),
                         t.tail->capped_at(m)});
    } else if (hi_cut) {
      rem.push_back(Term{t.weight,
                         detail::restrict_piece(p, r.d, p.hi, false, p.include_hi),
                         t.tail->capped_at(m)});
    }
  }
  if (bv.empty()) bv.push_back(detail::zero_term());
  if (rem.empty()) {
    auto zt = detail::zero_term();
    zt.tail = TailFunction::bounded_sup(1e-300).capped_at(m);
    rem.push_back(std::move(zt));
  }
  HDecomposition d{
      Observable(f.name() + "_bv", std::move(bv)),
      Observable(f.name() + "_tail", std::move(rem),
                 ClassTag{ClassKind::tail_class, 0.0, 2.0}),
      0.0, m};
  d.bv_variation = variation_norm(d.bv_part);
  return d;
}

// Truncation g_n = sum a_l g_l 1_{|g_l| <= level} at the scale
// level = M sqrt(n) / sqrt(log log n).  Truncation acts per term; for the
// single-piece built-ins this coincides with truncating f's values.
struct Truncation {
  Observable g_n;
  double level = 0.0;
};

inline Truncation truncate_gn(const Observable& f, std::size_t n, double M) {
  if (n < 16) throw config_error("truncate_gn: n must be >= 16");
  if (!(M > 0)) throw config_error("truncate_gn: M must be > 0");
  double level = M * std::sqrt(double(n)) / std::sqrt(log_log_guarded(double(n)));
  std::vector<Term> ts;
  for (const auto& t : f.terms()) {
    auto r = detail::clip_region(t.piece, level);
    if (r.empty()) continue;
    bool ilo = r.cut_lo ? true : t.piece.include_lo;
    bool ihi = r.cut_hi ? true : t.piece.include_hi;
    ts.push_back(Term{t.weight,
                      detail::restrict_piece(t.piece, r.c, r.d, ilo, ihi),
                      std::nullopt});
  }
  if (ts.empty()) {
    MonotonePiece z;
    z.lo = 0.0;
    z.hi = 1.0;
    z.direction = 0;
    z.value = [](double) { return 0.0; };
    z.antideriv = [](double) { return 0.0; };
    z.antideriv2 = [](double) { return 0.0; };
    ts.push_back(Term{0.0, z, std::nullopt});
  }
  return Truncation{Observable(f.name() + "_trunc", std::move(ts)), level};
}

// ============================================================================
// L2 decomposition against a piecewise-constant density.
// ============================================================================

struct PiecewiseConstantDensity {
  std::vector<double> edges;   // size B+1, increasing, spanning [0,1]
  std::vector<double> values;  // size B, density per unit length

  double integrate(const std::function<double(double, double)>& piece_int) const {
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < edges.size(); ++i)
      s += values[i] * piece_int(edges[i], edges[i + 1]);
    return s;
  }
};

namespace detail {

// mu(g^2 1_{|g| >= K}) for one monotone piece
inline double tail_second_moment(const MonotonePiece& p,
                                 const PiecewiseConstantDensity& mu, double K) {
  auto r = clip_region(p, K);
  // region where |g| >= K is the support minus the open part of (c, d);
  // measure-wise the boundary points do not matter
  double s = 0.0;
  auto add = [&](double a, double b) {
    if (!(b > a)) return;
    s += mu.integrate([&](double u, double v) {
      double aa = std::max(a, u), bb = std::min(b, v);
      return bb > aa ? p.integral2(aa, bb) : 0.0;
    });
  };
  if (r.empty()) {
    add(p.lo, p.hi);
  } else {
    add(p.lo, r.c);
    add(r.d, p.hi);
  }
  return s;
}

}  // namespace detail

struct L2TermInfo {
  double K = 0.0;          // smallest K with mu(g^2 1_{|g| >= K}) <= eps^2
  double weight = 0.0;
  bool kept = false;       // K < K_star: clipped term goes into bv_part
};

struct L2Decomposition {
  Observable bv_part;
  Observable remainder;    // l2-tagged with M' = 2 eps
  double K_star = 0.0;
  double bv_variation = 0.0;
  std::vector<L2TermInfo> term_info;
  bool degenerate = false;  // eps already dominates every term
};

inline L2Decomposition decompose_L2(const Observable& f, double eps,
                                    const PiecewiseConstantDensity& mu) {
  if (!(eps > 0)) throw config_error("decompose_L2: eps must be > 0");
  if (f.tag().kind != ClassKind::l2_class)
    throw config_error("decompose_L2: observable must carry an l2-class tag");
  double M = f.tag().M;
  if (!(M > 0)) throw config_error("decompose_L2: class bound M must be > 0");
  double eps2 = eps * eps;

  std::vector<L2TermInfo> info;
  for (const auto& t : f.terms()) {
    L2TermInfo ti;
    ti.weight = t.weight;
    double full = detail::tail_second_moment(t.piece, mu, 0.0);
    if (full <= eps2) {
      ti.K = 0.0;
    } else {
      double Khi = 1.0;
      while (detail::tail_second_moment(t.piece, mu, Khi) > eps2) {
        Khi *= 2.0;
        if (Khi > 1e12)
          throw numeric_error("decompose_L2: term '" + f.name() +
                              "' has no finite truncation level (not in L2(mu)?)");
      }
      double Klo = 0.0;
      for (int it = 0; it < 200 && Khi - Klo > 1e-13 * (1.0 + Khi); ++it) {
        double mid = 0.5 * (Klo + Khi);
        if (detail::tail_second_moment(t.piece, mu, mid) <= eps2)
          Khi = mid;
        else
          Klo = mid;
      }
      ti.K = Khi;
    }
    info.push_back(ti);
  }

  // smallest cap K_star with (sum of |a_l| over terms with K(g_l) >= K_star)
  // * M <= eps
  std::vector<double> ks;
  for (const auto& ti : info) ks.push_back(ti.K);
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  double K_star = ks.empty() ? 0.0 : ks.back() + 1.0;
  for (double cand : ks) {
    double alpha = 0.0;
    for (const auto& ti : info)
      if (ti.K >= cand) alpha += std::abs(ti.weight);
    if (alpha * M <= eps) {
      K_star = cand;
      break;
    }
  }

  std::vector<Term> bv, rem;
  const auto& terms = f.terms();
  for (std::size_t i = 0; i < terms.size(); ++i) {
    Term t = terms[i];
    t.tail.reset();
    if (info[i].K < K_star && info[i].K > 0.0) {
      info[i].kept = true;
      auto r = detail::clip_region(t.piece, info[i].K);
      bool ilo = r.cut_lo ? true : t.piece.include_lo;
      bool ihi = r.cut_hi ? true : t.piece.include_hi;
      bv.push_back(Term{t.weight,
                        detail::restrict_piece(t.piece, r.c, r.d, ilo, ihi),
                        std::nullopt});
      bool lo_cut = r.cut_lo && r.c > t.piece.lo;
      bool hi_cut = r.cut_hi && r.d < t.piece.hi;
      if (lo_cut && hi_cut)
        rem.push_back(Term{t.weight, detail::masked_piece(t.piece, r.c, r.d),
                           std::nullopt});
      else if (lo_cut)
        rem.push_back(Term{t.weight,
                           detail::restrict_piece(t.piece, t.piece.lo, r.c,
                                                  t.piece.include_lo, false),
                           std::nullopt});
      else if (hi_cut)
        rem.push_back(Term{t.weight,
                           detail::restrict_piece(t.piece, r.d, t.piece.hi, false,
                                                  t.piece.include_hi),
                           std::nullopt});
    } else {
      // K(g) = 0 clips the term away entirely; K(g) >= K_star excludes it.
      // Either way the whole term lands in the remainder, whose per-term
      // L2 norm stays <= 2 eps.
      rem.push_back(std::move(t));
    }
  }

  bool degenerate = bv.empty() || rem.empty();
  if (bv.empty()) bv.push_back(detail::zero_term());
  if (rem.empty()) rem.push_back(detail::zero_term());
  L2Decomposition d{Observable(f.name() + "_bv", std::move(bv)),
                    Observable(f.name() + "_l2rem", std::move(rem),
                               ClassTag{ClassKind::l2_class, 2.0 * eps,
                                        f.tag().p}),
                    K_star, 0.0, info, degenerate};
  d.bv_variation = variation_norm(d.bv_part);
  return d;
}

// ============================================================================
// Integral criterion for tail functions:
//   I = int_0^inf x H(x)^((1-2 gamma)/(1-gamma)) dx
// computed by adaptive Simpson on [0,1] plus dyadic blocks with a certified
// power-law tail estimate; divergence is reported when block sums stop
// decaying.
// ============================================================================

struct IntegralResult {
  double value = 0.0;      // partial sum (plus tail estimate when finite)
  bool finite = false;
  double tail_estimate = 0.0;
};

namespace detail {

template <class F>
double adaptive_simpson(const F& f, double a, double b, double fa, double fm,
                        double fb, double whole, double tol, int depth) {
  double m = 0.5 * (a + b);
  double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  double flm = f(lm), frm = f(rm);
  double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth > 40 || std::abs(left + right - whole) < 15.0 * tol)
    return left + right + (left + right - whole) / 15.0;
  return adaptive_simpson(f, a, m, fa, flm, fm, left, tol * 0.5, depth + 1) +
         adaptive_simpson(f, m, b, fm, frm, fb, right, tol * 0.5, depth + 1);
}

template <class F>
double integrate(const F& f, double a, double b, double tol) {
  double m = 0.5 * (a + b);
  double fa = f(a), fm = f(m), fb = f(b);
  double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return adaptive_simpson(f, a, b, fa, fm, fb, whole, tol, 0);
}

}  // namespace detail

inline IntegralResult lil_condition_integral(const TailFunction& H, double gamma) {
  if (!(gamma > 0.0 && gamma < 0.5))
    throw config_error("lil_condition_integral: gamma must lie in (0, 1/2)");
  double e = (1.0 - 2.0 * gamma) / (1.0 - gamma);
  auto integrand = [&H, e](double x) {
    double h = H(x);
    return h <= 0.0 ? 0.0 : x * std::pow(h, e);
  };
  IntegralResult res;
  double acc = detail::integrate(integrand, 0.0, 1.0, 1e-10);
  double prev_block = -1.0;
  int flat_blocks = 0;
  double lo = 1.0;
  for (int j = 0; j < 64; ++j) {
    double hi = lo * 2.0;
    double block = detail::integrate(integrand, lo, hi, 1e-11 * (1.0 + acc));
    acc += block;
    if (prev_block > 0.0) {
      double ratio = block / prev_block;
      if (ratio >= 0.95)
        ++flat_blocks;
      else
        flat_blocks = 0;
      if (flat_blocks >= 8) {
        res.value = acc;
        res.finite = false;
        return res;
      }
      if (block < 1e-12 * std::max(acc, 1.0) && ratio < 0.9) {
        res.tail_estimate = block * ratio / (1.0 - ratio);
        res.value = acc + res.tail_estimate;
        res.finite = true;
        return res;
      }
    }
    prev_block = block;
    lo = hi;
  }
  // blocks still shrinking but slowly: extrapolate if safely geometric
  if (prev_block >= 0.0 && prev_block < 1e-9 * std::max(acc, 1.0)) {
    res.value = acc;
    res.finite = true;
    return res;
  }
  res.value = acc;
  res.finite = false;
  return res;
}

}  // namespace mapstat
