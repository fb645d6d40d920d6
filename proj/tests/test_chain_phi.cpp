#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mapstat/chain.hpp"

using namespace mapstat;

namespace {

using Dense = std::vector<std::vector<double>>;

Dense dense_pow(const Dense& P, int k) {
  std::size_t S = P.size();
  Dense A(S, std::vector<double>(S, 0.0));
  for (std::size_t i = 0; i < S; ++i) A[i][i] = 1.0;
  for (int t = 0; t < k; ++t) {
    Dense B(S, std::vector<double>(S, 0.0));
    for (std::size_t i = 0; i < S; ++i)
      for (std::size_t a = 0; a < S; ++a)
        for (std::size_t j = 0; j < S; ++j) B[i][j] += A[i][a] * P[a][j];
    A = B;
  }
  return A;
}

// uniform-norm coefficient at lag k by direct enumeration over start states
// and thresholds
double oracle_phi1(const FiniteChain& c, const Dense& P, int k) {
  auto cum = c.pi_cumulative();
  std::size_t S = P.size();
  auto Pk = dense_pow(P, k);
  double worst = 0.0;
  for (std::size_t s = 0; s < S; ++s) {
    double acc = 0.0;
    for (std::size_t t = 0; t < S; ++t) {
      acc += Pk[s][t];
      worst = std::max(worst, std::abs(acc - cum[t]));
    }
  }
  return worst;
}

// pair coefficient: centered products of two threshold indicators at times
// (i1, i2) conditioned on the start, enumerated exactly
double oracle_phi2(const FiniteChain& c, const Dense& P, int k, int i1_window,
                   int gap_window) {
  auto cum = c.pi_cumulative();
  std::size_t S = P.size();
  double worst = oracle_phi1(c, P, k);
  for (int i1 = k; i1 <= k + i1_window; ++i1) {
    auto Pi1 = dense_pow(P, i1);
    for (int d = 0; d <= gap_window; ++d) {
      auto Pg = dense_pow(P, d + 1);
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t t1 = 0; t1 < S; ++t1)
          for (std::size_t t2 = 0; t2 < S; ++t2) {
            double p1 = cum[t1], p2 = cum[t2];
            double Jc = 0.0, M1 = 0.0, M2 = 0.0, Jst = 0.0;
            for (std::size_t a = 0; a < S; ++a) {
              double cb = 0.0;
              for (std::size_t b = 0; b <= t2; ++b) cb += Pg[a][b];
              if (a <= t1) {
                Jc += Pi1[s][a] * cb;
                M1 += Pi1[s][a];
                Jst += c.pi[a] * cb;
              }
              M2 += Pi1[s][a] * cb;
            }
            double v = (Jc - Jst) - p1 * (M2 - p2) - p2 * (M1 - p1);
            worst = std::max(worst, std::abs(v));
          }
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("finite chains validate stochasticity and find their measure") {
  Dense P = {{0.2, 0.5, 0.3}, {0.4, 0.1, 0.5}, {0.3, 0.3, 0.4}};
  auto c = FiniteChain::from_dense(P);
  double s = c.pi[0] + c.pi[1] + c.pi[2];
  CHECK(s == Catch::Approx(1.0).margin(1e-13));
  // pi P = pi
  for (std::size_t j = 0; j < 3; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < 3; ++i) acc += c.pi[i] * P[i][j];
    CHECK(acc == Catch::Approx(c.pi[j]).margin(1e-13));
  }

  CHECK_THROWS_AS(FiniteChain::from_dense({{0.5, 0.4}, {0.5, 0.5}}), config_error);
  CHECK_THROWS_AS(FiniteChain::from_dense({{1.1, -0.1}, {0.5, 0.5}}), config_error);
}

TEST_CASE("mixing coefficients equal direct enumeration on small chains") {
  std::vector<Dense> chains = {
      {{0.2, 0.5, 0.3}, {0.4, 0.1, 0.5}, {0.3, 0.3, 0.4}},
      {{0.9, 0.1}, {0.2, 0.8}},
      {{0.05, 0.8, 0.05, 0.1},
       {0.3, 0.3, 0.3, 0.1},
       {0.25, 0.25, 0.25, 0.25},
       {0.1, 0.1, 0.1, 0.7}},
  };
  PhiOptions opts;
  opts.max_lag = 10;
  for (const auto& P : chains) {
    auto c = FiniteChain::from_dense(P);
    auto prof = mixing_profile(c, opts);
    REQUIRE_FALSE(prof.pair_lower_bound_only);
    for (int k = 1; k <= opts.max_lag; ++k) {
      double o1 = oracle_phi1(c, P, k);
      double o2 = oracle_phi2(c, P, k, opts.i1_window, opts.gap_window);
      REQUIRE(std::abs(prof.points[k - 1].phi1 - o1) <= 1e-14);
      REQUIRE(std::abs(prof.points[k - 1].phi2 - o2) <= 1e-14);
    }
  }
}

TEST_CASE("coarse pair evaluation with singleton groups matches the exact path") {
  Dense P = {{0.2, 0.5, 0.3}, {0.4, 0.1, 0.5}, {0.3, 0.3, 0.4}};
  auto c = FiniteChain::from_dense(P);
  PhiOptions exact;
  exact.max_lag = 10;
  auto pe = mixing_profile(c, exact);

  PhiOptions coarse = exact;
  coarse.exact_pair_state_cap = 0;  // force the large-chain path
  coarse.pair_bins = 8;             // more groups than states: singletons
  auto pc = mixing_profile(c, coarse);
  CHECK(pc.pair_lower_bound_only);
  for (int k = 0; k < exact.max_lag; ++k)
    REQUIRE(std::abs(pc.points[k].phi2 - pe.points[k].phi2) <= 1e-14);
}

TEST_CASE("doubling dynamics mix at the closed-form uniform rate") {
  auto op = build_ulam(make_doubling(), BinGrid::uniform(64));
  auto c = FiniteChain::from_operator(op);
  PhiOptions opts;
  opts.max_lag = 12;
  auto prof = mixing_profile(c, opts);
  // with B bins the lag-k coefficient is exactly 2^-k - 1/B until it hits 0
  for (int k = 1; k <= 12; ++k) {
    double want = std::max(0.0, std::ldexp(1.0, -k) - 1.0 / 64.0);
    REQUIRE(std::abs(prof.points[k - 1].phi1 - want) <= 1e-14);
  }
  CHECK(prof.phi1_nonincreasing);
  CHECK(prof.phi2_nonincreasing);

  auto fit = fit_decay(prof.points, false);
  CHECK(fit.model == DecayFit::Model::exponential);
  CHECK(fit.rho > 0.3);
  CHECK(fit.rho <= 0.6);
}

TEST_CASE("weighted series sum computed profiles and certified tails") {
  // exact geometric profile: phi(k) = rho^k
  double rho = 0.5;
  std::vector<PhiPoint> pts;
  for (int k = 1; k <= 20; ++k)
    pts.push_back({k, std::pow(rho, k), std::pow(rho, k)});
  auto fit = fit_decay(pts, false);
  REQUIRE(fit.model == DecayFit::Model::exponential);
  CHECK(fit.rho == Catch::Approx(rho).margin(1e-10));

  auto s = weighted_phi_series(pts, fit, 0.0, 1.0, false, 1);
  CHECK(s.certified);
  CHECK(s.value() == Catch::Approx(rho / (1.0 - rho)).margin(1e-6));

  // the k = 0 convention injects phi(0) = 1
  auto s0 = weighted_phi_series(pts, fit, 0.0, 1.0, false, 0, 1.0);
  CHECK(s0.value() == Catch::Approx(1.0 + rho / (1.0 - rho)).margin(1e-6));

  // a slowly decaying polynomial profile cannot be certified at b = 1/2
  std::vector<PhiPoint> slow;
  for (int k = 1; k <= 20; ++k)
    slow.push_back({k, 1.0 / double(k), 1.0 / double(k)});
  auto pf = fit_decay(slow, false);
  CHECK(pf.model == DecayFit::Model::polynomial);
  auto bad = weighted_phi_series(slow, pf, 0.0, 0.5, false, 1);
  CHECK_FALSE(bad.certified);
}

TEST_CASE("decay fitting needs enough live points") {
  std::vector<PhiPoint> two = {{1, 0.5, 0.5}, {2, 0.25, 0.25}};
  CHECK_THROWS_AS(fit_decay(two, false), numeric_error);
}

TEST_CASE("conditional mean bounds hold with nonzero left sides") {
  Dense P = {{0.2, 0.5, 0.3}, {0.4, 0.1, 0.5}, {0.3, 0.3, 0.4}};
  auto c = FiniteChain::from_dense(P);
  PhiOptions opts;
  opts.max_lag = 6;
  auto prof = mixing_profile(c, opts);

  // monotone state functions with nontrivial conditional expectations;
  // f must not be affine in the index: this P kills affine parts in one step
  std::vector<double> f = {-0.4, 0.3, 0.6};
  std::vector<double> g = {0.0, 0.5, 1.0};
  bool some_nonzero = false;
  for (int k = 1; k <= 3; ++k) {
    for (double p : {2.0, 4.0}) {
      auto b = conditional_mean_bound(c, f, k, p, prof.points[k - 1].phi1);
      if (b.lhs > 1e-6) some_nonzero = true;
      REQUIRE(b.holds());
    }
    auto pb = pair_mean_bound(c, f, g, k, k + 1, k + 3, 4.0,
                              prof.points[k - 1].phi2);
    REQUIRE(pb.holds());
    if (pb.lhs > 1e-6) some_nonzero = true;
  }
  CHECK(some_nonzero);

  // argument contract: i >= j >= k >= 1
  CHECK_THROWS_AS(pair_mean_bound(c, f, g, 2, 1, 3, 4.0, 0.1), config_error);
}
