#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mapstat/statistics.hpp"

using namespace mapstat;

namespace {

const UlamOperator& doubling_op() {
  static UlamOperator op = build_ulam(make_doubling(), BinGrid::uniform(256));
  return op;
}

}  // namespace

TEST_CASE("dyadic checkpoints halve down to the minimum") {
  auto cps = dyadic_checkpoints(4096, 16);
  REQUIRE(cps.size() == 9);
  CHECK(cps.front() == 16);
  CHECK(cps.back() == 4096);
  for (std::size_t i = 0; i + 1 < cps.size(); ++i)
    CHECK(cps[i + 1] == 2 * cps[i]);
}

TEST_CASE("mean square of an unbounded observable against the flat measure") {
  // int x^(-1/2) dx = 2, computed from the closed-form antiderivative
  double v = nu_of_square(doubling_op(), make_power_law(0.25));
  CHECK(v == Catch::Approx(2.0).margin(1e-9));
  // bounded case through quadrature: int cos^2 = 1/2
  CHECK(nu_of_square(doubling_op(), make_cosine(1)) ==
        Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("long-run variance of the cosine is exactly one half") {
  auto s2 = sigma2_operator(doubling_op(), make_cosine(1));
  CHECK(s2.converged);
  CHECK(s2.var0 == Catch::Approx(0.5).margin(1e-12));
  CHECK(s2.sigma2 == Catch::Approx(0.5).margin(1e-12));
  CHECK(s2.lags_used <= 5);
}

TEST_CASE("ensembles are reproducible and thread-count invariant") {
  EnsembleOptions eo;
  eo.trajectories = 64;
  eo.steps = 1024;
  eo.seed = 5;
  eo.mode = GenerationMode::backward;
  auto a = simulate_ensemble(doubling_op(), make_cosine(1), eo);
  auto b = simulate_ensemble(doubling_op(), make_cosine(1), eo);
  REQUIRE(a.sums == b.sums);
  REQUIRE(a.max_abs == b.max_abs);

  eo.threads = 3;
  auto c = simulate_ensemble(doubling_op(), make_cosine(1), eo);
  REQUIRE(a.sums == c.sums);
  REQUIRE(a.max_abs == c.max_abs);

  eo.seed = 6;
  auto d = simulate_ensemble(doubling_op(), make_cosine(1), eo);
  CHECK(a.sums != d.sums);
}

TEST_CASE("scaling the observable scales every partial sum exactly") {
  EnsembleOptions eo;
  eo.trajectories = 32;
  eo.steps = 512;
  eo.seed = 9;
  eo.mode = GenerationMode::backward;
  auto f = make_cosine(1);
  auto half = Observable::combine("half", {{0.5, f}});
  auto a = simulate_ensemble(doubling_op(), f, eo);
  auto h = simulate_ensemble(doubling_op(), half, eo);
  for (std::size_t r = 0; r < a.sums.size(); ++r)
    for (std::size_t c = 0; c < a.sums[r].size(); ++c)
      REQUIRE(h.sums[r][c] == Catch::Approx(0.5 * a.sums[r][c]).margin(1e-12));
}

TEST_CASE("running maxima dominate endpoint sums at every checkpoint") {
  EnsembleOptions eo;
  eo.trajectories = 40;
  eo.steps = 512;
  eo.seed = 13;
  for (auto mode : {GenerationMode::forward, GenerationMode::backward}) {
    eo.mode = mode;
    auto e = simulate_ensemble(doubling_op(), make_cosine(1), eo);
    for (std::size_t r = 0; r < e.sums.size(); ++r)
      for (std::size_t c = 0; c < e.checkpoints.size(); ++c) {
        REQUIRE(e.max_abs[r][c] >= std::abs(e.sums[r][c]) - 1e-12);
        if (c > 0) REQUIRE(e.max_abs[r][c] >= e.max_abs[r][c - 1]);
      }
  }
}

TEST_CASE("backward generation refuses maps without uniform invariance") {
  auto lsv = build_ulam(make_lsv(0.25), BinGrid::geometric(128, 1e-6));
  EnsembleOptions eo;
  eo.trajectories = 4;
  eo.steps = 64;
  eo.min_checkpoint = 16;
  eo.mode = GenerationMode::backward;
  CHECK_THROWS_AS(simulate_ensemble(lsv, make_cosine(1), eo), config_error);
}

TEST_CASE("forward and backward ensembles agree with the operator variance") {
  auto pl = build_ulam(make_piecewise_linear({3.0, 3.0, 3.0}),
                       BinGrid::uniform(243));
  auto g = make_centered_linear();
  auto s2 = sigma2_operator(pl, g);

  EnsembleOptions eo;
  eo.trajectories = 3000;
  eo.steps = 1024;
  eo.seed = 11;
  eo.mode = GenerationMode::forward;
  double vf = ensemble_variance(simulate_ensemble(pl, g, eo)).back().second;
  eo.mode = GenerationMode::backward;
  eo.seed = 12;
  double vb = ensemble_variance(simulate_ensemble(pl, g, eo)).back().second;

  CHECK(vf == Catch::Approx(s2.sigma2).margin(0.02));
  CHECK(vb == Catch::Approx(s2.sigma2).margin(0.02));
}

TEST_CASE("exact distribution distance against a normal scale family") {
  // frozen tiny case: one sample at the median has distance 1/2
  CHECK(ks_normal({0.0}, 1.0) == Catch::Approx(0.5));
  // symmetric pair: D = F(1) - 1/2 + ... max at the step edges
  double d2 = ks_normal({-1.0, 1.0}, 1.0);
  CHECK(d2 == Catch::Approx(normal_cdf(1.0) - 0.5).margin(1e-12));

  // a seeded normal sample stays close
  rng_stream rs(17, 0);
  std::vector<double> z(20000);
  for (auto& x : z) x = rs.normal();
  CHECK(ks_normal(z, 1.0) < 0.012);
}

TEST_CASE("partial sums pass the distributional checks on the doubling map") {
  EnsembleOptions eo;
  eo.trajectories = 2000;
  eo.steps = 4096;
  eo.seed = 7;
  eo.mode = GenerationMode::backward;
  auto ens = simulate_ensemble(doubling_op(), make_cosine(1), eo);
  auto s2 = sigma2_operator(doubling_op(), make_cosine(1));

  auto ev = ensemble_variance(ens);
  CHECK(ev.back().second == Catch::Approx(s2.sigma2).margin(0.05));

  std::vector<double> sn(ens.sums.size());
  for (std::size_t r = 0; r < sn.size(); ++r)
    sn[r] = ens.sums[r].back() / std::sqrt(double(ens.steps));
  CHECK(ks_normal(sn, std::sqrt(s2.sigma2)) < 0.05);

  auto wip = wip_covariance_check(ens, s2.sigma2);
  CHECK(wip.entries.size() >= 3);
  CHECK(wip.max_error <= 0.1 * s2.sigma2);
  for (const auto& e : wip.entries)
    CHECK(e.expected ==
          Catch::Approx(s2.sigma2 * std::min(e.s, e.t)).margin(1e-12));
}

TEST_CASE("iterated-logarithm statistic counts exceedances over checkpoints") {
  // two handmade trajectories with known running maxima
  EnsembleResult ens;
  ens.steps = 256;
  ens.seed = 1;
  ens.checkpoints = {64, 128, 256};
  ens.sums = {{1.0, 2.0, 3.0}, {0.5, 0.5, 0.5}};
  ens.max_abs = {{4.0, 5.0, 6.0}, {0.5, 0.5, 0.5}};
  double L = log_log_guarded(256.0);
  auto lil = lil_statistic(ens, 0.2);
  REQUIRE(lil.u.size() == 2);
  CHECK(lil.u[0] == Catch::Approx(6.0 / std::sqrt(256.0 * L)));
  CHECK(lil.u[1] == Catch::Approx(0.5 / std::sqrt(256.0 * L)));
  // u = (0.287, 0.024), so only the first trajectory clears 0.2
  CHECK(lil.exceed_fraction == Catch::Approx(0.5));
  REQUIRE(lil.series.size() == 3);
  for (const auto& p : lil.series) {
    CHECK(p.p_hat >= 0.0);
    CHECK(p.p_hat <= 1.0);
  }
}

TEST_CASE("normalization scan separates flat from logarithmic growth") {
  // synthetic ensembles built directly from independent gaussians
  auto build = [](bool with_log) {
    EnsembleResult ens;
    ens.steps = 1 << 14;
    ens.checkpoints = dyadic_checkpoints(ens.steps, 1 << 8);
    rng_stream rs(with_log ? 21 : 22, 0);
    for (int r = 0; r < 1500; ++r) {
      std::vector<double> row;
      for (auto n : ens.checkpoints) {
        double scale = with_log ? std::sqrt(double(n) * std::log(double(n)))
                                : std::sqrt(double(n));
        row.push_back(scale * rs.normal());
      }
      ens.sums.push_back(row);
      ens.max_abs.push_back(row);
    }
    return ens;
  };
  auto flat = normalization_scan(build(false));
  CHECK(flat.decision == NormalizationScan::Decision::constant);
  auto grown = normalization_scan(build(true));
  CHECK(grown.decision == NormalizationScan::Decision::n_log_n);
  CHECK(grown.ratio >= 1.5);
}
