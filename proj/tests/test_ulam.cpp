#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mapstat/rng.hpp"
#include "mapstat/ulam.hpp"

using namespace mapstat;

TEST_CASE("bin grids tile the unit interval") {
  auto u = BinGrid::uniform(64);
  REQUIRE(u.size() == 64);
  CHECK(u.edges.front() == 0.0);
  CHECK(u.edges.back() == 1.0);
  CHECK(u.width(0) == Catch::Approx(1.0 / 64.0));
  CHECK(u.find(0.5) == 32);  // right bin owns a shared edge
  CHECK(u.find(0.0) == 0);
  CHECK(u.find(1.0) == 63);

  auto g = BinGrid::geometric(512, 1e-8);
  REQUIRE(g.size() == 512);
  CHECK(g.edges.front() == 0.0);
  CHECK(g.edges.back() == 1.0);
  CHECK(g.edges[1] == Catch::Approx(1e-8).epsilon(1e-6));
  for (std::size_t i = 0; i + 1 < g.edges.size(); ++i)
    REQUIRE(g.edges[i] < g.edges[i + 1]);
}

TEST_CASE("discretized doubling operator is exact row-stochastic") {
  auto op = build_ulam(make_doubling(), BinGrid::uniform(256));
  CHECK(op.row_sum_error() <= 1e-14);
  CHECK(op.stationarity_error() <= 1e-12);
  for (double h : op.density()) CHECK(h == Catch::Approx(1.0).margin(1e-12));
  // every doubling row has exactly two preimage cells of equal weight
  for (const auto& row : op.rows()) {
    REQUIRE(row.size() == 2);
    CHECK(row[0].second == Catch::Approx(0.5));
  }
}

TEST_CASE("centered coordinate halves exactly under the transfer pairing") {
  auto op = build_ulam(make_doubling(), BinGrid::uniform(256));
  auto f = make_centered_linear();
  for (int n = 1; n <= 6; ++n) {
    auto kr = apply_kernel(op, f, n, KernelMode::exact);
    REQUIRE(kr.used_exact);
    double worst = 0.0;
    for (std::size_t i = 0; i < op.bins(); ++i) {
      double want = std::ldexp(op.grid().mid(i) - 0.5, -n);
      worst = std::max(worst, std::abs(kr.values[i] - want));
    }
    // exact identity, not an approximation
    CHECK(worst <= 1e-2 * std::ldexp(1.0, -n));
    CHECK(worst <= 1e-15);
  }
  // matrix continuation only resolves down to the grid scale
  auto km = apply_kernel(op, f, 4, KernelMode::matrix);
  auto ke = apply_kernel(op, f, 4, KernelMode::exact);
  for (std::size_t i = 0; i < op.bins(); ++i)
    CHECK(km.values[i] == Catch::Approx(ke.values[i]).margin(1.0 / double(op.bins())));
}

TEST_CASE("the cosine is annihilated in one transfer step") {
  auto op = build_ulam(make_doubling(), BinGrid::uniform(256));
  auto kr = apply_kernel(op, make_cosine(1), 1, KernelMode::exact);
  for (double v : kr.values) CHECK(std::abs(v) <= 5e-14);
}

TEST_CASE("piecewise linear maps with unit Lebesgue density") {
  for (auto bins : {128, 243}) {
    auto op = build_ulam(make_piecewise_linear({3.0, 3.0, 3.0}),
                         BinGrid::uniform(std::size_t(bins)));
    for (double h : op.density()) CHECK(h == Catch::Approx(1.0).margin(1e-10));
  }
}

TEST_CASE("markov map recovers its two-level invariant density") {
  double a = 1.0 / 3.0;
  auto m = make_custom_linear({{0.0, a, a, 1.0, true}, {a, 1.0, 0.0, 1.0, true}});
  auto op = build_ulam(m, BinGrid::uniform(192));  // divisible by 3
  double lo_want = 1.0 / (1.0 + a);   // 3/4
  double hi_want = 1.0 / (1.0 - sq(a));  // 9/8
  for (std::size_t i = 0; i < op.bins(); ++i) {
    double want = op.grid().mid(i) < a ? lo_want : hi_want;
    CHECK(op.density()[i] == Catch::Approx(want).margin(1e-10));
  }
}

TEST_CASE("neutral-point map builds on a geometric grid") {
  auto op = build_ulam(make_lsv(0.25), BinGrid::geometric(256, 1e-8));
  CHECK(op.row_sum_error() <= 1e-13);
  CHECK(op.stationarity_error() <= 1e-9);
  // density blows up toward the neutral point and stays order one at 0.9
  CHECK(op.density()[op.grid().find(1e-6)] > 5.0);
  CHECK(op.density()[op.grid().find(0.9)] == Catch::Approx(1.0).margin(0.5));
}

TEST_CASE("non-convergence is reported with the build site and map name") {
  UlamBuildOptions opts;
  opts.max_iterations = 2;
  try {
    build_ulam(make_lsv(0.25), BinGrid::geometric(256, 1e-8), opts);
    FAIL("expected convergence_error");
  } catch (const convergence_error& e) {
    std::string msg = e.what();
    CHECK(msg.find("build_ulam") != std::string::npos);
    CHECK(msg.find("lsv") != std::string::npos);
    CHECK(e.residual() > 0.0);
  }
}

TEST_CASE("orthogonality series matches the independent-halving constant") {
  auto op = build_ulam(make_doubling(), BinGrid::uniform(256));
  // N = 12 keeps every term inside the exact preimage budget
  auto g = gordin_sum(op, make_centered_linear(), 12);
  CHECK(g.tail_certified);
  // ||K^n (x - 1/2)|| halves each step; the ratio is exact on cell averages
  CHECK(g.rho_hat == Catch::Approx(0.5).margin(1e-9));
  // bin-mid quantization shifts the level by O(1/bins^2) only
  CHECK(g.terms[0] == Catch::Approx(1.0 / std::sqrt(12.0)).margin(1e-5));
  // partial + geometric tail telescopes to twice the first term exactly
  double total = g.partial_sum + g.tail_estimate;
  CHECK(std::abs(total - 2.0 * g.terms[0]) <= 1e-12);
  CHECK(std::abs(total - 2.0 / std::sqrt(12.0)) <= 0.01 * total);
}

TEST_CASE("correlations vanish for the cosine and decay for the coordinate") {
  auto op = build_ulam(make_doubling(), BinGrid::uniform(256));
  auto cosf = make_cosine(1);
  CHECK(std::abs(correlation(op, cosf, cosf, 1)) <= 1e-13);
  auto f = make_centered_linear();
  double c0 = correlation(op, f, f, 0);
  double c1 = correlation(op, f, f, 1);
  double c2 = correlation(op, f, f, 2);
  CHECK(c0 == Catch::Approx(1.0 / 12.0).margin(1e-4));
  CHECK(c1 == Catch::Approx(c0 / 2.0).margin(1e-10));
  CHECK(c2 == Catch::Approx(c0 / 4.0).margin(1e-10));
}

TEST_CASE("reversed chain preserves the stationary law") {
  auto op = build_ulam(make_custom_linear({{0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0, true},
                                           {1.0 / 3.0, 1.0, 0.0, 1.0, true}}),
                       BinGrid::uniform(96));
  const auto& R = op.reversed_rows();
  // rows are stochastic
  for (const auto& row : R) {
    double s = 0.0;
    for (const auto& [j, w] : row) {
      s += w;
      REQUIRE(w >= -1e-15);
    }
    CHECK(s == Catch::Approx(1.0).margin(1e-12));
  }
  // pi R = pi
  std::vector<double> out(op.bins(), 0.0);
  for (std::size_t i = 0; i < op.bins(); ++i)
    for (const auto& [j, w] : R[i]) out[j] += op.pi()[i] * w;
  for (std::size_t j = 0; j < op.bins(); ++j)
    CHECK(out[j] == Catch::Approx(op.pi()[j]).margin(1e-13));
}

TEST_CASE("stationary sampling matches the invariant measure") {
  auto op = build_ulam(make_doubling(), BinGrid::uniform(64));
  auto cdf = stationary_cdf(op);
  rng_stream rs(99, 0);
  mean_var mv;
  for (int i = 0; i < 200000; ++i) mv.add(sample_stationary(op, cdf, rs));
  CHECK(mv.mean == Catch::Approx(0.5).margin(0.005));
  CHECK(mv.variance() == Catch::Approx(1.0 / 12.0).margin(0.002));
}

TEST_CASE("density comparison uses the common refinement") {
  auto a = build_ulam(make_doubling(), BinGrid::uniform(128));
  auto b = build_ulam(make_doubling(), BinGrid::uniform(512));
  CHECK(density_l1_distance(a, b) <= 1e-12);
  auto c = build_ulam(make_custom_linear({{0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0, true},
                                          {1.0 / 3.0, 1.0, 0.0, 1.0, true}}),
                      BinGrid::uniform(192));
  CHECK(density_l1_distance(a, c) > 0.1);
}
