#include <catch2/catch_amalgamated.hpp>

#include <bit>
#include <cmath>

#include "mapstat/coupling.hpp"
#include "mapstat/statistics.hpp"

using namespace mapstat;

namespace {

std::vector<double> dyadic_eps(int levels) {
  std::vector<double> eps;
  for (int m = 1; m <= levels; ++m) eps.push_back(std::ldexp(1.0, -m));
  return eps;
}

}  // namespace

TEST_CASE("epsilon schedules must decrease") {
  CHECK_THROWS_AS(validate_epsilons({0.5}), config_error);
  CHECK_THROWS_AS(validate_epsilons({0.5, 0.6}), config_error);
  CHECK_THROWS_AS(validate_epsilons({0.5, 0.0}), config_error);
  CHECK_THROWS_AS(validate_epsilons({0.5, 0.5, 0.5}), config_error);
  CHECK_NOTHROW(validate_epsilons({0.5, 0.5, 0.25}));
}

TEST_CASE("greedy block construction reproduces the frozen schedule") {
  // separation forces roughly thousandfold growth per admissible block
  auto s = build_coupling_schedule(100000, dyadic_eps(12));
  REQUIRE(s.blocks() == 4);
  CHECK(s.lengths == std::vector<std::size_t>{2, 4, 2048, 2097152});
  CHECK(s.starts == std::vector<std::size_t>{0, 2, 6, 2054});
  CHECK(s.total == 2099206);
  CHECK(verify_coupling_schedule(s, 2.0));

  // block lookup is consistent with the starts
  CHECK(s.block_of(0) == 0);
  CHECK(s.block_of(5) == 1);
  CHECK(s.block_of(6) == 2);
  CHECK(s.block_of(2054) == 3);
  CHECK(s.block_of(s.total - 1) == 3);
}

TEST_CASE("schedule construction reports stalls and exhaustion by name") {
  ScheduleOptions tight;
  tight.max_block = 4096;  // too small for the required separation
  try {
    build_coupling_schedule(100000, dyadic_eps(12), tight);
    FAIL("expected a stall");
  } catch (const config_error& e) {
    std::string msg = e.what();
    CHECK(msg.find("stalled") != std::string::npos);
    CHECK(msg.find("block") != std::string::npos);
  }

  try {
    build_coupling_schedule(std::size_t(1) << 30, dyadic_eps(3));
    FAIL("expected epsilon exhaustion");
  } catch (const config_error& e) {
    CHECK(std::string(e.what()).find("epsilon") != std::string::npos);
  }
}

TEST_CASE("schedule verification pinpoints violations") {
  auto s = build_coupling_schedule(100000, dyadic_eps(12));
  std::string why;

  auto bad = s;
  bad.lengths[1] = 6;  // not a power of two
  CHECK_FALSE(verify_coupling_schedule(bad, 2.0, &why));
  CHECK(!why.empty());

  auto shrunk = s;
  shrunk.lengths[2] = 2;  // not increasing
  CHECK_FALSE(verify_coupling_schedule(shrunk, 2.0, &why));

  // much stricter safety margins break separation
  CHECK_FALSE(verify_coupling_schedule(s, 1e6, &why));
  CHECK(why.find("separation") != std::string::npos);
}

TEST_CASE("block gaussians rescale or fall back to fresh draws") {
  auto s = build_coupling_schedule(2, {0.5, 0.25});
  std::vector<double> zb(s.total, 1.0);

  // nondegenerate blocks rescale by sigma / sigma_m
  std::vector<double> sig(s.blocks(), 2.0);
  auto z = build_Z(s, sig, 1.0, zb, 5);
  for (std::size_t i = 0; i < 2; ++i) CHECK(z[i] == Catch::Approx(0.5));

  // degenerate blocks draw independent gaussians deterministically
  std::vector<double> deg(s.blocks(), 0.0);
  auto zd = build_Z(s, deg, 1.5, zb, 5);
  auto zd2 = build_Z(s, deg, 1.5, zb, 5);
  REQUIRE(zd == zd2);
  for (std::size_t i = 0; i < zd.size(); ++i) {
    rng_stream rs(5, i);
    CHECK(zd[i] == Catch::Approx(1.5 * rs.normal()));
  }

  CHECK_THROWS_AS(build_Z(s, std::vector<double>{}, 1.0, zb, 5), config_error);
}

TEST_CASE("harness blocks are dyadic so checkpoints span many blocks") {
  CHECK(harness_block_of(0) == 1);
  CHECK(harness_block_of(1) == 1);
  CHECK(harness_block_of(2) == 2);
  CHECK(harness_block_of(5) == 2);
  CHECK(harness_block_of(6) == 3);
  CHECK(harness_block_of(13) == 3);
  CHECK(harness_block_of(14) == 4);
  // block m holds 2^m indices
  std::size_t count = 0;
  for (std::size_t i = 0; i < (1u << 12); ++i)
    if (harness_block_of(i) == 8) ++count;
  CHECK(count == (1u << 8));
}

TEST_CASE("synthetic harness meets its own coupling assumptions") {
  HarnessOptions ho;
  ho.n = 40000;
  ho.checkpoints = {4000, 40000};
  ho.seed = 2;
  ho.ks_prefix = 20000;
  auto hr = run_synthetic_harness(ho);

  REQUIRE(hr.D.size() == 2);
  CHECK(hr.D[0] > 0.0);
  CHECK(hr.D[1] > 0.0);
  CHECK(hr.assumption_ok);
  CHECK(hr.max_block_ratio < 3.0);
  CHECK(std::abs(hr.z_lag1) <= 3.0 / std::sqrt(double(ho.n)));
  CHECK(ks_normal(hr.z_prefix, 1.0) < 0.02);

  // runs are reproducible
  auto hr2 = run_synthetic_harness(ho);
  CHECK(hr.D == hr2.D);
  CHECK(hr.z_lag1 == hr2.z_lag1);
}

TEST_CASE("discrepancy normalization and trend detection") {
  CHECK(asip_discrepancy(6.0, 256) ==
        Catch::Approx(6.0 / std::sqrt(256.0 * log_log_guarded(256.0))));

  std::vector<std::size_t> ns = {10000, 100000, 1000000};
  std::vector<double> d_down = {1e-3, 4e-4, 1.2e-4};
  CHECK(discrepancy_trend(ns, d_down) < 0.0);
  std::vector<double> d_up = {1e-4, 4e-4, 1.2e-3};
  CHECK(discrepancy_trend(ns, d_up) > 0.0);
}
