#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mapstat/observable.hpp"

using namespace mapstat;

TEST_CASE("built-in observables integrate to closed forms") {
  CHECK(make_centered_linear().integral(0.0, 1.0) == Catch::Approx(0.0).margin(1e-15));
  CHECK(make_cosine(1).integral(0.0, 1.0) == Catch::Approx(0.0).margin(1e-12));
  // int_0^1 x^(-1/4) dx = 4/3
  CHECK(make_power_law(0.25).integral(0.0, 1.0) == Catch::Approx(4.0 / 3.0).margin(1e-12));
  // indicator mass is weight * length
  CHECK(make_indicator(0.2, 0.7, 2.0).integral(0.0, 1.0) == Catch::Approx(1.0));
}

TEST_CASE("evaluation respects piece supports") {
  auto ind = make_indicator(0.2, 0.7);
  CHECK(ind.eval(0.2) == 1.0);
  CHECK(ind.eval(0.7) == 1.0);  // both endpoints belong to the piece
  CHECK(ind.eval(0.1) == 0.0);
  CHECK(ind.eval(0.71) == 0.0);

  auto f = make_power_law(0.5);
  CHECK(f.eval(0.25) == Catch::Approx(2.0));
  bool diverges_at_zero = std::isinf(f.terms()[0].piece.limit_lo) ||
                          f.terms()[0].piece.limit_lo > 1e15;
  CHECK(diverges_at_zero);
}

TEST_CASE("combinations evaluate and scale linearly") {
  auto f = make_cosine(1);
  auto g = make_indicator(0.0, 0.5);
  auto mix = Observable::combine("mix", {{2.0, f}, {-1.0, g}});
  for (double x : {0.1, 0.3, 0.6, 0.9})
    CHECK(mix.eval(x) == Catch::Approx(2.0 * f.eval(x) - g.eval(x)).margin(1e-15));
  CHECK(mix.integral(0.0, 1.0) ==
        Catch::Approx(2.0 * f.integral(0.0, 1.0) - g.integral(0.0, 1.0)).margin(1e-12));
  CHECK(mix.name() == "mix");
}

TEST_CASE("variation norm on bounded pieces, refusal on unbounded ones") {
  // variation of the zero extension: endpoint values count as jumps
  CHECK(variation_norm(make_indicator(0.2, 0.7, 1.5)) == Catch::Approx(3.0));
  CHECK(variation_norm(make_centered_linear()) == Catch::Approx(2.0));
  CHECK_THROWS_AS(variation_norm(make_power_law(0.25)), unbounded_variation_error);
}

TEST_CASE("clipping an inverse power splits at the exact threshold") {
  // x^(-1/4) > 2 exactly on (0, 2^-4)
  auto f = make_power_law(0.25).with_tail_tag(TailFunction::power(4.0));
  auto d = decompose_H(f, 2.0);
  CHECK(d.clip_level == 2.0);
  // the clipped part is bounded by the level, so its variation is finite
  CHECK(d.bv_variation == Catch::Approx(4.0).margin(1e-9));

  // pointwise exact reconstruction
  for (int i = 1; i <= 2000; ++i) {
    double x = double(i) / 2000.0;
    REQUIRE(std::abs(f.eval(x) - d.bv_part.eval(x) - d.remainder.eval(x)) <=
            1e-14);
  }
  // remainder lives where f exceeds the level
  CHECK(d.remainder.eval(0.5) == 0.0);
  CHECK(d.remainder.eval(1e-3) == Catch::Approx(std::pow(1e-3, -0.25)));
}

TEST_CASE("truncation level follows the horizon scaling") {
  auto f = make_cosine(1);
  auto t16 = truncate_gn(f, 16, 1.0);
  CHECK(t16.level == Catch::Approx(3.961014565824208).epsilon(1e-12));
  auto t4096 = truncate_gn(f, 4096, 1.0);
  CHECK(t4096.level == Catch::Approx(43.97204187643661).epsilon(1e-12));
  CHECK_THROWS_AS(truncate_gn(f, 8, 1.0), config_error);
  CHECK_THROWS_AS(truncate_gn(f, 64, 0.0), config_error);
  // a bounded function below the level truncates to itself
  for (double x : {0.1, 0.4, 0.8})
    CHECK(t4096.g_n.eval(x) == Catch::Approx(f.eval(x)).margin(1e-15));
}

TEST_CASE("square-integrable split finds the grid-scan truncation level") {
  PiecewiseConstantDensity uniform{{0.0, 1.0}, {1.0}};
  auto f = make_power_law(0.25).with_l2_tag(2.0);
  double eps = 0.1;
  auto d = decompose_L2(f, eps, uniform);
  REQUIRE_FALSE(d.degenerate);
  REQUIRE(d.term_info.size() == 1);

  // oracle: smallest K on a fine grid with int_{|g|>K} g^2 dmu <= eps^2;
  // closed form here: 2 K^-2 <= eps^2, so K = sqrt(2)/eps
  auto tail_mass = [](double K) { return 2.0 / (K * K); };
  const int N = 400000;
  double best = -1.0;
  for (int i = 1; i <= N; ++i) {
    double K = 1.0 + 20.0 * double(i) / N;
    if (tail_mass(K) <= eps * eps) { best = K; break; }
  }
  REQUIRE(best > 0.0);
  double step = 20.0 / N;
  CHECK(d.term_info[0].K == Catch::Approx(best).margin(2.0 * step));
  CHECK(d.term_info[0].K == Catch::Approx(std::sqrt(200.0)).margin(1e-9));

  // split is pointwise exact and the remainder is re-tagged with 2 eps
  for (int i = 1; i <= 2000; ++i) {
    double x = double(i) / 2000.0;
    REQUIRE(std::abs(f.eval(x) - d.bv_part.eval(x) - d.remainder.eval(x)) <=
            1e-12);
  }
  CHECK(d.remainder.tag().kind == ClassKind::l2_class);
  CHECK(d.remainder.tag().M == Catch::Approx(2.0 * eps));

  // a huge tolerance swallows every term
  auto dg = decompose_L2(f, 10.0, uniform);
  CHECK(dg.degenerate);
}

TEST_CASE("tail-integral criterion separates summable from divergent tails") {
  auto finite = lil_condition_integral(TailFunction::power(6.0), 0.25);
  CHECK(finite.finite);
  CHECK(finite.value == Catch::Approx(1.0).margin(1e-6));

  auto diverged = lil_condition_integral(TailFunction::power(3.0), 0.25);
  CHECK_FALSE(diverged.finite);

  CHECK_THROWS_AS(lil_condition_integral(TailFunction::power(6.0), 0.6),
                  config_error);
}

TEST_CASE("tail profiles clamp to probabilities and compose") {
  auto H = TailFunction::power(4.0);
  CHECK(H(0.5) == 1.0);  // capped at one below the unit level
  CHECK(H(2.0) == Catch::Approx(std::pow(2.0, -4.0)));
  auto B = TailFunction::bounded_sup(3.0);
  CHECK(B(2.9) == 1.0);
  CHECK(B(3.1) == 0.0);
  // table profiles interpolate linearly between knots
  auto T = TailFunction::table({1.0, 2.0, 4.0}, {0.5, 0.25, 0.0});
  CHECK(T(3.0) == Catch::Approx(0.125));
  CHECK(T(0.5) == 0.5);
  CHECK(T(5.0) == 0.0);
}

TEST_CASE("renaming and tagging do not disturb values") {
  // tagging requires total term weight at most one
  auto f = make_power_law(0.3).renamed("heavy").with_l2_tag(0.5, 4.0);
  CHECK(f.name() == "heavy");
  CHECK(f.tag().kind == ClassKind::l2_class);
  CHECK(f.tag().M == 0.5);
  CHECK(f.tag().p == 4.0);
  CHECK(f.eval(0.25) == Catch::Approx(make_power_law(0.3).eval(0.25)));
  // a multi-piece observable with total weight above one refuses the tag
  CHECK_THROWS_AS(make_cosine(1).with_l2_tag(0.5), config_error);
}
