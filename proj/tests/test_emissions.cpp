#include "noxscreen/emissions.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

using namespace noxscreen;

namespace {
double rel_err(double got, double want) { return std::abs(got - want) / std::abs(want); }
}  // namespace

TEST_CASE("nox_rate matches the hand-derived evaluation") {
  // Hand evaluation: exhaust flow 300 + 20*0.85 = 317 kg/h,
  // rate = 0.001587 * 500 * 317 / 3600.
  const double expected = 0.001587 * 500.0 * (300.0 + 20.0 * 0.85) / 3600.0;
  const double got = nox_rate(500, 300, 20);
  REQUIRE(rel_err(got, expected) < 1e-12);
  REQUIRE_THAT(got, Catch::Matchers::WithinAbs(0.069872, 5e-7));

  SECTION("zero concentration gives zero rate") { REQUIRE(nox_rate(0, 300, 20) == 0.0); }
  SECTION("zero flow gives zero rate") { REQUIRE(nox_rate(1000, 0, 0) == 0.0); }
  SECTION("non-finite input rejected") {
    REQUIRE_THROWS_AS(nox_rate(std::nan(""), 300, 20), NonFiniteInput);
    REQUIRE_THROWS_AS(nox_rate(500, std::numeric_limits<double>::infinity(), 20), NonFiniteInput);
  }
}

TEST_CASE("co2_rate matches the hand-derived evaluation") {
  REQUIRE(rel_err(co2_rate(20), 20.0 * 2684.0 / 3600.0) < 1e-12);
  REQUIRE_THAT(co2_rate(20), Catch::Matchers::WithinAbs(14.9111, 5e-5));
  REQUIRE(co2_rate(0) == 0.0);
  REQUIRE_THAT(co2_rate(36), Catch::Matchers::WithinRel(26.84, 1e-12));
}

TEST_CASE("obm_ratio is the quotient of the two rates") {
  const double want = nox_rate(500, 300, 20) / co2_rate(20);
  REQUIRE(obm_ratio(500, 300, 20) == want);
  REQUIRE_THAT(obm_ratio(500, 300, 20), Catch::Matchers::WithinAbs(0.004686, 5e-7));
  REQUIRE(obm_ratio(0, 300, 20) == 0.0);
  REQUIRE_THROWS_AS(obm_ratio(500, 300, 0), ZeroFuelRate);
}

TEST_CASE("rsd_ratio applies the NO2 correction") {
  REQUIRE_THAT(rsd_ratio(600, 100000), Catch::Matchers::WithinRel(0.01, 1e-12));
  REQUIRE(rsd_ratio(0, 100000) == 0.0);
  REQUIRE_THAT(rsd_ratio_from_q3(0.006), Catch::Matchers::WithinRel(0.01, 1e-12));
  REQUIRE_THROWS_AS(rsd_ratio(600, 0), ZeroDenominator);
  REQUIRE_THROWS_AS(rsd_ratio(600, -1), ZeroDenominator);

  SECTION("configurable NO2 fraction") {
    FuelConstants china6;
    china6.no2_fraction = 0.25;
    REQUIRE_THAT(rsd_ratio_from_q3(0.006, china6), Catch::Matchers::WithinRel(0.008, 1e-12));
  }
}

TEST_CASE("rate linearity and ratio properties", "[property]") {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> conc(0, 3000), maf(10, 2000), fr(0.5, 150), k(0.1, 10);

  for (int i = 0; i < 2000; ++i) {
    const double n = conc(rng), m = maf(rng), f = fr(rng), s = k(rng);

    // nox_rate linear in concentration at fixed flows; co2_rate linear in fuel.
    REQUIRE_THAT(nox_rate(s * n, m, f), Catch::Matchers::WithinRel(s * nox_rate(n, m, f), 1e-12));
    REQUIRE_THAT(co2_rate(s * f), Catch::Matchers::WithinRel(s * co2_rate(f), 1e-12));

    // obm_ratio invariant to a common scaling of both flows (time base cancels).
    REQUIRE_THAT(obm_ratio(n, s * m, s * f), Catch::Matchers::WithinRel(obm_ratio(n, m, f), 1e-12));

    // the two rsd_ratio entry points agree bit-for-bit.
    const double co2 = maf(rng) * 100;
    REQUIRE(rsd_ratio(n, co2) == rsd_ratio_from_q3(n / co2));

    // non-negative outputs for non-negative inputs.
    REQUIRE(nox_rate(n, m, f) >= 0);
    REQUIRE(co2_rate(f) >= 0);
    REQUIRE(obm_ratio(n, m, f) >= 0);
  }
}
