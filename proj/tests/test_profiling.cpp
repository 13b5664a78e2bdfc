#include "noxscreen/profiling.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

using namespace noxscreen;

namespace {

/// Inverts obm_ratio: concentration that yields the requested NOx/CO2 ratio
/// at the given flows.
double nox_for_ratio(double ratio, double maf, double fr, const FuelConstants& c = {}) {
  return ratio * fr * c.beta_g_per_l / (c.mu * (maf + fr * c.rho_kg_per_l));
}

/// Trip of n records at fixed (speed, accel) whose per-record ratios are as
/// given; cadence 10 s, fuel rate 20 L/h unless overridden.
Trip make_trip(const std::vector<double>& ratios, double speed_kmh, double accel,
               double fuel_rate = 20.0, const std::string& vid = "V1", double t0 = 0.0) {
  Trip t;
  t.vehicle_id = vid;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    ObmRecord r;
    r.vehicle_id = vid;
    r.timestamp = t0 + static_cast<double>(i) * 10.0;
    r.speed_kmh = speed_kmh;
    r.accel_ms2 = accel;
    r.fuel_rate_lh = fuel_rate;
    r.maf_kgh = 300;
    r.nox_ppm = nox_for_ratio(ratios[i], r.maf_kgh, r.fuel_rate_lh);
    r.lat = 30.6;
    r.lon = 104.0;
    t.records.push_back(r);
  }
  compute_trip_quality(t);
  return t;
}

const BinProfile& profile_of(const std::vector<BinProfile>& ps, OperatingBin b) {
  return ps[static_cast<std::size_t>(bin_index(b))];
}

}  // namespace

TEST_CASE("build_profiles assigns dwell and ratio samples per bin") {
  SECTION("single-regime trip concentrates in one bin") {
    // 50 km/h at 0.65 m/s2: vsp = 9.03 + 1.22 + 0.89 = 11.1 -> Bin28
    const auto trips = std::vector<Trip>{make_trip(std::vector<double>(30, 0.004), 50, 0.65)};
    const auto ps = build_profiles(trips);
    REQUIRE_THAT(profile_of(ps, OperatingBin::Bin28).time_fraction,
                 Catch::Matchers::WithinRel(1.0, 1e-12));
    for (const auto& p : ps)
      if (p.bin != OperatingBin::Bin28) REQUIRE(p.time_fraction == 0.0);
    REQUIRE(profile_of(ps, OperatingBin::Bin28).n == 30);
    REQUIRE_THAT(profile_of(ps, OperatingBin::Bin28).mean_ratio,
                 Catch::Matchers::WithinRel(0.004, 1e-9));
  }
  SECTION("two equal-duration regimes split the time evenly") {
    auto a = make_trip(std::vector<double>(31, 0.004), 50, 0.65, 20, "V1", 0);
    auto b = make_trip(std::vector<double>(31, 0.006), 40, 0.0, 20, "V1", 10000);
    const auto ps = build_profiles({a, b});
    // both trips have 30 dwell intervals of 10 s each
    REQUIRE_THAT(profile_of(ps, OperatingBin::Bin28).time_fraction,
                 Catch::Matchers::WithinRel(0.5, 1e-12));
    REQUIRE_THAT(profile_of(ps, OperatingBin::Bin24).time_fraction,
                 Catch::Matchers::WithinRel(0.5, 1e-12));
    double sum = 0;
    for (const auto& p : ps) sum += p.time_fraction;
    REQUIRE_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-9));
  }
  SECTION("zero-fuel records keep their dwell but contribute no ratio") {
    auto t = make_trip(std::vector<double>(21, 0.004), 50, 0.65);
    t.records[5].fuel_rate_lh = 0;
    t.records[5].nox_ppm = 0;
    const auto ps = build_profiles({t});
    const auto& p = profile_of(ps, OperatingBin::Bin28);
    REQUIRE(p.n == 20);
    REQUIRE_THAT(p.time_fraction, Catch::Matchers::WithinRel(1.0, 1e-12));
  }
  SECTION("invalid records are excluded entirely") {
    auto t = make_trip(std::vector<double>(21, 0.004), 50, 0.65);
    t.records[3].valid = false;
    const auto ps = build_profiles({t});
    REQUIRE(profile_of(ps, OperatingBin::Bin28).n == 20);
  }
  SECTION("dwell is capped so gaps cannot inflate a bin") {
    auto t = make_trip(std::vector<double>(11, 0.004), 50, 0.65);
    t.records[10].timestamp += 500;  // one long interval before the last record
    compute_trip_quality(t);
    auto u = make_trip(std::vector<double>(11, 0.005), 40, 0.0, 20, "V1", 90000);
    const auto ps = build_profiles({t, u});
    // capped: 9*10 + 12 = 102 s vs 100 s -> close to half, not dominated
    REQUIRE(profile_of(ps, OperatingBin::Bin28).time_fraction < 0.52);
  }
  SECTION("no contributing records is an error") {
    Trip t;
    t.vehicle_id = "V1";
    REQUIRE_THROWS_AS(build_profiles({t}), EmptyInput);
  }
  SECTION("quartiles are ordered") {
    std::mt19937 rng(5);
    std::lognormal_distribution<double> ln(-5.5, 0.3);
    std::vector<double> ratios(200);
    for (auto& x : ratios) x = ln(rng);
    const auto ps = build_profiles({make_trip(ratios, 50, 0.65)});
    const auto& p = profile_of(ps, OperatingBin::Bin28);
    REQUIRE(p.p25 <= p.median_ratio);
    REQUIRE(p.median_ratio <= p.p75);
  }
}

TEST_CASE("profile merge equals pooled profiling", "[property]") {
  std::mt19937 rng(43);
  std::lognormal_distribution<double> ln(-5.5, 0.25);
  std::uniform_int_distribution<int> len(5, 40);

  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Trip> set_a, set_b;
    double t0 = 0;
    auto gen_set = [&](std::vector<Trip>& dst, const std::string& vid) {
      for (int k = 0; k < 3; ++k) {
        std::vector<double> ratios(static_cast<std::size_t>(len(rng)));
        for (auto& x : ratios) x = ln(rng);
        const double speed = 20.0 + 10.0 * k;
        dst.push_back(make_trip(ratios, speed, 0.1, 20, vid, t0));
        t0 += 1e5;
      }
    };
    gen_set(set_a, "VA");
    gen_set(set_b, "VB");

    ProfileAccumulator pa, pb, pooled;
    for (const auto& t : set_a) {
      pa.add(t);
      pooled.add(t);
    }
    for (const auto& t : set_b) {
      pb.add(t);
      pooled.add(t);
    }
    pa.merge(pb);

    const auto merged = pa.profiles();
    const auto direct = pooled.profiles();
    for (std::size_t i = 0; i < merged.size(); ++i) {
      REQUIRE(merged[i].n == direct[i].n);
      if (direct[i].n)
        REQUIRE_THAT(merged[i].mean_ratio, Catch::Matchers::WithinRel(direct[i].mean_ratio, 1e-12));
      if (direct[i].time_fraction > 0) {
        REQUIRE_THAT(merged[i].time_fraction,
                     Catch::Matchers::WithinRel(direct[i].time_fraction, 1e-12));
        REQUIRE_THAT(merged[i].mean_fuel_rate_lh,
                     Catch::Matchers::WithinRel(direct[i].mean_fuel_rate_lh, 1e-12));
        REQUIRE_THAT(merged[i].mean_speed_kmh,
                     Catch::Matchers::WithinRel(direct[i].mean_speed_kmh, 1e-12));
      }

      // cross-check: merged mean equals the sample-weighted mean of the parts
      const auto a_ps = [&] { ProfileAccumulator x; for (const auto& t : set_a) x.add(t); return x.profiles(); }();
      const auto b_ps = [&] { ProfileAccumulator x; for (const auto& t : set_b) x.add(t); return x.profiles(); }();
      const std::size_t n = a_ps[i].n + b_ps[i].n;
      if (n) {
        const double weighted = (a_ps[i].mean_ratio * static_cast<double>(a_ps[i].n) +
                                 b_ps[i].mean_ratio * static_cast<double>(b_ps[i].n)) /
                                static_cast<double>(n);
        REQUIRE_THAT(merged[i].mean_ratio, Catch::Matchers::WithinRel(weighted, 1e-12));
      }
    }
  }
}

TEST_CASE("derive_thresholds doubles the bin means with range fallback") {
  auto trips = std::vector<Trip>{
      make_trip(std::vector<double>(150, 0.004), 50, 0.65, 20, "V1", 0),     // Bin28, rich
      make_trip(std::vector<double>(150, 0.006), 40, 0.0, 20, "V1", 20000),  // Bin24, rich
      make_trip(std::vector<double>(5, 0.010), 45, 0.15, 20, "V1", 40000),   // Bin25, sparse
  };
  const auto ps = build_profiles(trips);
  const auto t = derive_thresholds(ps, 2.0, 100);

  SECTION("rich bins carry twice their own mean") {
    REQUIRE_THAT(*t.threshold_for(OperatingBin::Bin28, ThresholdGranularity::Bin),
                 Catch::Matchers::WithinRel(0.008, 1e-12));
    REQUIRE_THAT(*t.threshold_for(OperatingBin::Bin24, ThresholdGranularity::Bin),
                 Catch::Matchers::WithinRel(0.012, 1e-12));
  }
  SECTION("sparse bins inherit the sample-weighted range threshold") {
    const double range_mean = (150 * 0.004 + 150 * 0.006 + 5 * 0.010) / 305.0;
    REQUIRE_THAT(*t.threshold_for(OperatingBin::Bin25, ThresholdGranularity::Bin),
                 Catch::Matchers::WithinRel(2.0 * range_mean, 1e-12));
    REQUIRE_THAT(*t.threshold_for(OperatingBin::Bin25, ThresholdGranularity::SpeedRange),
                 Catch::Matchers::WithinRel(2.0 * range_mean, 1e-12));
  }
  SECTION("identity multiplier returns the means") {
    const auto t1 = derive_thresholds(ps, 1.0, 100);
    REQUIRE_THAT(*t1.threshold_for(OperatingBin::Bin28, ThresholdGranularity::Bin),
                 Catch::Matchers::WithinRel(0.004, 1e-12));
  }
  SECTION("no rich bin at all is an error") {
    const auto sparse = build_profiles({make_trip(std::vector<double>(5, 0.004), 50, 0.65)});
    REQUIRE_THROWS_AS(derive_thresholds(sparse, 2.0, 100), InsufficientData);
  }
  SECTION("braking and idle carry no range threshold") {
    REQUIRE_FALSE(t.threshold_for(OperatingBin::Bin0, ThresholdGranularity::SpeedRange).has_value());
    REQUIRE_FALSE(t.threshold_for(OperatingBin::Bin1, ThresholdGranularity::SpeedRange).has_value());
  }
}

TEST_CASE("threshold scale-equivariance", "[property]") {
  std::mt19937 rng(47);
  std::lognormal_distribution<double> ln(-5.5, 0.4);
  std::vector<double> base(300);
  for (auto& x : base) x = ln(rng);
  const double k = 4.0;  // power of two: exact under floating point
  std::vector<double> scaled = base;
  for (auto& x : scaled) x *= k;

  const auto ps = build_profiles({make_trip(base, 50, 0.65)});
  const auto qs = build_profiles({make_trip(scaled, 50, 0.65)});
  const auto t0 = derive_thresholds(ps, 2.0, 100);
  const auto t1 = derive_thresholds(qs, 2.0, 100);
  const double thr0 = *t0.threshold_for(OperatingBin::Bin28, ThresholdGranularity::Bin);
  const double thr1 = *t1.threshold_for(OperatingBin::Bin28, ThresholdGranularity::Bin);
  REQUIRE(thr1 == k * thr0);

  // the set of samples above threshold is unchanged
  for (std::size_t i = 0; i < base.size(); ++i) REQUIRE((base[i] > thr0) == (scaled[i] > thr1));
}

TEST_CASE("fleet_fuel_consumption is fuel over distance") {
  auto profiles_from = [](std::vector<std::tuple<double, double, double>> rows) {
    // (fuel L/h, speed km/h, time fraction) packed into synthetic profiles
    std::vector<BinProfile> ps(22);
    for (std::size_t i = 0; i < 22; ++i) ps[i].bin = kAllBins[i];
    std::size_t slot = static_cast<std::size_t>(bin_index(OperatingBin::Bin24));
    for (const auto& [f, v, p] : rows) {
      ps[slot].mean_fuel_rate_lh = f;
      ps[slot].mean_speed_kmh = v;
      ps[slot].time_fraction = p;
      ++slot;
    }
    return ps;
  };

  SECTION("single bin") {
    REQUIRE_THAT(fleet_fuel_consumption(profiles_from({{20, 40, 1.0}})),
                 Catch::Matchers::WithinRel(0.5, 1e-12));
  }
  SECTION("two bins hand evaluation") {
    REQUIRE_THAT(fleet_fuel_consumption(profiles_from({{20, 40, 0.5}, {30, 60, 0.5}})),
                 Catch::Matchers::WithinRel(0.5, 1e-12));
  }
  SECTION("all dwell at standstill is an error") {
    std::vector<BinProfile> ps(22);
    for (std::size_t i = 0; i < 22; ++i) ps[i].bin = kAllBins[i];
    ps[static_cast<std::size_t>(bin_index(OperatingBin::Bin1))] = {OperatingBin::Bin1, 0, 0, 0,
                                                                   0,  0, 2.5, 0.0, 1.0};
    REQUIRE_THROWS_AS(fleet_fuel_consumption(ps), ZeroDistance);
  }
  SECTION("regression fixture: 51.5 L/100km operating point") {
    // fleet-average figure used in the reports; 20.6 L/h at 40 km/h
    const double fc = fleet_fuel_consumption(profiles_from({{20.6, 40, 1.0}}));
    REQUIRE_THAT(fc * 100.0, Catch::Matchers::WithinRel(51.5, 1e-12));
  }
}

TEST_CASE("fuel consumption on generated data equals the generator integrals", "[property]") {
  std::mt19937 rng(53);
  std::uniform_real_distribution<double> speed(5, 80), fuel(5, 40);
  std::vector<Trip> trips;
  double total_fuel_l = 0, total_dist_km = 0;
  for (int k = 0; k < 6; ++k) {
    Trip t;
    t.vehicle_id = "V1";
    for (int i = 0; i < 200; ++i) {
      ObmRecord r;
      r.timestamp = k * 1e5 + i * 10.0;
      r.speed_kmh = speed(rng);
      r.fuel_rate_lh = fuel(rng);
      r.maf_kgh = 300;
      r.nox_ppm = 400;
      r.accel_ms2 = 0.1;
      t.records.push_back(r);
    }
    // generator's own integrals over the same dwell convention (10 s steps,
    // last record carries no dwell)
    for (std::size_t i = 0; i + 1 < t.records.size(); ++i) {
      total_fuel_l += t.records[i].fuel_rate_lh * 10.0 / 3600.0;
      total_dist_km += t.records[i].speed_kmh * 10.0 / 3600.0;
    }
    compute_trip_quality(t);
    trips.push_back(t);
  }
  const double fc = fleet_fuel_consumption(build_profiles(trips));
  REQUIRE_THAT(fc, Catch::Matchers::WithinRel(total_fuel_l / total_dist_km, 1e-2));
}

TEST_CASE("per-vehicle mean mode averages vehicles, not samples") {
  // V1: many samples at 0.004; V2: few samples at 0.010
  auto t1 = make_trip(std::vector<double>(90, 0.004), 50, 0.65, 20, "V1", 0);
  auto t2 = make_trip(std::vector<double>(10, 0.010), 50, 0.65, 20, "V2", 50000);
  ProfileAccumulator acc;
  acc.add(t1);
  acc.add(t2);
  const auto sample = acc.profiles(RatioMeanMode::SampleWeighted);
  const auto per_vehicle = acc.profiles(RatioMeanMode::PerVehicle);
  const auto idx = static_cast<std::size_t>(bin_index(OperatingBin::Bin28));
  REQUIRE_THAT(sample[idx].mean_ratio,
               Catch::Matchers::WithinRel((90 * 0.004 + 10 * 0.010) / 100.0, 1e-9));
  REQUIRE_THAT(per_vehicle[idx].mean_ratio, Catch::Matchers::WithinRel(0.007, 1e-9));
}

TEST_CASE("pattern_histogram projects ordered time fractions") {
  SECTION("concentrated input has its mode at the dominant bin") {
    auto a = make_trip(std::vector<double>(200, 0.004), 50, 0.65, 20, "V1", 0);     // Bin28
    auto b = make_trip(std::vector<double>(20, 0.006), 40, 0.0, 20, "V1", 90000);   // Bin24
    const auto hist = pattern_histogram(build_profiles({a, b}));
    REQUIRE(hist.size() == 22);
    auto mode = std::max_element(hist.begin(), hist.end(),
                                 [](const auto& x, const auto& y) { return x.second < y.second; });
    REQUIRE(mode->first == OperatingBin::Bin28);
  }
  SECTION("empty profile set yields an empty report") {
    REQUIRE(pattern_histogram({}).empty());
  }
}
