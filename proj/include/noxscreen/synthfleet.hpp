#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "noxscreen/binning.hpp"
#include "noxscreen/emissions.hpp"
#include "noxscreen/factors.hpp"
#include "noxscreen/ingest.hpp"
#include "noxscreen/reduction_map.hpp"
#include "noxscreen/timestamp.hpp"

#include "json.hpp"

namespace noxscreen {

struct InvalidSpec : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Deterministic RNG. Draws are spelled out here rather than taken from
// <random> distributions so that output bytes do not depend on the standard
// library implementation. Each vehicle gets its own stream, so generation
// order (or worker parallelism) cannot change the data.

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  double u01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

  /// Unit-mean lognormal with the given relative standard deviation.
  double lognormal_unit_mean(double rel_std) {
    if (rel_std <= 0) return 1.0;
    const double sigma2 = std::log(1.0 + rel_std * rel_std);
    const double sigma = std::sqrt(sigma2);
    const double u1 = std::max(u01(), 1e-300);
    const double u2 = u01();
    const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    return std::exp(-0.5 * sigma2 + sigma * z);
  }

  std::size_t index(std::size_t n) { return static_cast<std::size_t>(next() % n); }

 private:
  std::uint64_t state_;
};

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  Rng r(seed ^ (0x5851f42d4c957f2dull * (stream + 1)));
  return r.next();
}

// ---------------------------------------------------------------------------
// Drive cycle

/// One linear speed ramp; acceleration is its constant slope.
struct DriveCyclePhase {
  double duration_s = 0;
  double v0_kmh = 0;
  double v1_kmh = 0;
};

inline double cycle_duration(const std::vector<DriveCyclePhase>& cycle) {
  double d = 0;
  for (const auto& p : cycle) d += p.duration_s;
  return d;
}

/// Speed at offset t; boundaries belong to the starting phase.
inline double cycle_speed(const std::vector<DriveCyclePhase>& cycle, double t) {
  double at = 0;
  for (const auto& p : cycle) {
    if (t < at + p.duration_s) {
      const double w = (t - at) / p.duration_s;
      return p.v0_kmh + (p.v1_kmh - p.v0_kmh) * w;
    }
    at += p.duration_s;
  }
  return cycle.empty() ? 0.0 : cycle.back().v1_kmh;
}

/// Default urban slag-truck cycle: 31 minutes spanning idle, stop-and-go low
/// speed, medium cruise, highway and a hard braking event. Phase starts are
/// aligned to the 10 s reporting cadence; the short "probe" phases are 20 s so
/// that their middle record sees the phase slope exactly even through the
/// central-difference acceleration estimate.
inline std::vector<DriveCyclePhase> default_drive_cycle() {
  // comments give the mid-record state each 20 s probe phase is tuned for
  return {
      {140, 0.3, 0.3},    // idle -> Bin1
      {40, 0.3, 20},      // pull away
      {160, 20, 20},      // low cruise -> Bin14
      {20, 20, 32.6},     // mid 26.3 @ 0.175 -> Bin15
      {20, 32.6, 24},     // mid 28.3 @ -0.12 -> Bin13
      {40, 24, 24},       // low cruise
      {20, 24, 40.1},     // mid 32.1 @ 0.22 -> Bin25
      {20, 40.1, 9.9},    // mid 25.0 @ -0.42 -> Bin12
      {20, 9.9, 26},      // mid 18.0 @ 0.22 -> Bin14
      {20, 26, 52.5},     // mid 39.3 @ 0.37 -> Bin26
      {20, 52.5, 3.5},    // mid 28.0 @ -0.68 -> Bin11 (start record -> Bin21)
      {20, 3.5, 8.7},     // creep
      {20, 8.7, 43.3},    // mid 26.0 @ 0.48 -> Bin16
      {30, 43.3, 40},     // settle -> Bin24
      {240, 40, 40},      // medium cruise, screening window -> Bin24
      {20, 40, 45.4},     // mid 42.7 @ 0.075 -> Bin25
      {20, 45.4, 45.4},   // cruise -> Bin24
      {20, 45.4, 54.4},   // mid 49.9 @ 0.125 -> Bin25
      {20, 54.4, 50},     // mid 52.2 @ -0.06 -> Bin24
      {60, 50, 50},       // cruise -> Bin25
      {20, 50, 64.4},     // mid 57.2 @ 0.2 -> Bin26
      {80, 64.4, 64.4},   // high cruise, screening window -> Bin35
      {20, 64.4, 61},     // mid 62.7 @ -0.05 -> Bin35
      {20, 61, 46.6},     // mid 53.8 @ -0.2 -> Bin23
      {20, 46.6, 50},     // mid 48.3 @ 0.05 -> Bin25
      {60, 50, 50},       // cruise -> Bin25
      {20, 50, 57.2},     // mid 53.6 @ 0.1 -> Bin25
      {20, 57.2, 62.6},   // mid 59.9 @ 0.075 -> Bin26
      {20, 62.6, 37.4},   // mid 50.0 @ -0.35 -> Bin22
      {20, 37.4, 62.6},   // mid 50.0 @ 0.35 -> Bin27
      {20, 62.6, 22.3},   // mid 42.5 @ -0.56 -> Bin21
      {20, 22.3, 40},     // mid 31.2 @ 0.25 -> Bin25
      {40, 40, 40},       // cruise
      {20, 40, 32},       // mid 36.0 @ -0.11 -> Bin24
      {20, 32, 68},       // mid 50.0 @ 0.5 -> Bin28
      {20, 68, 61.8},     // mid 64.9 @ -0.09 -> Bin34
      {160, 61.8, 61.8},  // high cruise, screening window -> Bin35
      {20, 61.8, 68.4},   // mid 65.1 @ 0.09 -> Bin36
      {20, 68.4, 70.2},   // mid 69.3 @ 0.025 -> Bin36
      {40, 70.2, 70.2},   // high cruise -> Bin36
      {20, 70.2, 75.6},   // mid 72.9 @ 0.075 -> Bin37
      {20, 75.6, 86.4},   // mid 81.0 @ 0.15 -> Bin38
      {20, 86.4, 90},     // mid 88.2 @ 0.05 -> Bin38
      {20, 90, 18},       // mid 54.0 @ -1.0 -> Bin0 (braking)
      {20, 18, 18},       // recover -> Bin14
      {20, 18, 10.8},     // mid 14.4 @ -0.1 -> Bin13
      {40, 10.8, 68.6},   // climb back to highway
      {20, 68.6, 61.4},   // mid 65.0 @ -0.1 -> Bin34
      {20, 61.4, 77.6},   // mid 69.5 @ 0.225 -> Bin38
      {20, 77.6, 52.4},   // mid 65.0 @ -0.35 -> Bin33
      {20, 52.4, 18},     // mid 35.2 @ -0.48 -> Bin22
      {40, 18, 0.3},      // roll to stop
      {200, 0.3, 0.3},    // idle tail -> Bin1
  };
}

/// Typical NOx/CO2 per bin for normally behaving China V trucks: highest at
/// idle and low load, declining as VSP rises in the medium and high speed
/// classes, flat-ish at low speed.
inline std::array<double, 22> default_bin_ratios() {
  std::array<double, 22> r{};
  auto set = [&](OperatingBin b, double v) { r[static_cast<std::size_t>(bin_index(b))] = v; };
  set(OperatingBin::Bin0, 0.0065);
  set(OperatingBin::Bin1, 0.0070);
  set(OperatingBin::Bin11, 0.0060);
  set(OperatingBin::Bin12, 0.0058);
  set(OperatingBin::Bin13, 0.0061);
  set(OperatingBin::Bin14, 0.0059);
  set(OperatingBin::Bin15, 0.0062);
  set(OperatingBin::Bin16, 0.0057);
  set(OperatingBin::Bin21, 0.0068);
  set(OperatingBin::Bin22, 0.0065);
  set(OperatingBin::Bin23, 0.0062);
  set(OperatingBin::Bin24, 0.0059);
  set(OperatingBin::Bin25, 0.0056);
  set(OperatingBin::Bin26, 0.0053);
  set(OperatingBin::Bin27, 0.0050);
  set(OperatingBin::Bin28, 0.0047);
  set(OperatingBin::Bin33, 0.0062);
  set(OperatingBin::Bin34, 0.0058);
  set(OperatingBin::Bin35, 0.0054);
  set(OperatingBin::Bin36, 0.0050);
  set(OperatingBin::Bin37, 0.0046);
  set(OperatingBin::Bin38, 0.0043);
  return r;
}

// ---------------------------------------------------------------------------
// Fleet specification

struct FleetSpec {
  std::size_t n_vehicles = 100;
  double he_fraction = 0.07;
  double he_ratio_multiplier = 3.0;  // HE mean NOx/CO2 vs NBV, per bin
  std::vector<DriveCyclePhase> drive_cycle = default_drive_cycle();
  std::array<double, 22> nbv_bin_ratio = default_bin_ratios();

  double ratio_noise_rel = 0.10;  // lognormal relative std per ratio draw
  double speed_jitter_kmh = 0.05;
  double fuel_jitter_rel = 0.02;
  double dropout = 0.0;  // per-record loss probability
  std::uint64_t seed = 1;
  double cadence_s = 10.0;
  int rsd_passes_per_vehicle = 6;
  double no2_fraction = 0.40;        // must match the analysis config
  double co2_plume_ppm = 130000;     // synthesizes absolute NO from the ratio
  double co2_plume_noise_rel = 0.30;

  // city box and timing
  double box_lat_lo = 30.50, box_lat_hi = 30.75;
  double box_lon_lo = 103.90, box_lon_hi = 104.15;
  int utc_offset_min = 480;
  int second_trip_day = 40;  // day offset of the night trip

  std::size_t vehicles_per_obm_file = 100;
};

inline void validate(const FleetSpec& s) {
  auto fail = [](const std::string& m) { throw InvalidSpec(m); };
  if (s.n_vehicles == 0) fail("n_vehicles must be positive");
  if (!(s.he_fraction >= 0 && s.he_fraction <= 1)) fail("he_fraction must lie in [0, 1]");
  if (!(s.he_ratio_multiplier >= 1)) fail("he_ratio_multiplier must be >= 1");
  if (s.drive_cycle.empty()) fail("drive_cycle must not be empty");
  if (!(s.dropout >= 0 && s.dropout <= 0.8)) fail("dropout must lie in [0, 0.8]");
  if (!(s.cadence_s > 0)) fail("cadence_s must be positive");
  if (!(s.ratio_noise_rel >= 0 && s.fuel_jitter_rel >= 0 && s.speed_jitter_kmh >= 0))
    fail("noise parameters must be non-negative");
  if (!(s.no2_fraction > 0 && s.no2_fraction < 1)) fail("no2_fraction must lie in (0, 1)");
  if (!(s.box_lat_hi > s.box_lat_lo && s.box_lon_hi > s.box_lon_lo)) fail("city box is degenerate");
  if (s.rsd_passes_per_vehicle < 0) fail("rsd_passes_per_vehicle must be >= 0");
  for (const auto& p : s.drive_cycle)
    if (!(p.duration_s > 0) || p.v0_kmh < 0 || p.v1_kmh < 0) fail("drive cycle phase out of range");
  for (double r : s.nbv_bin_ratio)
    if (!(r > 0)) fail("bin ratios must be positive");
}

// ---------------------------------------------------------------------------
// Ground truth manifest

struct CohortRangeStats {
  double q1 = 0, q2 = 0, q3 = 0;  // realized means; q3 NO2-corrected
  double expected_q3 = 0;         // noise-free mean from the spec parameters
  std::size_t n = 0;
};

struct GroundTruth {
  std::vector<std::string> he_ids;
  std::array<double, 22> nbv_ratio{};            // spec baselines
  std::array<double, 22> expected_fleet_ratio{}; // baseline x cohort mix
  std::array<std::size_t, 22> bin_records{};     // accepted-trip records per bin
  std::array<double, 22> realized_fleet_ratio{};

  double total_fuel_l = 0;
  double total_distance_km = 0;  // speed-integral over capped dwell
  std::array<double, 3> range_distance_km{};     // haversine, all vehicles
  std::array<double, 3> he_range_distance_km{};  // haversine, HE vehicles

  CohortRangeStats rsd[2][3]{};  // [cohort][range slot]

  std::size_t n_vehicles = 0;
  std::size_t n_obm_records = 0;
  std::size_t n_rsd_passes = 0;
  std::size_t n_trips = 0;
  std::size_t n_accepted_trips = 0;
  std::vector<std::string> expected_rejected_trips;  // "vehicle#tripindex"

  double fc_l_per_km = 0;
  double analytic_reduction_g = 0;
  double analytic_relative = 0;
};

struct AnalyticReduction {
  double grams = 0;
  double relative = 0;  // of current-level emissions
};

/// Closed-form oracle: expected high-emitter travel times the expected factor
/// delta, from spec parameters and the manifest's activity bookkeeping. Uses
/// the noise-free expected ratios, so a unit multiplier or an empty HE cohort
/// gives exactly zero.
inline AnalyticReduction analytic_reduction(const FleetSpec& spec, const GroundTruth& t) {
  AnalyticReduction out;
  if (t.fc_l_per_km <= 0) return out;
  FuelConstants fuel;
  fuel.no2_fraction = spec.no2_fraction;
  double counterfactual = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    const auto& nbv = t.rsd[0][s];
    const auto& he = t.rsd[1][s];
    if (!nbv.n) continue;
    const double ef_nbv = distance_specific_ef(fuel_specific_ef(nbv.q1, nbv.q2, nbv.expected_q3),
                                               t.fc_l_per_km, fuel);
    counterfactual += t.range_distance_km[s] * ef_nbv;
    if (!he.n) continue;
    const double ef_he =
        distance_specific_ef(fuel_specific_ef(he.q1, he.q2, he.expected_q3), t.fc_l_per_km, fuel);
    out.grams += t.he_range_distance_km[s] * std::max(0.0, ef_he - ef_nbv);
  }
  const double denom = out.grams + counterfactual;
  out.relative = denom > 0 ? out.grams / denom : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Manifest serialization

namespace detail {

inline const char* range_key(std::size_t slot) { return slot == 0 ? "low" : slot == 1 ? "medium" : "high"; }

}  // namespace detail

inline nlohmann::ordered_json manifest_to_json(const GroundTruth& t) {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["he_vehicle_ids"] = t.he_ids;
  j["counts"] = {{"vehicles", t.n_vehicles},
                 {"obm_records", t.n_obm_records},
                 {"rsd_passes", t.n_rsd_passes},
                 {"trips", t.n_trips},
                 {"accepted_trips", t.n_accepted_trips}};
  j["expected_rejected_trips"] = t.expected_rejected_trips;
  nlohmann::ordered_json bins;
  for (std::size_t i = 0; i < 22; ++i) {
    bins[to_string(kAllBins[i])] = {{"nbv_ratio", t.nbv_ratio[i]},
                                    {"expected_fleet_ratio", t.expected_fleet_ratio[i]},
                                    {"realized_fleet_ratio", t.realized_fleet_ratio[i]},
                                    {"records", t.bin_records[i]}};
  }
  j["bins"] = std::move(bins);
  j["totals"] = {{"fuel_l", t.total_fuel_l},
                 {"distance_km", t.total_distance_km},
                 {"fc_l_per_km", t.fc_l_per_km}};
  nlohmann::ordered_json act;
  for (std::size_t s = 0; s < 3; ++s) {
    act[detail::range_key(s)] = {{"distance_km", t.range_distance_km[s]},
                                 {"he_distance_km", t.he_range_distance_km[s]}};
  }
  j["activity"] = std::move(act);
  nlohmann::ordered_json rsd;
  for (std::size_t c = 0; c < 2; ++c) {
    nlohmann::ordered_json side;
    for (std::size_t s = 0; s < 3; ++s) {
      const auto& m = t.rsd[c][s];
      side[detail::range_key(s)] = {
          {"q1", m.q1}, {"q2", m.q2}, {"q3", m.q3}, {"expected_q3", m.expected_q3}, {"n", m.n}};
    }
    rsd[c == 0 ? "nbv" : "he"] = std::move(side);
  }
  j["rsd_means"] = std::move(rsd);
  j["analytic"] = {{"reduction_g", t.analytic_reduction_g}, {"relative_savings", t.analytic_relative}};
  return j;
}

inline GroundTruth manifest_from_json(const nlohmann::json& j) {
  GroundTruth t;
  t.he_ids = j.at("he_vehicle_ids").get<std::vector<std::string>>();
  const auto& counts = j.at("counts");
  t.n_vehicles = counts.at("vehicles").get<std::size_t>();
  t.n_obm_records = counts.at("obm_records").get<std::size_t>();
  t.n_rsd_passes = counts.at("rsd_passes").get<std::size_t>();
  t.n_trips = counts.at("trips").get<std::size_t>();
  t.n_accepted_trips = counts.at("accepted_trips").get<std::size_t>();
  t.expected_rejected_trips = j.at("expected_rejected_trips").get<std::vector<std::string>>();
  for (std::size_t i = 0; i < 22; ++i) {
    const auto& b = j.at("bins").at(to_string(kAllBins[i]));
    t.nbv_ratio[i] = b.at("nbv_ratio").get<double>();
    t.expected_fleet_ratio[i] = b.at("expected_fleet_ratio").get<double>();
    t.realized_fleet_ratio[i] = b.at("realized_fleet_ratio").get<double>();
    t.bin_records[i] = b.at("records").get<std::size_t>();
  }
  t.total_fuel_l = j.at("totals").at("fuel_l").get<double>();
  t.total_distance_km = j.at("totals").at("distance_km").get<double>();
  t.fc_l_per_km = j.at("totals").at("fc_l_per_km").get<double>();
  for (std::size_t s = 0; s < 3; ++s) {
    const auto& a = j.at("activity").at(detail::range_key(s));
    t.range_distance_km[s] = a.at("distance_km").get<double>();
    t.he_range_distance_km[s] = a.at("he_distance_km").get<double>();
  }
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t s = 0; s < 3; ++s) {
      const auto& m = j.at("rsd_means").at(c == 0 ? "nbv" : "he").at(detail::range_key(s));
      auto& dst = t.rsd[c][s];
      dst.q1 = m.at("q1").get<double>();
      dst.q2 = m.at("q2").get<double>();
      dst.q3 = m.at("q3").get<double>();
      dst.expected_q3 = m.at("expected_q3").get<double>();
      dst.n = m.at("n").get<std::size_t>();
    }
  }
  t.analytic_reduction_g = j.at("analytic").at("reduction_g").get<double>();
  t.analytic_relative = j.at("analytic").at("relative_savings").get<double>();
  return t;
}

inline GroundTruth load_manifest(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open manifest: " + p.string());
  nlohmann::json j;
  in >> j;
  return manifest_from_json(j);
}

// ---------------------------------------------------------------------------
// Generation

struct SimulationResult {
  GroundTruth truth;
  std::vector<std::filesystem::path> obm_files;
  std::filesystem::path rsd_file;
  std::filesystem::path manifest_path;
};

namespace detail {

struct VehicleRoute {
  double center_lat = 0, center_lon = 0;
  double radius_m = 3000;
  double angle0 = 0;
  double direction = 1;

  void at(double arc_m, double& lat, double& lon) const {
    const double a = angle0 + direction * arc_m / radius_m;
    const double x = radius_m * std::cos(a);
    const double y = radius_m * std::sin(a);
    lat = center_lat + y / kMetersPerDegLat;
    lon = center_lon + x / (kMetersPerDegLonEq * std::cos(center_lat * kDegToRad));
  }
};

inline double fuel_rate_model(double vsp_kw_per_ton, double speed_kmh) {
  if (speed_kmh < kIdleSpeedKmh) return 2.5;
  return 3.0 + 2.2 * std::max(vsp_kw_per_ton, 0.0) + 0.06 * speed_kmh;
}

inline double air_fuel_ratio_model(double vsp_kw_per_ton) {
  return 22.0 - 0.5 * std::min(std::max(vsp_kw_per_ton, 0.0), 12.0);
}

}  // namespace detail

/// Generates OBM batch files, one RSD pass file and the ground-truth manifest.
/// Identical spec (including seed) gives bitwise-identical output files. The
/// truth bookkeeping runs the same acceleration estimator and bin classifier
/// the analysis pipeline uses, over the same emitted records, so generator
/// bins and pipeline bins coincide by construction.
inline SimulationResult generate(const FleetSpec& spec, const std::filesystem::path& out_dir) {
  validate(spec);
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "obm");
  fs::create_directories(out_dir / "rsd");

  SimulationResult result;
  GroundTruth& truth = result.truth;
  truth.nbv_ratio = spec.nbv_bin_ratio;
  const double cohort_mix = 1.0 + spec.he_fraction * (spec.he_ratio_multiplier - 1.0);
  for (std::size_t i = 0; i < 22; ++i) truth.expected_fleet_ratio[i] = spec.nbv_bin_ratio[i] * cohort_mix;
  truth.n_vehicles = spec.n_vehicles;

  // deterministic HE assignment: seeded Fisher-Yates over the vehicle indices
  const std::size_t he_count =
      static_cast<std::size_t>(std::llround(spec.he_fraction * static_cast<double>(spec.n_vehicles)));
  std::vector<std::size_t> order(spec.n_vehicles);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng shuffle_rng(mix_seed(spec.seed, 0xFEEDu));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.index(i)]);
  std::vector<bool> is_he(spec.n_vehicles, false);
  for (std::size_t k = 0; k < he_count; ++k) is_he[order[k]] = true;

  auto vehicle_name = [&](std::size_t v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "V%05zu", v + 1);
    return std::string(buf);
  };
  for (std::size_t v = 0; v < spec.n_vehicles; ++v)
    if (is_he[v]) truth.he_ids.push_back(vehicle_name(v));

  const double cycle_total = cycle_duration(spec.drive_cycle);
  const double day0_local_midnight_utc =
      static_cast<double>(days_from_civil(2022, 5, 9)) * 86400.0 - spec.utc_offset_min * 60.0;

  const FuelConstants fuel_constants{0.001587, 0.85, 2684.0, spec.no2_fraction};
  const VspParams vsp_params;

  // per-bin realized OBM ratio sums (accepted trips)
  std::array<double, 22> ratio_sum{};
  std::array<std::size_t, 22> ratio_n{};
  // RSD accumulation: realized and expected sums per cohort/range
  struct RsdAgg {
    double q1 = 0, q2 = 0, q3 = 0, expected_q3 = 0;
    std::size_t n = 0;
  };
  RsdAgg rsd_agg[2][3];

  const std::string obm_header = "vehicle_id,timestamp,speed_kmh,nox_ppm,maf_kgh,fuel_rate_lh,lat,lon";
  const std::string rsd_header =
      "vehicle_id,timestamp,site_id,speed_kmh,accel_ms2,no_ppm,co_co2,hc_co2,no_co2,standard,fuel";
  std::string rsd_rows;

  std::ofstream obm_out;
  std::size_t obm_file_index = 0;

  for (std::size_t v = 0; v < spec.n_vehicles; ++v) {
    if (v % spec.vehicles_per_obm_file == 0) {
      if (obm_out.is_open()) obm_out.close();
      char buf[32];
      std::snprintf(buf, sizeof(buf), "batch_%03zu.csv", obm_file_index++);
      const fs::path p = out_dir / "obm" / buf;
      obm_out.open(p, std::ios::binary);
      obm_out << obm_header << '\n';
      result.obm_files.push_back(p);
    }

    Rng rng(mix_seed(spec.seed, v + 1));
    const std::string vid = vehicle_name(v);
    const double multiplier = is_he[v] ? spec.he_ratio_multiplier : 1.0;

    detail::VehicleRoute route;
    const double pad_lat = 5000.0 / kMetersPerDegLat;
    const double pad_lon = 5000.0 / (kMetersPerDegLonEq * std::cos(spec.box_lat_lo * kDegToRad));
    route.center_lat = rng.uniform(spec.box_lat_lo + pad_lat, spec.box_lat_hi - pad_lat);
    route.center_lon = rng.uniform(spec.box_lon_lo + pad_lon, spec.box_lon_hi - pad_lon);
    route.radius_m = rng.uniform(2500, 4500);
    route.angle0 = rng.uniform(0, 6.283185307179586);
    route.direction = rng.u01() < 0.5 ? -1.0 : 1.0;

    const double day_start =
        day0_local_midnight_utc + 9.0 * 3600.0 + std::floor(rng.uniform(0, 9000));
    const double night_start = day0_local_midnight_utc + spec.second_trip_day * 86400.0 +
                               21.0 * 3600.0 + std::floor(rng.uniform(0, 5400));

    struct Sample {
      OperatingBin bin;
      double speed_kmh, accel_ms2, timestamp, ratio;
    };
    std::vector<Sample> rsd_candidates;

    for (int trip_idx = 0; trip_idx < 2; ++trip_idx) {
      const double t0 = trip_idx == 0 ? day_start : night_start;
      Trip trip;
      trip.vehicle_id = vid;
      double arc = 0;
      for (double t = 0; t <= cycle_total + 1e-9; t += spec.cadence_s) {
        const double v_true = cycle_speed(spec.drive_cycle, t);
        const double v_emit = std::max(0.0, v_true + spec.speed_jitter_kmh * (2.0 * rng.u01() - 1.0));
        const bool keep = spec.dropout <= 0 || rng.u01() >= spec.dropout;
        if (keep) {
          ObmRecord r;
          r.vehicle_id = vid;
          r.timestamp = t0 + t;
          r.speed_kmh = v_emit;
          route.at(arc, r.lat, r.lon);
          trip.records.push_back(r);
        }
        arc += kmh_to_ms(v_emit) * spec.cadence_s;
      }
      ++truth.n_trips;
      compute_trip_quality(trip);
      const bool accepted = trip.records.size() >= 3 &&
                            trip.end - trip.start >= 1800.0 && trip.gap_fraction <= 0.30;
      if (!accepted)
        truth.expected_rejected_trips.push_back(vid + "#" + std::to_string(trip_idx));
      if (trip.records.size() >= 3) estimate_acceleration(trip);

      // channels are derived from the same accelerations the pipeline will
      // estimate, so the bookkept bin is the pipeline's bin
      for (std::size_t i = 0; i < trip.records.size(); ++i) {
        ObmRecord& r = trip.records[i];
        const double w = vsp(kmh_to_ms(r.speed_kmh), r.accel_ms2, vsp_params);
        const OperatingBin bin = classify(r.speed_kmh, r.accel_ms2, w);
        r.fuel_rate_lh = detail::fuel_rate_model(w, r.speed_kmh) *
                         (1.0 + spec.fuel_jitter_rel * (2.0 * rng.u01() - 1.0));
        r.maf_kgh = detail::air_fuel_ratio_model(w) * r.fuel_rate_lh * fuel_constants.rho_kg_per_l *
                    (1.0 + 0.01 * (2.0 * rng.u01() - 1.0));
        double ratio = spec.nbv_bin_ratio[static_cast<std::size_t>(bin_index(bin))] * multiplier *
                       rng.lognormal_unit_mean(spec.ratio_noise_rel);
        r.nox_ppm = ratio * r.fuel_rate_lh * fuel_constants.beta_g_per_l /
                    (fuel_constants.mu * (r.maf_kgh + r.fuel_rate_lh * fuel_constants.rho_kg_per_l));
        if (r.nox_ppm > 4999.0) {  // stay inside the validity envelope
          r.nox_ppm = 4999.0;
          ratio = obm_ratio(r.nox_ppm, r.maf_kgh, r.fuel_rate_lh, fuel_constants);
        }

        if (accepted) {
          const std::size_t bi = static_cast<std::size_t>(bin_index(bin));
          ratio_sum[bi] += ratio;
          ratio_n[bi] += 1;
          truth.bin_records[bi] += 1;
          if (i + 1 < trip.records.size()) {
            const double dwell = std::min(trip.records[i + 1].timestamp - r.timestamp, 12.0);
            truth.total_fuel_l += r.fuel_rate_lh * dwell / 3600.0;
            truth.total_distance_km += r.speed_kmh * dwell / 3600.0;
            const int slot = range_slot(speed_range(bin));
            if (slot >= 0) {
              const ObmRecord& nxt = trip.records[i + 1];
              const double seg_km = haversine_km(r.lat, r.lon, nxt.lat, nxt.lon);
              truth.range_distance_km[static_cast<std::size_t>(slot)] += seg_km;
              if (is_he[v]) truth.he_range_distance_km[static_cast<std::size_t>(slot)] += seg_km;
            }
          }
          if (r.speed_kmh >= 35.0 && r.speed_kmh <= 78.0 && r.accel_ms2 >= -0.45 &&
              r.accel_ms2 <= 0.55)
            rsd_candidates.push_back({bin, r.speed_kmh, r.accel_ms2, r.timestamp, 0.0});
        }
      }
      if (accepted) ++truth.n_accepted_trips;

      for (const auto& r : trip.records) {
        obm_out << r.vehicle_id << ',' << format_iso_utc(r.timestamp) << ','
                << format_double(r.speed_kmh) << ',' << format_double(r.nox_ppm) << ','
                << format_double(r.maf_kgh) << ',' << format_double(r.fuel_rate_lh) << ','
                << format_double(r.lat) << ',' << format_double(r.lon) << '\n';
        ++truth.n_obm_records;
      }
    }

    // RSD passes: sample distinct instants from this vehicle's accepted trips
    const std::size_t want = std::min(rsd_candidates.size(),
                                      static_cast<std::size_t>(spec.rsd_passes_per_vehicle));
    for (std::size_t k = 0; k < want; ++k) {  // partial Fisher-Yates
      const std::size_t j = k + rng.index(rsd_candidates.size() - k);
      std::swap(rsd_candidates[k], rsd_candidates[j]);
    }
    for (std::size_t k = 0; k < want; ++k) {
      auto& s = rsd_candidates[k];
      const std::size_t bi = static_cast<std::size_t>(bin_index(s.bin));
      const double expected_ratio = spec.nbv_bin_ratio[bi] * multiplier;
      s.ratio = expected_ratio * rng.lognormal_unit_mean(spec.ratio_noise_rel);
      const double q1 = 0.02 * (1.0 + 0.1 * (2.0 * rng.u01() - 1.0));
      const double q2 = 0.001 * (1.0 + 0.1 * (2.0 * rng.u01() - 1.0));
      const double q3_raw = s.ratio * (1.0 - spec.no2_fraction);
      const double co2_ppm = spec.co2_plume_ppm * rng.lognormal_unit_mean(spec.co2_plume_noise_rel);
      const double no_ppm = q3_raw * co2_ppm;
      const char* site = rng.u01() < 0.3 ? "RSD-1" : "RSD-2";

      rsd_rows += vid + ',' + format_iso_utc(s.timestamp) + ',' + site + ',' +
                  format_double(s.speed_kmh) + ',' + format_double(s.accel_ms2) + ',' +
                  format_double(no_ppm) + ',' + format_double(q1) + ',' + format_double(q2) + ',' +
                  format_double(q3_raw) + ",ChinaV,Diesel\n";
      ++truth.n_rsd_passes;

      const int slot = range_slot(speed_range(s.bin));
      if (slot >= 0) {
        RsdAgg& agg = rsd_agg[is_he[v] ? 1 : 0][static_cast<std::size_t>(slot)];
        agg.q1 += q1;
        agg.q2 += q2;
        agg.q3 += s.ratio;
        agg.expected_q3 += expected_ratio;
        agg.n += 1;
      }
    }
  }
  if (obm_out.is_open()) obm_out.close();

  result.rsd_file = out_dir / "rsd" / "passes.csv";
  {
    std::ofstream out(result.rsd_file, std::ios::binary);
    out << rsd_header << '\n' << rsd_rows;
  }

  for (std::size_t i = 0; i < 22; ++i)
    truth.realized_fleet_ratio[i] = ratio_n[i] ? ratio_sum[i] / static_cast<double>(ratio_n[i]) : 0.0;
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t s = 0; s < 3; ++s) {
      const RsdAgg& a = rsd_agg[c][s];
      auto& dst = truth.rsd[c][s];
      dst.n = a.n;
      if (a.n) {
        const double n = static_cast<double>(a.n);
        dst.q1 = a.q1 / n;
        dst.q2 = a.q2 / n;
        dst.q3 = a.q3 / n;
        dst.expected_q3 = a.expected_q3 / n;
      }
    }
  }
  truth.fc_l_per_km = truth.total_distance_km > 0 ? truth.total_fuel_l / truth.total_distance_km : 0.0;
  const AnalyticReduction ar = analytic_reduction(spec, truth);
  truth.analytic_reduction_g = ar.grams;
  truth.analytic_relative = ar.relative;

  result.manifest_path = out_dir / "manifest.json";
  {
    std::ofstream out(result.manifest_path, std::ios::binary);
    out << manifest_to_json(truth).dump(2) << '\n';
  }
  return result;
}

// ---------------------------------------------------------------------------
// Spec file I/O

inline FleetSpec fleet_spec_from_json(const nlohmann::json& j) {
  FleetSpec s;
  auto get = [&](const char* key, auto& dst) {
    if (j.contains(key)) dst = j.at(key).get<std::decay_t<decltype(dst)>>();
  };
  get("n_vehicles", s.n_vehicles);
  get("he_fraction", s.he_fraction);
  get("he_ratio_multiplier", s.he_ratio_multiplier);
  get("ratio_noise_rel", s.ratio_noise_rel);
  get("speed_jitter_kmh", s.speed_jitter_kmh);
  get("fuel_jitter_rel", s.fuel_jitter_rel);
  get("dropout", s.dropout);
  get("seed", s.seed);
  get("cadence_s", s.cadence_s);
  get("rsd_passes_per_vehicle", s.rsd_passes_per_vehicle);
  get("no2_fraction", s.no2_fraction);
  get("co2_plume_ppm", s.co2_plume_ppm);
  get("co2_plume_noise_rel", s.co2_plume_noise_rel);
  get("box_lat_lo", s.box_lat_lo);
  get("box_lat_hi", s.box_lat_hi);
  get("box_lon_lo", s.box_lon_lo);
  get("box_lon_hi", s.box_lon_hi);
  get("utc_offset_min", s.utc_offset_min);
  get("second_trip_day", s.second_trip_day);
  get("vehicles_per_obm_file", s.vehicles_per_obm_file);
  if (j.contains("drive_cycle")) {
    s.drive_cycle.clear();
    for (const auto& p : j.at("drive_cycle"))
      s.drive_cycle.push_back({p.at("duration_s").get<double>(), p.at("v0_kmh").get<double>(),
                               p.at("v1_kmh").get<double>()});
  }
  if (j.contains("nbv_bin_ratio")) {
    const auto arr = j.at("nbv_bin_ratio").get<std::vector<double>>();
    if (arr.size() != 22) throw InvalidSpec("nbv_bin_ratio must have 22 entries");
    std::copy(arr.begin(), arr.end(), s.nbv_bin_ratio.begin());
  }
  return s;
}

inline FleetSpec load_fleet_spec(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open fleet spec: " + p.string());
  nlohmann::json j;
  in >> j;
  return fleet_spec_from_json(j);
}

}  // namespace noxscreen
