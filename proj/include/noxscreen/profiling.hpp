#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "noxscreen/binning.hpp"
#include "noxscreen/emissions.hpp"
#include "noxscreen/ingest.hpp"

namespace noxscreen {

struct EmptyInput : std::runtime_error {
  EmptyInput() : std::runtime_error("no records contributed to the profile") {}
};
struct ZeroDistance : std::domain_error {
  ZeroDistance() : std::domain_error("fleet fuel consumption undefined: no distance covered") {}
};
struct InsufficientData : std::runtime_error {
  InsufficientData() : std::runtime_error("no bin reaches the minimum sample count") {}
};

/// Fleet statistics of NOx/CO2 for one operating bin. mean/median/quartiles
/// are over per-record ratio samples; fuel rate and speed means are dwell-time
/// weighted so that the fuel-consumption identity holds exactly.
struct BinProfile {
  OperatingBin bin = OperatingBin::Bin0;
  std::size_t n = 0;  // ratio samples
  double mean_ratio = 0;
  double median_ratio = 0;
  double p25 = 0;
  double p75 = 0;
  double mean_fuel_rate_lh = 0;
  double mean_speed_kmh = 0;
  double time_fraction = 0;
};

/// How the per-bin "average" NOx/CO2 is formed: over all samples pooled, or
/// as the mean of per-vehicle means.
enum class RatioMeanMode { SampleWeighted, PerVehicle };

namespace detail {

inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return 0.0;
  if (sorted.size() == 1) return sorted[0];
  const double h = p * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(h);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double w = h - static_cast<double>(lo);
  return sorted[lo] * (1.0 - w) + sorted[hi] * w;
}

}  // namespace detail

/// Commutative-associative fold over trip records; partial accumulators built
/// in parallel merge in any order.
class ProfileAccumulator {
 public:
  explicit ProfileAccumulator(FuelConstants fuel = {}, VspParams vsp = {}, double dwell_cap_s = 12.0)
      : fuel_(fuel), vsp_(vsp), dwell_cap_s_(dwell_cap_s) {}

  /// Folds one accepted trip. Invalid records are excluded entirely; valid
  /// records with zero fuel rate contribute dwell time but no ratio sample.
  /// Dwell is the interval to the next record, capped so data gaps cannot
  /// inflate a bin's time share; the last record of a trip has no dwell.
  void add(const Trip& trip) {
    const auto& recs = trip.records;
    for (std::size_t i = 0; i < recs.size(); ++i) {
      const ObmRecord& r = recs[i];
      if (!r.valid) continue;
      const OperatingBin bin = classify_motion(r.speed_kmh, r.accel_ms2, vsp_);
      BinAgg& agg = bins_[bin_index(bin)];
      double dwell = 0.0;
      if (i + 1 < recs.size())
        dwell = std::min(recs[i + 1].timestamp - r.timestamp, dwell_cap_s_);
      if (dwell > 0) {
        agg.dwell_s += dwell;
        agg.fuel_dwell += r.fuel_rate_lh * dwell;
        agg.speed_dwell += r.speed_kmh * dwell;
      }
      if (r.fuel_rate_lh > 0) {
        agg.ratios.push_back(obm_ratio(r.nox_ppm, r.maf_kgh, r.fuel_rate_lh, fuel_));
        auto& per_vehicle = agg.vehicle_sums[trip.vehicle_id];
        per_vehicle.first += agg.ratios.back();
        per_vehicle.second += 1;
      }
      contributed_ = true;
    }
  }

  void merge(const ProfileAccumulator& other) {
    for (std::size_t i = 0; i < bins_.size(); ++i) {
      const BinAgg& src = other.bins_[i];
      BinAgg& dst = bins_[i];
      dst.ratios.insert(dst.ratios.end(), src.ratios.begin(), src.ratios.end());
      dst.dwell_s += src.dwell_s;
      dst.fuel_dwell += src.fuel_dwell;
      dst.speed_dwell += src.speed_dwell;
      for (const auto& [veh, sum] : src.vehicle_sums) {
        auto& d = dst.vehicle_sums[veh];
        d.first += sum.first;
        d.second += sum.second;
      }
    }
    contributed_ = contributed_ || other.contributed_;
  }

  bool empty() const { return !contributed_; }

  std::vector<BinProfile> profiles(RatioMeanMode mode = RatioMeanMode::SampleWeighted) const {
    if (!contributed_) throw EmptyInput();
    double total_dwell = 0;
    for (const auto& b : bins_) total_dwell += b.dwell_s;

    std::vector<BinProfile> out(kAllBins.size());
    for (std::size_t i = 0; i < kAllBins.size(); ++i) {
      const BinAgg& agg = bins_[i];
      BinProfile& p = out[i];
      p.bin = kAllBins[i];
      p.n = agg.ratios.size();
      if (p.n) {
        std::vector<double> sorted = agg.ratios;
        std::sort(sorted.begin(), sorted.end());
        p.median_ratio = detail::quantile_sorted(sorted, 0.50);
        p.p25 = detail::quantile_sorted(sorted, 0.25);
        p.p75 = detail::quantile_sorted(sorted, 0.75);
        if (mode == RatioMeanMode::SampleWeighted) {
          double sum = 0;
          for (double v : agg.ratios) sum += v;
          p.mean_ratio = sum / static_cast<double>(p.n);
        } else {
          double sum = 0;
          for (const auto& [veh, s] : agg.vehicle_sums) sum += s.first / static_cast<double>(s.second);
          p.mean_ratio = sum / static_cast<double>(agg.vehicle_sums.size());
        }
      }
      if (agg.dwell_s > 0) {
        p.mean_fuel_rate_lh = agg.fuel_dwell / agg.dwell_s;
        p.mean_speed_kmh = agg.speed_dwell / agg.dwell_s;
      }
      p.time_fraction = total_dwell > 0 ? agg.dwell_s / total_dwell : 0.0;
    }
    return out;
  }

 private:
  struct BinAgg {
    std::vector<double> ratios;
    std::map<std::string, std::pair<double, std::size_t>> vehicle_sums;  // sum, count
    double dwell_s = 0;
    double fuel_dwell = 0;   // (L/h)*s
    double speed_dwell = 0;  // (km/h)*s
  };

  std::array<BinAgg, 22> bins_{};
  FuelConstants fuel_;
  VspParams vsp_;
  double dwell_cap_s_;
  bool contributed_ = false;
};

inline std::vector<BinProfile> build_profiles(const std::vector<Trip>& trips, const FuelConstants& fuel = {},
                                              const VspParams& vsp = {},
                                              RatioMeanMode mode = RatioMeanMode::SampleWeighted,
                                              double dwell_cap_s = 12.0) {
  ProfileAccumulator acc(fuel, vsp, dwell_cap_s);
  for (const auto& t : trips) acc.add(t);
  return acc.profiles(mode);
}

// ---------------------------------------------------------------------------
// Thresholds

enum class ThresholdGranularity { SpeedRange, Bin };

inline int range_slot(SpeedRange r) {
  switch (r) {
    case SpeedRange::Low: return 0;
    case SpeedRange::Medium: return 1;
    case SpeedRange::High: return 2;
    default: return -1;  // braking/idle carry no screening threshold
  }
}

/// High-emitter cut points: multiplier x mean NOx/CO2 per bin, with a pooled
/// speed-range threshold as the fallback for sparse bins. Immutable once
/// derived.
struct ThresholdTable {
  double multiplier = 2.0;
  std::size_t min_samples = 100;
  std::string provenance;

  std::array<std::optional<double>, 22> bin_thresholds{};  // fallback already applied
  std::array<std::size_t, 22> bin_samples{};
  std::array<std::optional<double>, 3> range_thresholds{};  // low, medium, high
  std::array<std::size_t, 3> range_samples{};

  std::optional<double> threshold_for(OperatingBin bin, ThresholdGranularity g) const {
    if (g == ThresholdGranularity::Bin) return bin_thresholds[bin_index(bin)];
    const int slot = range_slot(speed_range(bin));
    return slot < 0 ? std::nullopt : range_thresholds[static_cast<std::size_t>(slot)];
  }
};

/// Derives the cut-point table from bin profiles. Bins with n >= min_samples
/// get multiplier x their own mean; other bins inherit the sample-weighted
/// speed-range threshold. Fails if no bin reaches min_samples.
inline ThresholdTable derive_thresholds(const std::vector<BinProfile>& profiles, double multiplier = 2.0,
                                        std::size_t min_samples = 100, std::string provenance = {}) {
  if (profiles.empty()) throw EmptyInput();
  ThresholdTable t;
  t.multiplier = multiplier;
  t.min_samples = min_samples;
  t.provenance = std::move(provenance);

  std::array<double, 3> range_weighted_sum{};
  bool any_rich = false;
  for (const auto& p : profiles) {
    const int i = bin_index(p.bin);
    t.bin_samples[static_cast<std::size_t>(i)] = p.n;
    if (p.n >= min_samples) {
      t.bin_thresholds[static_cast<std::size_t>(i)] = multiplier * p.mean_ratio;
      any_rich = true;
    }
    const int slot = range_slot(speed_range(p.bin));
    if (slot >= 0) {
      range_weighted_sum[static_cast<std::size_t>(slot)] += p.mean_ratio * static_cast<double>(p.n);
      t.range_samples[static_cast<std::size_t>(slot)] += p.n;
    }
  }
  if (!any_rich) throw InsufficientData();

  for (std::size_t s = 0; s < 3; ++s) {
    if (t.range_samples[s] >= min_samples)
      t.range_thresholds[s] = multiplier * range_weighted_sum[s] / static_cast<double>(t.range_samples[s]);
  }
  // Sparse speed-class bins inherit their range threshold.
  for (const auto& p : profiles) {
    const int i = bin_index(p.bin);
    if (t.bin_thresholds[static_cast<std::size_t>(i)]) continue;
    const int slot = range_slot(speed_range(p.bin));
    if (slot >= 0) t.bin_thresholds[static_cast<std::size_t>(i)] = t.range_thresholds[static_cast<std::size_t>(slot)];
  }
  return t;
}

// ---------------------------------------------------------------------------
// Fleet fuel consumption and driving-pattern report

/// Time-averaged fuel rate over time-averaged speed, in L/km. This
/// ratio-of-sums form is finite at idle and equals total fuel / total
/// distance exactly on dwell-consistent data.
inline double fleet_fuel_consumption(const std::vector<BinProfile>& profiles) {
  double fuel = 0, dist = 0;
  for (const auto& p : profiles) {
    fuel += p.mean_fuel_rate_lh * p.time_fraction;
    dist += p.mean_speed_kmh * p.time_fraction;
  }
  if (dist <= 0) throw ZeroDistance();
  return fuel / dist;
}

/// Per-range fuel consumption (L/km) for configs that want range-resolved
/// distance factors; slots follow range_slot order (low, medium, high).
inline std::array<std::optional<double>, 3> range_fuel_consumption(const std::vector<BinProfile>& profiles) {
  std::array<double, 3> fuel{}, dist{};
  for (const auto& p : profiles) {
    const int slot = range_slot(speed_range(p.bin));
    if (slot < 0) continue;
    fuel[static_cast<std::size_t>(slot)] += p.mean_fuel_rate_lh * p.time_fraction;
    dist[static_cast<std::size_t>(slot)] += p.mean_speed_kmh * p.time_fraction;
  }
  std::array<std::optional<double>, 3> out{};
  for (std::size_t s = 0; s < 3; ++s)
    if (dist[s] > 0) out[s] = fuel[s] / dist[s];
  return out;
}

/// Ordered (bin, time share) projection of the profiles.
inline std::vector<std::pair<OperatingBin, double>> pattern_histogram(const std::vector<BinProfile>& profiles) {
  std::vector<std::pair<OperatingBin, double>> out;
  out.reserve(profiles.size());
  for (const auto& p : profiles) out.emplace_back(p.bin, p.time_fraction);
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return bin_number(a.first) < bin_number(b.first); });
  return out;
}

}  // namespace noxscreen
