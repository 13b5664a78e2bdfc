#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "noxscreen/binning.hpp"
#include "noxscreen/factors.hpp"
#include "noxscreen/ingest.hpp"

#include "json.hpp"

namespace noxscreen {

struct OutOfDomain : std::domain_error {
  OutOfDomain() : std::domain_error("coordinate outside WGS84 domain") {}
};

/// Square grid in a local equirectangular projection about the origin
/// latitude. Cell indices are floor divisions of projected meters, so they
/// extend in all four directions from the origin.
struct GridSpec {
  double origin_lat = 0;
  double origin_lon = 0;
  double cell_m = 200.0;
};

inline constexpr double kDegToRad = 3.14159265358979323846 / 180.0;
inline constexpr double kMetersPerDegLat = 110540.0;
inline constexpr double kMetersPerDegLonEq = 111320.0;

struct CellIndex {
  long ix = 0;
  long iy = 0;
  friend bool operator<(const CellIndex& a, const CellIndex& b) {
    return std::tie(a.ix, a.iy) < std::tie(b.ix, b.iy);
  }
  friend bool operator==(const CellIndex& a, const CellIndex& b) { return a.ix == b.ix && a.iy == b.iy; }
};

inline CellIndex project(double lat, double lon, const GridSpec& g) {
  if (!std::isfinite(lat) || !std::isfinite(lon) || lat < -90 || lat > 90 || lon < -180 || lon > 180)
    throw OutOfDomain();
  const double x = (lon - g.origin_lon) * kMetersPerDegLonEq * std::cos(g.origin_lat * kDegToRad);
  const double y = (lat - g.origin_lat) * kMetersPerDegLat;
  return {static_cast<long>(std::floor(x / g.cell_m)), static_cast<long>(std::floor(y / g.cell_m))};
}

/// Inverse of project for a cell corner, used when emitting cell polygons.
inline void cell_corner_latlon(long ix, long iy, const GridSpec& g, double& lat, double& lon) {
  const double x = static_cast<double>(ix) * g.cell_m;
  const double y = static_cast<double>(iy) * g.cell_m;
  lon = g.origin_lon + x / (kMetersPerDegLonEq * std::cos(g.origin_lat * kDegToRad));
  lat = g.origin_lat + y / kMetersPerDegLat;
}

/// Great-circle distance in km (haversine, mean Earth radius).
inline double haversine_km(double lat1, double lon1, double lat2, double lon2) {
  constexpr double kEarthRadiusKm = 6371.0088;
  const double phi1 = lat1 * kDegToRad;
  const double phi2 = lat2 * kDegToRad;
  const double dphi = (lat2 - lat1) * kDegToRad;
  const double dlam = (lon2 - lon1) * kDegToRad;
  const double s1 = std::sin(dphi / 2);
  const double s2 = std::sin(dlam / 2);
  const double a = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

inline double traversal_distance_km(double lat1, double lon1, double lat2, double lon2) {
  return haversine_km(lat1, lon1, lat2, lon2);
}

enum class Period { Day, Night };

inline const char* to_string(Period p) { return p == Period::Day ? "day" : "night"; }

/// Day/night split at fixed local hours; the timezone is a configured fixed
/// offset (the source standard carries no zone information).
struct DayWindow {
  int day_start_hour = 8;
  int day_end_hour = 20;  // [start, end)
  int utc_offset_min = 480;

  Period period_of(double utc_s) const {
    double local = std::fmod(utc_s + utc_offset_min * 60.0, 86400.0);
    if (local < 0) local += 86400.0;
    const int hour = static_cast<int>(local / 3600.0);
    return (hour >= day_start_hour && hour < day_end_hour) ? Period::Day : Period::Night;
  }
};

struct ReductionCell {
  long ix = 0;
  long iy = 0;
  Period period = Period::Day;
  double distance_km = 0;  // flagged-vehicle travel through the cell
  double reduction_g = 0;
};

struct ReductionTotals {
  double day_reduction_g = 0;
  double night_reduction_g = 0;
  double day_distance_km = 0;    // flagged travel
  double night_distance_km = 0;
  double counterfactual_nbv_g = 0;  // whole fleet re-emitted at NBV factors
  std::size_t segments = 0;
  std::size_t unscreenable_segments = 0;
  std::size_t missing_factor_segments = 0;
  std::size_t fleet_vehicles = 0;
  std::size_t flagged_vehicles = 0;

  double total_reduction_g() const { return day_reduction_g + night_reduction_g; }
  double relative_savings() const {
    const double denom = total_reduction_g() + counterfactual_nbv_g;
    return denom > 0 ? total_reduction_g() / denom : 0.0;
  }
  double per_flagged_vehicle_g() const {
    return flagged_vehicles ? total_reduction_g() / static_cast<double>(flagged_vehicles) : 0.0;
  }
  double per_fleet_vehicle_g() const {
    return fleet_vehicles ? total_reduction_g() / static_cast<double>(fleet_vehicles) : 0.0;
  }
};

/// Mergeable grid of NOx reduction potential. Accumulation is a commutative
/// monoid over trip segments; worker-local grids merge exactly.
class ReductionGrid {
 public:
  struct Key {
    CellIndex cell;
    Period period;
    friend bool operator<(const Key& a, const Key& b) {
      if (a.cell < b.cell) return true;
      if (b.cell < a.cell) return false;
      return static_cast<int>(a.period) < static_cast<int>(b.period);
    }
  };

  void add(const Key& k, double distance_km, double reduction_g) {
    auto& c = cells_[k];
    c.first += distance_km;
    c.second += reduction_g;
  }

  void merge(const ReductionGrid& other) {
    for (const auto& [k, v] : other.cells_) {
      auto& c = cells_[k];
      c.first += v.first;
      c.second += v.second;
    }
    totals_.day_reduction_g += other.totals_.day_reduction_g;
    totals_.night_reduction_g += other.totals_.night_reduction_g;
    totals_.day_distance_km += other.totals_.day_distance_km;
    totals_.night_distance_km += other.totals_.night_distance_km;
    totals_.counterfactual_nbv_g += other.totals_.counterfactual_nbv_g;
    totals_.segments += other.totals_.segments;
    totals_.unscreenable_segments += other.totals_.unscreenable_segments;
    totals_.missing_factor_segments += other.totals_.missing_factor_segments;
    totals_.fleet_vehicles += other.totals_.fleet_vehicles;
    totals_.flagged_vehicles += other.totals_.flagged_vehicles;
  }

  std::vector<ReductionCell> cells() const {
    std::vector<ReductionCell> out;
    out.reserve(cells_.size());
    for (const auto& [k, v] : cells_) out.push_back({k.cell.ix, k.cell.iy, k.period, v.first, v.second});
    return out;  // map order: sorted by (ix, iy, period)
  }

  ReductionTotals& totals() { return totals_; }
  const ReductionTotals& totals() const { return totals_; }

 private:
  std::map<Key, std::pair<double, double>> cells_;  // distance_km, reduction_g
  ReductionTotals totals_;
};

/// Accumulates trip travel onto the grid. Every consecutive-record segment of
/// a flagged vehicle adds haversine distance to the cell of its midpoint in
/// the period of its start timestamp; the reduction is distance times the
/// positive factor delta for the segment's speed range. Segments in braking or
/// idle, or in a range with missing factors, contribute distance but zero
/// reduction and are counted as distinct dispositions. All vehicles (flagged
/// or not) feed the counterfactual NBV-level total that anchors the relative
/// savings figure.
inline ReductionGrid accumulate(const std::vector<Trip>& trips, const std::set<std::string>& flagged,
                                const FactorTable& factors, const GridSpec& grid, const DayWindow& window,
                                const VspParams& vp = {}) {
  ReductionGrid out;
  std::set<std::string> fleet_ids, flagged_seen;
  for (const auto& trip : trips) {
    fleet_ids.insert(trip.vehicle_id);
    const bool is_flagged = flagged.count(trip.vehicle_id) > 0;
    if (is_flagged) flagged_seen.insert(trip.vehicle_id);
    const auto& recs = trip.records;
    for (std::size_t i = 0; i + 1 < recs.size(); ++i) {
      const ObmRecord& a = recs[i];
      const ObmRecord& b = recs[i + 1];
      const double dist = haversine_km(a.lat, a.lon, b.lat, b.lon);
      const OperatingBin bin = classify_motion(a.speed_kmh, a.accel_ms2, vp);
      const SpeedRange range = speed_range(bin);
      const Period period = window.period_of(a.timestamp);
      auto& t = out.totals();
      ++t.segments;

      const auto nbv = factors.cell(Cohort::Nbv, range);
      const auto he = factors.cell(Cohort::He, range);
      const bool screenable = range_slot(range) >= 0;
      if (screenable && nbv) t.counterfactual_nbv_g += dist * nbv->ef_distance_g_per_km;

      if (!is_flagged) continue;

      double reduction = 0;
      if (!screenable) {
        ++t.unscreenable_segments;
      } else if (!nbv || !he) {
        ++t.missing_factor_segments;
      } else {
        reduction = dist * std::max(0.0, he->ef_distance_g_per_km - nbv->ef_distance_g_per_km);
      }
      const double mid_lat = (a.lat + b.lat) / 2.0;
      const double mid_lon = (a.lon + b.lon) / 2.0;
      out.add({project(mid_lat, mid_lon, grid), period}, dist, reduction);
      if (period == Period::Day) {
        t.day_reduction_g += reduction;
        t.day_distance_km += dist;
      } else {
        t.night_reduction_g += reduction;
        t.night_distance_km += dist;
      }
    }
  }
  out.totals().fleet_vehicles = fleet_ids.size();
  out.totals().flagged_vehicles = flagged_seen.size();
  return out;
}

/// RFC 7946 FeatureCollection: one square polygon per cell (lon,lat order,
/// 5-point closed ring) with period/distance/reduction properties.
inline void export_geojson(const std::vector<ReductionCell>& cells, const GridSpec& grid,
                           std::ostream& out) {
  nlohmann::ordered_json fc;
  fc["type"] = "FeatureCollection";
  fc["features"] = nlohmann::ordered_json::array();
  for (const auto& c : cells) {
    nlohmann::ordered_json feat;
    feat["type"] = "Feature";
    nlohmann::ordered_json ring = nlohmann::ordered_json::array();
    const long corners[5][2] = {{c.ix, c.iy}, {c.ix + 1, c.iy}, {c.ix + 1, c.iy + 1},
                                {c.ix, c.iy + 1}, {c.ix, c.iy}};
    for (const auto& corner : corners) {
      double lat, lon;
      cell_corner_latlon(corner[0], corner[1], grid, lat, lon);
      ring.push_back({lon, lat});
    }
    feat["geometry"] = {{"type", "Polygon"}, {"coordinates", nlohmann::ordered_json::array({ring})}};
    feat["properties"] = {{"ix", c.ix},
                          {"iy", c.iy},
                          {"period", to_string(c.period)},
                          {"distance_km", c.distance_km},
                          {"reduction_g", c.reduction_g}};
    fc["features"].push_back(std::move(feat));
  }
  out << fc.dump(2) << '\n';
}

}  // namespace noxscreen
