#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "noxscreen/binning.hpp"
#include "noxscreen/emissions.hpp"
#include "noxscreen/ingest.hpp"
#include "noxscreen/profiling.hpp"

namespace noxscreen {

enum class ScreeningMethod { National, ObmRsd };

inline const char* to_string(ScreeningMethod m) {
  return m == ScreeningMethod::National ? "national" : "obm_rsd";
}

/// One pass that strictly exceeded its applicable limit. observed/threshold
/// are in ppm for the national method and dimensionless NOx/CO2 otherwise.
struct Exceedance {
  std::string vehicle_id;
  double timestamp = 0;
  ScreeningMethod method = ScreeningMethod::National;
  OperatingBin bin = OperatingBin::Bin1;
  SpeedRange range = SpeedRange::Idle;
  double observed = 0;
  double threshold = 0;
};

/// National rule: NO concentration strictly above the fixed limit. A reading
/// exactly at the limit is compliant. The operating bin is attached as
/// metadata only; the national rule itself is condition-free.
inline std::optional<Exceedance> evaluate_pass_national(const RsdPass& p, double limit_ppm = 1500.0,
                                                        const VspParams& vp = {}) {
  if (p.no_ppm <= limit_ppm) return std::nullopt;
  const OperatingBin bin = classify_motion(p.speed_kmh, p.accel_ms2, vp);
  return Exceedance{p.vehicle_id, p.timestamp, ScreeningMethod::National, bin, speed_range(bin),
                    p.no_ppm, limit_ppm};
}

enum class PassDisposition { BelowThreshold, Exceeded, UnscreenableBin, NoThreshold };

inline const char* to_string(PassDisposition d) {
  switch (d) {
    case PassDisposition::BelowThreshold: return "below_threshold";
    case PassDisposition::Exceeded: return "exceeded";
    case PassDisposition::UnscreenableBin: return "unscreenable_bin";
    case PassDisposition::NoThreshold: return "no_threshold";
  }
  return "?";
}

struct PassScreenResult {
  PassDisposition disposition = PassDisposition::BelowThreshold;
  OperatingBin bin = OperatingBin::Bin1;
  SpeedRange range = SpeedRange::Idle;
  double ratio = 0;  // NO2-corrected NOx/CO2
  std::optional<double> threshold;
  std::optional<Exceedance> exceedance;
};

/// OBM+RSD rule: classify the pass by speed and acceleration, compare its
/// corrected NOx/CO2 ratio against the cut point for its bin or pooled speed
/// range. Braking and idle passes are unscreenable (the plume is too small for
/// a valid measurement) and surface as a distinct disposition, never silently
/// dropped.
inline PassScreenResult evaluate_pass_obm_rsd(const RsdPass& p, const ThresholdTable& t,
                                              const FuelConstants& c = {}, const VspParams& vp = {},
                                              ThresholdGranularity g = ThresholdGranularity::SpeedRange) {
  PassScreenResult out;
  out.bin = classify_motion(p.speed_kmh, p.accel_ms2, vp);
  out.range = speed_range(out.bin);
  out.ratio = rsd_ratio_from_q3(p.no_co2, c);
  if (out.range == SpeedRange::Braking || out.range == SpeedRange::Idle) {
    out.disposition = PassDisposition::UnscreenableBin;
    return out;
  }
  out.threshold = t.threshold_for(out.bin, g);
  if (!out.threshold) {
    out.disposition = PassDisposition::NoThreshold;
    return out;
  }
  if (out.ratio > *out.threshold) {
    out.disposition = PassDisposition::Exceeded;
    out.exceedance = Exceedance{p.vehicle_id, p.timestamp,     ScreeningMethod::ObmRsd, out.bin,
                                out.range,    out.ratio,       *out.threshold};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-vehicle rolling-window state

/// Exceedance history of one (vehicle, method). Insertion is idempotent for a
/// re-delivered event (same timestamp and range), so reprocessing the same
/// pass cannot double-count, and the stored set is independent of arrival
/// order.
class VehicleLedger {
 public:
  bool add(const Exceedance& e) {
    auto key = [](const Exceedance& x) { return std::pair<double, int>(x.timestamp, static_cast<int>(x.range)); };
    auto pos = std::lower_bound(events_.begin(), events_.end(), e,
                                [&](const Exceedance& a, const Exceedance& b) { return key(a) < key(b); });
    if (pos != events_.end() && key(*pos) == key(e)) return false;
    events_.insert(pos, e);
    return true;
  }

  const std::vector<Exceedance>& events() const { return events_; }

 private:
  std::vector<Exceedance> events_;  // sorted by (timestamp, range), unique
};

struct ScreeningVerdict {
  std::string vehicle_id;
  ScreeningMethod method = ScreeningMethod::National;
  bool flagged = false;
  std::vector<Exceedance> supporting;  // the earliest qualifying pair when flagged
  double window_start = 0;
  double window_end = 0;
  std::size_t n_exceedances = 0;
};

namespace detail {

inline bool pair_qualifies(const Exceedance& a, const Exceedance& b, ScreeningMethod m, double window_s) {
  if (a.timestamp == b.timestamp) return false;
  if (b.timestamp - a.timestamp > window_s) return false;  // window is endpoint-inclusive
  if (m == ScreeningMethod::ObmRsd && a.range != b.range) return false;
  return true;
}

}  // namespace detail

/// Pure function of the ledger's event set (hence order-independent):
/// flagged iff two exceedances with distinct timestamps lie within the window,
/// in the same speed range for the OBM+RSD method.
inline ScreeningVerdict evaluate_ledger(const std::string& vehicle_id, ScreeningMethod method,
                                        const VehicleLedger& ledger, double window_days = 183.0) {
  ScreeningVerdict v;
  v.vehicle_id = vehicle_id;
  v.method = method;
  const auto& ev = ledger.events();
  v.n_exceedances = ev.size();
  if (!ev.empty()) {
    v.window_start = ev.front().timestamp;
    v.window_end = ev.back().timestamp;
  }
  const double window_s = window_days * 86400.0;
  for (std::size_t i = 0; i < ev.size() && !v.flagged; ++i) {
    for (std::size_t j = i + 1; j < ev.size(); ++j) {
      if (detail::pair_qualifies(ev[i], ev[j], method, window_s)) {
        v.flagged = true;
        v.supporting = {ev[i], ev[j]};
        v.window_start = ev[i].timestamp;
        v.window_end = ev[j].timestamp;
        break;
      }
    }
  }
  return v;
}

/// Folds one exceedance into the vehicle's ledger and returns the verdict over
/// the updated state.
inline ScreeningVerdict update_vehicle_state(VehicleLedger& state, const Exceedance& e,
                                             double window_days = 183.0) {
  state.add(e);
  return evaluate_ledger(e.vehicle_id, e.method, state, window_days);
}

/// Ranges in which the ledger holds a qualifying pair (relevant to per-range
/// reporting; national verdicts ignore ranges).
inline std::set<SpeedRange> flagged_ranges(const VehicleLedger& ledger, double window_days = 183.0) {
  std::set<SpeedRange> out;
  const auto& ev = ledger.events();
  const double window_s = window_days * 86400.0;
  for (std::size_t i = 0; i < ev.size(); ++i)
    for (std::size_t j = i + 1; j < ev.size(); ++j)
      if (detail::pair_qualifies(ev[i], ev[j], ScreeningMethod::ObmRsd, window_s)) out.insert(ev[i].range);
  return out;
}

// ---------------------------------------------------------------------------
// Fleet-level orchestration

struct ScreeningOptions {
  double national_limit_ppm = 1500.0;
  double window_days = 183.0;
  ThresholdGranularity granularity = ThresholdGranularity::SpeedRange;
  EmissionStandard standard = EmissionStandard::ChinaV;
  FuelType fuel = FuelType::Diesel;
  std::size_t min_vehicles_per_range = 10;  // below this a range reports "insufficient data"
};

/// One row of the per-pass disposition log.
struct DispositionRow {
  std::string vehicle_id;
  double timestamp = 0;
  bool eligible = true;  // matched the configured standard/fuel filter
  PassDisposition obm_rsd = PassDisposition::BelowThreshold;
  bool national_exceeded = false;
  OperatingBin bin = OperatingBin::Bin1;
  SpeedRange range = SpeedRange::Idle;
  double ratio = 0;
  std::optional<double> threshold;
  double no_ppm = 0;
};

struct RangeStat {
  std::size_t vehicles = 0;
  std::size_t flagged = 0;
  bool insufficient = false;
  std::optional<double> flagged_pct;  // absent when insufficient or empty
};

struct FleetReport {
  struct MethodStat {
    std::size_t vehicles_seen = 0;
    std::size_t flagged = 0;
    double flagged_pct = 0;
  };
  MethodStat national;
  MethodStat obm_rsd;
  std::array<RangeStat, 3> obm_rsd_by_range{};  // low, medium, high
  std::size_t passes = 0;
  std::size_t ineligible = 0;
  std::size_t unscreenable = 0;
  std::size_t no_threshold = 0;
};

/// Streams passes through both screening methods and keeps independent
/// per-vehicle ledgers. Verdicts are a pure function of the pass multiset, so
/// processing order never matters.
class FleetScreening {
 public:
  FleetScreening(ThresholdTable table, FuelConstants fuel, VspParams vsp, ScreeningOptions opt = {})
      : table_(std::move(table)), fuel_(fuel), vsp_(vsp), opt_(opt) {}

  const DispositionRow& process(const RsdPass& p) {
    ++passes_;
    DispositionRow row;
    row.vehicle_id = p.vehicle_id;
    row.timestamp = p.timestamp;
    row.no_ppm = p.no_ppm;
    row.eligible = p.standard == opt_.standard && p.fuel == opt_.fuel;
    if (!row.eligible) {
      ++ineligible_;
      row.bin = classify_motion(p.speed_kmh, p.accel_ms2, vsp_);
      row.range = speed_range(row.bin);
      log_.push_back(row);
      return log_.back();
    }

    seen_national_.insert(p.vehicle_id);
    if (auto e = evaluate_pass_national(p, opt_.national_limit_ppm, vsp_)) {
      national_[p.vehicle_id].add(*e);
      row.national_exceeded = true;
    }

    const PassScreenResult r = evaluate_pass_obm_rsd(p, table_, fuel_, vsp_, opt_.granularity);
    row.obm_rsd = r.disposition;
    row.bin = r.bin;
    row.range = r.range;
    row.ratio = r.ratio;
    row.threshold = r.threshold;
    if (r.disposition == PassDisposition::UnscreenableBin) {
      ++unscreenable_;
    } else if (r.disposition == PassDisposition::NoThreshold) {
      ++no_threshold_;
    } else {
      seen_obm_rsd_.insert(p.vehicle_id);
      const int slot = range_slot(r.range);
      if (slot >= 0) seen_ranges_[p.vehicle_id].insert(r.range);
      if (r.exceedance) obm_rsd_[p.vehicle_id].add(*r.exceedance);
    }
    log_.push_back(row);
    return log_.back();
  }

  std::vector<ScreeningVerdict> verdicts(ScreeningMethod m) const {
    const auto& seen = m == ScreeningMethod::National ? seen_national_ : seen_obm_rsd_;
    const auto& ledgers = m == ScreeningMethod::National ? national_ : obm_rsd_;
    std::vector<ScreeningVerdict> out;
    out.reserve(seen.size());
    static const VehicleLedger kEmpty;
    for (const auto& vid : seen) {
      auto it = ledgers.find(vid);
      out.push_back(evaluate_ledger(vid, m, it == ledgers.end() ? kEmpty : it->second, opt_.window_days));
    }
    return out;
  }

  std::set<std::string> flagged_vehicles(ScreeningMethod m) const {
    std::set<std::string> out;
    for (const auto& v : verdicts(m))
      if (v.flagged) out.insert(v.vehicle_id);
    return out;
  }

  const std::vector<DispositionRow>& dispositions() const { return log_; }

  FleetReport report() const {
    FleetReport rep;
    rep.passes = passes_;
    rep.ineligible = ineligible_;
    rep.unscreenable = unscreenable_;
    rep.no_threshold = no_threshold_;

    auto fill = [&](ScreeningMethod m, FleetReport::MethodStat& stat) {
      const auto vs = verdicts(m);
      stat.vehicles_seen = vs.size();
      for (const auto& v : vs)
        if (v.flagged) ++stat.flagged;
      stat.flagged_pct =
          vs.empty() ? 0.0 : 100.0 * static_cast<double>(stat.flagged) / static_cast<double>(vs.size());
    };
    fill(ScreeningMethod::National, rep.national);
    fill(ScreeningMethod::ObmRsd, rep.obm_rsd);

    for (const auto& [vid, ranges] : seen_ranges_)
      for (SpeedRange r : ranges) ++rep.obm_rsd_by_range[static_cast<std::size_t>(range_slot(r))].vehicles;
    for (const auto& [vid, ledger] : obm_rsd_)
      for (SpeedRange r : flagged_ranges(ledger, opt_.window_days))
        ++rep.obm_rsd_by_range[static_cast<std::size_t>(range_slot(r))].flagged;
    for (auto& rs : rep.obm_rsd_by_range) {
      rs.insufficient = rs.vehicles < opt_.min_vehicles_per_range;
      if (rs.vehicles && !rs.insufficient)
        rs.flagged_pct = 100.0 * static_cast<double>(rs.flagged) / static_cast<double>(rs.vehicles);
    }
    return rep;
  }

  const ScreeningOptions& options() const { return opt_; }

 private:
  ThresholdTable table_;
  FuelConstants fuel_;
  VspParams vsp_;
  ScreeningOptions opt_;

  std::map<std::string, VehicleLedger> national_;
  std::map<std::string, VehicleLedger> obm_rsd_;
  std::set<std::string> seen_national_;
  std::set<std::string> seen_obm_rsd_;
  std::map<std::string, std::set<SpeedRange>> seen_ranges_;
  std::vector<DispositionRow> log_;
  std::size_t passes_ = 0;
  std::size_t ineligible_ = 0;
  std::size_t unscreenable_ = 0;
  std::size_t no_threshold_ = 0;
};

}  // namespace noxscreen
