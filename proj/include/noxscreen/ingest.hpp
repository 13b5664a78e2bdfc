#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <istream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "noxscreen/binning.hpp"
#include "noxscreen/csv.hpp"
#include "noxscreen/timestamp.hpp"

namespace noxscreen {

// ---------------------------------------------------------------------------
// Record types

struct ObmRecord {
  std::string vehicle_id;
  double timestamp = 0;  // UTC epoch seconds
  double speed_kmh = 0;
  double nox_ppm = 0;  // NOx concentration downstream of SCR
  double maf_kgh = 0;  // engine intake mass air flow
  double fuel_rate_lh = 0;
  double lat = 0;
  double lon = 0;
  std::optional<double> scr_temp_c;  // carried through, not interpreted
  std::optional<double> tank_pct;    // carried through, not interpreted

  bool valid = true;  // conjunction of range checks and frozen-run downgrades
  double accel_ms2 = 0;
  bool accel_low_confidence = false;
};

enum class EmissionStandard { ChinaIV, ChinaV, ChinaVI, Other };
enum class FuelType { Diesel, Other };

inline const char* to_string(EmissionStandard s) {
  switch (s) {
    case EmissionStandard::ChinaIV: return "ChinaIV";
    case EmissionStandard::ChinaV: return "ChinaV";
    case EmissionStandard::ChinaVI: return "ChinaVI";
    case EmissionStandard::Other: return "Other";
  }
  return "?";
}
inline const char* to_string(FuelType f) { return f == FuelType::Diesel ? "Diesel" : "Other"; }

inline EmissionStandard parse_standard(std::string_view raw) {
  std::string s;
  for (char c : raw)
    if (c != ' ' && c != '-' && c != '_') s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (s == "chinaiv" || s == "china4" || s == "iv" || s == "4") return EmissionStandard::ChinaIV;
  if (s == "chinav" || s == "china5" || s == "v" || s == "5") return EmissionStandard::ChinaV;
  if (s == "chinavi" || s == "china6" || s == "vi" || s == "6") return EmissionStandard::ChinaVI;
  return EmissionStandard::Other;
}

inline FuelType parse_fuel(std::string_view raw) {
  std::string s;
  for (char c : raw) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return trim(s) == "diesel" ? FuelType::Diesel : FuelType::Other;
}

/// One roadside remote-sensing measurement event. No aggregation at this layer.
struct RsdPass {
  std::string vehicle_id;
  double timestamp = 0;
  std::string site_id;
  double speed_kmh = 0;
  double accel_ms2 = 0;
  double no_ppm = 0;
  double co_co2 = 0;   // Q1
  double hc_co2 = 0;   // Q2
  double no_co2 = 0;   // Q3 as measured (NO/CO2, before NO2 correction)
  EmissionStandard standard = EmissionStandard::Other;
  FuelType fuel = FuelType::Other;
};

// ---------------------------------------------------------------------------
// Parse errors and issues

struct EmptyFileError : std::runtime_error {
  EmptyFileError() : std::runtime_error("input has no header row") {}
};
struct MissingColumnError : std::runtime_error {
  explicit MissingColumnError(const std::string& col)
      : std::runtime_error("required column missing: " + col), column(col) {}
  std::string column;
};
struct DegenerateTripError : std::runtime_error {
  DegenerateTripError() : std::runtime_error("trip has fewer than 3 records") {}
};

/// Per-row recoverable problem. The row is skipped; order and count of
/// records+issues always add up to the number of data rows read.
struct ParseIssue {
  enum class Kind { MalformedRow, InvalidValue };
  std::size_t row = 0;  // 1-based data row index
  Kind kind = Kind::MalformedRow;
  std::string field;
  std::string message;
};

inline const char* to_string(ParseIssue::Kind k) {
  return k == ParseIssue::Kind::MalformedRow ? "malformed_row" : "invalid_value";
}

// ---------------------------------------------------------------------------
// Column maps (logical field -> header name, remappable per deployment)

struct ObmColumnMap {
  std::string vehicle_id = "vehicle_id";
  std::string timestamp = "timestamp";
  std::string speed = "speed_kmh";
  std::string nox = "nox_ppm";
  std::string maf = "maf_kgh";
  std::string fuel_rate = "fuel_rate_lh";
  std::string lat = "lat";
  std::string lon = "lon";
  std::string scr_temp = "scr_temp_c";  // optional column
  std::string tank = "tank_pct";        // optional column
};

struct RsdColumnMap {
  std::string vehicle_id = "vehicle_id";
  std::string timestamp = "timestamp";
  std::string site_id = "site_id";
  std::string speed = "speed_kmh";
  std::string accel = "accel_ms2";
  std::string no_ppm = "no_ppm";
  std::string co_co2 = "co_co2";
  std::string hc_co2 = "hc_co2";
  std::string no_co2 = "no_co2";
  std::string standard = "standard";
  std::string fuel = "fuel";
};

namespace detail {

struct RowCursor {
  const std::vector<std::string>& fields;
  std::size_t row;

  std::optional<std::string> issue;  // first failure wins
  std::string issue_field;
  ParseIssue::Kind kind = ParseIssue::Kind::MalformedRow;

  double number(std::size_t col, const std::string& name) {
    if (issue) return 0;
    if (col >= fields.size()) {
      fail(name, "missing field", ParseIssue::Kind::MalformedRow);
      return 0;
    }
    if (auto v = parse_double(fields[col])) return *v;
    fail(name, "not a number: '" + fields[col] + "'", ParseIssue::Kind::MalformedRow);
    return 0;
  }

  double time(std::size_t col, const std::string& name) {
    if (issue) return 0;
    if (col >= fields.size()) {
      fail(name, "missing field", ParseIssue::Kind::MalformedRow);
      return 0;
    }
    if (auto v = parse_timestamp(fields[col])) return *v;
    fail(name, "not a timestamp: '" + fields[col] + "'", ParseIssue::Kind::MalformedRow);
    return 0;
  }

  std::string text(std::size_t col, const std::string& name) {
    if (issue) return {};
    if (col >= fields.size() || trim(fields[col]).empty()) {
      fail(name, "missing field", ParseIssue::Kind::MalformedRow);
      return {};
    }
    return fields[col];
  }

  void require_nonnegative(double v, const std::string& name) {
    if (!issue && v < 0) fail(name, "negative value", ParseIssue::Kind::InvalidValue);
  }

  void fail(const std::string& name, const std::string& msg, ParseIssue::Kind k) {
    issue = msg;
    issue_field = name;
    kind = k;
  }

  std::optional<ParseIssue> take() const {
    if (!issue) return std::nullopt;
    return ParseIssue{row, kind, issue_field, *issue};
  }
};

inline std::size_t require_column(const CsvReader& r, const std::string& name) {
  if (auto c = r.column(name)) return *c;
  throw MissingColumnError(name);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// File parsing

struct ObmParseResult {
  std::vector<ObmRecord> records;
  std::vector<ParseIssue> issues;
  std::size_t rows_in = 0;
};

/// Parses one OBM CSV stream. Every data row yields either a record or one
/// issue; a header without the required columns is a hard error.
inline ObmParseResult parse_obm_file(std::istream& in, const ObmColumnMap& m = {}) {
  CsvReader r(in);
  if (!r.has_header()) throw EmptyFileError();

  const std::size_t c_vid = detail::require_column(r, m.vehicle_id);
  const std::size_t c_ts = detail::require_column(r, m.timestamp);
  const std::size_t c_speed = detail::require_column(r, m.speed);
  const std::size_t c_nox = detail::require_column(r, m.nox);
  const std::size_t c_maf = detail::require_column(r, m.maf);
  const std::size_t c_fr = detail::require_column(r, m.fuel_rate);
  const std::size_t c_lat = detail::require_column(r, m.lat);
  const std::size_t c_lon = detail::require_column(r, m.lon);
  const auto c_scr = r.column(m.scr_temp);
  const auto c_tank = r.column(m.tank);

  ObmParseResult out;
  std::vector<std::string> f;
  while (r.next(f)) {
    ++out.rows_in;
    detail::RowCursor row{f, r.row_number(), {}, {}, {}};
    ObmRecord rec;
    rec.vehicle_id = row.text(c_vid, m.vehicle_id);
    rec.timestamp = row.time(c_ts, m.timestamp);
    rec.speed_kmh = row.number(c_speed, m.speed);
    rec.nox_ppm = row.number(c_nox, m.nox);
    rec.maf_kgh = row.number(c_maf, m.maf);
    rec.fuel_rate_lh = row.number(c_fr, m.fuel_rate);
    rec.lat = row.number(c_lat, m.lat);
    rec.lon = row.number(c_lon, m.lon);
    if (c_scr && *c_scr < f.size())
      if (auto v = parse_double(f[*c_scr])) rec.scr_temp_c = v;
    if (c_tank && *c_tank < f.size())
      if (auto v = parse_double(f[*c_tank])) rec.tank_pct = v;

    if (auto issue = row.take())
      out.issues.push_back(*issue);
    else
      out.records.push_back(std::move(rec));
  }
  return out;
}

struct RsdParseResult {
  std::vector<RsdPass> passes;
  std::vector<ParseIssue> issues;
  std::size_t rows_in = 0;
};

/// Parses one RSD CSV stream. Negative concentrations or ratios are row
/// issues; unknown fuel/standard strings map to Other and are kept (they are
/// filtered downstream, not here).
inline RsdParseResult parse_rsd_file(std::istream& in, const RsdColumnMap& m = {}) {
  CsvReader r(in);
  if (!r.has_header()) throw EmptyFileError();

  const std::size_t c_vid = detail::require_column(r, m.vehicle_id);
  const std::size_t c_ts = detail::require_column(r, m.timestamp);
  const std::size_t c_site = detail::require_column(r, m.site_id);
  const std::size_t c_speed = detail::require_column(r, m.speed);
  const std::size_t c_accel = detail::require_column(r, m.accel);
  const std::size_t c_no = detail::require_column(r, m.no_ppm);
  const std::size_t c_q1 = detail::require_column(r, m.co_co2);
  const std::size_t c_q2 = detail::require_column(r, m.hc_co2);
  const std::size_t c_q3 = detail::require_column(r, m.no_co2);
  const std::size_t c_std = detail::require_column(r, m.standard);
  const std::size_t c_fuel = detail::require_column(r, m.fuel);

  RsdParseResult out;
  std::vector<std::string> f;
  while (r.next(f)) {
    ++out.rows_in;
    detail::RowCursor row{f, r.row_number(), {}, {}, {}};
    RsdPass p;
    p.vehicle_id = row.text(c_vid, m.vehicle_id);
    p.timestamp = row.time(c_ts, m.timestamp);
    p.site_id = row.text(c_site, m.site_id);
    p.speed_kmh = row.number(c_speed, m.speed);
    p.accel_ms2 = row.number(c_accel, m.accel);
    p.no_ppm = row.number(c_no, m.no_ppm);
    p.co_co2 = row.number(c_q1, m.co_co2);
    p.hc_co2 = row.number(c_q2, m.hc_co2);
    p.no_co2 = row.number(c_q3, m.no_co2);
    row.require_nonnegative(p.speed_kmh, m.speed);
    row.require_nonnegative(p.no_ppm, m.no_ppm);
    row.require_nonnegative(p.co_co2, m.co_co2);
    row.require_nonnegative(p.hc_co2, m.hc_co2);
    row.require_nonnegative(p.no_co2, m.no_co2);
    p.standard = parse_standard(row.text(c_std, m.standard));
    p.fuel = parse_fuel(row.text(c_fuel, m.fuel));

    if (auto issue = row.take())
      out.issues.push_back(*issue);
    else
      out.passes.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Record validation

enum class ObmField { Speed, NoxPpm, MafKgh, FuelRateLh, Lat, Lon };

inline const char* to_string(ObmField f) {
  switch (f) {
    case ObmField::Speed: return "speed_kmh";
    case ObmField::NoxPpm: return "nox_ppm";
    case ObmField::MafKgh: return "maf_kgh";
    case ObmField::FuelRateLh: return "fuel_rate_lh";
    case ObmField::Lat: return "lat";
    case ObmField::Lon: return "lon";
  }
  return "?";
}

struct FieldRange {
  double lo = 0;
  double hi = 0;
  bool contains(double v) const { return std::isfinite(v) && v >= lo && v <= hi; }
};

/// Plausible physical envelopes; the regulation's exact limits are not public,
/// so every range is overridable from the config file.
struct RangeTable {
  FieldRange speed_kmh{0, 120};
  FieldRange nox_ppm{0, 5000};
  FieldRange fuel_rate_lh{0, 200};
  FieldRange maf_kgh{0, 5000};
  FieldRange lat{-90, 90};
  FieldRange lon{-180, 180};

  const FieldRange& for_field(ObmField f) const {
    switch (f) {
      case ObmField::Speed: return speed_kmh;
      case ObmField::NoxPpm: return nox_ppm;
      case ObmField::MafKgh: return maf_kgh;
      case ObmField::FuelRateLh: return fuel_rate_lh;
      case ObmField::Lat: return lat;
      case ObmField::Lon: return lon;
    }
    return speed_kmh;
  }
};

inline constexpr std::array<ObmField, 6> kObmFields = {ObmField::Speed,      ObmField::NoxPpm,
                                                       ObmField::MafKgh,     ObmField::FuelRateLh,
                                                       ObmField::Lat,        ObmField::Lon};

inline double field_value(const ObmRecord& r, ObmField f) {
  switch (f) {
    case ObmField::Speed: return r.speed_kmh;
    case ObmField::NoxPpm: return r.nox_ppm;
    case ObmField::MafKgh: return r.maf_kgh;
    case ObmField::FuelRateLh: return r.fuel_rate_lh;
    case ObmField::Lat: return r.lat;
    case ObmField::Lon: return r.lon;
  }
  return 0;
}

struct RecordValidity {
  bool valid = true;
  std::vector<ObmField> violated;
};

/// Total function: the flag is false iff any required field is outside its
/// configured range or non-finite.
inline RecordValidity validate_record(const ObmRecord& r, const RangeTable& t) {
  RecordValidity out;
  for (ObmField f : kObmFields) {
    if (!t.for_field(f).contains(field_value(r, f))) {
      out.valid = false;
      out.violated.push_back(f);
    }
  }
  return out;
}

/// Applies range validation in place; returns the number of records downgraded.
inline std::size_t apply_range_validation(std::vector<ObmRecord>& recs, const RangeTable& t) {
  std::size_t downgraded = 0;
  for (auto& r : recs) {
    if (!validate_record(r, t).valid && r.valid) {
      r.valid = false;
      ++downgraded;
    }
  }
  return downgraded;
}

/// Marks every record inside a maximal run of >= run_len identical consecutive
/// values as invalid, independently per channel. Applied to the dynamics
/// channels only (speed and the emission-rate inputs); GPS coordinates repeat
/// legitimately while stationary and are not checked.
inline std::size_t mark_frozen_runs(std::vector<ObmRecord>& recs, std::size_t run_len = 10) {
  static constexpr std::array<ObmField, 4> kFrozenFields = {ObmField::Speed, ObmField::NoxPpm,
                                                            ObmField::MafKgh, ObmField::FuelRateLh};
  const std::size_t n = recs.size();
  std::vector<bool> frozen(n, false);
  for (ObmField f : kFrozenFields) {
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && field_value(recs[j + 1], f) == field_value(recs[i], f)) ++j;
      if (j - i + 1 >= run_len)
        for (std::size_t k = i; k <= j; ++k) frozen[k] = true;
      i = j + 1;
    }
  }
  std::size_t downgraded = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (frozen[i] && recs[i].valid) {
      recs[i].valid = false;
      ++downgraded;
    }
  }
  return downgraded;
}

// ---------------------------------------------------------------------------
// Trip segmentation and quality

struct Trip {
  std::string vehicle_id;
  std::vector<ObmRecord> records;
  double start = 0;
  double end = 0;
  double gap_fraction = 0;      // intervals > gap threshold / (n-1)
  double invalid_fraction = 0;  // invalid records / n
};

/// Recomputes the quality fractions from the trip's own records. The gap
/// criterion counts inter-record intervals, not wall-clock time covered.
inline void compute_trip_quality(Trip& t, double gap_interval_s = 12.0) {
  const std::size_t n = t.records.size();
  t.start = n ? t.records.front().timestamp : 0;
  t.end = n ? t.records.back().timestamp : 0;
  std::size_t gaps = 0, invalid = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!t.records[i].valid) ++invalid;
    if (i + 1 < n && t.records[i + 1].timestamp - t.records[i].timestamp > gap_interval_s) ++gaps;
  }
  t.gap_fraction = n > 1 ? static_cast<double>(gaps) / static_cast<double>(n - 1) : 0.0;
  t.invalid_fraction = n ? static_cast<double>(invalid) / static_cast<double>(n) : 0.0;
}

/// Splits one vehicle's time-ordered records into trips wherever the
/// inter-record gap exceeds idle_gap_s. Every record lands in exactly one
/// trip. Records are sorted defensively; equal timestamps stay adjacent.
inline std::vector<Trip> segment_trips(std::vector<ObmRecord> records, double idle_gap_s = 1800.0,
                                       double gap_interval_s = 12.0) {
  std::stable_sort(records.begin(), records.end(),
                   [](const ObmRecord& a, const ObmRecord& b) { return a.timestamp < b.timestamp; });
  std::vector<Trip> trips;
  for (auto& r : records) {
    if (trips.empty() || r.timestamp - trips.back().records.back().timestamp > idle_gap_s) {
      trips.emplace_back();
      trips.back().vehicle_id = r.vehicle_id;
    }
    trips.back().records.push_back(std::move(r));
  }
  for (auto& t : trips) compute_trip_quality(t, gap_interval_s);
  return trips;
}

enum class TripRejection { Duration, GapFraction, InvalidFraction };

inline const char* to_string(TripRejection r) {
  switch (r) {
    case TripRejection::Duration: return "duration";
    case TripRejection::GapFraction: return "gap_fraction";
    case TripRejection::InvalidFraction: return "invalid_fraction";
  }
  return "?";
}

struct TripQuality {
  double min_duration_s = 1800.0;
  double max_gap_fraction = 0.30;     // inclusive bound
  double max_invalid_fraction = 0.30; // exclusive bound
};

struct TripFilterResult {
  struct Rejected {
    Trip trip;
    TripRejection reason;  // first failed criterion, in documented order
  };
  std::vector<Trip> accepted;
  std::vector<Rejected> rejected;
};

/// Accept iff duration >= 30 min AND gap fraction <= 30% AND invalid fraction
/// < 30%. Criteria are evaluated in that order for the rejection reason.
inline TripFilterResult filter_trips(std::vector<Trip> trips, const TripQuality& q = {}) {
  TripFilterResult out;
  for (auto& t : trips) {
    if (t.end - t.start < q.min_duration_s)
      out.rejected.push_back({std::move(t), TripRejection::Duration});
    else if (t.gap_fraction > q.max_gap_fraction)
      out.rejected.push_back({std::move(t), TripRejection::GapFraction});
    else if (t.invalid_fraction >= q.max_invalid_fraction)
      out.rejected.push_back({std::move(t), TripRejection::InvalidFraction});
    else
      out.accepted.push_back(std::move(t));
  }
  return out;
}

/// Deterministic gap-aware finite-difference acceleration estimate, filled in
/// place: central differences over the actual timestamp deltas at interior
/// records, one-sided at the endpoints. Records adjacent to an interval longer
/// than gap_interval_s are flagged low-confidence. This sits behind the
/// estimator seam so a learned imputer can replace it without touching callers.
inline void estimate_acceleration(Trip& t, double gap_interval_s = 12.0) {
  const std::size_t n = t.records.size();
  if (n < 3) throw DegenerateTripError();
  auto v_ms = [&](std::size_t i) { return kmh_to_ms(t.records[i].speed_kmh); };
  auto ts = [&](std::size_t i) { return t.records[i].timestamp; };
  auto slope = [&](std::size_t a, std::size_t b, bool& ok) {
    const double dt = ts(b) - ts(a);
    ok = dt > 0;
    return ok ? (v_ms(b) - v_ms(a)) / dt : 0.0;
  };
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const std::size_t hi = i + 1 == n ? i : i + 1;
    bool ok = false;
    t.records[i].accel_ms2 = slope(lo, hi, ok);
    const bool gap_left = i > 0 && ts(i) - ts(i - 1) > gap_interval_s;
    const bool gap_right = i + 1 < n && ts(i + 1) - ts(i) > gap_interval_s;
    t.records[i].accel_low_confidence = !ok || gap_left || gap_right;
  }
}

}  // namespace noxscreen
