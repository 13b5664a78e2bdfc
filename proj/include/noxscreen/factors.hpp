#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "noxscreen/binning.hpp"
#include "noxscreen/emissions.hpp"
#include "noxscreen/ingest.hpp"
#include "noxscreen/profiling.hpp"

namespace noxscreen {

enum class Cohort { Nbv, He };

inline const char* to_string(Cohort c) { return c == Cohort::Nbv ? "nbv" : "he"; }

/// Calibration constants of the fuel-carbon balance underlying the
/// fuel-specific factor. Kept in config rather than hard-coded.
struct EfCalibration {
  double no_scale = 30.0;
  double carbon_per_kg = 860.0;
  double carbon_scale = 12.0;
  double hc_factor = 6.0;
};

/// Fuel-specific NOx emission factor (g/kg) from the measured exhaust ratios
/// Q1 = CO/CO2, Q2 = HC/CO2 and the NO2-corrected Q3 = NOx/CO2.
inline double fuel_specific_ef(double q1, double q2, double q3, const EfCalibration& k = {}) {
  return k.no_scale * q3 * k.carbon_per_kg / ((1.0 + q1 + k.hc_factor * q2) * k.carbon_scale);
}

struct NonPositiveFc : std::domain_error {
  NonPositiveFc() : std::domain_error("fuel consumption must be positive") {}
};

/// Distance-specific NOx emission factor (g/km) from the fuel-specific factor
/// (g/kg), fuel consumption (L/km) and fuel density.
inline double distance_specific_ef(double ef_fuel_g_per_kg, double fc_l_per_km,
                                   const FuelConstants& c = {}) {
  if (!(fc_l_per_km > 0)) throw NonPositiveFc();
  return ef_fuel_g_per_kg * fc_l_per_km * c.rho_kg_per_l;
}

struct EmissionFactor {
  Cohort cohort = Cohort::Nbv;
  SpeedRange range = SpeedRange::Low;
  double ef_fuel_g_per_kg = 0;
  double ef_distance_g_per_km = 0;
  std::size_t n_passes = 0;
};

/// Mean-ratio accumulation per (cohort, speed range); partial accumulators
/// merge by pass-count weighting, so parallel aggregation recombines exactly.
class FactorAccumulator {
 public:
  struct CellMeans {
    double q1 = 0, q2 = 0, q3 = 0;
    std::size_t n = 0;
  };

  void add(Cohort c, SpeedRange r, double q1, double q2, double q3_corrected) {
    const int slot = range_slot(r);
    if (slot < 0) {
      ++skipped_unscreenable_;
      return;
    }
    Cell& cell = cells_[index(c)][static_cast<std::size_t>(slot)];
    cell.q1 += q1;
    cell.q2 += q2;
    cell.q3 += q3_corrected;
    ++cell.n;
  }

  void merge(const FactorAccumulator& other) {
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t s = 0; s < 3; ++s) {
        cells_[c][s].q1 += other.cells_[c][s].q1;
        cells_[c][s].q2 += other.cells_[c][s].q2;
        cells_[c][s].q3 += other.cells_[c][s].q3;
        cells_[c][s].n += other.cells_[c][s].n;
      }
    skipped_unscreenable_ += other.skipped_unscreenable_;
  }

  CellMeans means(Cohort c, SpeedRange r) const {
    const int slot = range_slot(r);
    CellMeans m;
    if (slot < 0) return m;
    const Cell& cell = cells_[index(c)][static_cast<std::size_t>(slot)];
    m.n = cell.n;
    if (cell.n) {
      const double n = static_cast<double>(cell.n);
      m.q1 = cell.q1 / n;
      m.q2 = cell.q2 / n;
      m.q3 = cell.q3 / n;
    }
    return m;
  }

  std::size_t skipped_unscreenable() const { return skipped_unscreenable_; }

 private:
  struct Cell {
    double q1 = 0, q2 = 0, q3 = 0;
    std::size_t n = 0;
  };
  static std::size_t index(Cohort c) { return c == Cohort::Nbv ? 0 : 1; }

  std::array<std::array<Cell, 3>, 2> cells_{};
  std::size_t skipped_unscreenable_ = 0;
};

inline constexpr std::array<SpeedRange, 3> kFactorRanges = {SpeedRange::Low, SpeedRange::Medium,
                                                            SpeedRange::High};

/// Emission factors per (cohort, speed range). Empty cohorts are reported as
/// absent cells, never as zeros.
struct FactorTable {
  std::array<std::array<std::optional<EmissionFactor>, 3>, 2> cells{};
  double fc_l_per_km = 0;
  std::size_t skipped_unscreenable = 0;

  std::optional<EmissionFactor> cell(Cohort c, SpeedRange r) const {
    const int slot = range_slot(r);
    if (slot < 0) return std::nullopt;
    return cells[c == Cohort::Nbv ? 0 : 1][static_cast<std::size_t>(slot)];
  }

  void set(const EmissionFactor& f) {
    const int slot = range_slot(f.range);
    if (slot >= 0) cells[f.cohort == Cohort::Nbv ? 0 : 1][static_cast<std::size_t>(slot)] = f;
  }
};

/// Cohort means feed the fuel-specific factor once (mean-of-ratios), then the
/// distance-specific factor with the fleet fuel consumption. per_range_fc
/// slots, when provided, override the single fleet figure per speed range.
inline FactorTable finalize_factors(const FactorAccumulator& acc, double fc_l_per_km,
                                    const FuelConstants& c = {}, const EfCalibration& k = {},
                                    const std::array<std::optional<double>, 3>* per_range_fc = nullptr) {
  FactorTable out;
  out.fc_l_per_km = fc_l_per_km;
  out.skipped_unscreenable = acc.skipped_unscreenable();
  for (Cohort cohort : {Cohort::Nbv, Cohort::He}) {
    for (SpeedRange r : kFactorRanges) {
      const auto m = acc.means(cohort, r);
      if (!m.n) continue;  // empty cohort cell
      double fc = fc_l_per_km;
      if (per_range_fc) {
        const auto& slot_fc = (*per_range_fc)[static_cast<std::size_t>(range_slot(r))];
        if (slot_fc) fc = *slot_fc;
      }
      EmissionFactor f;
      f.cohort = cohort;
      f.range = r;
      f.n_passes = m.n;
      f.ef_fuel_g_per_kg = fuel_specific_ef(m.q1, m.q2, m.q3, k);
      f.ef_distance_g_per_km = distance_specific_ef(f.ef_fuel_g_per_kg, fc, c);
      out.set(f);
    }
  }
  return out;
}

/// Builds the cohort factor table from raw passes: flagged vehicles form the
/// high-emitter cohort, everything else the normally-behaving one. Braking and
/// idle passes carry no usable plume and are counted as skipped.
inline FactorTable cohort_factors(const std::vector<RsdPass>& passes,
                                  const std::set<std::string>& flagged_ids, double fc_l_per_km,
                                  const FuelConstants& c = {}, const VspParams& vp = {},
                                  const EfCalibration& k = {},
                                  const std::array<std::optional<double>, 3>* per_range_fc = nullptr) {
  FactorAccumulator acc;
  for (const auto& p : passes) {
    const OperatingBin bin = classify_motion(p.speed_kmh, p.accel_ms2, vp);
    const Cohort cohort = flagged_ids.count(p.vehicle_id) ? Cohort::He : Cohort::Nbv;
    acc.add(cohort, speed_range(bin), p.co_co2, p.hc_co2, rsd_ratio_from_q3(p.no_co2, c));
  }
  return finalize_factors(acc, fc_l_per_km, c, k, per_range_fc);
}

}  // namespace noxscreen
