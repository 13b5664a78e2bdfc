#pragma once

#include <cmath>
#include <stdexcept>

namespace noxscreen {

/// Diesel exhaust conversion parameters. These are configuration values, not
/// compile-time constants, so a different regulation version (e.g. a China VI
/// NO2 fraction) can be supplied through the pipeline config. Defaults are the
/// China V diesel values.
struct FuelConstants {
  double mu = 0.001587;          // ratio of exhaust component density to exhaust density
  double rho_kg_per_l = 0.85;    // diesel density
  double beta_g_per_l = 2684.0;  // grams of CO2 per litre of fuel burned
  double no2_fraction = 0.40;    // fraction of NO2 in NOx (China V)
};

struct NonFiniteInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ZeroFuelRate : std::domain_error {
  ZeroFuelRate() : std::domain_error("NOx/CO2 ratio undefined at zero fuel rate") {}
};
struct ZeroDenominator : std::domain_error {
  ZeroDenominator() : std::domain_error("ratio denominator must be positive") {}
};

namespace detail {
inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NonFiniteInput(what);
}
}  // namespace detail

/// Instantaneous NOx mass emission rate in g/s from concentration after SCR
/// (ppm), intake mass air flow (kg/h) and fuel rate (L/h). The regulatory
/// formula labels the combined air+fuel term the NOx mass flow; physically it
/// is the exhaust mass flow.
inline double nox_rate(double nox_ppm, double maf_kg_per_h, double fuel_l_per_h,
                       const FuelConstants& c = {}) {
  detail::require_finite(nox_ppm, "nox_rate: nox_ppm");
  detail::require_finite(maf_kg_per_h, "nox_rate: maf_kg_per_h");
  detail::require_finite(fuel_l_per_h, "nox_rate: fuel_l_per_h");
  const double exhaust_kg_per_h = maf_kg_per_h + fuel_l_per_h * c.rho_kg_per_l;
  return c.mu * nox_ppm * exhaust_kg_per_h / 3600.0;
}

/// Instantaneous CO2 mass emission rate in g/s from fuel rate (L/h).
inline double co2_rate(double fuel_l_per_h, const FuelConstants& c = {}) {
  detail::require_finite(fuel_l_per_h, "co2_rate: fuel_l_per_h");
  return fuel_l_per_h * c.beta_g_per_l / 3600.0;
}

/// NOx/CO2 ratio of one OBM record. Undefined at zero fuel rate; callers that
/// aggregate must skip such records rather than catch.
inline double obm_ratio(double nox_ppm, double maf_kg_per_h, double fuel_l_per_h,
                        const FuelConstants& c = {}) {
  if (fuel_l_per_h == 0.0) throw ZeroFuelRate();
  return nox_rate(nox_ppm, maf_kg_per_h, fuel_l_per_h, c) / co2_rate(fuel_l_per_h, c);
}

/// NOx/CO2 from a remote-sensing NO/CO2 ratio, scaling measured NO up by the
/// assumed NO2 fraction. This is the native path for instruments that report
/// the ratio directly.
inline double rsd_ratio_from_q3(double no_over_co2, const FuelConstants& c = {}) {
  detail::require_finite(no_over_co2, "rsd_ratio_from_q3: no_over_co2");
  return no_over_co2 / (1.0 - c.no2_fraction);
}

/// NOx/CO2 from absolute NO and CO2 concentrations (ppm). Delegates to the
/// ratio path so both forms agree bit-for-bit.
inline double rsd_ratio(double no_ppm, double co2_ppm, const FuelConstants& c = {}) {
  detail::require_finite(no_ppm, "rsd_ratio: no_ppm");
  detail::require_finite(co2_ppm, "rsd_ratio: co2_ppm");
  if (co2_ppm <= 0.0) throw ZeroDenominator();
  return rsd_ratio_from_q3(no_ppm / co2_ppm, c);
}

/// One computed emission observation; source tags which instrument produced it.
struct EmissionSample {
  enum class Source { Obm, Rsd };
  double er_nox_g_per_s = 0.0;
  double er_co2_g_per_s = 0.0;
  double ratio_nox_co2 = 0.0;
  Source source = Source::Obm;
};

}  // namespace noxscreen
