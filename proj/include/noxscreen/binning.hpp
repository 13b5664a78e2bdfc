#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include "noxscreen/emissions.hpp"

namespace noxscreen {

/// Road-load and grade parameters of the VSP formula, per ton of vehicle mass.
struct VspParams {
  double gravity_ms2 = 9.8;
  double grade_rad = 0.0;           // fixed flat grade by default
  double rolling_per_ton = 0.0875;  // A/m
  double rotating_per_ton = 0.0;    // B/m
  double drag_per_ton = 0.000331;   // C/m
};

// The single place where km/h becomes m/s.
inline constexpr double kKmhPerMs = 3.6;
inline constexpr double kmh_to_ms(double kmh) { return kmh / kKmhPerMs; }

inline constexpr double kBrakingAccelMs2 = -0.89;
inline constexpr double kIdleSpeedKmh = 1.6;
inline constexpr double kMediumSpeedKmh = 30.0;
inline constexpr double kHighSpeedKmh = 60.0;

/// Vehicle specific power in kW/ton from speed (m/s) and acceleration (m/s^2).
inline double vsp(double v_ms, double accel_ms2, const VspParams& p = {}) {
  if (!std::isfinite(v_ms) || !std::isfinite(accel_ms2)) throw NonFiniteInput("vsp: non-finite input");
  return accel_ms2 * v_ms + p.gravity_ms2 * v_ms * std::sin(p.grade_rad) + p.rolling_per_ton * v_ms +
         p.rotating_per_ton * v_ms * v_ms + p.drag_per_ton * v_ms * v_ms * v_ms;
}

enum class SpeedRange { Braking, Idle, Low, Medium, High };

/// The 22 operating modes. Enumerator values are the published bin numbers.
enum class OperatingBin : int {
  Bin0 = 0,
  Bin1 = 1,
  Bin11 = 11,
  Bin12 = 12,
  Bin13 = 13,
  Bin14 = 14,
  Bin15 = 15,
  Bin16 = 16,
  Bin21 = 21,
  Bin22 = 22,
  Bin23 = 23,
  Bin24 = 24,
  Bin25 = 25,
  Bin26 = 26,
  Bin27 = 27,
  Bin28 = 28,
  Bin33 = 33,
  Bin34 = 34,
  Bin35 = 35,
  Bin36 = 36,
  Bin37 = 37,
  Bin38 = 38,
};

inline constexpr std::array<OperatingBin, 22> kAllBins = {
    OperatingBin::Bin0,  OperatingBin::Bin1,  OperatingBin::Bin11, OperatingBin::Bin12,
    OperatingBin::Bin13, OperatingBin::Bin14, OperatingBin::Bin15, OperatingBin::Bin16,
    OperatingBin::Bin21, OperatingBin::Bin22, OperatingBin::Bin23, OperatingBin::Bin24,
    OperatingBin::Bin25, OperatingBin::Bin26, OperatingBin::Bin27, OperatingBin::Bin28,
    OperatingBin::Bin33, OperatingBin::Bin34, OperatingBin::Bin35, OperatingBin::Bin36,
    OperatingBin::Bin37, OperatingBin::Bin38,
};

inline constexpr int bin_number(OperatingBin b) { return static_cast<int>(b); }

/// Dense 0..21 index for per-bin arrays.
inline constexpr int bin_index(OperatingBin b) {
  const int n = bin_number(b);
  if (n <= 1) return n;
  if (n <= 16) return n - 9;   // 11..16 -> 2..7
  if (n <= 28) return n - 13;  // 21..28 -> 8..15
  return n - 17;               // 33..38 -> 16..21
}

inline OperatingBin bin_from_number(int n) {
  const bool ok = n == 0 || n == 1 || (n >= 11 && n <= 16) || (n >= 21 && n <= 28) || (n >= 33 && n <= 38);
  if (!ok) throw std::invalid_argument("bin_from_number: " + std::to_string(n));
  return static_cast<OperatingBin>(n);
}

inline std::string to_string(OperatingBin b) { return "Bin" + std::to_string(bin_number(b)); }

inline SpeedRange speed_range(OperatingBin b) {
  const int n = bin_number(b);
  if (n == 0) return SpeedRange::Braking;
  if (n == 1) return SpeedRange::Idle;
  if (n <= 16) return SpeedRange::Low;
  if (n <= 28) return SpeedRange::Medium;
  return SpeedRange::High;
}

inline const char* to_string(SpeedRange r) {
  switch (r) {
    case SpeedRange::Braking: return "braking";
    case SpeedRange::Idle: return "idle";
    case SpeedRange::Low: return "low";
    case SpeedRange::Medium: return "medium";
    case SpeedRange::High: return "high";
  }
  return "?";
}

/// Classifies an operating state. Precedence: braking wins over idle, idle
/// over the speed classes; every VSP interval is closed on the left and open
/// on the right. Cells the published table leaves blank are merged into the
/// nearest defined bin of the same speed class (Bin16 takes all VSP >= 4,
/// Bin33 all VSP < 0), which gives contiguous coverage with exactly 22 modes.
inline OperatingBin classify(double speed_kmh, double accel_ms2, double vsp_kw_per_ton) {
  if (accel_ms2 < kBrakingAccelMs2) return OperatingBin::Bin0;
  if (speed_kmh < kIdleSpeedKmh) return OperatingBin::Bin1;
  const double w = vsp_kw_per_ton;
  if (speed_kmh < kMediumSpeedKmh) {
    if (w < -4) return OperatingBin::Bin11;
    if (w < -2) return OperatingBin::Bin12;
    if (w < 0) return OperatingBin::Bin13;
    if (w < 2) return OperatingBin::Bin14;
    if (w < 4) return OperatingBin::Bin15;
    return OperatingBin::Bin16;
  }
  if (speed_kmh < kHighSpeedKmh) {
    if (w < -4) return OperatingBin::Bin21;
    if (w < -2) return OperatingBin::Bin22;
    if (w < 0) return OperatingBin::Bin23;
    if (w < 2) return OperatingBin::Bin24;
    if (w < 4) return OperatingBin::Bin25;
    if (w < 6) return OperatingBin::Bin26;
    if (w < 8) return OperatingBin::Bin27;
    return OperatingBin::Bin28;
  }
  if (w < 0) return OperatingBin::Bin33;
  if (w < 2) return OperatingBin::Bin34;
  if (w < 4) return OperatingBin::Bin35;
  if (w < 6) return OperatingBin::Bin36;
  if (w < 8) return OperatingBin::Bin37;
  return OperatingBin::Bin38;
}

/// Convenience form that derives VSP from the same speed/acceleration pair.
inline OperatingBin classify_motion(double speed_kmh, double accel_ms2, const VspParams& p = {}) {
  return classify(speed_kmh, accel_ms2, vsp(kmh_to_ms(speed_kmh), accel_ms2, p));
}

}  // namespace noxscreen
