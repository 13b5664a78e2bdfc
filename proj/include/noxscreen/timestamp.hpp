#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>

#include "noxscreen/csv.hpp"

namespace noxscreen {

// Days since 1970-01-01 for a proleptic Gregorian civil date.
// Howard Hinnant's days_from_civil algorithm.
constexpr std::int64_t days_from_civil(int y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

constexpr void civil_from_days(std::int64_t z, int& y, unsigned& m, unsigned& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  y = static_cast<int>(yoe) + static_cast<int>(era) * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp + (mp < 10 ? 3 : -9);
  y += (m <= 2);
}

namespace detail {

inline bool read_uint(std::string_view& s, unsigned digits, unsigned& out) {
  if (s.size() < digits) return false;
  unsigned v = 0;
  for (unsigned i = 0; i < digits; ++i) {
    char c = s[i];
    if (c < '0' || c > '9') return false;
    v = v * 10 + static_cast<unsigned>(c - '0');
  }
  s.remove_prefix(digits);
  out = v;
  return true;
}

inline bool consume(std::string_view& s, char c) {
  if (s.empty() || s.front() != c) return false;
  s.remove_prefix(1);
  return true;
}

}  // namespace detail

/// Parses "YYYY-MM-DD[T ]hh:mm:ss[.fff][Z|+hh[:mm]|-hh[:mm]]" into UTC epoch
/// seconds. A timestamp without zone designator is taken as UTC.
inline std::optional<double> parse_iso8601_utc(std::string_view raw) {
  std::string t = trim(raw);
  std::string_view s(t);
  unsigned yy, mm, dd, hh, mi, ss;
  if (!detail::read_uint(s, 4, yy) || !detail::consume(s, '-') || !detail::read_uint(s, 2, mm) ||
      !detail::consume(s, '-') || !detail::read_uint(s, 2, dd))
    return std::nullopt;
  if (s.empty() || (s.front() != 'T' && s.front() != ' ')) return std::nullopt;
  s.remove_prefix(1);
  if (!detail::read_uint(s, 2, hh) || !detail::consume(s, ':') || !detail::read_uint(s, 2, mi) ||
      !detail::consume(s, ':') || !detail::read_uint(s, 2, ss))
    return std::nullopt;
  if (mm < 1 || mm > 12 || dd < 1 || dd > 31 || hh > 23 || mi > 59 || ss > 60) return std::nullopt;

  double frac = 0.0;
  if (!s.empty() && s.front() == '.') {
    s.remove_prefix(1);
    double scale = 0.1;
    bool any = false;
    while (!s.empty() && s.front() >= '0' && s.front() <= '9') {
      frac += (s.front() - '0') * scale;
      scale *= 0.1;
      s.remove_prefix(1);
      any = true;
    }
    if (!any) return std::nullopt;
  }

  int offset_s = 0;
  if (!s.empty()) {
    char c = s.front();
    if (c == 'Z') {
      s.remove_prefix(1);
    } else if (c == '+' || c == '-') {
      s.remove_prefix(1);
      unsigned oh = 0, om = 0;
      if (!detail::read_uint(s, 2, oh)) return std::nullopt;
      if (!s.empty() && s.front() == ':') {
        s.remove_prefix(1);
        if (!detail::read_uint(s, 2, om)) return std::nullopt;
      } else if (s.size() >= 2) {
        if (!detail::read_uint(s, 2, om)) return std::nullopt;
      }
      offset_s = static_cast<int>(oh * 3600 + om * 60) * (c == '-' ? -1 : 1);
    } else {
      return std::nullopt;
    }
  }
  if (!s.empty()) return std::nullopt;

  const std::int64_t days = days_from_civil(static_cast<int>(yy), mm, dd);
  const double utc = static_cast<double>(days) * 86400.0 + hh * 3600.0 + mi * 60.0 + ss + frac -
                     static_cast<double>(offset_s);
  return utc;
}

/// Accepts either UNIX epoch seconds (any plain number) or ISO-8601.
inline std::optional<double> parse_timestamp(std::string_view s) {
  if (auto num = parse_double(s)) return num;
  return parse_iso8601_utc(s);
}

/// "YYYY-MM-DDThh:mm:ssZ"; sub-second parts are truncated.
inline std::string format_iso_utc(double epoch_s) {
  const double floor_s = std::floor(epoch_s);
  std::int64_t total = static_cast<std::int64_t>(floor_s);
  std::int64_t days = total / 86400;
  std::int64_t rem = total % 86400;
  if (rem < 0) {
    rem += 86400;
    days -= 1;
  }
  int y;
  unsigned m, d;
  civil_from_days(days, y, m, d);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02lld:%02lld:%02lldZ", y, m, d,
                static_cast<long long>(rem / 3600), static_cast<long long>((rem % 3600) / 60),
                static_cast<long long>(rem % 60));
  return buf;
}

}  // namespace noxscreen
