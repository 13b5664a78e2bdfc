#pragma once

#include <array>
#include <charconv>
#include <cstddef>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace noxscreen {

/// Shortest decimal form that round-trips the exact double value.
inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

/// Full-string numeric parse; rejects trailing junk and empty fields.
inline std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::string trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n'))
    s.remove_suffix(1);
  return std::string(s);
}

inline std::vector<std::string> split_csv(std::string_view line, char delim = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == delim) {
      out.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

/// Line-oriented CSV reader. Lines starting with '#' ahead of the header are
/// collected as preamble (used for versioned artifact files).
class CsvReader {
 public:
  explicit CsvReader(std::istream& in, char delim = ',') : in_(in), delim_(delim) {
    std::string line;
    while (std::getline(in_, line)) {
      if (!line.empty() && line[0] == '#') {
        preamble_.push_back(trim(line));
        continue;
      }
      if (trim(line).empty()) continue;
      header_ = split_csv(line, delim_);
      has_header_ = true;
      break;
    }
  }

  bool has_header() const { return has_header_; }
  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::string>& preamble() const { return preamble_; }

  std::optional<std::size_t> column(const std::string& name) const {
    for (std::size_t i = 0; i < header_.size(); ++i)
      if (header_[i] == name) return i;
    return std::nullopt;
  }

  /// Reads the next data row. Returns false at end of input. Blank lines are
  /// skipped; row_number() counts data rows from 1.
  bool next(std::vector<std::string>& fields) {
    std::string line;
    while (std::getline(in_, line)) {
      if (trim(line).empty()) continue;
      fields = split_csv(line, delim_);
      ++row_number_;
      return true;
    }
    return false;
  }

  std::size_t row_number() const { return row_number_; }

 private:
  std::istream& in_;
  char delim_;
  bool has_header_ = false;
  std::vector<std::string> header_;
  std::vector<std::string> preamble_;
  std::size_t row_number_ = 0;
};

inline void write_csv_row(std::ostream& out, const std::vector<std::string>& fields, char delim = ',') {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << delim;
    out << fields[i];
  }
  out << '\n';
}

}  // namespace noxscreen
