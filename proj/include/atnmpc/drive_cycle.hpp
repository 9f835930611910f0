#pragma once

// Time-speed tables for the preceding vehicle. CSV with a unit header:
//   t_s,v_mps   or   t_s,v_mph
// '#' starts a comment; blank lines are ignored.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "atnmpc/errors.hpp"

namespace atnmpc::harness {

inline constexpr double kMphToMps = 0.44704;

enum class SpeedUnit { kMps, kMph };

class DriveCycle {
 public:
  DriveCycle() = default;
  DriveCycle(std::vector<double> t, std::vector<double> v) : t_(std::move(t)), v_(std::move(v)) { validate(); }

  const std::vector<double>& times() const { return t_; }
  const std::vector<double>& speeds() const { return v_; }
  bool empty() const { return t_.empty(); }
  double duration() const { return t_.empty() ? 0.0 : t_.back() - t_.front(); }

  /// Linear interpolation, held at the end values outside the table.
  double speed(double t) const {
    if (t_.empty()) return 0.0;
    if (t <= t_.front()) return v_.front();
    if (t >= t_.back()) return v_.back();
    const std::size_t i = segment(t);
    return v_[i] + (t - t_[i]) * slope(i);
  }

  /// Slope of the interpolant (0 outside the table).
  double accel(double t) const {
    if (t_.size() < 2 || t < t_.front() || t >= t_.back()) return 0.0;
    return slope(segment(t));
  }

  /// Distance covered from the start of the table to t (exact for the interpolant).
  double distance(double t) const {
    if (t_.empty()) return 0.0;
    if (t <= t_.front()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < t_.size(); ++i) {
      if (t <= t_[i]) break;
      const double t1 = std::min(t, t_[i + 1]);
      s += 0.5 * (v_[i] + v_[i] + (t1 - t_[i]) * slope(i)) * (t1 - t_[i]);
    }
    if (t > t_.back()) s += v_.back() * (t - t_.back());
    return s;
  }

  /// The table repeated n times back to back (shared end/start sample kept once).
  DriveCycle repeated(int n) const {
    if (n < 1) throw ConfigError("drive cycle: repeat count must be >= 1");
    if (t_.empty() || n == 1) return *this;
    std::vector<double> t = t_, v = v_;
    const double period = duration();
    for (int k = 1; k < n; ++k) {
      for (std::size_t i = 0; i < t_.size(); ++i) {
        const double tk = t_[i] + k * period;
        if (tk <= t.back()) continue;
        t.push_back(tk);
        v.push_back(v_[i]);
      }
    }
    return {std::move(t), std::move(v)};
  }

  friend bool operator==(const DriveCycle&, const DriveCycle&) = default;

 private:
  void validate() const {
    if (t_.size() != v_.size()) throw ConfigError("drive cycle: time and speed columns differ in length");
    for (std::size_t i = 0; i < t_.size(); ++i) {
      if (!std::isfinite(t_[i]) || !std::isfinite(v_[i])) throw ConfigError("drive cycle: non-finite entry");
      if (v_[i] < 0.0) throw ConfigError("drive cycle: negative speed at row " + std::to_string(i));
      if (i > 0 && !(t_[i] > t_[i - 1])) throw ConfigError("drive cycle: time not increasing at row " + std::to_string(i));
    }
  }
  std::size_t segment(double t) const {
    return static_cast<std::size_t>(std::upper_bound(t_.begin(), t_.end(), t) - t_.begin()) - 1;
  }
  double slope(std::size_t i) const { return (v_[i + 1] - v_[i]) / (t_[i + 1] - t_[i]); }

  std::vector<double> t_;
  std::vector<double> v_;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return r.ec == std::errc() && r.ptr == s.data() + s.size();
}

/// Shortest round-trip decimal text of a double.
inline std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

}  // namespace detail

/// Parses a drive cycle; `source` names the input in error messages.
inline DriveCycle parse_drive_cycle(std::istream& in, const std::string& source = "<stream>") {
  std::vector<double> t, v;
  std::string line;
  int lineno = 0;
  bool header = false;
  SpeedUnit unit = SpeedUnit::kMps;
  auto fail = [&](const std::string& msg) {
    throw ConfigError(source + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view s = line;
    if (const auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
    s = detail::trim(s);
    if (s.empty()) continue;
    const auto comma = s.find(',');
    if (comma == std::string_view::npos || s.find(',', comma + 1) != std::string_view::npos)
      fail("expected two comma-separated columns");
    const auto a = detail::trim(s.substr(0, comma)), b = detail::trim(s.substr(comma + 1));
    if (!header) {
      if (a != "t_s") fail("header must start with 't_s'");
      if (b == "v_mps") unit = SpeedUnit::kMps;
      else if (b == "v_mph") unit = SpeedUnit::kMph;
      else fail("speed column must be 'v_mps' or 'v_mph'");
      header = true;
      continue;
    }
    double tv = 0.0, vv = 0.0;
    if (!detail::parse_double(a, tv) || !detail::parse_double(b, vv)) fail("cannot parse numeric row");
    if (!std::isfinite(tv) || !std::isfinite(vv)) fail("non-finite value");
    if (vv < 0.0) fail("negative speed");
    if (!t.empty() && !(tv > t.back())) fail("time not strictly increasing");
    t.push_back(tv);
    v.push_back(unit == SpeedUnit::kMph ? vv * kMphToMps : vv);
  }
  if (!header) throw ConfigError(source + ": empty drive cycle (no header)");
  if (t.empty()) throw ConfigError(source + ": drive cycle has no data rows");
  return {std::move(t), std::move(v)};
}

inline DriveCycle load_drive_cycle(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open drive cycle '" + path + "'");
  return parse_drive_cycle(in, path);
}

/// Writes the cycle in m/s with round-trip precision.
inline void write_drive_cycle(std::ostream& out, const DriveCycle& c) {
  out << "t_s,v_mps\n";
  for (std::size_t i = 0; i < c.times().size(); ++i)
    out << detail::format_double(c.times()[i]) << ',' << detail::format_double(c.speeds()[i]) << '\n';
}

}  // namespace atnmpc::harness
