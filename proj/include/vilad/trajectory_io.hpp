#pragma once

// Trajectory CSV shared by simulator output, teleop recordings and metrics references:
//   t,x,y,theta,v,omega
// Numbers use the shortest decimal form that round-trips to the same double.

#include <charconv>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "vilad/binary_io.hpp"
#include "vilad/errors.hpp"
#include "vilad/geometry.hpp"

namespace vilad {

struct TrajectorySample {
  double t = 0.0;
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  double v = 0.0;
  double omega = 0.0;
  [[nodiscard]] Point2 position() const { return {x, y}; }
  friend bool operator==(const TrajectorySample&, const TrajectorySample&) = default;
};

inline constexpr const char* kTrajectoryHeader = "t,x,y,theta,v,omega";

inline std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

inline double parse_double(std::string_view s, const std::string& what) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ValidationError("bad number '" + std::string(s) + "' in " + what);
  return v;
}

inline std::string trajectory_csv(const std::vector<TrajectorySample>& traj) {
  std::string out = std::string(kTrajectoryHeader) + "\n";
  for (const auto& s : traj) {
    for (const double v : {s.t, s.x, s.y, s.theta, s.v}) out += format_double(v) + ",";
    out += format_double(s.omega) + "\n";
  }
  return out;
}

inline std::vector<TrajectorySample> parse_trajectory_csv(const std::string& text, const std::string& what = "trajectory") {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kTrajectoryHeader)
    throw ValidationError(what + ": expected header '" + kTrajectoryHeader + "'");
  std::vector<TrajectorySample> out;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    double f[6];
    std::size_t begin = 0;
    for (int k = 0; k < 6; ++k) {
      const std::size_t end = k < 5 ? line.find(',', begin) : line.size();
      if (end == std::string::npos) throw ValidationError(what + ": row " + std::to_string(row) + " has too few fields");
      f[k] = parse_double(std::string_view(line).substr(begin, end - begin), what + " row " + std::to_string(row));
      begin = end + 1;
    }
    out.push_back({f[0], f[1], f[2], f[3], f[4], f[5]});
  }
  return out;
}

inline void write_trajectory(const std::filesystem::path& path, const std::vector<TrajectorySample>& traj) {
  binary::write_text(path, trajectory_csv(traj));
}

inline std::vector<TrajectorySample> read_trajectory(const std::filesystem::path& path) {
  return parse_trajectory_csv(binary::read_text(path), path.string());
}

}  // namespace vilad
