#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vilad/errors.hpp"
#include "vilad/geometry.hpp"
#include "vilad/sim.hpp"
#include "vilad/trajectory_io.hpp"

namespace vilad::metrics {

using Polyline = std::vector<Point2>;

/// Discrete Frechet distance: minimax matched-point distance over monotone couplings,
/// by the usual O(|a| |b|) dynamic program.
inline double frechet(const Polyline& a, const Polyline& b) {
  if (a.size() < 2 || b.size() < 2) throw DomainError("Frechet distance needs polylines with at least 2 points");
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  std::vector<double> prev(m), cur(m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double d = distance(a[i], b[j]);
      if (i == 0 && j == 0) cur[j] = d;
      else if (i == 0) cur[j] = std::max(cur[j - 1], d);
      else if (j == 0) cur[j] = std::max(prev[0], d);
      else cur[j] = std::max(std::min({prev[j], prev[j - 1], cur[j - 1]}), d);
    }
    std::swap(prev, cur);
  }
  return prev[m - 1];
}

/// Points every `spacing` meters of arc length, always keeping both endpoints.
/// Consecutive duplicate points are dropped first; a curve that never moves yields one point.
inline Polyline resample(const Polyline& in, double spacing) {
  if (!(spacing > 0.0)) throw DomainError("resampling spacing must be positive");
  Polyline pts;
  for (const Point2 p : in)
    if (pts.empty() || distance(pts.back(), p) > 0.0) pts.push_back(p);
  if (pts.size() < 2) return pts;
  Polyline out{pts.front()};
  double carried = 0.0;  // arc length since the last emitted point
  for (std::size_t k = 1; k < pts.size(); ++k) {
    const Point2 a = pts[k - 1];
    const double len = distance(a, pts[k]);
    double s = spacing - carried;
    while (s <= len + 1e-12) {
      out.push_back(a + (s / len) * (pts[k] - a));
      s += spacing;
    }
    carried = len - (s - spacing);
  }
  if (distance(out.back(), pts.back()) > 1e-9) out.push_back(pts.back());
  return out;
}

inline constexpr double kResampleSpacing = 0.1;

inline Polyline polyline_of(const std::vector<TrajectorySample>& t) {
  Polyline p;
  p.reserve(t.size());
  for (const auto& s : t) p.push_back(s.position());
  return p;
}

/// Frechet between two trajectories after 0.1 m arc-length resampling. A trajectory that
/// never moves is duplicated so it still counts as a (degenerate) two-point curve.
inline double trajectory_frechet(const std::vector<TrajectorySample>& a, const std::vector<TrajectorySample>& b,
                                 double spacing = kResampleSpacing) {
  if (a.size() < 2 || b.size() < 2) throw DomainError("trajectories need at least 2 samples");
  auto prep = [spacing](const std::vector<TrajectorySample>& t) {
    Polyline p = resample(polyline_of(t), spacing);
    if (p.size() == 1) p.push_back(p.front());
    return p;
  };
  return frechet(prep(a), prep(b));
}

// ---------------------------------------------------------------------------

enum class ReferenceProvenance { TeleopRecording, Scripted };

struct ReferenceTrajectory {
  std::vector<TrajectorySample> samples;
  ReferenceProvenance provenance = ReferenceProvenance::Scripted;

  void validate() const {
    if (samples.size() < 2) throw DomainError("reference trajectory needs at least 2 points");
    for (std::size_t k = 1; k < samples.size(); ++k)
      if (!(samples[k].t > samples[k - 1].t)) throw DomainError("reference timestamps must strictly increase");
  }
};

struct TrialSet {
  std::string scenario;
  std::string policy;
  std::vector<sim::EpisodeResult> trials;

  void validate() const {
    for (const auto& t : trials)
      if (t.scenario != scenario || t.policy != policy)
        throw DomainError("trial " + t.scenario + "/" + t.policy + " does not belong to set " + scenario + "/" + policy);
  }
};

inline double success_rate(const TrialSet& set) {
  if (set.trials.empty()) throw DomainError("success rate of an empty trial set");
  const auto ok = std::count_if(set.trials.begin(), set.trials.end(),
                                [](const auto& t) { return t.status == sim::EpisodeStatus::ReachedGoal; });
  return 100.0 * static_cast<double>(ok) / static_cast<double>(set.trials.size());
}

/// Mean time over successful trials only; nullopt when nothing succeeded.
inline std::optional<double> time_to_goal(const TrialSet& set) {
  double sum = 0.0;
  int n = 0;
  for (const auto& t : set.trials)
    if (t.status == sim::EpisodeStatus::ReachedGoal && t.time_to_goal) {
      sum += *t.time_to_goal;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / n;
}

/// Mean Frechet distance to the reference over every trial, successful or not.
inline std::optional<double> mean_frechet(const TrialSet& set, const ReferenceTrajectory* ref) {
  if (!ref || set.trials.empty()) return std::nullopt;
  double sum = 0.0;
  for (const auto& t : set.trials) sum += trajectory_frechet(t.trajectory, ref->samples);
  return sum / static_cast<double>(set.trials.size());
}

struct ReportRow {
  std::string scenario;
  std::string policy;
  std::size_t trials = 0;
  double success_rate = 0.0;
  std::optional<double> time_to_goal;
  std::optional<double> frechet;
};

/// Declared policy order for report rows; unknown policies sort after these, by name.
inline const std::vector<std::string>& policy_order() {
  static const std::vector<std::string> order{"teleop", "goal_only", "synth_pretrained_like",
                                              "synth_ground_truth_social", "vilad"};
  return order;
}

inline std::vector<ReportRow> report_rows(const std::vector<TrialSet>& sets,
                                          const std::map<std::string, ReferenceTrajectory>& references) {
  std::vector<ReportRow> rows;
  for (const auto& set : sets) {
    set.validate();
    const auto ref = references.find(set.scenario);
    rows.push_back({set.scenario, set.policy, set.trials.size(), success_rate(set), time_to_goal(set),
                    mean_frechet(set, ref == references.end() ? nullptr : &ref->second)});
  }
  auto rank = [](const std::string& p) {
    const auto& o = policy_order();
    return static_cast<std::size_t>(std::find(o.begin(), o.end(), p) - o.begin());
  };
  std::stable_sort(rows.begin(), rows.end(), [&](const ReportRow& a, const ReportRow& b) {
    if (a.scenario != b.scenario) return a.scenario < b.scenario;
    if (rank(a.policy) != rank(b.policy)) return rank(a.policy) < rank(b.policy);
    return a.policy < b.policy;
  });
  return rows;
}

inline std::string optional_cell(const std::optional<double>& v) { return v ? format_double(*v) : "NA"; }

inline constexpr const char* kReportHeader = "scenario,policy,trials,success_rate,time_to_goal,frechet";

/// Exact values (round-trip decimal); missing cells are "NA".
inline std::string report_csv(const std::vector<ReportRow>& rows) {
  std::string out = std::string(kReportHeader) + "\n";
  for (const auto& r : rows)
    out += r.scenario + "," + r.policy + "," + std::to_string(r.trials) + "," + format_double(r.success_rate) + "," +
           optional_cell(r.time_to_goal) + "," + optional_cell(r.frechet) + "\n";
  return out;
}

inline std::vector<ReportRow> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kReportHeader) throw ValidationError("report: unexpected header");
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 6) throw ValidationError("report: row with " + std::to_string(f.size()) + " fields");
    auto opt = [](const std::string& s) -> std::optional<double> {
      if (s == "NA") return std::nullopt;
      return parse_double(s, "report");
    };
    rows.push_back({f[0], f[1], static_cast<std::size_t>(std::stoul(f[2])), parse_double(f[3], "report"), opt(f[4]),
                    opt(f[5])});
  }
  return rows;
}

/// Every episode JSON under `dir` (recursively), grouped by (scenario, policy) in path order.
inline std::vector<TrialSet> load_runs(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw SourceError("runs directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json" && e.path().filename() != "run.json")
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::map<std::pair<std::string, std::string>, TrialSet> groups;
  for (const auto& f : files) {
    auto r = sim::load_episode(f);
    auto& set = groups[{r.scenario, r.policy}];
    set.scenario = r.scenario;
    set.policy = r.policy;
    set.trials.push_back(std::move(r));
  }
  std::vector<TrialSet> out;
  for (auto& [key, set] : groups) out.push_back(std::move(set));
  return out;
}

/// `<scenario>.csv` files in `dir`, keyed by file stem.
inline std::map<std::string, ReferenceTrajectory> load_references(
    const std::filesystem::path& dir, ReferenceProvenance provenance = ReferenceProvenance::Scripted) {
  if (!std::filesystem::is_directory(dir)) throw SourceError("references directory not found: " + dir.string());
  std::map<std::string, ReferenceTrajectory> refs;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".csv") continue;
    ReferenceTrajectory r{read_trajectory(e.path()), provenance};
    r.validate();
    refs.emplace(e.path().stem().string(), std::move(r));
  }
  // Teleop recordings: <dir>/<scenario>/<timestamp>.csv; the latest one wins unless a flat
  // <scenario>.csv is present.
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_directory() || refs.count(e.path().filename().string())) continue;
    std::optional<std::filesystem::path> latest;
    for (const auto& f : std::filesystem::directory_iterator(e.path()))
      if (f.is_regular_file() && f.path().extension() == ".csv" && (!latest || f.path() > *latest)) latest = f.path();
    if (!latest) continue;
    ReferenceTrajectory r{read_trajectory(*latest), ReferenceProvenance::TeleopRecording};
    r.validate();
    refs.emplace(e.path().filename().string(), std::move(r));
  }
  return refs;
}

/// Aligned plain-text table, rounded for reading.
inline std::string report_table(const std::vector<ReportRow>& rows) {
  const std::vector<std::string> head{"Scenario", "Policy", "Trials", "Success Rate (%) ↑", "Time to Goal (s) ↓",
                                      "Fréchet (m) ↓"};
  std::vector<std::vector<std::string>> cells{head};
  auto fixed = [](const std::optional<double>& v, int digits) {
    if (!v) return std::string("NA");
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << *v;
    return s.str();
  };
  for (const auto& r : rows)
    cells.push_back({r.scenario, r.policy, std::to_string(r.trials), fixed(r.success_rate, 1), fixed(r.time_to_goal, 2),
                     fixed(r.frechet, 3)});
  // Width in code points so the arrows and accents line up.
  auto width = [](const std::string& s) {
    return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char c) { return (c & 0xC0) != 0x80; }));
  };
  std::vector<std::size_t> w(head.size(), 0);
  for (const auto& row : cells)
    for (std::size_t k = 0; k < row.size(); ++k) w[k] = std::max(w[k], width(row[k]));
  std::string out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t k = 0; k < cells[r].size(); ++k) {
      out += cells[r][k] + std::string(w[k] - width(cells[r][k]), ' ');
      out += k + 1 < cells[r].size() ? "  " : "\n";
    }
    if (r == 0) {
      for (std::size_t k = 0; k < w.size(); ++k) out += std::string(w[k], '-') + (k + 1 < w.size() ? "  " : "\n");
    }
  }
  return out;
}

}  // namespace vilad::metrics
