#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vilad/binary_io.hpp"
#include "vilad/errors.hpp"
#include "vilad/geometry.hpp"

namespace vilad::sim {

struct BoxObstacle {
  Box2 box;
  double height = 1.0;
  bool lidar_visible = true;
  std::string kind = "box";
  friend bool operator==(const BoxObstacle&, const BoxObstacle&) = default;
};

/// Thin vertical obstacle: fences, walls, curbs.
struct SegmentObstacle {
  Point2 a;
  Point2 b;
  double height = 1.0;
  bool lidar_visible = true;
  std::string kind = "fence";
  friend bool operator==(const SegmentObstacle&, const SegmentObstacle&) = default;
};

struct PedestrianSpec {
  Point2 start;
  std::vector<Point2> waypoints;
  double speed = 1.0;  // m/s
  double delay = 0.0;  // s before the pedestrian starts walking
  friend bool operator==(const PedestrianSpec&, const PedestrianSpec&) = default;
};

/// Per-trial randomization, all uniform and symmetric around the scripted value.
struct TrialJitter {
  double pedestrian_speed = 0.0;  // relative, e.g. 0.1 = +-10 %
  double pedestrian_delay = 0.0;  // s
  double start_lateral = 0.0;     // m, perpendicular to the start heading
  double start_heading = 0.0;     // rad
  friend bool operator==(const TrialJitter&, const TrialJitter&) = default;
};

struct ScenarioSpec {
  std::string id;
  std::string description;
  std::string setting = "outdoor";  // metadata only
  Box2 bounds{{0.0, -5.0}, {15.0, 5.0}};
  std::vector<BoxObstacle> boxes;
  std::vector<SegmentObstacle> segments;
  std::vector<PedestrianSpec> pedestrians;
  Pose2 robot_start;
  Point2 goal{10.0, 0.0};
  double time_limit = 60.0;
  std::uint64_t seed = 0;
  bool darkened = false;  // render with the low-light transform
  TrialJitter jitter;

  friend bool operator==(const ScenarioSpec&, const ScenarioSpec&) = default;
};

// ---------------------------------------------------------------------------
// JSON

using nlohmann::json;

inline json point_json(Point2 p) { return json::array({p.x, p.y}); }

inline Point2 point_from(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw ValidationError(what + " must be [x, y]");
  return {j[0].get<double>(), j[1].get<double>()};
}

inline json to_json(const ScenarioSpec& s) {
  json boxes = json::array();
  for (const auto& b : s.boxes)
    boxes.push_back({{"min", point_json(b.box.min)},
                     {"max", point_json(b.box.max)},
                     {"height", b.height},
                     {"lidar_visible", b.lidar_visible},
                     {"kind", b.kind}});
  json segments = json::array();
  for (const auto& g : s.segments)
    segments.push_back({{"a", point_json(g.a)},
                        {"b", point_json(g.b)},
                        {"height", g.height},
                        {"lidar_visible", g.lidar_visible},
                        {"kind", g.kind}});
  json peds = json::array();
  for (const auto& p : s.pedestrians) {
    json wps = json::array();
    for (const auto& w : p.waypoints) wps.push_back(point_json(w));
    peds.push_back({{"start", point_json(p.start)}, {"waypoints", wps}, {"speed", p.speed}, {"delay", p.delay}});
  }
  return {{"id", s.id},
          {"description", s.description},
          {"setting", s.setting},
          {"bounds", {{"min", point_json(s.bounds.min)}, {"max", point_json(s.bounds.max)}}},
          {"obstacles", {{"boxes", boxes}, {"segments", segments}}},
          {"pedestrians", peds},
          {"robot_start", {{"x", s.robot_start.x}, {"y", s.robot_start.y}, {"theta", s.robot_start.theta}}},
          {"goal", point_json(s.goal)},
          {"time_limit", s.time_limit},
          {"seed", s.seed},
          {"darkened", s.darkened},
          {"trial_jitter",
           {{"pedestrian_speed", s.jitter.pedestrian_speed},
            {"pedestrian_delay", s.jitter.pedestrian_delay},
            {"start_lateral", s.jitter.start_lateral},
            {"start_heading", s.jitter.start_heading}}}};
}

/// Throws ValidationError on missing fields, bad types or violated invariants.
inline ScenarioSpec scenario_from_json(const json& j) {
  try {
    ScenarioSpec s;
    s.id = j.at("id").get<std::string>();
    s.description = j.value("description", "");
    s.setting = j.value("setting", "outdoor");
    s.bounds = {point_from(j.at("bounds").at("min"), "bounds.min"), point_from(j.at("bounds").at("max"), "bounds.max")};
    if (j.contains("obstacles")) {
      const auto& o = j.at("obstacles");
      for (const auto& b : o.value("boxes", json::array()))
        s.boxes.push_back({{point_from(b.at("min"), "box.min"), point_from(b.at("max"), "box.max")},
                           b.value("height", 1.0),
                           b.value("lidar_visible", true),
                           b.value("kind", "box")});
      for (const auto& g : o.value("segments", json::array()))
        s.segments.push_back({point_from(g.at("a"), "segment.a"), point_from(g.at("b"), "segment.b"),
                              g.value("height", 1.0), g.value("lidar_visible", true), g.value("kind", "fence")});
    }
    for (const auto& p : j.value("pedestrians", json::array())) {
      PedestrianSpec ped;
      ped.start = point_from(p.at("start"), "pedestrian.start");
      for (const auto& w : p.at("waypoints")) ped.waypoints.push_back(point_from(w, "pedestrian waypoint"));
      ped.speed = p.at("speed").get<double>();
      ped.delay = p.value("delay", 0.0);
      s.pedestrians.push_back(std::move(ped));
    }
    const auto& r = j.at("robot_start");
    s.robot_start = {r.at("x").get<double>(), r.at("y").get<double>(), r.value("theta", 0.0)};
    s.goal = point_from(j.at("goal"), "goal");
    s.time_limit = j.at("time_limit").get<double>();
    s.seed = j.value("seed", std::uint64_t{0});
    s.darkened = j.value("darkened", false);
    if (j.contains("trial_jitter")) {
      const auto& t = j.at("trial_jitter");
      s.jitter = {t.value("pedestrian_speed", 0.0), t.value("pedestrian_delay", 0.0), t.value("start_lateral", 0.0),
                  t.value("start_heading", 0.0)};
    }
    return s;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("scenario: ") + e.what());
  }
}

inline ScenarioSpec load_scenario(const std::filesystem::path& path) {
  const auto j = json::parse(binary::read_text(path), nullptr, false);
  if (j.is_discarded()) throw ValidationError("scenario " + path.string() + " is not valid JSON");
  return scenario_from_json(j);
}

inline void save_scenario(const ScenarioSpec& s, const std::filesystem::path& path) {
  binary::write_text(path, to_json(s).dump(2) + "\n");
}

// ---------------------------------------------------------------------------

/// Trial variant of a scenario: jitter drawn from (scenario seed, trial seed).
inline ScenarioSpec instantiate(const ScenarioSpec& base, std::uint64_t trial_seed) {
  ScenarioSpec s = base;
  std::seed_seq seq{static_cast<std::uint32_t>(base.seed), static_cast<std::uint32_t>(base.seed >> 32),
                    static_cast<std::uint32_t>(trial_seed), static_cast<std::uint32_t>(trial_seed >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& p : s.pedestrians) {
    p.speed *= 1.0 + s.jitter.pedestrian_speed * u(rng);
    p.delay = std::max(0.0, p.delay + s.jitter.pedestrian_delay * u(rng));
  }
  const double lateral = s.jitter.start_lateral * u(rng);
  s.robot_start.x -= lateral * std::sin(s.robot_start.theta);
  s.robot_start.y += lateral * std::cos(s.robot_start.theta);
  s.robot_start.theta += s.jitter.start_heading * u(rng);
  return s;
}

}  // namespace vilad::sim
