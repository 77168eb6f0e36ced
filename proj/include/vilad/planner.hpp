#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include "vilad/camera.hpp"
#include "vilad/costmap.hpp"
#include "vilad/errors.hpp"
#include "vilad/geometry.hpp"
#include "vilad/occupancy.hpp"

namespace vilad::planner {

struct VelocityCommand {
  double v = 0.0;      // m/s
  double omega = 0.0;  // rad/s, positive turns left
  friend bool operator==(const VelocityCommand&, const VelocityCommand&) = default;
};

struct PlannerConfig {
  double beta_goal = 1.0;
  double beta_social = 2.0;
  double horizon = 2.5;  // s
  double dt = 0.05;      // s; both the rollout step and the control period
  double v_max = 1.0;
  double omega_max = 1.0;
  double a_v = 2.0;      // m/s^2
  double a_omega = 4.0;  // rad/s^2
  double robot_radius = 0.35;
  double goal_tolerance = 0.3;
  int n_v = 11;
  int n_omega = 21;

  void validate() const {
    if (beta_goal < 0.0 || beta_social < 0.0 || !(beta_goal + beta_social > 0.0))
      throw ConfigError("cost weights must be nonnegative with a positive sum");
    if (!(dt > 0.0) || !(horizon >= dt)) throw ConfigError("need horizon >= dt > 0");
    if (!(v_max > 0.0) || !(omega_max > 0.0) || !(a_v > 0.0) || !(a_omega > 0.0))
      throw ConfigError("platform limits must be positive");
    if (!(robot_radius > 0.0) || !(goal_tolerance > 0.0)) throw ConfigError("radius and tolerance must be positive");
    if (n_v < 1 || n_omega < 1) throw ConfigError("sample counts must be positive");
  }

  [[nodiscard]] int rollout_steps() const { return static_cast<int>(std::lround(horizon / dt)); }
};

struct VelocityWindow {
  double v_lo = 0.0, v_hi = 0.0;
  double omega_lo = 0.0, omega_hi = 0.0;
  int n_v = 1, n_omega = 1;

  [[nodiscard]] bool contains(VelocityCommand c) const {
    return c.v >= v_lo && c.v <= v_hi && c.omega >= omega_lo && c.omega <= omega_hi;
  }

  /// k-th of n evenly spaced samples over [lo, hi]; n = 1 picks lo.
  static double sample(double lo, double hi, int k, int n) {
    if (n <= 1) return lo;
    if (k == n - 1) return hi;
    return lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n - 1);
  }

  [[nodiscard]] VelocityCommand at(int iv, int iw) const {
    return {sample(v_lo, v_hi, iv, n_v), sample(omega_lo, omega_hi, iw, n_omega)};
  }
};

/// Dynamic window: platform limits intersected with one-period acceleration reach.
/// Reverse driving is not allowed.
inline VelocityWindow admissible_window(VelocityCommand current, const PlannerConfig& cfg) {
  const double dv = cfg.a_v * cfg.dt;
  const double dw = cfg.a_omega * cfg.dt;
  VelocityWindow w;
  w.v_lo = std::max(0.0, current.v - dv);
  w.v_hi = std::min(cfg.v_max, current.v + dv);
  w.omega_lo = std::max(-cfg.omega_max, current.omega - dw);
  w.omega_hi = std::min(cfg.omega_max, current.omega + dw);
  w.n_v = cfg.n_v;
  w.n_omega = cfg.n_omega;
  return w;
}

struct TimedPose {
  double x = 0.0, y = 0.0, theta = 0.0, t = 0.0;
  [[nodiscard]] Point2 position() const { return {x, y}; }
};

/// Robot-frame rollout; poses[0] is the origin at t = 0.
struct Trajectory {
  std::vector<TimedPose> poses;
};

/// Constant-command unicycle motion from the origin after time t.
inline TimedPose unicycle_at(VelocityCommand c, double t) {
  if (std::abs(c.omega) > 1e-6) {
    const double th = c.omega * t;
    return {c.v / c.omega * std::sin(th), c.v / c.omega * (1.0 - std::cos(th)), th, t};
  }
  return {c.v * t, 0.0, c.omega * t, t};
}

inline Trajectory rollout(VelocityCommand cmd, const PlannerConfig& cfg) {
  const int steps = cfg.rollout_steps();
  Trajectory traj;
  traj.poses.reserve(static_cast<std::size_t>(steps) + 1);
  for (int k = 0; k <= steps; ++k) traj.poses.push_back(unicycle_at(cmd, k * cfg.dt));
  return traj;
}

inline bool collision_free(const Trajectory& traj, const Pose2& pose, const OccupancyGrid* occupancy, double radius) {
  if (!occupancy) return true;
  for (const auto& p : traj.poses)
    if (occupancy->disc_collides(to_world(pose, p.position()), radius)) return false;
  return true;
}

struct Candidate {
  VelocityCommand command;
  Trajectory trajectory;
};

/// Window samples whose rollouts keep the robot disc clear of the (world-frame) occupancy grid.
inline std::vector<Candidate> feasible_set(const VelocityWindow& window, const Pose2& pose,
                                           const OccupancyGrid* occupancy, const PlannerConfig& cfg) {
  std::vector<Candidate> out;
  for (int iv = 0; iv < window.n_v; ++iv)
    for (int iw = 0; iw < window.n_omega; ++iw) {
      const VelocityCommand c = window.at(iv, iw);
      Trajectory t = rollout(c, cfg);
      if (collision_free(t, pose, occupancy, cfg.robot_radius)) out.push_back({c, std::move(t)});
    }
  return out;
}

/// Heading-plus-progress goal term in [0, 1]; goal given in the robot frame.
inline double goal_cost(const Trajectory& traj, Point2 goal) {
  const double start = norm(goal);
  if (start <= 0.0 || traj.poses.empty()) return 0.0;
  const TimedPose& end = traj.poses.back();
  const Point2 to_goal = goal - end.position();
  const double remaining = norm(to_goal);
  const double heading =
      remaining > 1e-9 ? std::abs(wrap_angle(std::atan2(to_goal.y, to_goal.x) - end.theta)) / std::numbers::pi : 0.0;
  const double progress = std::clamp(remaining / start, 0.0, 1.0);
  return 0.5 * heading + 0.5 * progress;
}

/// Where the attention map lives relative to the robot.
struct MapProjection {
  CameraModel camera;
  GroundGridGeometry ground;
};

inline std::optional<CostmapIndex> cell_for_pose(const AttentionMap& map, const MapProjection& proj, Point2 p) {
  if (map.frame() == MapFrame::Ground) return proj.ground.cell_for(map, p);
  const auto px = project_ground_to_image(proj.camera, p);
  if (!px) return std::nullopt;
  return cell_for_pixel(proj.camera, map.width(), map.height(), *px);
}

/// traj^C: the in-view cells under each pose, out-of-view poses dropped.
inline std::vector<CostmapIndex> project_trajectory(const Trajectory& traj, const AttentionMap& map,
                                                    const MapProjection& proj) {
  std::vector<CostmapIndex> cells;
  cells.reserve(traj.poses.size());
  for (const auto& p : traj.poses)
    if (const auto c = cell_for_pose(map, proj, p.position())) cells.push_back(*c);
  return cells;
}

inline double social_cost(const Trajectory& traj, const AttentionMap& map, const MapProjection& proj) {
  const auto cells = project_trajectory(traj, map, proj);
  return cells.empty() ? 0.0 : static_cast<double>(sample_max_along(map, cells));
}

// ---------------------------------------------------------------------------

struct PlanRequest {
  VelocityCommand current;
  Pose2 pose;                                // robot pose in the world
  Point2 goal;                               // world frame
  const OccupancyGrid* occupancy = nullptr;  // world frame; null means free space
  const AttentionMap* attention = nullptr;   // null means no social term
  MapProjection projection;
};

struct ScoredCandidate {
  VelocityCommand command;
  double goal = 0.0;
  double social = 0.0;
  double total = 0.0;
};

struct PlanResult {
  VelocityCommand command;
  bool recovery = false;
  VelocityWindow window;
  std::vector<ScoredCandidate> candidates;  // feasible samples in sampling order
};

/// Strict ordering on (J, |omega|, -v, omega); true when a should be chosen over b.
inline bool better(const ScoredCandidate& a, const ScoredCandidate& b) {
  if (a.total != b.total) return a.total < b.total;
  if (std::abs(a.command.omega) != std::abs(b.command.omega)) return std::abs(a.command.omega) < std::abs(b.command.omega);
  if (a.command.v != b.command.v) return a.command.v > b.command.v;
  return a.command.omega < b.command.omega;
}

/// Empty feasible set: slowest admissible speed, turning as hard as allowed toward the goal.
inline VelocityCommand recovery_command(const VelocityWindow& w, Point2 goal_local) {
  const double bearing = std::atan2(goal_local.y, goal_local.x);
  return {w.v_lo, bearing >= 0.0 ? w.omega_hi : w.omega_lo};
}

inline PlanResult plan(const PlanRequest& req, const PlannerConfig& cfg) {
  PlanResult out;
  out.window = admissible_window(req.current, cfg);
  const Point2 goal = to_local(req.pose, req.goal);
  const auto feasible = feasible_set(out.window, req.pose, req.occupancy, cfg);
  if (feasible.empty()) {
    out.command = recovery_command(out.window, goal);
    out.recovery = true;
    return out;
  }
  out.candidates.reserve(feasible.size());
  std::size_t best = 0;
  for (const auto& c : feasible) {
    ScoredCandidate s{c.command, goal_cost(c.trajectory, goal), 0.0, 0.0};
    if (req.attention && cfg.beta_social != 0.0) s.social = social_cost(c.trajectory, *req.attention, req.projection);
    s.total = cfg.beta_goal * s.goal + cfg.beta_social * s.social;
    out.candidates.push_back(s);
    if (better(s, out.candidates[best])) best = out.candidates.size() - 1;
  }
  out.command = out.candidates[best].command;
  return out;
}

}  // namespace vilad::planner
