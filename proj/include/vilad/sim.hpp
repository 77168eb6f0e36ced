#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vilad/annotate.hpp"
#include "vilad/camera.hpp"
#include "vilad/costmap.hpp"
#include "vilad/distill.hpp"
#include "vilad/errors.hpp"
#include "vilad/geometry.hpp"
#include "vilad/image.hpp"
#include "vilad/occupancy.hpp"
#include "vilad/planner.hpp"
#include "vilad/scenario.hpp"
#include "vilad/trajectory_io.hpp"

namespace vilad::sim {

using planner::VelocityCommand;

struct SimConfig {
  double robot_radius = 0.35;
  double pedestrian_radius = 0.3;
  double goal_tolerance = 0.3;
  double occupancy_resolution = 0.1;
};

struct PedestrianState {
  Point2 position;
  Point2 velocity;
};

/// Closed-form pedestrian motion: wait `delay`, then walk the waypoint polyline at constant
/// speed and stop at the last waypoint.
inline PedestrianState pedestrian_at(const PedestrianSpec& p, double t) {
  double s = std::max(0.0, t - p.delay) * p.speed;
  Point2 from = p.start;
  for (const Point2 to : p.waypoints) {
    const double len = distance(from, to);
    if (len <= 0.0) continue;
    const Point2 dir = (1.0 / len) * (to - from);
    if (s < len) return {from + s * dir, t >= p.delay && p.speed > 0.0 ? p.speed * dir : Point2{}};
    s -= len;
    from = to;
  }
  return {from, {}};
}

enum class EpisodeStatus { Running, ReachedGoal, Collision, Timeout };

inline const char* to_string(EpisodeStatus s) {
  switch (s) {
    case EpisodeStatus::Running: return "Running";
    case EpisodeStatus::ReachedGoal: return "ReachedGoal";
    case EpisodeStatus::Collision: return "Collision";
    case EpisodeStatus::Timeout: return "Timeout";
  }
  return "?";
}

inline EpisodeStatus status_from_string(const std::string& s) {
  for (const auto st : {EpisodeStatus::Running, EpisodeStatus::ReachedGoal, EpisodeStatus::Collision, EpisodeStatus::Timeout})
    if (s == to_string(st)) return st;
  throw ValidationError("unknown episode status '" + s + "'");
}

struct WorldState {
  double time = 0.0;
  std::uint64_t step_index = 0;
  Pose2 robot;
  VelocityCommand command;
  std::vector<PedestrianState> pedestrians;
  EpisodeStatus status = EpisodeStatus::Running;
};

/// Scenario geometry plus the kinematic stepping rules.
class World {
 public:
  World(ScenarioSpec spec, SimConfig cfg = {}) : spec_(std::move(spec)), cfg_(cfg) {
    static_occupancy_ = OccupancyGrid::covering(spec_.bounds, cfg_.occupancy_resolution);
    for (const auto& b : spec_.boxes)
      if (b.lidar_visible) static_occupancy_.fill_box(b.box);
    for (const auto& g : spec_.segments)
      if (g.lidar_visible) static_occupancy_.fill_segment(g.a, g.b);
  }

  [[nodiscard]] const ScenarioSpec& spec() const { return spec_; }
  [[nodiscard]] const SimConfig& config() const { return cfg_; }

  [[nodiscard]] WorldState initial_state() const {
    WorldState s;
    s.robot = spec_.robot_start;
    s.pedestrians = pedestrians_at(0.0);
    return s;
  }

  [[nodiscard]] std::vector<PedestrianState> pedestrians_at(double t) const {
    std::vector<PedestrianState> out;
    out.reserve(spec_.pedestrians.size());
    for (const auto& p : spec_.pedestrians) out.push_back(pedestrian_at(p, t));
    return out;
  }

  /// Distance from a point to the nearest static obstacle surface, LiDAR-visible or not.
  [[nodiscard]] double obstacle_distance(Point2 p) const {
    double d = std::numeric_limits<double>::infinity();
    for (const auto& b : spec_.boxes) d = std::min(d, distance_to_box(p, b.box));
    for (const auto& g : spec_.segments) d = std::min(d, distance_to_segment(p, g.a, g.b));
    return d;
  }

  [[nodiscard]] bool inside_bounds(Point2 p, double r) const {
    return p.x - r >= spec_.bounds.min.x && p.y - r >= spec_.bounds.min.y && p.x + r <= spec_.bounds.max.x &&
           p.y + r <= spec_.bounds.max.y;
  }

  [[nodiscard]] bool robot_collides(const Pose2& robot, const std::vector<PedestrianState>& peds) const {
    const Point2 p = robot.position();
    if (!inside_bounds(p, cfg_.robot_radius)) return true;
    if (obstacle_distance(p) < cfg_.robot_radius) return true;
    for (const auto& ped : peds)
      if (distance(p, ped.position) < cfg_.robot_radius + cfg_.pedestrian_radius) return true;
    return false;
  }

  /// Smallest surface gap between the robot and any pedestrian; nullopt without pedestrians.
  [[nodiscard]] std::optional<double> pedestrian_clearance(const WorldState& s) const {
    std::optional<double> best;
    for (const auto& ped : s.pedestrians) {
      const double gap = distance(s.robot.position(), ped.position) - cfg_.robot_radius - cfg_.pedestrian_radius;
      if (!best || gap < *best) best = gap;
    }
    return best;
  }

  /// Advances by an exact unicycle arc, then checks collision, goal and time limit in that order.
  [[nodiscard]] WorldState step(const WorldState& s, VelocityCommand cmd, double dt) const {
    if (s.status != EpisodeStatus::Running) throw StateError(std::string("cannot step a finished episode (") + to_string(s.status) + ")");
    if (!(dt > 0.0)) throw ValidationError("step dt must be positive");
    WorldState n = s;
    const auto local = planner::unicycle_at(cmd, dt);
    n.robot = compose(s.robot, {local.x, local.y, local.theta});
    n.robot.theta = wrap_angle(n.robot.theta);
    n.command = cmd;
    n.step_index = s.step_index + 1;
    n.time = s.time + dt;
    n.pedestrians = pedestrians_at(n.time);
    if (robot_collides(n.robot, n.pedestrians)) n.status = EpisodeStatus::Collision;
    else if (distance(n.robot.position(), spec_.goal) <= cfg_.goal_tolerance) n.status = EpisodeStatus::ReachedGoal;
    else if (n.time >= spec_.time_limit - 1e-9) n.status = EpisodeStatus::Timeout;
    return n;
  }

  /// What a LiDAR would report: visible static obstacles plus current pedestrian discs.
  [[nodiscard]] OccupancyGrid occupancy(const WorldState& s) const {
    OccupancyGrid g = static_occupancy_;
    for (const auto& ped : s.pedestrians) g.fill_disc(ped.position, cfg_.pedestrian_radius);
    return g;
  }

  [[nodiscard]] const OccupancyGrid& static_occupancy() const { return static_occupancy_; }

  /// Ground truth in the robot frame, for the offline annotation oracle.
  [[nodiscard]] annotate::SceneTruth truth(const WorldState& s, const CameraModel& cam) const {
    annotate::SceneTruth t;
    t.camera = cam;
    t.degraded_lighting = spec_.darkened;
    for (const auto& ped : s.pedestrians)
      t.pedestrians.push_back({to_local(s.robot, ped.position), rotate(ped.velocity, -s.robot.theta)});
    return t;
  }

 private:
  ScenarioSpec spec_;
  SimConfig cfg_;
  OccupancyGrid static_occupancy_;
};

/// Checks the ScenarioSpec invariants for a given robot size.
inline void validate(const ScenarioSpec& s, const SimConfig& cfg = {}) {
  if (!(s.bounds.max.x > s.bounds.min.x && s.bounds.max.y > s.bounds.min.y))
    throw ValidationError("scenario bounds are empty");
  if (!(s.time_limit > 0.0)) throw ValidationError("time limit must be positive");
  for (const auto& p : s.pedestrians)
    if (!(p.speed >= 0.0) || p.delay < 0.0) throw ValidationError("pedestrian speed and delay must be nonnegative");
  const World w(s, cfg);
  if (w.robot_collides(s.robot_start, w.pedestrians_at(0.0)))
    throw ValidationError("robot start of scenario " + s.id + " is not collision-free");
  if (!w.inside_bounds(s.goal, 0.0) || w.obstacle_distance(s.goal) < cfg.robot_radius)
    throw ValidationError("goal of scenario " + s.id + " is outside bounds or blocked");
}

// ---------------------------------------------------------------------------
// Synthetic attention

enum class AttentionMode { PretrainedLike, GroundTruthSocial };

struct SynthConfig {
  double sigma = 0.4;            // m
  double horizon = 3.0;          // s of constant-velocity extrapolation
  double sample_dt = 0.25;       // s between extrapolated blobs
  double end_peak = 0.4;         // blob peak at the end of the horizon
  std::size_t grid_width = 32;
  std::size_t grid_height = 24;
};

/// Gaussian blobs over what the camera could see, evaluated at the ground point under each
/// cell center and min-max normalized. Cells at or above the horizon stay zero.
inline AttentionMap synth_attention(const World& world, const WorldState& s, const CameraModel& cam, AttentionMode mode,
                                    const SynthConfig& cfg = {}) {
  const double inv = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
  auto blob = [inv](double d) { return std::exp(-d * d * inv); };
  struct Center {
    Point2 p;
    double peak;
  };
  std::vector<Center> centers;
  for (const auto& ped : s.pedestrians) {
    centers.push_back({ped.position, 1.0});
    if (mode == AttentionMode::GroundTruthSocial && norm(ped.velocity) > 0.0) {
      const int n = static_cast<int>(std::floor(cfg.horizon / cfg.sample_dt + 1e-9));
      for (int k = 1; k <= n; ++k) {
        const double tau = k * cfg.sample_dt;
        centers.push_back({ped.position + tau * ped.velocity, 1.0 - (1.0 - cfg.end_peak) * tau / cfg.horizon});
      }
    }
  }
  const auto& spec = world.spec();
  std::vector<double> raw(cfg.grid_width * cfg.grid_height, 0.0);
  for (std::size_t i = 0; i < cfg.grid_height; ++i)
    for (std::size_t j = 0; j < cfg.grid_width; ++j) {
      const auto g = unproject_to_ground(cam, cell_center_pixel(cam, cfg.grid_width, cfg.grid_height, {i, j}));
      if (!g) continue;
      const Point2 q = to_world(s.robot, *g);
      double v = 0.0;
      for (const auto& b : spec.boxes) v = std::max(v, blob(distance_to_box(q, b.box)));
      for (const auto& seg : spec.segments) v = std::max(v, blob(distance_to_segment(q, seg.a, seg.b)));
      for (const auto& c : centers) v = std::max(v, c.peak * blob(distance(q, c.p)));
      raw[i * cfg.grid_width + j] = v;
    }
  return normalize(cfg.grid_width, cfg.grid_height, raw,
                   mode == AttentionMode::PretrainedLike ? MapRole::Pretrained : MapRole::Synthetic, MapFrame::Image);
}

// ---------------------------------------------------------------------------
// Rendering

struct RenderConfig {
  double pedestrian_width = 0.6;
  double pedestrian_height = 1.7;
  double dark_brightness = 0.45;
  double dark_contrast = 0.7;
};

namespace detail {

using Rgb = std::array<std::uint8_t, 3>;

inline Rgb shade(Rgb c, double f) {
  return {static_cast<std::uint8_t>(std::clamp(std::lround(c[0] * f), 0L, 255L)),
          static_cast<std::uint8_t>(std::clamp(std::lround(c[1] * f), 0L, 255L)),
          static_cast<std::uint8_t>(std::clamp(std::lround(c[2] * f), 0L, 255L))};
}

inline Rgb obstacle_color(const std::string& kind) {
  if (kind == "curb") return {205, 200, 170};
  if (kind == "fence") return {95, 70, 45};
  if (kind == "wall") return {170, 165, 160};
  if (kind == "furniture") return {120, 60, 35};
  return {150, 110, 70};
}

inline constexpr std::array<Rgb, 6> kPedestrianColors{
    {{200, 40, 40}, {40, 60, 200}, {220, 160, 0}, {150, 0, 150}, {0, 150, 150}, {230, 90, 20}}};

// Sky and ground depend only on the image row, so an empty scene is a pure vertical gradient.
inline Rgb background(const CameraModel& cam, int row, bool ground) {
  const double f = static_cast<double>(row) / std::max(1, cam.image_height - 1);
  if (ground) return {static_cast<std::uint8_t>(70 + 60 * f), static_cast<std::uint8_t>(85 + 55 * f), static_cast<std::uint8_t>(60 + 30 * f)};
  return {static_cast<std::uint8_t>(120 + 80 * f), static_cast<std::uint8_t>(160 + 60 * f), 235};
}

}  // namespace detail

/// Low-light variant: contrast squeeze around mid-gray, then brightness scale.
inline void darken(RgbImage& img, const RenderConfig& cfg = {}) {
  for (auto& c : img.rgb)
    c = static_cast<std::uint8_t>(
        std::clamp(std::lround(cfg.dark_brightness * (cfg.dark_contrast * (c - 128.0) + 128.0)), 0L, 255L));
}

/// Per-pixel ray casting against the ground plane, box prisms, vertical segment quads and
/// camera-facing pedestrian billboards. Flat shading; nearest hit wins.
inline ImageFrame render_frame(const World& world, const WorldState& s, const CameraModel& cam,
                               const RenderConfig& cfg = {}) {
  const auto& spec = world.spec();
  const auto ax = vilad::detail::camera_axes(cam);
  const double c = std::cos(s.robot.theta);
  const double sn = std::sin(s.robot.theta);
  auto to_world_dir = [&](vilad::detail::Vec3 d) { return vilad::detail::Vec3{c * d.x - sn * d.y, sn * d.x + c * d.y, d.z}; };
  const vilad::detail::Vec3 origin{s.robot.x, s.robot.y, cam.height_m};

  struct Billboard {
    Point2 center;
    Point2 lateral;  // unit, perpendicular to the camera's line of sight
    Point2 normal;
    detail::Rgb color;
  };
  std::vector<Billboard> boards;
  for (std::size_t k = 0; k < s.pedestrians.size(); ++k) {
    const Point2 p = s.pedestrians[k].position;
    const Point2 los = p - s.robot.position();
    const double len = norm(los);
    if (len < 1e-6) continue;
    const Point2 n = (1.0 / len) * los;
    boards.push_back({p, {-n.y, n.x}, n, detail::kPedestrianColors[k % detail::kPedestrianColors.size()]});
  }

  ImageFrame frame{RgbImage(cam.image_width, cam.image_height), s.time, s.step_index};
  for (int v = 0; v < cam.image_height; ++v)
    for (int u = 0; u < cam.image_width; ++u) {
      const double a = (u + 0.5 - cam.u0) / cam.focal_px;
      const double b = (v + 0.5 - cam.v0) / cam.focal_px;
      const vilad::detail::Vec3 d = to_world_dir({ax.right.x * a + ax.down.x * b + ax.optical.x,
                                           ax.right.y * a + ax.down.y * b + ax.optical.y,
                                           ax.right.z * a + ax.down.z * b + ax.optical.z});
      double best = std::numeric_limits<double>::infinity();
      detail::Rgb color = detail::background(cam, v, d.z < 0.0);
      if (d.z < 0.0) best = origin.z / -d.z;

      for (const auto& box : spec.boxes) {
        // Slab test against [min, max] x [0, height].
        double t0 = 0.0, t1 = best;
        int axis = -1;
        const double o[3] = {origin.x, origin.y, origin.z};
        const double dd[3] = {d.x, d.y, d.z};
        const double lo[3] = {box.box.min.x, box.box.min.y, 0.0};
        const double hi[3] = {box.box.max.x, box.box.max.y, box.height};
        bool hit = true;
        for (int k = 0; k < 3 && hit; ++k) {
          if (std::abs(dd[k]) < 1e-12) {
            if (o[k] < lo[k] || o[k] > hi[k]) hit = false;
            continue;
          }
          double ta = (lo[k] - o[k]) / dd[k];
          double tb = (hi[k] - o[k]) / dd[k];
          if (ta > tb) std::swap(ta, tb);
          if (ta > t0) {
            t0 = ta;
            axis = k;
          }
          t1 = std::min(t1, tb);
          if (t0 > t1) hit = false;
        }
        if (hit && axis >= 0 && t0 < best) {
          best = t0;
          color = detail::shade(detail::obstacle_color(box.kind), axis == 0 ? 0.85 : axis == 1 ? 1.0 : 1.15);
        }
      }

      for (const auto& seg : spec.segments) {
        // Vertical quad through a-b: solve origin + t d = a + s (b - a) in the plane.
        const Point2 e = seg.b - seg.a;
        const double den = d.x * e.y - d.y * e.x;
        if (std::abs(den) < 1e-12) continue;
        const double wx = seg.a.x - origin.x;
        const double wy = seg.a.y - origin.y;
        const double t = (wx * e.y - wy * e.x) / den;
        const double sp = (wx * d.y - wy * d.x) / den;
        if (t <= 0.0 || t >= best || sp < 0.0 || sp > 1.0) continue;
        const double z = origin.z + t * d.z;
        if (z < 0.0 || z > seg.height) continue;
        best = t;
        color = detail::shade(detail::obstacle_color(seg.kind), 0.9 + 0.2 * std::abs(e.x) / std::max(norm(e), 1e-12));
      }

      for (const auto& bb : boards) {
        const double den = d.x * bb.normal.x + d.y * bb.normal.y;
        if (den <= 1e-12) continue;
        const double t = ((bb.center.x - origin.x) * bb.normal.x + (bb.center.y - origin.y) * bb.normal.y) / den;
        if (t <= 0.0 || t >= best) continue;
        const Point2 h{origin.x + t * d.x, origin.y + t * d.y};
        const double z = origin.z + t * d.z;
        if (std::abs(dot(h - bb.center, bb.lateral)) > 0.5 * cfg.pedestrian_width || z < 0.0 || z > cfg.pedestrian_height)
          continue;
        best = t;
        color = z > 0.85 * cfg.pedestrian_height ? detail::shade(bb.color, 0.7) : bb.color;
      }
      frame.image.set(u, v, color);
    }
  if (spec.darkened) darken(frame.image, cfg);
  return frame;
}

// ---------------------------------------------------------------------------
// Episodes

enum class PolicyKind { GoalOnly, Synth, Model, Teleop };

struct PolicySpec {
  PolicyKind kind = PolicyKind::GoalOnly;
  AttentionMode mode = AttentionMode::GroundTruthSocial;
  std::string model_path;

  /// goal_only | synth:pretrained_like | synth:ground_truth_social | vilad:<model.vlad> | teleop
  static PolicySpec parse(const std::string& text) {
    if (text == "goal_only") return {PolicyKind::GoalOnly, {}, {}};
    if (text == "teleop") return {PolicyKind::Teleop, {}, {}};
    if (text == "synth:pretrained_like") return {PolicyKind::Synth, AttentionMode::PretrainedLike, {}};
    if (text == "synth:ground_truth_social") return {PolicyKind::Synth, AttentionMode::GroundTruthSocial, {}};
    if (text.rfind("vilad:", 0) == 0 && text.size() > 6) return {PolicyKind::Model, {}, text.substr(6)};
    throw ConfigError("unknown policy '" + text +
                      "' (expected goal_only, synth:pretrained_like, synth:ground_truth_social, vilad:<model>, teleop)");
  }

  /// Short identifier used in output paths; the model path is reduced to "vilad".
  [[nodiscard]] std::string name() const {
    switch (kind) {
      case PolicyKind::GoalOnly: return "goal_only";
      case PolicyKind::Teleop: return "teleop";
      case PolicyKind::Model: return "vilad";
      case PolicyKind::Synth: return mode == AttentionMode::PretrainedLike ? "synth_pretrained_like" : "synth_ground_truth_social";
    }
    return "?";
  }
};

struct EpisodeConfig {
  planner::PlannerConfig planner;
  SimConfig sim;
  CameraModel camera;
  SynthConfig synth;
  std::uint64_t trial_seed = 0;
};

struct StepDiagnostics {
  double t = 0.0;
  double cost = 0.0;  // J of the chosen command, 0 for recovery/teleop
  std::size_t feasible = 0;
  bool recovery = false;
};

struct EpisodeResult {
  std::string scenario;
  std::string policy;
  std::uint64_t seed = 0;
  EpisodeStatus status = EpisodeStatus::Running;
  std::vector<TrajectorySample> trajectory;
  std::optional<double> time_to_goal;
  std::optional<double> min_clearance;
  std::vector<StepDiagnostics> diagnostics;
};

/// Output of one control decision.
struct Decision {
  VelocityCommand command;
  std::optional<AttentionMap> attention;
  std::optional<planner::PlanResult> plan;
};

class Controller {
 public:
  virtual ~Controller() = default;
  virtual Decision decide(const World& world, const WorldState& state) = 0;
};

/// Sense, build the attention map (or none for goal-only), plan.
class PlannerController final : public Controller {
 public:
  PlannerController(PolicySpec policy, EpisodeConfig cfg, std::shared_ptr<const distill::AttentionModel> model = nullptr)
      : policy_(std::move(policy)), cfg_(std::move(cfg)), model_(std::move(model)) {
    if (policy_.kind == PolicyKind::Teleop) throw ConfigError("teleop is not a planner policy");
    if (policy_.kind == PolicyKind::Model && !model_) throw ConfigError("model policy needs a loaded model");
    if (policy_.kind == PolicyKind::GoalOnly) cfg_.planner.beta_social = 0.0;
    cfg_.planner.robot_radius = cfg_.sim.robot_radius;
    cfg_.planner.validate();
  }

  [[nodiscard]] std::optional<AttentionMap> sense(const World& world, const WorldState& s) {
    switch (policy_.kind) {
      case PolicyKind::Synth: return synth_attention(world, s, cfg_.camera, policy_.mode, cfg_.synth);
      case PolicyKind::Model: {
        frames_.push_back(render_frame(world, s, cfg_.camera));
        const auto need = static_cast<std::size_t>(model_->config.history) + 1;
        while (frames_.size() < need) frames_.push_front(frames_.front());
        while (frames_.size() > need) frames_.pop_front();
        const std::vector<ImageFrame> seq(frames_.begin(), frames_.end());
        return distill::forward(*model_, distill::ImageSequence::from_frames(seq, model_->config));
      }
      default: return std::nullopt;
    }
  }

  Decision decide(const World& world, const WorldState& s) override {
    Decision d;
    d.attention = sense(world, s);
    const OccupancyGrid occ = world.occupancy(s);
    planner::PlanRequest req;
    req.current = s.command;
    req.pose = s.robot;
    req.goal = world.spec().goal;
    req.occupancy = &occ;
    req.attention = d.attention ? &*d.attention : nullptr;
    req.projection.camera = cfg_.camera;
    d.plan = planner::plan(req, cfg_.planner);
    d.command = d.plan->command;
    return d;
  }

  [[nodiscard]] const planner::PlannerConfig& planner_config() const { return cfg_.planner; }

 private:
  PolicySpec policy_;
  EpisodeConfig cfg_;
  std::shared_ptr<const distill::AttentionModel> model_;
  std::deque<ImageFrame> frames_;
};

/// Commands from an external source, clamped to the platform limits.
class TeleopController final : public Controller {
 public:
  using Source = std::function<VelocityCommand(const WorldState&)>;
  TeleopController(Source source, planner::PlannerConfig limits) : source_(std::move(source)), limits_(limits) {}

  Decision decide(const World&, const WorldState& s) override {
    const VelocityCommand c = source_(s);
    return {clamp(c), std::nullopt, std::nullopt};
  }

  [[nodiscard]] VelocityCommand clamp(VelocityCommand c) const {
    auto finite = [](double x) { return std::isfinite(x) ? x : 0.0; };
    return {std::clamp(finite(c.v), 0.0, limits_.v_max), std::clamp(finite(c.omega), -limits_.omega_max, limits_.omega_max)};
  }

 private:
  Source source_;
  planner::PlannerConfig limits_;
};

inline TrajectorySample sample_of(const WorldState& s) {
  return {s.time, s.robot.x, s.robot.y, s.robot.theta, s.command.v, s.command.omega};
}

/// Observer hook for callers that want every tick (server snapshots, timing).
using TickObserver = std::function<void(const WorldState&, const Decision&)>;

inline EpisodeResult run_episode(const World& world, Controller& controller, const EpisodeConfig& cfg,
                                 const std::string& policy_name, const TickObserver& observer = {}) {
  EpisodeResult r;
  r.scenario = world.spec().id;
  r.policy = policy_name;
  r.seed = cfg.trial_seed;
  WorldState s = world.initial_state();
  r.trajectory.push_back(sample_of(s));
  r.min_clearance = world.pedestrian_clearance(s);
  while (s.status == EpisodeStatus::Running) {
    const Decision d = controller.decide(world, s);
    StepDiagnostics diag{s.time, 0.0, 0, false};
    if (d.plan) {
      diag.recovery = d.plan->recovery;
      diag.feasible = d.plan->candidates.size();
      for (const auto& c : d.plan->candidates)
        if (c.command == d.command) diag.cost = c.total;
    }
    r.diagnostics.push_back(diag);
    if (observer) observer(s, d);
    s = world.step(s, d.command, cfg.planner.dt);
    r.trajectory.push_back(sample_of(s));
    if (const auto c = world.pedestrian_clearance(s); c && (!r.min_clearance || *c < *r.min_clearance)) r.min_clearance = c;
  }
  r.status = s.status;
  if (s.status == EpisodeStatus::ReachedGoal) r.time_to_goal = s.time;
  return r;
}

/// One trial: jitter the scenario by the trial seed, build the controller, run.
inline EpisodeResult run_trial(const ScenarioSpec& scenario, const PolicySpec& policy, EpisodeConfig cfg,
                               std::uint64_t trial_seed,
                               std::shared_ptr<const distill::AttentionModel> model = nullptr) {
  cfg.trial_seed = trial_seed;
  const World world(instantiate(scenario, trial_seed), cfg.sim);
  PlannerController controller(policy, cfg, std::move(model));
  return run_episode(world, controller, cfg, policy.name());
}

// ---------------------------------------------------------------------------
// Result files

inline nlohmann::json to_json(const EpisodeResult& r, const std::string& trajectory_file = "") {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json diag = nlohmann::json::array();
  for (const auto& d : r.diagnostics) diag.push_back({d.t, d.cost, d.feasible, d.recovery});
  return {{"scenario", r.scenario},
          {"policy", r.policy},
          {"seed", r.seed},
          {"status", to_string(r.status)},
          {"time_to_goal", opt(r.time_to_goal)},
          {"min_clearance", opt(r.min_clearance)},
          {"steps", r.trajectory.empty() ? 0 : r.trajectory.size() - 1},
          {"trajectory_csv", trajectory_file},
          {"diagnostics_columns", {"t", "cost", "feasible", "recovery"}},
          {"diagnostics", diag}};
}

/// Reads the summary fields back; the trajectory comes from the CSV next to the JSON.
inline EpisodeResult episode_from_json(const nlohmann::json& j, std::vector<TrajectorySample> trajectory) {
  EpisodeResult r;
  try {
    r.scenario = j.at("scenario").get<std::string>();
    r.policy = j.at("policy").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.status = status_from_string(j.at("status").get<std::string>());
    if (!j.at("time_to_goal").is_null()) r.time_to_goal = j.at("time_to_goal").get<double>();
    if (!j.at("min_clearance").is_null()) r.min_clearance = j.at("min_clearance").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("episode result: ") + e.what());
  }
  r.trajectory = std::move(trajectory);
  return r;
}

/// Writes `<stem>.json` and `<stem>.csv` into `dir`.
inline void save_episode(const std::filesystem::path& dir, const std::string& stem, const EpisodeResult& r) {
  std::filesystem::create_directories(dir);
  write_trajectory(dir / (stem + ".csv"), r.trajectory);
  binary::write_text(dir / (stem + ".json"), to_json(r, stem + ".csv").dump(2) + "\n");
}

inline EpisodeResult load_episode(const std::filesystem::path& json_path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(binary::read_text(json_path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(json_path.string() + ": " + e.what());
  }
  const auto csv = j.is_object() ? j.value("trajectory_csv", std::string{}) : std::string{};
  if (csv.empty()) throw ValidationError(json_path.string() + ": no trajectory_csv");
  return episode_from_json(j, read_trajectory(json_path.parent_path() / csv));
}

}  // namespace vilad::sim
