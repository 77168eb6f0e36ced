#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>

#include <nlohmann/json.hpp>

#include "vilad/codec.hpp"
#include "vilad/errors.hpp"
#include "vilad/grid_io.hpp"
#include "vilad/planner.hpp"
#include "vilad/sim.hpp"

// Wire format between the live server and its clients: one JSON object per WebSocket text
// message, {"type": ..., "seq": ..., "payload": {...}}. Unknown fields are ignored.
namespace vilad::protocol {

using json = nlohmann::json;

inline constexpr std::size_t kMaxMessageBytes = 256 * 1024;

/// Client -> server.
struct Teleop {
  double v = 0.0;
  double omega = 0.0;
  std::optional<double> client_time;
};

enum class ControlAction { RecordStart, RecordStop, Reset };

inline const char* to_string(ControlAction a) {
  switch (a) {
    case ControlAction::RecordStart: return "record_start";
    case ControlAction::RecordStop: return "record_stop";
    case ControlAction::Reset: return "reset";
  }
  return "?";
}

struct Control {
  ControlAction action = ControlAction::RecordStart;
};

struct ClientMessage {
  std::uint64_t seq = 0;
  std::variant<Teleop, Control> body;
};

/// Malformed client message; `seq` is echoed back when it could be read.
class ProtocolError : public ValidationError {
 public:
  ProtocolError(const std::string& what, std::optional<std::uint64_t> seq) : ValidationError(what), seq_(seq) {}
  [[nodiscard]] std::optional<std::uint64_t> seq() const { return seq_; }

 private:
  std::optional<std::uint64_t> seq_;
};

inline ClientMessage parse_client_message(std::string_view text) {
  if (text.size() > kMaxMessageBytes) throw ProtocolError("message larger than 256 KiB", std::nullopt);
  const json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ProtocolError("message is not a JSON object", std::nullopt);
  std::optional<std::uint64_t> seq;
  if (const auto it = j.find("seq"); it != j.end() && it->is_number_unsigned()) seq = it->get<std::uint64_t>();
  auto fail = [&seq](const std::string& why) { return ProtocolError(why, seq); };
  if (!seq) throw fail("seq must be a non-negative integer");
  const auto type = j.find("type");
  if (type == j.end() || !type->is_string()) throw fail("type must be a string");
  const auto payload = j.find("payload");
  if (payload == j.end() || !payload->is_object()) throw fail("payload must be an object");
  auto number = [&](const char* key) {
    const auto it = payload->find(key);
    if (it == payload->end() || !it->is_number()) throw fail(std::string("payload.") + key + " must be a number");
    const double x = it->get<double>();
    if (!std::isfinite(x)) throw fail(std::string("payload.") + key + " must be finite");
    return x;
  };

  ClientMessage m;
  m.seq = *seq;
  const auto t = type->get<std::string>();
  if (t == "teleop") {
    Teleop c{number("v"), number("omega"), std::nullopt};
    if (payload->contains("client_time")) c.client_time = number("client_time");
    m.body = c;
  } else if (t == "control") {
    const auto a = payload->find("action");
    if (a == payload->end() || !a->is_string()) throw fail("payload.action must be a string");
    const auto name = a->get<std::string>();
    if (name == "record_start") m.body = Control{ControlAction::RecordStart};
    else if (name == "record_stop") m.body = Control{ControlAction::RecordStop};
    else if (name == "reset") m.body = Control{ControlAction::Reset};
    else throw fail("unknown control action '" + name + "'");
  } else if (t == "snapshot" || t == "error") {
    throw fail("'" + t + "' messages are sent by the server only");
  } else {
    throw fail("unknown message type '" + t + "'");
  }
  return m;
}

inline std::string envelope(const std::string& type, std::uint64_t seq, const std::string& payload_text) {
  return R"({"type":")" + type + R"(","seq":)" + std::to_string(seq) + R"(,"payload":)" + payload_text + "}";
}

inline std::string envelope(const std::string& type, std::uint64_t seq, const json& payload) {
  return envelope(type, seq, payload.dump());
}

inline json error_payload(const std::string& message, std::optional<std::uint64_t> ref_seq) {
  return {{"message", message}, {"ref_seq", ref_seq ? json(*ref_seq) : json(nullptr)}};
}

/// Client-side helpers (tests, scripted drivers).
inline std::string teleop_message(std::uint64_t seq, double v, double omega, std::optional<double> client_time = {}) {
  json p{{"v", v}, {"omega", omega}};
  if (client_time) p["client_time"] = *client_time;
  return envelope("teleop", seq, p);
}

inline std::string control_message(std::uint64_t seq, ControlAction a) {
  return envelope("control", seq, json{{"action", to_string(a)}});
}

// ---------------------------------------------------------------------------
// Snapshot payload

inline const char* role_name(MapRole r) {
  switch (r) {
    case MapRole::Pretrained: return "pretrained";
    case MapRole::Vlm: return "vlm";
    case MapRole::Distilled: return "distilled";
    case MapRole::Synthetic: return "synthetic";
  }
  return "?";
}

inline json point(Point2 p) { return json::array({p.x, p.y}); }

inline json scene_json(const sim::ScenarioSpec& s) {
  json boxes = json::array(), segments = json::array();
  for (const auto& b : s.boxes)
    boxes.push_back({{"min", point(b.box.min)}, {"max", point(b.box.max)}, {"kind", b.kind}, {"lidar_visible", b.lidar_visible}});
  for (const auto& g : s.segments)
    segments.push_back({{"a", point(g.a)}, {"b", point(g.b)}, {"kind", g.kind}, {"lidar_visible", g.lidar_visible}});
  return {{"bounds", json::array({point(s.bounds.min), point(s.bounds.max)})}, {"boxes", boxes}, {"segments", segments}};
}

struct SnapshotInputs {
  const sim::World* world = nullptr;
  const sim::WorldState* state = nullptr;
  std::string mode;
  const sim::EpisodeConfig* config = nullptr;
  const std::vector<TrajectorySample>* path = nullptr;
  const std::optional<AttentionMap>* attention = nullptr;
  const std::optional<planner::PlanResult>* plan = nullptr;
  planner::VelocityCommand applied;
  bool recording = false;
  std::optional<double> min_clearance;
  std::size_t top_k = 15;
  std::size_t max_path_points = 1000;
};

inline json snapshot_payload(const SnapshotInputs& in) {
  const auto& s = *in.state;
  const auto& spec = in.world->spec();
  const auto& cfg = *in.config;
  json peds = json::array();
  for (const auto& p : s.pedestrians)
    peds.push_back({{"x", p.position.x}, {"y", p.position.y}, {"vx", p.velocity.x}, {"vy", p.velocity.y},
                    {"radius", cfg.sim.pedestrian_radius}});

  json path = json::array();
  double length = 0.0;
  if (in.path && !in.path->empty()) {
    const auto& tr = *in.path;
    for (std::size_t k = 1; k < tr.size(); ++k) length += distance(tr[k - 1].position(), tr[k].position());
    const std::size_t stride = (tr.size() + in.max_path_points - 1) / in.max_path_points;
    for (std::size_t k = 0; k < tr.size(); k += stride) path.push_back(point(tr[k].position()));
    if ((tr.size() - 1) % stride != 0) path.push_back(point(tr.back().position()));
  }

  json attention = nullptr;
  if (in.attention && *in.attention) {
    const auto& a = **in.attention;
    attention = {{"width", a.width()},
                 {"height", a.height()},
                 {"role", role_name(a.role())},
                 {"agrid_base64", base64_encode(encode_grid(a))}};
  }

  json plan = nullptr;
  if (in.plan && *in.plan) {
    const auto& p = **in.plan;
    std::vector<const planner::ScoredCandidate*> best;
    for (const auto& c : p.candidates) best.push_back(&c);
    const std::size_t k = std::min(in.top_k, best.size());
    std::partial_sort(best.begin(), best.begin() + static_cast<std::ptrdiff_t>(k), best.end(),
                      [](const auto* a, const auto* b) { return planner::better(*a, *b); });
    json cands = json::array();
    for (std::size_t i = 0; i < k; ++i)
      cands.push_back({{"v", best[i]->command.v}, {"omega", best[i]->command.omega}, {"J", best[i]->total}});
    plan = {{"chosen", {{"v", p.command.v}, {"omega", p.command.omega}}},
            {"recovery", p.recovery},
            {"horizon", cfg.planner.horizon},
            {"feasible", p.candidates.size()},
            {"candidates", cands}};
  }

  const auto& cam = cfg.camera;
  return {{"scenario", spec.id},
          {"mode", in.mode},
          {"t", s.time},
          {"step", s.step_index},
          {"status", sim::to_string(s.status)},
          {"robot",
           {{"x", s.robot.x}, {"y", s.robot.y}, {"theta", s.robot.theta}, {"v", s.command.v}, {"omega", s.command.omega},
            {"radius", cfg.sim.robot_radius}}},
          {"command", {{"v", in.applied.v}, {"omega", in.applied.omega}}},
          {"pedestrians", peds},
          {"goal", {{"x", spec.goal.x}, {"y", spec.goal.y}, {"tolerance", cfg.sim.goal_tolerance}}},
          {"scene", scene_json(spec)},
          {"view", {{"half_fov", std::atan(0.5 * cam.image_width / cam.focal_px)}, {"range", 8.0}}},
          {"path", path},
          {"attention", attention},
          {"plan", plan},
          {"recording", in.recording},
          {"metrics",
           {{"path_length", length},
            {"min_clearance", in.min_clearance ? json(*in.min_clearance) : json(nullptr)},
            {"time_to_goal", s.status == sim::EpisodeStatus::ReachedGoal ? json(s.time) : json(nullptr)}}}};
}

}  // namespace vilad::protocol
