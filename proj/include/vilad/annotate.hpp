#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "vilad/camera.hpp"
#include "vilad/costmap.hpp"
#include "vilad/errors.hpp"
#include "vilad/image.hpp"

namespace vilad::annotate {

enum class Frontier { Left = 0, Center = 1, Right = 2 };

/// Crowding likelihood per frontier, each scored independently in [0, 1].
struct FrontierAnnotation {
  double p_left = 0.0;
  double p_center = 0.0;
  double p_right = 0.0;
  std::string rationale;

  [[nodiscard]] double operator[](Frontier f) const {
    switch (f) {
      case Frontier::Left: return p_left;
      case Frontier::Center: return p_center;
      case Frontier::Right: return p_right;
    }
    return 0.0;
  }

  void validate() const {
    for (const double p : {p_left, p_center, p_right})
      if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("frontier likelihood " + std::to_string(p) + " outside [0,1]");
  }
};

/// Half-open pixel (or cell) rectangle.
struct Band {
  int col_begin = 0;
  int col_end = 0;
  int row_begin = 0;
  int row_end = 0;
  friend bool operator==(const Band&, const Band&) = default;
};

/// Left, center, right: equal vertical thirds of the lower half. Remainder columns go to
/// the leftmost bands first, so widths differ by at most one.
inline std::array<Band, 3> frontier_bands(int width, int height) {
  if (width < 3 || height < 1) throw DimensionError("frontier layout needs width >= 3 and height >= 1");
  const int base = width / 3;
  const int extra = width % 3;
  std::array<Band, 3> out{};
  int col = 0;
  for (int k = 0; k < 3; ++k) {
    const int w = base + (k < extra ? 1 : 0);
    out[static_cast<std::size_t>(k)] = {col, col + w, height / 2, height};
    col += w;
  }
  return out;
}

struct MarkedFrame {
  ImageFrame frame;
  std::array<Band, 3> bands;
};

inline constexpr std::array<std::array<std::uint8_t, 3>, 3> kFrontierColors{{{230, 30, 30}, {30, 200, 30}, {30, 60, 230}}};

/// Overlays a colored rectangle outline on each frontier band.
inline MarkedFrame mark_frontiers(const ImageFrame& frame) {
  frame.validate();
  MarkedFrame out{frame, frontier_bands(frame.width(), frame.height())};
  if (frame.height() < 2) throw DimensionError("frontier marking needs at least two rows");
  for (std::size_t k = 0; k < 3; ++k) {
    const Band& b = out.bands[k];
    const int t = std::max(1, std::min({2, (b.col_end - b.col_begin) / 4, (b.row_end - b.row_begin) / 4}));
    for (int y = b.row_begin; y < b.row_end; ++y)
      for (int x = b.col_begin; x < b.col_end; ++x) {
        const bool edge = x < b.col_begin + t || x >= b.col_end - t || y < b.row_begin + t || y >= b.row_end - t;
        if (edge) out.frame.image.set(x, y, kFrontierColors[k]);
      }
  }
  return out;
}

/// Supervision map: each lower-half frontier band carries its crowding likelihood, upper half is 0.
inline AttentionMap likelihood_to_map(const FrontierAnnotation& ann, std::size_t grid_width, std::size_t grid_height) {
  ann.validate();
  if (grid_width < 3) throw DimensionError("likelihood map needs at least 3 columns");
  const auto bands = frontier_bands(static_cast<int>(grid_width), static_cast<int>(grid_height));
  std::vector<float> v(grid_width * grid_height, 0.0f);
  for (std::size_t k = 0; k < 3; ++k) {
    const auto p = static_cast<float>(ann[static_cast<Frontier>(k)]);
    const Band& b = bands[k];
    for (int i = b.row_begin; i < b.row_end; ++i)
      for (int j = b.col_begin; j < b.col_end; ++j) v[static_cast<std::size_t>(i) * grid_width + j] = p;
  }
  return {grid_width, grid_height, std::move(v), MapRole::Vlm, MapFrame::Image};
}

// ---------------------------------------------------------------------------
// Prompting

struct PromptTemplate {
  std::string system;
  std::string user;  // placeholders: {scene_context}, {output_schema}
  std::string output_schema;

  [[nodiscard]] std::string render_user(std::string_view scene_context) const {
    std::string out = user;
    auto replace = [&out](std::string_view key, std::string_view value) {
      for (std::size_t at = out.find(key); at != std::string::npos; at = out.find(key, at + value.size()))
        out.replace(at, key.size(), value);
    };
    replace("{scene_context}", scene_context);
    replace("{output_schema}", output_schema);
    return out;
  }

  /// Chain-of-thought query asking for one crowding likelihood per marked frontier.
  static PromptTemplate standard() {
    PromptTemplate t;
    t.system =
        "You are assisting a ground robot that must move through crowds politely. "
        "You reason step by step about where people are, where they are heading, "
        "and which regions of the scene are likely to become busy in the next few seconds.";
    t.user =
        "The image comes from the robot's forward camera. Three candidate regions are outlined: "
        "the LEFT frontier (red box), the CENTER frontier (green box) and the RIGHT frontier (blue box).\n"
        "Scene context: {scene_context}\n"
        "Think step by step: list the visible pedestrians, estimate each one's walking direction, "
        "then judge how likely each outlined region is to become crowded soon.\n"
        "Finish with a single JSON object matching {output_schema}";
    t.output_schema =
        R"({"left": <probability 0..1>, "center": <probability 0..1>, "right": <probability 0..1>, "rationale": <short text>})";
    return t;
  }
};

/// Pulls the three likelihoods out of free-form text. Accepts fenced ```json blocks or the
/// first bare object carrying numeric left/center/right keys in [0, 1].
inline std::optional<FrontierAnnotation> parse_likelihoods(std::string_view text) {
  auto try_object = [](std::string_view candidate) -> std::optional<FrontierAnnotation> {
    const auto j = nlohmann::json::parse(candidate, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return std::nullopt;
    FrontierAnnotation a;
    double* slots[3] = {&a.p_left, &a.p_center, &a.p_right};
    const char* names[3] = {"left", "center", "right"};
    for (int k = 0; k < 3; ++k) {
      const nlohmann::json* found = nullptr;
      for (auto it = j.begin(); it != j.end(); ++it) {
        std::string key = it.key();
        std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
        if (key == names[k] || key == std::string("p_") + names[k]) found = &it.value();
      }
      if (!found || !found->is_number()) return std::nullopt;
      const double p = found->get<double>();
      if (!(p >= 0.0 && p <= 1.0)) return std::nullopt;
      *slots[k] = p;
    }
    if (j.contains("rationale") && j["rationale"].is_string()) a.rationale = j["rationale"].get<std::string>();
    return a;
  };

  // Balanced-brace scan that skips braces inside JSON strings.
  auto object_at = [text](std::size_t start) -> std::optional<std::string_view> {
    int depth = 0;
    bool in_string = false;
    for (std::size_t k = start; k < text.size(); ++k) {
      const char c = text[k];
      if (in_string) {
        if (c == '\\') ++k;
        else if (c == '"') in_string = false;
        continue;
      }
      if (c == '"') in_string = true;
      else if (c == '{') ++depth;
      else if (c == '}' && --depth == 0) return text.substr(start, k - start + 1);
    }
    return std::nullopt;
  };

  for (std::size_t at = text.find("```"); at != std::string_view::npos;) {
    const std::size_t body = text.find('\n', at);
    if (body == std::string_view::npos) break;
    const std::size_t end = text.find("```", body);
    if (end == std::string_view::npos) break;
    const std::string_view block = text.substr(body + 1, end - body - 1);
    if (const std::size_t brace = block.find('{'); brace != std::string_view::npos)
      if (auto a = try_object(block.substr(brace))) return a;
    at = text.find("```", end + 3);
  }
  for (std::size_t at = text.find('{'); at != std::string_view::npos; at = text.find('{', at + 1))
    if (const auto obj = object_at(at))
      if (auto a = try_object(*obj)) return a;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Oracles

/// Ground truth available to the offline oracle, in the robot frame.
struct PedestrianTruth {
  Point2 position;
  Point2 velocity;
};

struct SceneTruth {
  std::vector<PedestrianTruth> pedestrians;
  CameraModel camera;
  bool degraded_lighting = false;
};

struct AnnotationRequest {
  const ImageFrame* frame = nullptr;  // already marked with frontier rectangles
  const PromptTemplate* prompt = nullptr;
  const SceneTruth* truth = nullptr;  // null when annotating plain images
  std::string scene_context;
  std::uint64_t record_index = 0;
};

class AnnotationOracle {
 public:
  virtual ~AnnotationOracle() = default;
  virtual FrontierAnnotation annotate(const AnnotationRequest& request) = 0;
  [[nodiscard]] virtual std::string name() const = 0;
};

struct MockOracleConfig {
  double horizon_s = 3.0;
  double sample_dt = 0.1;
  double weight_per_pedestrian = 0.5;
  double max_range_m = 8.0;
  double lighting_noise_sigma = 0.1;
  std::uint64_t seed = 0;
};

/// Ground wedge of a frontier: points ahead of the robot, within range, whose image column
/// falls inside the frontier's column band. Row position is ignored so the wedge extends
/// to the full range rather than only the near field.
inline std::optional<Frontier> frontier_of(const CameraModel& cam, Point2 p, double max_range) {
  if (!(p.x > 0.0) || norm(p) > max_range) return std::nullopt;
  const auto px = project_point(cam, p.x, p.y, 0.0);
  if (!px || px->u < 0.0 || px->u >= cam.image_width) return std::nullopt;
  const auto bands = frontier_bands(cam.image_width, cam.image_height);
  for (std::size_t k = 0; k < 3; ++k)
    if (px->u >= bands[k].col_begin && px->u < bands[k].col_end) return static_cast<Frontier>(k);
  return std::nullopt;
}

/// Offline stand-in for a vision-language model: each pedestrian whose constant-velocity
/// extrapolation enters a frontier's wedge within the horizon adds a fixed weight there.
class MockOracle final : public AnnotationOracle {
 public:
  explicit MockOracle(MockOracleConfig cfg = {}) : cfg_(cfg) {}

  FrontierAnnotation annotate(const AnnotationRequest& request) override {
    if (!request.truth) throw SourceError("mock oracle needs scene ground truth");
    return score(*request.truth, request.record_index);
  }

  [[nodiscard]] FrontierAnnotation score(const SceneTruth& truth, std::uint64_t record_index = 0) const {
    std::array<double, 3> p{0.0, 0.0, 0.0};
    const int samples = static_cast<int>(std::floor(cfg_.horizon_s / cfg_.sample_dt + 1e-9));
    for (const auto& ped : truth.pedestrians) {
      std::array<bool, 3> hit{false, false, false};
      for (int k = 0; k <= samples; ++k) {
        const double t = k * cfg_.sample_dt;
        if (const auto f = frontier_of(truth.camera, ped.position + t * ped.velocity, cfg_.max_range_m))
          hit[static_cast<std::size_t>(*f)] = true;
      }
      for (std::size_t f = 0; f < 3; ++f)
        if (hit[f]) p[f] += cfg_.weight_per_pedestrian;
    }
    if (truth.degraded_lighting && cfg_.lighting_noise_sigma > 0.0) {
      std::mt19937_64 rng(cfg_.seed * 0x9E3779B97F4A7C15ull + record_index);
      std::normal_distribution<double> noise(0.0, cfg_.lighting_noise_sigma);
      for (double& x : p) x += noise(rng);
    }
    FrontierAnnotation a;
    a.p_left = std::clamp(p[0], 0.0, 1.0);
    a.p_center = std::clamp(p[1], 0.0, 1.0);
    a.p_right = std::clamp(p[2], 0.0, 1.0);
    return a;
  }

  [[nodiscard]] std::string name() const override { return "mock"; }
  [[nodiscard]] const MockOracleConfig& config() const { return cfg_; }

 private:
  MockOracleConfig cfg_;
};

}  // namespace vilad::annotate
