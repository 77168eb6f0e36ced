#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vilad/errors.hpp"
#include "vilad/geometry.hpp"

namespace vilad {

/// Which source produced an attention map. Values match the `.agrid` role byte.
enum class MapRole : std::uint8_t { Pretrained = 0, Vlm = 1, Distilled = 2, Synthetic = 3 };

/// Image: rows/columns follow the camera image. Ground: robot-centric metric grid.
enum class MapFrame : std::uint8_t { Image = 0, Ground = 1 };

inline const char* to_string(MapRole r) {
  switch (r) {
    case MapRole::Pretrained: return "pretrained";
    case MapRole::Vlm: return "vlm";
    case MapRole::Distilled: return "distilled";
    case MapRole::Synthetic: return "synthetic";
  }
  return "?";
}

struct CostmapIndex {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const CostmapIndex&, const CostmapIndex&) = default;
};

/// Immutable H x W grid of attention values in [0, 1], row-major.
class AttentionMap {
 public:
  AttentionMap(std::size_t width, std::size_t height, std::vector<float> values, MapRole role = MapRole::Synthetic,
               MapFrame frame = MapFrame::Image)
      : width_(width), height_(height), values_(std::move(values)), role_(role), frame_(frame) {
    if (width_ == 0 || height_ == 0) throw DimensionError("attention map must be at least 1x1");
    if (values_.size() != width_ * height_)
      throw DimensionError("attention map has " + std::to_string(values_.size()) + " values, expected " +
                           std::to_string(width_ * height_));
    for (std::size_t k = 0; k < values_.size(); ++k) {
      const float v = values_[k];
      if (!(v >= 0.0f && v <= 1.0f))
        throw ValidationError("attention value " + std::to_string(v) + " at index " + std::to_string(k) +
                              " is outside [0,1]");
    }
  }

  static AttentionMap filled(std::size_t width, std::size_t height, float value, MapRole role = MapRole::Synthetic,
                             MapFrame frame = MapFrame::Image) {
    return {width, height, std::vector<float>(width * height, value), role, frame};
  }

  [[nodiscard]] std::size_t width() const noexcept { return width_; }
  [[nodiscard]] std::size_t height() const noexcept { return height_; }
  [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
  [[nodiscard]] std::span<const float> values() const noexcept { return values_; }
  [[nodiscard]] MapRole role() const noexcept { return role_; }
  [[nodiscard]] MapFrame frame() const noexcept { return frame_; }

  [[nodiscard]] float at(std::size_t row, std::size_t col) const {
    if (row >= height_ || col >= width_)
      throw std::out_of_range("cell (" + std::to_string(row) + "," + std::to_string(col) + ") outside " +
                              std::to_string(height_) + "x" + std::to_string(width_) + " map");
    return values_[row * width_ + col];
  }
  [[nodiscard]] float at(CostmapIndex c) const { return at(c.row, c.col); }

  [[nodiscard]] AttentionMap with_role(MapRole role) const { return {width_, height_, values_, role, frame_}; }

  friend bool operator==(const AttentionMap&, const AttentionMap&) = default;

 private:
  std::size_t width_;
  std::size_t height_;
  std::vector<float> values_;
  MapRole role_;
  MapFrame frame_;
};

/// Min-max normalization of an unbounded grid into an AttentionMap.
/// A constant grid carries no preference and maps to all zeros.
template <std::floating_point T>
AttentionMap normalize(std::size_t width, std::size_t height, std::span<const T> raw,
                       MapRole role = MapRole::Synthetic, MapFrame frame = MapFrame::Image) {
  if (width == 0 || height == 0 || raw.empty()) throw DimensionError("cannot normalize an empty grid");
  if (raw.size() != width * height) throw DimensionError("grid size does not match width x height");
  double lo = raw[0];
  double hi = raw[0];
  for (const T v : raw) {
    if (!std::isfinite(v)) throw ValidationError("cannot normalize a grid with non-finite values");
    lo = std::min<double>(lo, v);
    hi = std::max<double>(hi, v);
  }
  std::vector<float> out(raw.size(), 0.0f);
  if (hi > lo) {
    const double span = hi - lo;
    for (std::size_t k = 0; k < raw.size(); ++k)
      out[k] = std::clamp(static_cast<float>((static_cast<double>(raw[k]) - lo) / span), 0.0f, 1.0f);
  }
  return {width, height, std::move(out), role, frame};
}

template <std::floating_point T>
AttentionMap normalize(std::size_t width, std::size_t height, const std::vector<T>& raw,
                       MapRole role = MapRole::Synthetic, MapFrame frame = MapFrame::Image) {
  return normalize(width, height, std::span<const T>(raw), role, frame);
}

inline AttentionMap normalize(const AttentionMap& m) {
  return normalize(m.width(), m.height(), m.values(), m.role(), m.frame());
}

/// Largest map value over the given cells (the social cost of a projected trajectory).
inline float sample_max_along(const AttentionMap& map, std::span<const CostmapIndex> cells) {
  if (cells.empty()) throw EmptyTrajectory();
  float best = 0.0f;
  for (const CostmapIndex& c : cells) best = std::max(best, map.at(c));
  return best;
}

/// Metric layout of a Ground-frame map: the robot sits at the bottom-center edge,
/// rows run away from the robot (row 0 is farthest), columns run right-to-left in y
/// so the grid reads like a top-down view oriented with the camera image.
struct GroundGridGeometry {
  double resolution = 0.25;  // m per cell

  [[nodiscard]] std::optional<CostmapIndex> cell_for(const AttentionMap& map, Point2 p) const {
    const double rows_from_robot = std::floor(p.x / resolution);
    const double col = std::floor(static_cast<double>(map.width()) / 2.0 - p.y / resolution);
    const auto h = static_cast<double>(map.height());
    const auto w = static_cast<double>(map.width());
    if (!(rows_from_robot >= 0.0 && rows_from_robot < h && col >= 0.0 && col < w)) return std::nullopt;
    return CostmapIndex{static_cast<std::size_t>(h - 1.0 - rows_from_robot), static_cast<std::size_t>(col)};
  }

  /// Metric center of a cell; inverse of cell_for.
  [[nodiscard]] Point2 cell_center(const AttentionMap& map, CostmapIndex c) const {
    const double x = (static_cast<double>(map.height()) - 1.0 - static_cast<double>(c.row) + 0.5) * resolution;
    const double y = (static_cast<double>(map.width()) / 2.0 - static_cast<double>(c.col) - 0.5) * resolution;
    return {x, y};
  }
};

}  // namespace vilad
