#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "vilad/errors.hpp"
#include "vilad/geometry.hpp"

namespace vilad {

/// World-frame boolean grid. Cell (ix, iy) covers
/// [origin.x + ix*res, origin.x + (ix+1)*res] x [origin.y + iy*res, origin.y + (iy+1)*res].
/// Everything outside the grid counts as occupied.
class OccupancyGrid {
 public:
  OccupancyGrid() = default;
  OccupancyGrid(Point2 origin, double resolution, int width, int height)
      : origin_(origin), resolution_(resolution), width_(width), height_(height),
        cells_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0) {
    if (!(resolution > 0.0)) throw ConfigError("occupancy resolution must be positive");
    if (width < 1 || height < 1) throw DimensionError("occupancy grid must be at least 1x1");
  }

  /// Grid covering an axis-aligned region, rounded outward to whole cells.
  static OccupancyGrid covering(const Box2& bounds, double resolution) {
    const int w = static_cast<int>(std::ceil((bounds.max.x - bounds.min.x) / resolution - 1e-9));
    const int h = static_cast<int>(std::ceil((bounds.max.y - bounds.min.y) / resolution - 1e-9));
    return {bounds.min, resolution, std::max(w, 1), std::max(h, 1)};
  }

  [[nodiscard]] Point2 origin() const { return origin_; }
  [[nodiscard]] double resolution() const { return resolution_; }
  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] int height() const { return height_; }

  [[nodiscard]] bool contains(int ix, int iy) const { return ix >= 0 && iy >= 0 && ix < width_ && iy < height_; }

  [[nodiscard]] bool occupied(int ix, int iy) const {
    return !contains(ix, iy) || cells_[static_cast<std::size_t>(iy) * width_ + ix] != 0;
  }

  void set(int ix, int iy, bool value = true) {
    if (contains(ix, iy)) cells_[static_cast<std::size_t>(iy) * width_ + ix] = value ? 1 : 0;
  }

  [[nodiscard]] Box2 cell_box(int ix, int iy) const {
    const Point2 lo{origin_.x + ix * resolution_, origin_.y + iy * resolution_};
    return {lo, {lo.x + resolution_, lo.y + resolution_}};
  }

  [[nodiscard]] int column_of(double x) const { return static_cast<int>(std::floor((x - origin_.x) / resolution_)); }
  [[nodiscard]] int row_of(double y) const { return static_cast<int>(std::floor((y - origin_.y) / resolution_)); }

  [[nodiscard]] std::size_t occupied_count() const {
    std::size_t n = 0;
    for (const auto c : cells_) n += c;
    return n;
  }

  /// True when a disc of radius r around p overlaps an occupied cell or leaves the grid.
  /// Only the cells under the disc's bounding box are inspected.
  [[nodiscard]] bool disc_collides(Point2 p, double r) const {
    const int x0 = column_of(p.x - r) - 1;
    const int x1 = column_of(p.x + r) + 1;
    const int y0 = row_of(p.y - r) - 1;
    const int y1 = row_of(p.y + r) + 1;
    for (int iy = y0; iy <= y1; ++iy)
      for (int ix = x0; ix <= x1; ++ix)
        if (occupied(ix, iy) && distance_to_box(p, cell_box(ix, iy)) < r) return true;
    return false;
  }

  // Conservative rasterization: any overlap with a cell, including touching, marks it.
  void fill_box(const Box2& b) {
    for (int iy = std::max(0, row_of(b.min.y) - 1); iy <= std::min(height_ - 1, row_of(b.max.y) + 1); ++iy)
      for (int ix = std::max(0, column_of(b.min.x) - 1); ix <= std::min(width_ - 1, column_of(b.max.x) + 1); ++ix) {
        const Box2 c = cell_box(ix, iy);
        if (c.min.x <= b.max.x && b.min.x <= c.max.x && c.min.y <= b.max.y && b.min.y <= c.max.y) set(ix, iy);
      }
  }

  void fill_segment(Point2 a, Point2 b) {
    for (int iy = std::max(0, row_of(std::min(a.y, b.y)) - 1); iy <= std::min(height_ - 1, row_of(std::max(a.y, b.y)) + 1);
         ++iy)
      for (int ix = std::max(0, column_of(std::min(a.x, b.x)) - 1);
           ix <= std::min(width_ - 1, column_of(std::max(a.x, b.x)) + 1); ++ix)
        if (segment_box_distance(a, b, cell_box(ix, iy)) <= 0.0) set(ix, iy);
  }

  void fill_disc(Point2 c, double r) {
    for (int iy = std::max(0, row_of(c.y - r) - 1); iy <= std::min(height_ - 1, row_of(c.y + r) + 1); ++iy)
      for (int ix = std::max(0, column_of(c.x - r) - 1); ix <= std::min(width_ - 1, column_of(c.x + r) + 1); ++ix)
        if (distance_to_box(c, cell_box(ix, iy)) < r) set(ix, iy);
  }

  friend bool operator==(const OccupancyGrid&, const OccupancyGrid&) = default;

 private:
  Point2 origin_;
  double resolution_ = 0.1;
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> cells_;
};

}  // namespace vilad
