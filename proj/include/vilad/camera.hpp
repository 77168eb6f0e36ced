#pragma once

#include <cmath>
#include <numbers>
#include <optional>

#include "vilad/costmap.hpp"
#include "vilad/errors.hpp"
#include "vilad/geometry.hpp"

namespace vilad {

struct Pixel {
  double u = 0.0;  // column, grows to the right
  double v = 0.0;  // row, grows downward
};

/// Forward-looking pinhole camera mounted at (0, 0, height) in the robot frame,
/// pitched down about the robot's y axis. No roll, no yaw, no distortion.
struct CameraModel {
  double focal_px = 120.0;  // wide lens: 90 deg vertical field of view
  double u0 = 160.0;
  double v0 = 120.0;
  double height_m = 1.0;
  double pitch_rad = 0.8;   // bottom ray passes the vertical, so the ground under the robot is in view
  int image_width = 320;
  int image_height = 240;

  void validate() const {
    if (!(focal_px > 0.0)) throw ConfigError("camera focal length must be positive");
    if (!(height_m > 0.0)) throw ConfigError("camera height must be positive");
    if (!(pitch_rad > 0.0 && pitch_rad < std::numbers::pi / 2)) throw ConfigError("camera pitch must be in (0, pi/2)");
    if (image_width < 1 || image_height < 1) throw ConfigError("camera image size must be positive");
  }

  /// Forward distance at which the optical axis meets the ground.
  [[nodiscard]] double axis_ground_distance() const { return height_m / std::tan(pitch_rad); }
};

namespace detail {

struct Vec3 {
  double x, y, z;
};

inline double dot3(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

// Camera axes expressed in the robot frame: right, down, optical.
struct CameraAxes {
  Vec3 right, down, optical;
};

inline CameraAxes camera_axes(const CameraModel& cam) {
  const double c = std::cos(cam.pitch_rad);
  const double s = std::sin(cam.pitch_rad);
  return {{0.0, -1.0, 0.0}, {-s, 0.0, -c}, {c, 0.0, -s}};
}

}  // namespace detail

/// Depth of a robot-frame 3D point along the optical axis and its (unbounded) pixel.
/// Returns nullopt when the point is at or behind the image plane.
inline std::optional<Pixel> project_point(const CameraModel& cam, double x, double y, double z) {
  const auto ax = detail::camera_axes(cam);
  const detail::Vec3 d{x, y, z - cam.height_m};
  const double zc = detail::dot3(d, ax.optical);
  if (zc <= 1e-9) return std::nullopt;
  return Pixel{cam.u0 + cam.focal_px * detail::dot3(d, ax.right) / zc,
               cam.v0 + cam.focal_px * detail::dot3(d, ax.down) / zc};
}

inline bool in_image(const CameraModel& cam, Pixel p) {
  return p.u >= 0.0 && p.u < cam.image_width && p.v >= 0.0 && p.v < cam.image_height;
}

/// Projects a ground point (x forward, y left, z = 0). nullopt means out of view.
inline std::optional<Pixel> project_ground_to_image(const CameraModel& cam, Point2 ground) {
  const auto px = project_point(cam, ground.x, ground.y, 0.0);
  if (!px || !in_image(cam, *px)) return std::nullopt;
  return px;
}

/// Intersects the viewing ray of a pixel with the ground plane.
/// nullopt for pixels at or above the horizon.
inline std::optional<Point2> unproject_to_ground(const CameraModel& cam, Pixel p) {
  const auto ax = detail::camera_axes(cam);
  const double a = (p.u - cam.u0) / cam.focal_px;
  const double b = (p.v - cam.v0) / cam.focal_px;
  const detail::Vec3 ray{ax.right.x * a + ax.down.x * b + ax.optical.x, ax.right.y * a + ax.down.y * b + ax.optical.y,
                         ax.right.z * a + ax.down.z * b + ax.optical.z};
  if (ray.z >= -1e-12) return std::nullopt;
  const double t = cam.height_m / -ray.z;
  return Point2{t * ray.x, t * ray.y};
}

/// Cell of an image-frame map covering a pixel; the map spans the full image.
inline std::optional<CostmapIndex> cell_for_pixel(const CameraModel& cam, std::size_t map_width,
                                                  std::size_t map_height, Pixel p) {
  if (!in_image(cam, p)) return std::nullopt;
  const auto col = static_cast<std::size_t>(std::floor(p.u * static_cast<double>(map_width) / cam.image_width));
  const auto row = static_cast<std::size_t>(std::floor(p.v * static_cast<double>(map_height) / cam.image_height));
  if (row >= map_height || col >= map_width) return std::nullopt;
  return CostmapIndex{row, col};
}

/// Pixel at the center of an image-frame map cell.
inline Pixel cell_center_pixel(const CameraModel& cam, std::size_t map_width, std::size_t map_height,
                               CostmapIndex c) {
  return {(static_cast<double>(c.col) + 0.5) * cam.image_width / static_cast<double>(map_width),
          (static_cast<double>(c.row) + 0.5) * cam.image_height / static_cast<double>(map_height)};
}

}  // namespace vilad
