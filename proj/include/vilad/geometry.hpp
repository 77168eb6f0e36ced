#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace vilad {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Point2 operator*(double s, Point2 p) { return {s * p.x, s * p.y}; }
  friend bool operator==(Point2, Point2) = default;
};

/// Planar pose; heading measured counter-clockwise from +x.
struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  [[nodiscard]] Point2 position() const { return {x, y}; }
  friend bool operator==(const Pose2&, const Pose2&) = default;
};

inline double dot(Point2 a, Point2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Point2 p) { return std::hypot(p.x, p.y); }
inline double distance(Point2 a, Point2 b) { return norm(a - b); }

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  if (a <= -std::numbers::pi) a += 2.0 * std::numbers::pi;
  return a;
}

/// Expresses a world point in the frame of `pose` (x forward, y left).
inline Point2 to_local(const Pose2& pose, Point2 world) {
  const double dx = world.x - pose.x;
  const double dy = world.y - pose.y;
  const double c = std::cos(pose.theta);
  const double s = std::sin(pose.theta);
  return {c * dx + s * dy, -s * dx + c * dy};
}

inline Point2 to_world(const Pose2& pose, Point2 local) {
  const double c = std::cos(pose.theta);
  const double s = std::sin(pose.theta);
  return {pose.x + c * local.x - s * local.y, pose.y + s * local.x + c * local.y};
}

inline Pose2 compose(const Pose2& base, const Pose2& local) {
  const Point2 p = to_world(base, {local.x, local.y});
  return {p.x, p.y, wrap_angle(base.theta + local.theta)};
}

inline Point2 rotate(Point2 v, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

/// Axis-aligned rectangle [min, max].
struct Box2 {
  Point2 min;
  Point2 max;
  friend bool operator==(const Box2&, const Box2&) = default;
};

inline double distance_to_box(Point2 p, const Box2& b) {
  const double dx = std::max({b.min.x - p.x, 0.0, p.x - b.max.x});
  const double dy = std::max({b.min.y - p.y, 0.0, p.y - b.max.y});
  return std::hypot(dx, dy);
}

inline double distance_to_segment(Point2 p, Point2 a, Point2 b) {
  const Point2 ab = b - a;
  const double len2 = dot(ab, ab);
  double t = len2 > 0.0 ? dot(p - a, ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return distance(p, a + t * ab);
}

inline double orient(Point2 a, Point2 b, Point2 c) { return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x); }

inline bool segments_intersect(Point2 p1, Point2 p2, Point2 q1, Point2 q2) {
  const double d1 = orient(q1, q2, p1);
  const double d2 = orient(q1, q2, p2);
  const double d3 = orient(p1, p2, q1);
  const double d4 = orient(p1, p2, q2);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) return true;
  auto on = [](Point2 a, Point2 b, Point2 c) {
    return std::min(a.x, b.x) <= c.x && c.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= c.y &&
           c.y <= std::max(a.y, b.y);
  };
  return (d1 == 0 && on(q1, q2, p1)) || (d2 == 0 && on(q1, q2, p2)) || (d3 == 0 && on(p1, p2, q1)) ||
         (d4 == 0 && on(p1, p2, q2));
}

inline double segment_segment_distance(Point2 p1, Point2 p2, Point2 q1, Point2 q2) {
  if (segments_intersect(p1, p2, q1, q2)) return 0.0;
  return std::min({distance_to_segment(p1, q1, q2), distance_to_segment(p2, q1, q2), distance_to_segment(q1, p1, p2),
                   distance_to_segment(q2, p1, p2)});
}

/// Distance between a segment and an axis-aligned rectangle; zero when they touch.
inline double segment_box_distance(Point2 a, Point2 b, const Box2& box) {
  auto inside = [&](Point2 p) {
    return p.x >= box.min.x && p.x <= box.max.x && p.y >= box.min.y && p.y <= box.max.y;
  };
  if (inside(a) || inside(b)) return 0.0;
  const Point2 c[4] = {box.min, {box.max.x, box.min.y}, box.max, {box.min.x, box.max.y}};
  double best = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 4; ++k) best = std::min(best, segment_segment_distance(a, b, c[k], c[(k + 1) % 4]));
  return best;
}

}  // namespace vilad
