#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "vilad/metrics.hpp"

namespace vilad::test {

/// Minimax over every monotone coupling, enumerated path by path (no shared subproblems).
inline double brute_force_frechet(const metrics::Polyline& a, const metrics::Polyline& b) {
  double best = std::numeric_limits<double>::infinity();
  std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t i, std::size_t j, double worst) {
    worst = std::max(worst, std::hypot(a[i].x - b[j].x, a[i].y - b[j].y));
    if (worst >= best) return;
    if (i + 1 == a.size() && j + 1 == b.size()) {
      best = worst;
      return;
    }
    if (i + 1 < a.size()) walk(i + 1, j, worst);
    if (j + 1 < b.size()) walk(i, j + 1, worst);
    if (i + 1 < a.size() && j + 1 < b.size()) walk(i + 1, j + 1, worst);
  };
  walk(0, 0, 0.0);
  return best;
}

inline metrics::Polyline random_polyline(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  metrics::Polyline p(n);
  for (auto& q : p) q = {u(rng), u(rng)};
  return p;
}

}  // namespace vilad::test
