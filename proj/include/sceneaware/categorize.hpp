#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sceneaware/core_types.hpp"
#include "sceneaware/error.hpp"

namespace sceneaware {

enum class Category { Straight, Turning, HighVar, Circling };

inline constexpr std::array<Category, 4> kAllCategories = {Category::Straight, Category::Turning, Category::HighVar,
                                                            Category::Circling};

constexpr std::string_view to_string(Category c) noexcept {
  switch (c) {
    case Category::Straight: return "Straight";
    case Category::Turning: return "Turning";
    case Category::HighVar: return "HighVar";
    case Category::Circling: return "Circling";
  }
  return "Straight";
}

inline Category parse_category(std::string_view s) {
  for (Category c : kAllCategories)
    if (to_string(c) == s) return c;
  throw Error(Errc::InvalidArgument, "unknown category '" + std::string(s) + "'");
}

struct TrajectoryFeatures {
  double path_length = 0.0;       // m
  double net_displacement = 0.0;  // m
  double efficiency = 0.0;        // net / path, clamped to [0, 1]
  double cum_turning = 0.0;       // rad, sum of |heading change|
  double dominant_turning = 0.0;  // rad, largest run of same-sign heading changes
  double heading_variance = 0.0;  // rad^2, of the unwrapped heading sequence
  double mean_speed = 0.0;        // m / frame
};

struct CategoryThresholds {
  double circling_efficiency = 0.30;
  double circling_turning = 1.5 * std::numbers::pi;
  double turning_min = std::numbers::pi / 3.0;
  double turning_concentration = 0.7;
  double highvar_heading_variance = 0.15;
  double stationary_path = 0.5;
  double min_segment = 0.02;
};

namespace detail {
// Wraps into (-pi, pi].
inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  if (a <= -std::numbers::pi) a += 2.0 * std::numbers::pi;
  return a;
}
}  // namespace detail

/// Shape descriptors of a polyline. Segments shorter than `min_segment`
/// carry no heading and are skipped when measuring turning.
inline TrajectoryFeatures trajectory_features(std::span<const Position> pts, double min_segment = 0.02) {
  if (pts.size() < 3) throw Error(Errc::TooShort, "need at least 3 points");
  for (const Position& p : pts) require_finite(p, "trajectory contains a non-finite point");
  TrajectoryFeatures f;
  std::vector<double> headings;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const Position d = pts[i] - pts[i - 1];
    const double len = d.norm();
    f.path_length += len;
    if (len >= min_segment) headings.push_back(std::atan2(d.y, d.x));
  }
  f.net_displacement = distance(pts.back(), pts.front());
  f.efficiency = f.path_length > 0.0 ? std::clamp(f.net_displacement / f.path_length, 0.0, 1.0) : 0.0;
  f.mean_speed = f.path_length / static_cast<double>(pts.size() - 1);

  std::vector<double> unwrapped;
  unwrapped.reserve(headings.size());
  double run = 0.0;
  int run_sign = 0;
  for (std::size_t i = 0; i < headings.size(); ++i) {
    if (i == 0) {
      unwrapped.push_back(headings[0]);
      continue;
    }
    const double turn = detail::wrap_angle(headings[i] - headings[i - 1]);
    unwrapped.push_back(unwrapped.back() + turn);
    f.cum_turning += std::abs(turn);
    const int sign = turn > 0.0 ? 1 : (turn < 0.0 ? -1 : 0);
    if (sign != 0 && sign != run_sign) {
      run = 0.0;
      run_sign = sign;
    }
    run += std::abs(turn);
    f.dominant_turning = std::max(f.dominant_turning, run);
  }
  if (!unwrapped.empty()) {
    double mean = 0.0;
    for (double h : unwrapped) mean += h;
    mean /= static_cast<double>(unwrapped.size());
    for (double h : unwrapped) f.heading_variance += (h - mean) * (h - mean);
    f.heading_variance /= static_cast<double>(unwrapped.size());
  }
  return f;
}

/// First matching rule wins: stationary or looping paths are Circling, one
/// dominant turn is Turning, large or alternating heading changes are
/// HighVar, anything else is Straight.
inline Category classify(const TrajectoryFeatures& f, const CategoryThresholds& th = {}) {
  if (f.path_length < th.stationary_path) return Category::Circling;
  if (f.efficiency < th.circling_efficiency || f.cum_turning > th.circling_turning) return Category::Circling;
  if (f.cum_turning >= th.turning_min && f.dominant_turning >= th.turning_concentration * f.cum_turning)
    return Category::Turning;
  if (f.heading_variance >= th.highvar_heading_variance || f.cum_turning >= th.turning_min) return Category::HighVar;
  return Category::Straight;
}

inline Category categorize(std::span<const Position> pts, const CategoryThresholds& th = {}) {
  return classify(trajectory_features(pts, th.min_segment), th);
}

}  // namespace sceneaware
