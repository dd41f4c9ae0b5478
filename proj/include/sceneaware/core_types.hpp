#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sceneaware/error.hpp"

namespace sceneaware {

/// A point in world coordinates, meters.
struct Position {
  double x = 0.0;
  double y = 0.0;

  friend Position operator+(Position a, Position b) noexcept { return {a.x + b.x, a.y + b.y}; }
  friend Position operator-(Position a, Position b) noexcept { return {a.x - b.x, a.y - b.y}; }
  friend Position operator*(double s, Position a) noexcept { return {s * a.x, s * a.y}; }
  friend bool operator==(Position a, Position b) noexcept = default;

  bool finite() const noexcept { return std::isfinite(x) && std::isfinite(y); }
  double norm() const noexcept { return std::hypot(x, y); }
  double squared_norm() const noexcept { return x * x + y * y; }
};

inline double distance(Position a, Position b) noexcept { return (a - b).norm(); }

/// Observation/prediction lengths in frames. Defaults are the ETH/UCY
/// benchmark protocol (3.2 s observed, 4.8 s predicted at 2.5 fps).
struct Horizon {
  std::size_t observed = 8;
  std::size_t predicted = 12;

  std::size_t total() const noexcept { return observed + predicted; }
};

struct FramePoint {
  std::int64_t frame = 0;
  Position position;
};

struct Trajectory {
  std::int64_t ped_id = 0;
  std::string scene_id;
  std::vector<FramePoint> frames;
};

struct Window {
  std::vector<Position> observed;
  std::vector<Position> future;
  std::int64_t ped_id = 0;
  std::string scene_id;
  std::int64_t start_frame = 0;

  std::string id() const { return scene_id + ":" + std::to_string(ped_id) + ":" + std::to_string(start_frame); }

  std::vector<Position> full() const {
    std::vector<Position> all(observed);
    all.insert(all.end(), future.begin(), future.end());
    return all;
  }
};

struct PixelCoord {
  double u = 0.0;  // column
  double v = 0.0;  // row
};

/// Projective map from world homogeneous coordinates to pixel homogeneous
/// coordinates, stored row-major as read from the homography file.
class Homography {
 public:
  static constexpr double kMinDeterminant = 1e-12;

  Homography() : m_(Eigen::Matrix3d::Identity()) {}

  explicit Homography(const Eigen::Matrix3d& m) : m_(m) {
    if (!m_.allFinite()) throw Error(Errc::InvalidHomography, "non-finite homography entry");
    if (std::abs(m_.determinant()) <= kMinDeterminant)
      throw Error(Errc::InvalidHomography, "homography is singular");
  }

  static Homography identity() { return Homography(); }

  static Homography scaling(double sx, double sy) {
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
    m(0, 0) = sx;
    m(1, 1) = sy;
    return Homography(m);
  }

  /// Parses 3 lines of 3 whitespace-separated decimals.
  static Homography parse(std::istream& in) {
    Eigen::Matrix3d m;
    std::string line;
    int row = 0;
    std::size_t line_no = 0;
    while (row < 3 && std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      std::istringstream ls(line);
      for (int c = 0; c < 3; ++c) {
        if (!(ls >> m(row, c))) throw Error(Errc::MalformedLine, "homography row needs 3 numbers", line_no);
      }
      std::string extra;
      if (ls >> extra) throw Error(Errc::MalformedLine, "homography row has more than 3 numbers", line_no);
      ++row;
    }
    if (row != 3) throw Error(Errc::MalformedLine, "homography needs 3 rows", line_no);
    return Homography(m);
  }

  static Homography load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::Io, "cannot open homography file " + path);
    return parse(in);
  }

  const Eigen::Matrix3d& matrix() const noexcept { return m_; }
  Homography inverse() const { return Homography(m_.inverse()); }

 private:
  Eigen::Matrix3d m_;
};

inline void require_finite(Position p, const char* what) {
  if (!p.finite()) throw Error(Errc::NonFinite, what);
}

inline PixelCoord world_to_pixel(Position p, const Homography& h) {
  require_finite(p, "world_to_pixel input is not finite");
  const Eigen::Matrix3d& m = h.matrix();
  const double a = m(0, 0) * p.x + m(0, 1) * p.y + m(0, 2);
  const double b = m(1, 0) * p.x + m(1, 1) * p.y + m(1, 2);
  const double w = m(2, 0) * p.x + m(2, 1) * p.y + m(2, 2);
  if (!(std::abs(w) >= 1e-12)) throw Error(Errc::DegenerateProjection, "homogeneous w is zero");
  return {a / w, b / w};
}

/// d(u, v) / d(x, y) of the projective map at p, row-major [du/dx du/dy; dv/dx dv/dy].
inline Eigen::Matrix2d world_to_pixel_jacobian(Position p, const Homography& h) {
  const Eigen::Matrix3d& m = h.matrix();
  const double a = m(0, 0) * p.x + m(0, 1) * p.y + m(0, 2);
  const double b = m(1, 0) * p.x + m(1, 1) * p.y + m(1, 2);
  const double w = m(2, 0) * p.x + m(2, 1) * p.y + m(2, 2);
  if (!(std::abs(w) >= 1e-12)) throw Error(Errc::DegenerateProjection, "homogeneous w is zero");
  const double w2 = w * w;
  Eigen::Matrix2d j;
  j(0, 0) = (m(0, 0) * w - a * m(2, 0)) / w2;
  j(0, 1) = (m(0, 1) * w - a * m(2, 1)) / w2;
  j(1, 0) = (m(1, 0) * w - b * m(2, 0)) / w2;
  j(1, 1) = (m(1, 1) * w - b * m(2, 1)) / w2;
  return j;
}

inline Position pixel_to_world(PixelCoord px, const Homography& h) {
  const Eigen::Matrix3d inv = h.matrix().inverse();
  const Eigen::Vector3d q = inv * Eigen::Vector3d(px.u, px.v, 1.0);
  if (!(std::abs(q.z()) >= 1e-12)) throw Error(Errc::DegenerateProjection, "homogeneous w is zero");
  return {q.x() / q.z(), q.y() / q.z()};
}

/// A segment is contiguous iff consecutive frames differ by exactly
/// `frame_step` (the first difference when `frame_step` is 0).
inline Window split_window(std::span<const FramePoint> segment, const Horizon& horizon, std::int64_t ped_id,
                           std::string scene_id, std::int64_t frame_step = 0) {
  if (segment.size() != horizon.total())
    throw Error(Errc::WrongLength, "segment has " + std::to_string(segment.size()) + " points, expected " +
                                       std::to_string(horizon.total()));
  for (const auto& fp : segment) require_finite(fp.position, "segment contains a non-finite coordinate");
  if (segment.size() >= 2) {
    const std::int64_t step = frame_step > 0 ? frame_step : segment[1].frame - segment[0].frame;
    if (step <= 0) throw Error(Errc::GapDetected, "frames are not strictly increasing");
    for (std::size_t i = 1; i < segment.size(); ++i) {
      if (segment[i].frame - segment[i - 1].frame != step)
        throw Error(Errc::GapDetected, "frame gap after frame " + std::to_string(segment[i - 1].frame));
    }
  }
  Window w;
  w.ped_id = ped_id;
  w.scene_id = std::move(scene_id);
  w.start_frame = segment.front().frame;
  w.observed.reserve(horizon.observed);
  w.future.reserve(horizon.predicted);
  for (std::size_t i = 0; i < segment.size(); ++i)
    (i < horizon.observed ? w.observed : w.future).push_back(segment[i].position);
  return w;
}

}  // namespace sceneaware
