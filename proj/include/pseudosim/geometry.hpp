#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace pseudosim {

inline constexpr double kPi = 3.14159265358979323846;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double k) const { return {x * k, y * k}; }
  bool operator==(const Vec2&) const = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline double distance(Vec2 a, Vec2 b) { return norm(a - b); }
inline Vec2 unit(double heading) { return {std::cos(heading), std::sin(heading)}; }

/// Wraps an angle into (-pi, pi].
double normalize_angle(double a);

struct Pose2D {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;

  Vec2 position() const { return {x, y}; }
  bool operator==(const Pose2D&) const = default;
};

/// Expresses `world` in the frame whose origin is `frame`.
Pose2D to_local(const Pose2D& frame, const Pose2D& world);
Vec2 to_local(const Pose2D& frame, Vec2 world);
/// Inverse of to_local.
Pose2D to_world(const Pose2D& frame, const Pose2D& local);
Vec2 to_world(const Pose2D& frame, Vec2 local);

struct OrientedBox {
  Vec2 center;
  double heading = 0.0;
  double length = 0.0;
  double width = 0.0;

  /// Counter-clockwise starting at front-left.
  std::array<Vec2, 4> corners() const;
  bool contains(Vec2 p) const;
  /// Half of the box on the forward side of its center.
  OrientedBox front_half() const;
};

/// Separating-axis test; touching boxes count as overlapping.
bool boxes_overlap(const OrientedBox& a, const OrientedBox& b);

bool segments_intersect(Vec2 a0, Vec2 a1, Vec2 b0, Vec2 b1);
bool segment_intersects_box(Vec2 a, Vec2 b, const OrientedBox& box);

struct Polygon {
  std::vector<Vec2> points;

  /// Even-odd rule; boundary points may go either way.
  bool contains(Vec2 p) const;
  /// No two non-adjacent edges intersect.
  bool is_simple() const;
};

struct PolylineProjection {
  double s = 0.0;        ///< arc length of the foot point
  double d = 0.0;        ///< signed lateral offset, left positive
  Vec2 foot;
  double distance = 0.0; ///< |d| unless the foot is clamped to an end
  std::size_t segment = 0;
};

/// Piecewise-linear curve parameterised by arc length.
///
/// Headings are interpolated between segment midpoints so that a vehicle
/// following the curve sees a continuous yaw angle.
class Polyline {
 public:
  Polyline() = default;
  explicit Polyline(std::vector<Vec2> points);

  const std::vector<Vec2>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.size() < 2; }
  double length() const { return cumulative_.empty() ? 0.0 : cumulative_.back(); }

  /// Nearest-point projection; equidistant candidates resolve to the
  /// smaller arc length.
  PolylineProjection project(Vec2 p) const;
  /// Projection restricted to arc lengths in [s_min, s_max].
  PolylineProjection project(Vec2 p, double s_min, double s_max) const;

  Vec2 point_at(double s) const;
  double segment_heading(std::size_t segment) const;
  double heading_at(double s) const;
  /// d(heading)/ds of the interpolated heading.
  double curvature_at(double s) const;
  /// Point at arc length s moved d to the left of the local segment.
  Vec2 embed(double s, double d) const;

 private:
  std::size_t segment_index(double s) const;

  std::vector<Vec2> points_;
  std::vector<double> cumulative_;
  std::vector<double> headings_;
};

}  // namespace pseudosim
