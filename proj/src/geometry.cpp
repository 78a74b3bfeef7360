#include "pseudosim/geometry.hpp"

#include <algorithm>
#include <limits>

namespace pseudosim {

double normalize_angle(double a) {
  double r = std::fmod(a, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  if (r > kPi) r -= 2.0 * kPi;
  return r;
}

Vec2 to_local(const Pose2D& frame, Vec2 world) {
  const Vec2 d = world - frame.position();
  const double c = std::cos(frame.heading);
  const double s = std::sin(frame.heading);
  return {c * d.x + s * d.y, -s * d.x + c * d.y};
}

Pose2D to_local(const Pose2D& frame, const Pose2D& world) {
  const Vec2 p = to_local(frame, world.position());
  return {p.x, p.y, normalize_angle(world.heading - frame.heading)};
}

Vec2 to_world(const Pose2D& frame, Vec2 local) {
  const double c = std::cos(frame.heading);
  const double s = std::sin(frame.heading);
  return {frame.x + c * local.x - s * local.y, frame.y + s * local.x + c * local.y};
}

Pose2D to_world(const Pose2D& frame, const Pose2D& local) {
  const Vec2 p = to_world(frame, local.position());
  return {p.x, p.y, normalize_angle(local.heading + frame.heading)};
}

std::array<Vec2, 4> OrientedBox::corners() const {
  const Vec2 f = unit(heading) * (0.5 * length);
  const Vec2 l = unit(heading + 0.5 * kPi) * (0.5 * width);
  return {center + f + l, center - f + l, center - f - l, center + f - l};
}

bool OrientedBox::contains(Vec2 p) const {
  const Vec2 d = p - center;
  const Vec2 u = unit(heading);
  const double lon = dot(d, u);
  const double lat = cross(u, d);
  return std::abs(lon) <= 0.5 * length && std::abs(lat) <= 0.5 * width;
}

OrientedBox OrientedBox::front_half() const {
  return {center + unit(heading) * (0.25 * length), heading, 0.5 * length, width};
}

namespace {

// Projection radius of a box onto axis `n` (unit).
double box_radius(const OrientedBox& b, Vec2 n) {
  const Vec2 u = unit(b.heading);
  const Vec2 v{-u.y, u.x};
  return 0.5 * b.length * std::abs(dot(u, n)) + 0.5 * b.width * std::abs(dot(v, n));
}

int orientation(Vec2 a, Vec2 b, Vec2 c) {
  const double v = cross(b - a, c - a);
  if (v > 1e-12) return 1;
  if (v < -1e-12) return -1;
  return 0;
}

bool on_segment(Vec2 a, Vec2 b, Vec2 p) {
  return std::min(a.x, b.x) - 1e-12 <= p.x && p.x <= std::max(a.x, b.x) + 1e-12 &&
         std::min(a.y, b.y) - 1e-12 <= p.y && p.y <= std::max(a.y, b.y) + 1e-12;
}

}  // namespace

bool boxes_overlap(const OrientedBox& a, const OrientedBox& b) {
  const Vec2 t = b.center - a.center;
  const std::array<Vec2, 4> axes{unit(a.heading), unit(a.heading + 0.5 * kPi), unit(b.heading),
                                 unit(b.heading + 0.5 * kPi)};
  for (const Vec2& n : axes) {
    if (std::abs(dot(t, n)) > box_radius(a, n) + box_radius(b, n)) return false;
  }
  return true;
}

bool segments_intersect(Vec2 a0, Vec2 a1, Vec2 b0, Vec2 b1) {
  const int o1 = orientation(a0, a1, b0);
  const int o2 = orientation(a0, a1, b1);
  const int o3 = orientation(b0, b1, a0);
  const int o4 = orientation(b0, b1, a1);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(a0, a1, b0)) return true;
  if (o2 == 0 && on_segment(a0, a1, b1)) return true;
  if (o3 == 0 && on_segment(b0, b1, a0)) return true;
  if (o4 == 0 && on_segment(b0, b1, a1)) return true;
  return false;
}

bool segment_intersects_box(Vec2 a, Vec2 b, const OrientedBox& box) {
  if (box.contains(a) || box.contains(b)) return true;
  const auto c = box.corners();
  for (std::size_t i = 0; i < 4; ++i) {
    if (segments_intersect(a, b, c[i], c[(i + 1) % 4])) return true;
  }
  return false;
}

bool Polygon::contains(Vec2 p) const {
  bool inside = false;
  const std::size_t n = points.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2 a = points[i];
    const Vec2 b = points[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
      if (p.x < x) inside = !inside;
    }
  }
  return inside;
}

bool Polygon::is_simple() const {
  const std::size_t n = points.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a0 = points[i];
    const Vec2 a1 = points[(i + 1) % n];
    for (std::size_t j = i + 1; j < n; ++j) {
      // skip edges sharing a vertex with edge i
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      if (segments_intersect(a0, a1, points[j], points[(j + 1) % n])) return false;
    }
  }
  return true;
}

Polyline::Polyline(std::vector<Vec2> points) : points_(std::move(points)) {
  cumulative_.reserve(points_.size());
  double s = 0.0;
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (i > 0) s += distance(points_[i - 1], points_[i]);
    cumulative_.push_back(s);
  }
  for (std::size_t i = 0; i + 1 < points_.size(); ++i) {
    const Vec2 d = points_[i + 1] - points_[i];
    headings_.push_back(std::atan2(d.y, d.x));
  }
}

std::size_t Polyline::segment_index(double s) const {
  if (points_.size() < 2) return 0;
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), s);
  std::size_t idx = it == cumulative_.begin() ? 0 : static_cast<std::size_t>(it - cumulative_.begin()) - 1;
  return std::min(idx, points_.size() - 2);
}

PolylineProjection Polyline::project(Vec2 p) const {
  return project(p, -std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity());
}

PolylineProjection Polyline::project(Vec2 p, double s_min, double s_max) const {
  PolylineProjection best;
  best.distance = std::numeric_limits<double>::infinity();
  if (points_.size() < 2) {
    if (!points_.empty()) {
      best.foot = points_[0];
      best.distance = distance(p, points_[0]);
    }
    return best;
  }
  for (std::size_t i = 0; i + 1 < points_.size(); ++i) {
    const double seg_s0 = cumulative_[i];
    const double seg_s1 = cumulative_[i + 1];
    if (seg_s1 < s_min || seg_s0 > s_max) continue;
    const Vec2 a = points_[i];
    const Vec2 ab = points_[i + 1] - a;
    const double len = seg_s1 - seg_s0;
    double t = dot(p - a, ab) / (len * len);
    t = std::clamp(t, 0.0, 1.0);
    double s = seg_s0 + t * len;
    if (s < s_min || s > s_max) {
      s = std::clamp(s, s_min, s_max);
      t = (s - seg_s0) / len;
    }
    const Vec2 foot = a + ab * t;
    const double dist = distance(p, foot);
    // strict comparison keeps the smaller arc length on ties
    if (dist < best.distance - 1e-12) {
      best.s = s;
      best.foot = foot;
      best.distance = dist;
      best.segment = i;
      best.d = cross(ab * (1.0 / len), p - foot) >= 0.0 ? dist : -dist;
    }
  }
  return best;
}

Vec2 Polyline::point_at(double s) const {
  if (points_.size() < 2) return points_.empty() ? Vec2{} : points_[0];
  const std::size_t i = segment_index(s);
  const double len = cumulative_[i + 1] - cumulative_[i];
  const double t = (s - cumulative_[i]) / len;
  return points_[i] + (points_[i + 1] - points_[i]) * t;
}

double Polyline::segment_heading(std::size_t segment) const {
  return headings_.at(std::min(segment, headings_.size() - 1));
}

double Polyline::heading_at(double s) const {
  if (headings_.empty()) return 0.0;
  const std::size_t i = segment_index(s);
  const double mid = 0.5 * (cumulative_[i] + cumulative_[i + 1]);
  std::size_t j;
  if (s >= mid) {
    if (i + 1 >= headings_.size()) return headings_[i];
    j = i + 1;
  } else {
    if (i == 0) return headings_[0];
    j = i - 1;
  }
  const double mid_j = 0.5 * (cumulative_[j] + cumulative_[j + 1]);
  const double t = (s - mid) / (mid_j - mid);
  return normalize_angle(headings_[i] + t * normalize_angle(headings_[j] - headings_[i]));
}

double Polyline::curvature_at(double s) const {
  if (headings_.size() < 2) return 0.0;
  const std::size_t i = segment_index(s);
  const double mid = 0.5 * (cumulative_[i] + cumulative_[i + 1]);
  // beyond the first and last midpoints the neighbouring value is held
  std::size_t lo = i, hi = i + 1;
  if ((s < mid && i > 0) || i + 1 >= headings_.size()) {
    lo = i - 1;
    hi = i;
  }
  const double m_lo = 0.5 * (cumulative_[lo] + cumulative_[lo + 1]);
  const double m_hi = 0.5 * (cumulative_[hi] + cumulative_[hi + 1]);
  return normalize_angle(headings_[hi] - headings_[lo]) / (m_hi - m_lo);
}

Vec2 Polyline::embed(double s, double d) const {
  if (points_.size() < 2) return points_.empty() ? Vec2{} : points_[0];
  const std::size_t i = segment_index(s);
  const double h = headings_[i];
  return point_at(s) + unit(h + 0.5 * kPi) * d;
}

}  // namespace pseudosim
