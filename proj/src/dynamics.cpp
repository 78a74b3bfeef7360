#include "pseudosim/dynamics.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "pseudosim/errors.hpp"

namespace pseudosim {

namespace {

struct Deriv {
  double x, y, heading, v, steer;
};

Deriv derivative(double heading, double v, double steer, const ControlInput& u, double wheelbase) {
  return {v * std::cos(heading), v * std::sin(heading), v * std::tan(steer) / wheelbase, u.acceleration,
          u.steering_rate};
}

// Speed-error feedback on the along-path lag behind the time-indexed reference.
constexpr double kProgressGain = 0.5;

}  // namespace

ControlInput saturate(const ControlInput& u, const VehicleParams& params) {
  return {std::clamp(u.acceleration, params.accel_min, params.accel_max),
          std::clamp(u.steering_rate, -params.steer_rate_limit, params.steer_rate_limit)};
}

BicycleState bicycle_step(const BicycleState& state, const ControlInput& u_in, const VehicleParams& params,
                          double dt) {
  ControlInput u = saturate(u_in, params);
  BicycleState s = state;
  s.steering = std::clamp(s.steering, -params.steer_limit, params.steer_limit);
  s.velocity = std::max(0.0, s.velocity);
  const double h = dt / 4.0;
  for (int i = 0; i < 4; ++i) {
    ControlInput us = u;
    // never integrate through zero speed
    if (s.velocity + us.acceleration * h < 0.0) us.acceleration = -s.velocity / h;
    const Deriv k1 = derivative(s.pose.heading, s.velocity, s.steering, us, params.wheelbase);
    const Deriv k2 = derivative(s.pose.heading + 0.5 * h * k1.heading, s.velocity + 0.5 * h * k1.v,
                                s.steering + 0.5 * h * k1.steer, us, params.wheelbase);
    const Deriv k3 = derivative(s.pose.heading + 0.5 * h * k2.heading, s.velocity + 0.5 * h * k2.v,
                                s.steering + 0.5 * h * k2.steer, us, params.wheelbase);
    const Deriv k4 = derivative(s.pose.heading + h * k3.heading, s.velocity + h * k3.v, s.steering + h * k3.steer,
                                us, params.wheelbase);
    s.pose.x += h / 6.0 * (k1.x + 2 * k2.x + 2 * k3.x + k4.x);
    s.pose.y += h / 6.0 * (k1.y + 2 * k2.y + 2 * k3.y + k4.y);
    s.pose.heading += h / 6.0 * (k1.heading + 2 * k2.heading + 2 * k3.heading + k4.heading);
    s.velocity = std::max(0.0, s.velocity + h * us.acceleration);
    s.steering = std::clamp(s.steering + h * us.steering_rate, -params.steer_limit, params.steer_limit);
  }
  s.pose.heading = normalize_angle(s.pose.heading);
  return s;
}

void linearized_model(double v_ref, const VehicleParams& params, double dt, Eigen::Matrix4d& a,
                      Eigen::Matrix<double, 4, 2>& b) {
  a.setIdentity();
  a(0, 1) = dt * v_ref;
  a(1, 3) = dt * v_ref / params.wheelbase;
  b.setZero();
  b(2, 0) = dt;
  b(3, 1) = dt;
}

LqrGain lqr_gain(const LqrConfig& cfg, double v_ref, const VehicleParams& params, double dt) {
  Eigen::Matrix4d a;
  Eigen::Matrix<double, 4, 2> b;
  linearized_model(v_ref, params, dt, a, b);
  const Eigen::Matrix4d q = Eigen::Vector4d(cfg.state_cost[0], cfg.state_cost[1], cfg.state_cost[2],
                                            cfg.state_cost[3]).asDiagonal();
  const Eigen::Matrix2d r = Eigen::Vector2d(cfg.control_cost[0], cfg.control_cost[1]).asDiagonal();

  Eigen::Matrix4d p = q;
  for (int it = 0; it < cfg.riccati_max_iters; ++it) {
    const Eigen::Matrix2d s = r + b.transpose() * p * b;
    const Eigen::Matrix<double, 2, 4> k = s.ldlt().solve(b.transpose() * p * a);
    const Eigen::Matrix4d next = q + a.transpose() * p * a - a.transpose() * p * b * k;
    const double delta = (next - p).cwiseAbs().maxCoeff();
    p = next;
    if (delta < cfg.riccati_tolerance) {
      const Eigen::Matrix2d s2 = r + b.transpose() * p * b;
      return s2.ldlt().solve(b.transpose() * p * a);
    }
  }
  throw RiccatiDivergence("Riccati iteration did not converge in " + std::to_string(cfg.riccati_max_iters) +
                          " iterations at v_ref=" + std::to_string(v_ref));
}

GainTable::GainTable(const LqrConfig& cfg, const VehicleParams& params, double dt) : cfg_(cfg), params_(params) {
  const int n = static_cast<int>(std::lround(kMaxSpeed / kSpeedStep));
  gains_.reserve(n);
  for (int i = 1; i <= n; ++i) gains_.push_back(lqr_gain(cfg, i * kSpeedStep, params, dt));
}

const LqrGain& GainTable::gain(double v_ref) const {
  long idx = std::lround(v_ref / kSpeedStep);
  idx = std::clamp<long>(idx, 1, static_cast<long>(gains_.size()));
  return gains_[static_cast<std::size_t>(idx - 1)];
}

const GainTable& default_gain_table() {
  static const GainTable table(LqrConfig{}, VehicleParams{});
  return table;
}

namespace {

// Profiles are fitted rather than differenced: waypoint noise would otherwise
// reach the actuators amplified by 1/dt (speed) and 1/ds^2 (curvature).
constexpr double kSpeedSmoothing = 16.0;
constexpr double kCurvatureSmoothing = 16.0;
constexpr double kCurvatureSpacing = 0.5;  // m
constexpr double kHeadingChord = 1.0;      // m, half-width

// argmin_x |x - m|^2 + lambda |D2 x|^2; exact on linear profiles.
std::vector<double> smooth_profile(const std::vector<double>& m, double lambda) {
  const auto n = static_cast<Eigen::Index>(m.size());
  if (n < 3) return m;
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index i = 1; i + 1 < n; ++i) {
    const Eigen::Index idx[3] = {i - 1, i, i + 1};
    const double c[3] = {1.0, -2.0, 1.0};
    for (int r = 0; r < 3; ++r)
      for (int q = 0; q < 3; ++q) a(idx[r], idx[q]) += lambda * c[r] * c[q];
  }
  const Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(m.data(), n);
  const Eigen::VectorXd x = a.ldlt().solve(b);
  return {x.data(), x.data() + n};
}

}  // namespace

TrackingReference::TrackingReference(const Pose2D& start, const std::vector<Waypoint>& plan) {
  // The path starts one step before the first waypoint, continuing the plan's
  // turn rate, so an ego that is off the plan sees a tracking error instead of
  // a kinked path. On arcs the extrapolated point is exact.
  std::vector<Vec2> pts{start.position()};
  if (plan.size() >= 3) {
    const Vec2 w0 = plan[0].pose.position();
    const Vec2 d01 = plan[1].pose.position() - w0;
    const Vec2 d12 = plan[2].pose.position() - plan[1].pose.position();
    const double step = norm(d01);
    double h = std::atan2(d01.y, d01.x);
    if (step > 1e-9 && norm(d12) > 1e-9) h -= normalize_angle(std::atan2(d12.y, d12.x) - h);
    pts[0] = w0 - unit(h) * step;
  } else if (plan.size() == 2) {
    pts[0] = plan[0].pose.position() * 2.0 - plan[1].pose.position();
  }
  for (const auto& w : plan) pts.push_back(w.pose.position());

  arcs_.push_back(0.0);
  std::vector<double> measured;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double step = distance(pts[i], pts[i - 1]);
    measured.push_back(step / kTickSeconds);
    arcs_.push_back(arcs_.back() + step);
  }
  speeds_ = smooth_profile(measured, kSpeedSmoothing);
  for (double& v : speeds_) v = std::max(0.0, v);
  if (speeds_.empty()) speeds_.push_back(0.0);
  speeds_.push_back(speeds_.back());

  std::vector<Vec2> dedup;
  for (Vec2 p : pts) {
    if (dedup.empty() || distance(dedup.back(), p) > 1e-6) dedup.push_back(p);
  }
  if (dedup.size() == 1) dedup.push_back(dedup[0] + unit(start.heading) * 1e-4);
  path_ = Polyline(std::move(dedup));

  // curvature from chord headings on a uniform resampling of the path
  const double len = path_.length();
  // never finer than the waypoints, or the turning concentrates at vertices
  const double spacing = std::max(kCurvatureSpacing, len / static_cast<double>(path_.points().size() - 1));
  const int n = std::max(2, static_cast<int>(std::round(len / spacing)));
  curvature_step_ = len / n;
  std::vector<double> heading;
  for (int i = 0; i < n; ++i) {
    const Vec2 d = path_.point_at((i + 1) * curvature_step_) - path_.point_at(i * curvature_step_);
    heading.push_back(std::atan2(d.y, d.x));
  }
  std::vector<double> kappa;
  for (int i = 0; i + 1 < n; ++i) {
    kappa.push_back(curvature_step_ > 1e-9 ? normalize_angle(heading[i + 1] - heading[i]) / curvature_step_ : 0.0);
  }
  curvature_ = smooth_profile(kappa, kCurvatureSmoothing);
}

double TrackingReference::heading(double s) const {
  // a chord's direction is the tangent at its midpoint on arcs; near the ends
  // the chord is one-sided and the curvature carries it over to `s`
  const double len = path_.length();
  const double a = std::clamp(s - kHeadingChord, 0.0, len);
  const double b = std::clamp(s + kHeadingChord, 0.0, len);
  if (b - a < 1e-6) return path_.heading_at(s);
  const Vec2 d = path_.point_at(b) - path_.point_at(a);
  return normalize_angle(std::atan2(d.y, d.x) + curvature(s) * (s - 0.5 * (a + b)));
}

double TrackingReference::curvature(double s) const {
  if (curvature_.empty()) return 0.0;
  // sample i sits at the joint between resampled chords i and i + 1
  const double x = s / curvature_step_ - 1.0;
  if (x <= 0.0) return curvature_.front();
  const auto i = static_cast<std::size_t>(x);
  if (i + 1 >= curvature_.size()) return curvature_.back();
  const double t = x - static_cast<double>(i);
  return curvature_[i] + t * (curvature_[i + 1] - curvature_[i]);
}

double TrackingReference::speed(int tick) const {
  return speeds_[static_cast<std::size_t>(std::clamp<int>(tick, 0, static_cast<int>(speeds_.size()) - 1))];
}

double TrackingReference::accel(int tick) const { return (speed(tick + 1) - speed(tick)) / kTickSeconds; }

double TrackingReference::arc_at(int tick) const {
  return arcs_[static_cast<std::size_t>(std::clamp<int>(tick, 0, static_cast<int>(arcs_.size()) - 1))];
}

ControlInput tracking_control(const BicycleState& state, const TrackingReference& ref, int tick, double& progress,
                              const GainTable& gains) {
  const VehicleParams& params = gains.params();
  const double v_ref = ref.speed(tick);
  if (ref.stationary() || v_ref < kStopControllerSpeed) {
    return {-std::min(-params.accel_min, state.velocity / kTickSeconds), -state.steering / kTickSeconds};
  }
  const double window = std::max(state.velocity, v_ref) * kTickSeconds * 3.0 + 2.0;
  const auto proj = ref.path().project(state.pose.position(), progress - 1.0, progress + window);
  progress = std::max(progress, proj.s);

  const double heading_err = normalize_angle(state.pose.heading - ref.heading(proj.s));
  const double steer_ref = std::atan(params.wheelbase * ref.curvature(proj.s));
  const double v_target = std::max(0.0, v_ref + kProgressGain * (ref.arc_at(tick) - proj.s));
  Eigen::Vector4d err(proj.d, heading_err, state.velocity - v_target, state.steering - steer_ref);
  const Eigen::Vector2d u = -gains.gain(std::max(v_ref, state.velocity)) * err;
  return {ref.accel(tick) + u(0), u(1)};
}

Trajectory plan_to_world(const Trajectory& plan, const Pose2D& origin, double t0) {
  Trajectory out;
  out.frame = Frame::World;
  out.waypoints.reserve(plan.waypoints.size());
  for (const auto& w : plan.waypoints) out.waypoints.push_back({to_world(origin, w.pose), t0 + w.timestamp});
  return out;
}

std::vector<EgoState> track_trajectory(const EgoState& init, const Trajectory& plan, const GainTable& gains) {
  const Trajectory world =
      plan.frame == Frame::World ? plan : plan_to_world(plan, init.pose, 0.0);
  const TrackingReference ref(init.pose, world.waypoints);
  BicycleState state{init.pose, std::max(0.0, init.velocity), 0.0};
  if (!ref.stationary()) {
    state.steering = std::clamp(std::atan(gains.params().wheelbase * ref.curvature(0.0)),
                                -gains.params().steer_limit, gains.params().steer_limit);
  }
  std::vector<EgoState> out;
  out.reserve(kPlanWaypoints + 1);
  out.push_back(init);
  const long base_tick = std::lround(init.timestamp / kTickSeconds);
  double progress = 0.0;
  for (int k = 0; k < kPlanWaypoints; ++k) {
    const ControlInput u = saturate(tracking_control(state, ref, k, progress, gains), gains.params());
    const double v_before = state.velocity;
    state = bicycle_step(state, u, gains.params(), kTickSeconds);
    out.push_back({state.pose, state.velocity, (state.velocity - v_before) / kTickSeconds,
                   tick_time(base_tick + k + 1)});
  }
  return out;
}

BicycleState track_first_tick(const BicycleState& state, const Trajectory& world_plan, const GainTable& gains) {
  const TrackingReference ref(state.pose, world_plan.waypoints);
  double progress = 0.0;
  const ControlInput u = saturate(tracking_control(state, ref, 0, progress, gains), gains.params());
  return bicycle_step(state, u, gains.params(), kTickSeconds);
}

std::vector<EgoState> track_trajectory(const EgoState& init, const Trajectory& plan, const VehicleParams& params,
                                       const LqrConfig& cfg) {
  if (params == VehicleParams{} && cfg == LqrConfig{}) return track_trajectory(init, plan, default_gain_table());
  const GainTable table(cfg, params);
  return track_trajectory(init, plan, table);
}

}  // namespace pseudosim
