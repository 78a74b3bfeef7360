#pragma once

#include <array>
#include <vector>

#include <Eigen/Dense>

#include "pseudosim/geometry.hpp"
#include "pseudosim/scene.hpp"

namespace pseudosim {

struct VehicleParams {
  double wheelbase = 2.7;
  double length = 4.6;
  double width = 1.9;
  double steer_limit = 0.62;
  double accel_min = -4.0;
  double accel_max = 4.0;
  double steer_rate_limit = 1.0;

  bool operator==(const VehicleParams&) const = default;
};

struct BicycleState {
  Pose2D pose;
  double velocity = 0.0;
  double steering = 0.0;
};

struct ControlInput {
  double acceleration = 0.0;
  double steering_rate = 0.0;
};

/// Cost weights for the error state (lateral, heading, velocity, steering)
/// and the inputs (acceleration, steering rate).
struct LqrConfig {
  std::array<double, 4> state_cost{1.0, 10.0, 2.0, 0.1};
  std::array<double, 2> control_cost{1.0, 1.0};
  double riccati_tolerance = 1e-9;
  int riccati_max_iters = 10000;

  bool operator==(const LqrConfig&) const = default;
};

using LqrGain = Eigen::Matrix<double, 2, 4>;

/// Clamps a control input to the actuator limits.
ControlInput saturate(const ControlInput& u, const VehicleParams& params);

/// One kinematic bicycle step, RK4 over four equal sub-steps.
BicycleState bicycle_step(const BicycleState& state, const ControlInput& u, const VehicleParams& params,
                          double dt);

/// Linearised error dynamics about straight motion at `v_ref`.
void linearized_model(double v_ref, const VehicleParams& params, double dt, Eigen::Matrix4d& a,
                      Eigen::Matrix<double, 4, 2>& b);

/// Discrete LQR gain via fixed-point Riccati iteration; u = -K e.
/// Throws RiccatiDivergence when max_iters is exhausted.
LqrGain lqr_gain(const LqrConfig& cfg, double v_ref, const VehicleParams& params, double dt);

/// Gains precomputed on a 0.5 m/s speed grid.
class GainTable {
 public:
  GainTable(const LqrConfig& cfg, const VehicleParams& params, double dt = kTickSeconds);

  const LqrGain& gain(double v_ref) const;
  const LqrConfig& config() const { return cfg_; }
  const VehicleParams& params() const { return params_; }

  static constexpr double kSpeedStep = 0.5;
  static constexpr double kMaxSpeed = 40.0;

 private:
  LqrConfig cfg_;
  VehicleParams params_;
  std::vector<LqrGain> gains_;
};

/// Shared table for the default parameters; built on first use.
const GainTable& default_gain_table();

/// Time-indexed reference built from a world-frame plan.
class TrackingReference {
 public:
  /// `start` is the pose at t=0; `plan` holds the 40 world-frame waypoints.
  TrackingReference(const Pose2D& start, const std::vector<Waypoint>& plan);

  double speed(int tick) const;
  double accel(int tick) const;
  /// Arc length the plan reaches at `tick`.
  double arc_at(int tick) const;
  const Polyline& path() const { return path_; }
  /// Smoothed path heading and curvature at arc length `s`.
  double heading(double s) const;
  double curvature(double s) const;
  bool stationary() const { return path_.length() < 1e-3; }

 private:
  Polyline path_;
  std::vector<double> speeds_;
  std::vector<double> arcs_;
  std::vector<double> curvature_;
  double curvature_step_ = 0.0;
};

/// Reference speed under which the stop controller takes over; it brakes at
/// the actuator limit.
inline constexpr double kStopControllerSpeed = 0.5;

/// Advances the vehicle one 0.1 s tick against reference tick `tick`.
/// `progress` carries the tracker's path position across ticks.
ControlInput tracking_control(const BicycleState& state, const TrackingReference& ref, int tick,
                              double& progress, const GainTable& gains);

/// Executes an ego-local 4 s plan from `init`; returns 41 states (t=0 included).
std::vector<EgoState> track_trajectory(const EgoState& init, const Trajectory& plan, const VehicleParams& params,
                                       const LqrConfig& cfg);
std::vector<EgoState> track_trajectory(const EgoState& init, const Trajectory& plan, const GainTable& gains);

/// Executes the first tick of a freshly committed world-frame plan; the
/// steering angle carries over from `state`.
BicycleState track_first_tick(const BicycleState& state, const Trajectory& world_plan, const GainTable& gains);

/// Converts an ego-local plan to world frame anchored at `origin`.
Trajectory plan_to_world(const Trajectory& plan, const Pose2D& origin, double t0);

}  // namespace pseudosim
