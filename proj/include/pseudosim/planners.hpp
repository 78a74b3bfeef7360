#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "pseudosim/metrics.hpp"
#include "pseudosim/scene.hpp"
#include "pseudosim/scene_io.hpp"
#include "pseudosim/traffic.hpp"

namespace pseudosim {

inline constexpr double kMapViewRadius = 100.0;

/// Agent footprint and speed in the ego frame.
struct AgentView {
  std::string id;
  OrientedBox box;
  double velocity = 0.0;
};

struct LaneView {
  std::string id;
  std::vector<Vec2> centerline;
  double width = 3.5;
  double speed_limit = 10.0;
  std::vector<std::string> successors;
};

struct StopLineView {
  std::string id;
  std::string lane_id;
  Vec2 a;
  Vec2 b;
  LightState state = LightState::Green;
};

struct MapView {
  std::vector<Polygon> drivable_areas;
  std::vector<LaneView> lanes;
  std::vector<StopLineView> stop_lines;
};

/// Everything a planner observes, in the frame of the newest history state.
struct PlannerInput {
  std::vector<EgoState> ego_history;  ///< oldest first, newest at the origin
  std::vector<AgentView> agents;
  MapView map;
  DrivingCommand command = DrivingCommand::Straight;
};

struct PlanContext {
  std::string scenario_id;
  long tick = 0;
  Pose2D ego_world;  ///< world pose of the input frame origin
};

/// Builds the ego-frame observation at time `t`. `history` holds the 16 most
/// recent world-frame ego states, oldest first.
PlannerInput make_planner_input(const Scenario& sc, const std::vector<EgoState>& history,
                                const std::vector<AgentSnapshot>& agents, double t);

/// Throws ProtocolError unless the plan has exactly 40 finite ego-frame
/// waypoints.
void validate_plan(const Trajectory& plan);

class Planner {
 public:
  virtual ~Planner() = default;
  virtual const std::string& id() const = 0;
  /// Returns 40 ego-frame waypoints at 0.1 s spacing.
  virtual Trajectory plan(const PlannerInput& in, const PlanContext& ctx) = 0;
  virtual std::unique_ptr<Planner> clone() const = 0;
  /// Drops per-episode state; called before every scenario.
  virtual void reset() {}
};

Trajectory local_trajectory(const std::vector<Pose2D>& poses);

// ---- constant kinematics ----

struct ConstantKinematicsParams {
  double speed_scale = 1.0;
  double curvature_bias = 0.0;  ///< rad/s added to the observed yaw rate
};

Trajectory constant_kinematics_plan(const PlannerInput& in, const ConstantKinematicsParams& p);

// ---- lane following ----

struct LanePath {
  Polyline line;
  std::vector<std::pair<double, double>> limits;  ///< (end arc length, speed limit)
  double limit_at(double s) const;
};

/// Lane sequence ahead of the ego picked from the map view: nearest
/// same-direction lane, successors chosen by the driving command.
/// Throws NoLaneError when no lane lies within 10 m.
LanePath build_lane_path(const PlannerInput& in, double min_length = 150.0);

Trajectory idm_plan(const PlannerInput& in, const IdmParams& p);

/// IDM speed profile and lateral blend towards `target_offset` along `path`.
/// Speed target = min(p.v0, lane limit) * speed_fraction.
Trajectory lane_profile_plan(const PlannerInput& in, const LanePath& path, const IdmParams& p,
                             double speed_fraction, double target_offset);

// ---- PDM-Closed style ----

struct PdmParams {
  std::vector<double> speed_fractions{0.25, 0.5, 0.75, 1.0};
  std::vector<double> lateral_offsets{-1.0, 0.0, 1.0};
  IdmParams idm{};
  /// Internal proxy score weights (progress, time to collision, comfort).
  double w_progress = 5.0;
  double w_ttc = 5.0;
  double w_comfort = 2.0;
};

struct PdmCandidate {
  double speed_fraction = 0.0;
  double lateral_offset = 0.0;
  double score = 0.0;
  Trajectory plan;
};

/// Scores every candidate; exposed for tests.
std::vector<PdmCandidate> pdm_candidates(const PlannerInput& in, const PdmParams& p);
Trajectory pdm_closed_plan(const PlannerInput& in, const PdmParams& p);
/// Full braking along the current heading.
Trajectory max_brake_plan(const PlannerInput& in);

// ---- concrete planners ----

class ConstantKinematicsPlanner : public Planner {
 public:
  ConstantKinematicsPlanner(std::string id, ConstantKinematicsParams p) : id_(std::move(id)), p_(p) {}
  const std::string& id() const override { return id_; }
  Trajectory plan(const PlannerInput& in, const PlanContext&) override { return constant_kinematics_plan(in, p_); }
  std::unique_ptr<Planner> clone() const override { return std::make_unique<ConstantKinematicsPlanner>(*this); }

 private:
  std::string id_;
  ConstantKinematicsParams p_;
};

class IdmPlanner : public Planner {
 public:
  IdmPlanner(std::string id, IdmParams p) : id_(std::move(id)), p_(p) {}
  const std::string& id() const override { return id_; }
  Trajectory plan(const PlannerInput& in, const PlanContext&) override { return idm_plan(in, p_); }
  std::unique_ptr<Planner> clone() const override { return std::make_unique<IdmPlanner>(*this); }

 private:
  std::string id_;
  IdmParams p_;
};

class PdmClosedPlanner : public Planner {
 public:
  PdmClosedPlanner(std::string id, PdmParams p) : id_(std::move(id)), p_(std::move(p)) {}
  const std::string& id() const override { return id_; }
  Trajectory plan(const PlannerInput& in, const PlanContext&) override { return pdm_closed_plan(in, p_); }
  std::unique_ptr<Planner> clone() const override { return std::make_unique<PdmClosedPlanner>(*this); }

 private:
  std::string id_;
  PdmParams p_;
};

struct NoiseSpec {
  double jitter_sigma = 0.0;  ///< m, per axis
  double heading_bias = 0.0;  ///< rad, rotates the plan about the ego
  int latency_ticks = 0;
  bool operator==(const NoiseSpec&) const = default;
};

/// Seeded perturbation of another planner's output. With latency L the plan
/// returned at tick t is the base plan from tick max(0, t - L), re-expressed
/// in the current frame and shifted in time.
class DegradedPlanner : public Planner {
 public:
  DegradedPlanner(std::string id, std::unique_ptr<Planner> base, NoiseSpec noise, std::uint64_t seed);
  DegradedPlanner(const DegradedPlanner& o);
  const std::string& id() const override { return id_; }
  Trajectory plan(const PlannerInput& in, const PlanContext& ctx) override;
  std::unique_ptr<Planner> clone() const override { return std::make_unique<DegradedPlanner>(*this); }
  void reset() override;

 private:
  std::string id_;
  std::unique_ptr<Planner> base_;
  NoiseSpec noise_;
  std::uint64_t seed_;
  std::map<long, Trajectory> history_;  ///< world-frame base plans by tick
};

// ---- external planners ----

inline constexpr const char* kProtocolVersion = "pseudosim/1";
inline constexpr std::chrono::milliseconds kDefaultPlannerTimeout{10000};

Json to_json(const PlannerInput& in);
PlannerInput planner_input_from_json(const Json& j);
/// Parses a `{"waypoints": [[x, y, heading], ...]}` response line.
Trajectory parse_plan_response(const std::string& line);

/// Child process speaking the line protocol on its standard streams. The
/// process is started lazily on first use and owned by one worker.
class ExternalPlanner : public Planner {
 public:
  ExternalPlanner(std::string id, std::vector<std::string> argv,
                  std::chrono::milliseconds timeout = kDefaultPlannerTimeout);
  ExternalPlanner(const ExternalPlanner& o);
  ~ExternalPlanner() override;
  const std::string& id() const override { return id_; }
  Trajectory plan(const PlannerInput& in, const PlanContext& ctx) override;
  std::unique_ptr<Planner> clone() const override { return std::make_unique<ExternalPlanner>(*this); }

 private:
  void start();
  void stop();
  void send_line(const std::string& line);
  std::string read_line();

  std::string id_;
  std::vector<std::string> argv_;
  std::chrono::milliseconds timeout_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
};

// ---- construction from documents ----

/// `{"id", "type": constant_kinematics|idm|pdm_closed|external, "params": {...},
///   "noise": {"jitter", "heading_bias", "latency"}, "seed"}`
std::unique_ptr<Planner> make_planner(const Json& spec);

/// Built-in zoo spanning the quality spectrum.
std::vector<Json> default_zoo();

}  // namespace pseudosim
