#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pseudosim/geometry.hpp"

namespace pseudosim {

/// Simulation grid spacing; every timestamp in the engine is a multiple.
inline constexpr double kTickSeconds = 0.1;
inline constexpr int kHistoryStates = 16;
inline constexpr int kPlanWaypoints = 40;

/// Time of tick k; k / 10.0 round-trips through a 3-decimal text field.
inline double tick_time(long k) { return static_cast<double>(k) / 10.0; }
bool on_tick_grid(double t);

struct EgoState {
  Pose2D pose;
  double velocity = 0.0;
  double acceleration = 0.0;
  double timestamp = 0.0;

  bool operator==(const EgoState&) const = default;
};

struct Waypoint {
  Pose2D pose;
  double timestamp = 0.0;

  bool operator==(const Waypoint&) const = default;
};

enum class Frame { EgoLocal, World };

struct Trajectory {
  std::vector<Waypoint> waypoints;
  Frame frame = Frame::World;

  bool operator==(const Trajectory&) const = default;
};

enum class DrivingCommand { Left, Straight, Right };
enum class LightState { Red, Green };

struct LightPhase {
  double t_start = 0.0;
  double t_end = 0.0;
  LightState state = LightState::Green;

  bool operator==(const LightPhase&) const = default;
};

struct StopLine {
  std::string id;
  std::string lane_id;
  Vec2 a;
  Vec2 b;
  std::vector<LightPhase> light_schedule;

  /// Green outside any scheduled phase.
  LightState state_at(double t) const;
  bool operator==(const StopLine&) const = default;
};

struct Lane {
  std::string id;
  Polyline centerline;
  double width = 3.5;
  double speed_limit = 10.0;
  std::vector<std::string> successors;

  bool operator==(const Lane& o) const {
    return id == o.id && centerline.points() == o.centerline.points() && width == o.width &&
           speed_limit == o.speed_limit && successors == o.successors;
  }
};

struct DrivableArea {
  std::string id;
  Polygon polygon;

  bool operator==(const DrivableArea& o) const { return id == o.id && polygon.points == o.polygon.points; }
};

struct MapModel {
  std::vector<DrivableArea> drivable_areas;
  std::vector<Lane> lanes;
  std::vector<StopLine> stop_lines;
  std::vector<std::string> route;

  const Lane* find_lane(const std::string& id) const;
  bool in_drivable_area(Vec2 p) const;
  /// Concatenation of the route lanes' centerlines.
  const Polyline& route_line() const { return route_line_; }
  /// Rebuilds cached geometry; call after editing lanes or route.
  void rebuild();

  bool operator==(const MapModel& o) const {
    return drivable_areas == o.drivable_areas && lanes == o.lanes && stop_lines == o.stop_lines &&
           route == o.route;
  }

 private:
  Polyline route_line_;
};

/// Concatenates lane centerlines, dropping the shared joint vertices.
Polyline concat_lanes(const MapModel& map, const std::vector<std::string>& lane_ids);

struct IdmParams {
  double v0 = 10.0;
  double time_headway = 1.5;
  double min_gap = 2.0;
  double a_max = 1.5;
  double b_comfort = 2.0;
  double delta = 4.0;
  /// Hard floor on the returned acceleration.
  double max_decel = 9.0;

  bool operator==(const IdmParams&) const = default;
};

struct AgentState {
  Pose2D pose;
  double velocity = 0.0;
  double timestamp = 0.0;

  bool operator==(const AgentState&) const = default;
};

enum class AgentBehavior { Replay, Reactive };

struct AgentTrack {
  std::string id;
  double length = 4.6;
  double width = 1.9;
  std::vector<AgentState> states;
  std::vector<std::string> lane_path;
  AgentBehavior behavior = AgentBehavior::Reactive;
  /// Per-agent override; defaults derive v0 from the lane speed limit.
  std::optional<IdmParams> idm;

  bool operator==(const AgentTrack&) const = default;
};

struct Scenario {
  std::string id;
  MapModel map;
  std::vector<EgoState> ego_history;
  std::vector<AgentTrack> agents;
  DrivingCommand command = DrivingCommand::Straight;
  Trajectory expert_trajectory;
  std::uint64_t rng_seed = 0;

  const EgoState& current_ego() const { return ego_history.back(); }
  bool operator==(const Scenario&) const = default;
};

struct FrenetCoord {
  double s = 0.0;
  double d = 0.0;
};

/// Maximum lateral distance accepted by project_to_route.
inline constexpr double kCorridorHalfWidth = 50.0;

/// Throws OutOfCorridor beyond kCorridorHalfWidth.
FrenetCoord project_to_route(const MapModel& map, const Pose2D& p);
Vec2 embed_route(const MapModel& map, const FrenetCoord& f);

/// Expert trajectory as ego states with finite-difference velocity and
/// acceleration, prefixed by nothing (t >= 0 only).
std::vector<EgoState> expert_states(const Scenario& sc);

struct Violation {
  std::string invariant;
  std::string element;

  bool operator==(const Violation&) const = default;
};

std::vector<Violation> validate_scenario(const Scenario& sc);

std::string to_string(DrivingCommand c);
std::string to_string(LightState s);
std::string to_string(AgentBehavior b);

}  // namespace pseudosim
