#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pseudosim/scene.hpp"

namespace fixtures {

using namespace pseudosim;

// Two opposing lanes along +x: "fwd" at y = 0, "back" at y = 3.5 driving -x.
inline MapModel straight_map(double length = 400.0, double speed_limit = 15.0) {
  MapModel m;
  m.drivable_areas.push_back({"road", Polygon{{{-100.0, -1.75}, {length, -1.75}, {length, 5.25}, {-100.0, 5.25}}}});
  std::vector<Vec2> fwd, back;
  for (double x = -100.0; x <= length + 1e-9; x += 10.0) fwd.push_back({x, 0.0});
  for (double x = length; x >= -100.0 - 1e-9; x -= 10.0) back.push_back({x, 3.5});
  m.lanes.push_back({"fwd", Polyline(fwd), 3.5, speed_limit, {}});
  m.lanes.push_back({"back", Polyline(back), 3.5, speed_limit, {}});
  m.route = {"fwd"};
  m.rebuild();
  return m;
}

// Ego at the origin driving +x at constant `speed`; expert keeps going.
inline Scenario straight_scenario(double speed = 10.0, int expert_ticks = 125) {
  Scenario sc;
  sc.id = "fixture-straight";
  sc.map = straight_map();
  for (int k = -15; k <= 0; ++k) {
    sc.ego_history.push_back({{speed * tick_time(k), 0.0, 0.0}, speed, 0.0, tick_time(k)});
  }
  sc.expert_trajectory.frame = Frame::World;
  for (int k = 0; k <= expert_ticks; ++k) {
    sc.expert_trajectory.waypoints.push_back({{speed * tick_time(k), 0.0, 0.0}, tick_time(k)});
  }
  sc.command = DrivingCommand::Straight;
  sc.rng_seed = 1;
  return sc;
}

inline AgentTrack parked_agent(std::string id, double x, double y, double heading = 0.0, std::string lane = "fwd") {
  AgentTrack a;
  a.id = std::move(id);
  a.states.push_back({{x, y, heading}, 0.0, 0.0});
  a.lane_path = {std::move(lane)};
  a.behavior = AgentBehavior::Replay;
  return a;
}

inline AgentTrack reactive_agent(std::string id, double x, double speed, std::string lane = "fwd") {
  AgentTrack a;
  a.id = std::move(id);
  const double heading = lane == "fwd" ? 0.0 : kPi;
  const double y = lane == "fwd" ? 0.0 : 3.5;
  a.states.push_back({{x, y, heading}, speed, 0.0});
  a.lane_path = {std::move(lane)};
  a.behavior = AgentBehavior::Reactive;
  return a;
}

}  // namespace fixtures
