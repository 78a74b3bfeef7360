#include "pseudosim/scene.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "pseudosim/errors.hpp"

namespace pseudosim {

bool on_tick_grid(double t) {
  const double k = t / kTickSeconds;
  return std::abs(k - std::round(k)) < 1e-6;
}

LightState StopLine::state_at(double t) const {
  for (const auto& ph : light_schedule) {
    if (t >= ph.t_start - 1e-9 && t < ph.t_end - 1e-9) return ph.state;
  }
  return LightState::Green;
}

const Lane* MapModel::find_lane(const std::string& id) const {
  for (const auto& lane : lanes) {
    if (lane.id == id) return &lane;
  }
  return nullptr;
}

bool MapModel::in_drivable_area(Vec2 p) const {
  return std::any_of(drivable_areas.begin(), drivable_areas.end(),
                     [&](const DrivableArea& a) { return a.polygon.contains(p); });
}

Polyline concat_lanes(const MapModel& map, const std::vector<std::string>& lane_ids) {
  std::vector<Vec2> pts;
  for (const auto& id : lane_ids) {
    const Lane* lane = map.find_lane(id);
    if (lane == nullptr) continue;
    for (const Vec2& p : lane->centerline.points()) {
      if (!pts.empty() && distance(pts.back(), p) < 1e-9) continue;
      pts.push_back(p);
    }
  }
  return Polyline(std::move(pts));
}

void MapModel::rebuild() { route_line_ = concat_lanes(*this, route); }

FrenetCoord project_to_route(const MapModel& map, const Pose2D& p) {
  const auto proj = map.route_line().project(p.position());
  if (!(proj.distance <= kCorridorHalfWidth)) {
    throw OutOfCorridor("point is " + std::to_string(proj.distance) + " m from the route");
  }
  return {proj.s, proj.d};
}

Vec2 embed_route(const MapModel& map, const FrenetCoord& f) { return map.route_line().embed(f.s, f.d); }

std::vector<EgoState> expert_states(const Scenario& sc) {
  const auto& wps = sc.expert_trajectory.waypoints;
  std::vector<EgoState> out(wps.size());
  for (std::size_t k = 0; k < wps.size(); ++k) {
    out[k].pose = wps[k].pose;
    out[k].timestamp = wps[k].timestamp;
    if (k == 0) {
      out[k].velocity = sc.ego_history.empty() ? 0.0 : sc.ego_history.back().velocity;
    } else {
      out[k].velocity = distance(wps[k].pose.position(), wps[k - 1].pose.position()) / kTickSeconds;
    }
  }
  for (std::size_t k = 0; k + 1 < out.size(); ++k) {
    out[k].acceleration = (out[k + 1].velocity - out[k].velocity) / kTickSeconds;
  }
  if (out.size() >= 2) out.back().acceleration = out[out.size() - 2].acceleration;
  return out;
}

namespace {

bool finite_pose(const Pose2D& p) {
  return std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.heading);
}

bool heading_ok(double h) { return h > -kPi && h <= kPi; }

class Checker {
 public:
  void add(std::string inv, std::string el) { out.push_back({std::move(inv), std::move(el)}); }

  void pose(const Pose2D& p, const std::string& el) {
    if (!finite_pose(p)) {
      add("finite", el);
    } else if (!heading_ok(p.heading)) {
      add("heading_range", el);
    }
  }

  void grid(double t, const std::string& el) {
    if (!std::isfinite(t) || !on_tick_grid(t)) add("timestamp_grid", el);
  }

  template <typename T, typename F>
  void spacing(const std::vector<T>& xs, F time_of, const std::string& inv, const std::string& el) {
    for (std::size_t i = 1; i < xs.size(); ++i) {
      if (std::abs(time_of(xs[i]) - time_of(xs[i - 1]) - kTickSeconds) > 1e-6) {
        add(inv, el + "[" + std::to_string(i) + "]");
        return;
      }
    }
  }

  std::vector<Violation> out;
};

}  // namespace

std::vector<Violation> validate_scenario(const Scenario& sc) {
  Checker c;
  const MapModel& map = sc.map;

  for (const auto& area : map.drivable_areas) {
    if (area.polygon.points.size() < 3) {
      c.add("polygon_vertices", area.id);
    } else if (!area.polygon.is_simple()) {
      c.add("polygon_simple", area.id);
    }
  }
  std::set<std::string> lane_ids;
  for (const auto& lane : map.lanes) {
    lane_ids.insert(lane.id);
    const auto& pts = lane.centerline.points();
    if (pts.size() < 2) c.add("centerline_points", lane.id);
    for (std::size_t i = 1; i < pts.size(); ++i) {
      if (!(distance(pts[i], pts[i - 1]) > 0.0)) {
        c.add("centerline_segment_length", lane.id);
        break;
      }
    }
    if (!(lane.width > 0.0)) c.add("lane_width", lane.id);
  }
  for (const auto& lane : map.lanes) {
    for (const auto& succ : lane.successors) {
      if (!lane_ids.count(succ)) c.add("successor_exists", lane.id + "->" + succ);
    }
  }
  if (map.route.empty()) c.add("route_nonempty", "route");
  for (std::size_t i = 0; i < map.route.size(); ++i) {
    const Lane* lane = map.find_lane(map.route[i]);
    if (lane == nullptr) {
      c.add("route_lane_exists", map.route[i]);
      continue;
    }
    if (i + 1 < map.route.size() &&
        std::find(lane->successors.begin(), lane->successors.end(), map.route[i + 1]) == lane->successors.end()) {
      c.add("route_connected", map.route[i] + "->" + map.route[i + 1]);
    }
  }
  for (const auto& sl : map.stop_lines) {
    if (!lane_ids.count(sl.lane_id)) c.add("stop_line_lane", sl.id);
    for (const auto& ph : sl.light_schedule) {
      if (!(ph.t_end > ph.t_start)) c.add("light_phase_order", sl.id);
    }
  }

  if (sc.ego_history.size() < static_cast<std::size_t>(kHistoryStates)) c.add("ego_history_length", "ego_history");
  for (std::size_t i = 0; i < sc.ego_history.size(); ++i) {
    const auto& s = sc.ego_history[i];
    const std::string el = "ego_history[" + std::to_string(i) + "]";
    c.pose(s.pose, el);
    c.grid(s.timestamp, el);
    if (!std::isfinite(s.velocity) || !std::isfinite(s.acceleration)) c.add("finite", el);
  }
  c.spacing(sc.ego_history, [](const EgoState& s) { return s.timestamp; }, "history_spacing", "ego_history");

  const auto& wps = sc.expert_trajectory.waypoints;
  if (wps.empty() || wps.back().timestamp - wps.front().timestamp < 8.0 - 1e-6) {
    c.add("expert_length", "expert_trajectory");
  }
  if (!wps.empty() && !sc.ego_history.empty() &&
      std::abs(wps.front().timestamp - sc.ego_history.back().timestamp) > 1e-6) {
    c.add("history_expert_alignment", "expert_trajectory[0]");
  }
  c.spacing(wps, [](const Waypoint& w) { return w.timestamp; }, "expert_spacing", "expert_trajectory");
  for (std::size_t i = 0; i < wps.size(); ++i) {
    const std::string el = "expert_trajectory[" + std::to_string(i) + "]";
    c.pose(wps[i].pose, el);
    c.grid(wps[i].timestamp, el);
    if (finite_pose(wps[i].pose) && !map.in_drivable_area(wps[i].pose.position())) {
      c.add("expert_in_drivable", el);
    }
  }

  for (const auto& ag : sc.agents) {
    if (!(ag.length > 0.0) || !(ag.width > 0.0)) c.add("agent_footprint", ag.id);
    if (ag.states.empty()) c.add("agent_states", ag.id);
    for (std::size_t i = 0; i < ag.states.size(); ++i) {
      const std::string el = ag.id + "[" + std::to_string(i) + "]";
      c.pose(ag.states[i].pose, el);
      c.grid(ag.states[i].timestamp, el);
    }
    c.spacing(ag.states, [](const AgentState& s) { return s.timestamp; }, "agent_spacing", ag.id);
    if (ag.lane_path.empty()) c.add("agent_lane_path", ag.id);
    for (const auto& id : ag.lane_path) {
      if (!lane_ids.count(id)) c.add("agent_lane_path", ag.id + ":" + id);
    }
  }
  return c.out;
}

std::string to_string(DrivingCommand c) {
  switch (c) {
    case DrivingCommand::Left: return "left";
    case DrivingCommand::Straight: return "straight";
    case DrivingCommand::Right: return "right";
  }
  return "straight";
}

std::string to_string(LightState s) { return s == LightState::Red ? "red" : "green"; }

std::string to_string(AgentBehavior b) { return b == AgentBehavior::Replay ? "replay" : "reactive"; }

}  // namespace pseudosim
