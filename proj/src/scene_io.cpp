#include "pseudosim/scene_io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "pseudosim/errors.hpp"

namespace pseudosim {

void expect_keys(const Json& obj, std::initializer_list<std::string_view> required,
                 std::initializer_list<std::string_view> optional, std::string_view where) {
  if (!obj.is_object()) throw SchemaError(std::string(where) + ": expected an object");
  for (std::string_view key : required) {
    if (!obj.contains(std::string(key))) {
      throw SchemaError(std::string(where) + ": missing key '" + std::string(key) + "'");
    }
  }
  for (const auto& item : obj.items()) {
    bool known = false;
    for (std::string_view key : required) known = known || item.key() == key;
    for (std::string_view key : optional) known = known || item.key() == key;
    if (!known) throw SchemaError(std::string(where) + ": unknown key '" + item.key() + "'");
  }
}

double round_timestamp(double t) { return std::round(t * 1000.0) / 1000.0; }

namespace {

double num(const Json& j, const char* key, std::string_view where) {
  const Json& v = j.at(key);
  if (!v.is_number()) throw SchemaError(std::string(where) + "." + key + ": expected a number");
  return v.get<double>();
}

std::string str(const Json& j, const char* key, std::string_view where) {
  const Json& v = j.at(key);
  if (!v.is_string()) throw SchemaError(std::string(where) + "." + key + ": expected a string");
  return v.get<std::string>();
}

const Json& arr(const Json& j, const char* key, std::string_view where) {
  const Json& v = j.at(key);
  if (!v.is_array()) throw SchemaError(std::string(where) + "." + key + ": expected an array");
  return v;
}

Json point(Vec2 p) { return Json::array({p.x, p.y}); }

Vec2 point_from(const Json& j, std::string_view where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw SchemaError(std::string(where) + ": expected [x, y]");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

std::vector<std::string> strings(const Json& j, const char* key, std::string_view where) {
  std::vector<std::string> out;
  for (const auto& v : arr(j, key, where)) {
    if (!v.is_string()) throw SchemaError(std::string(where) + "." + key + ": expected strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

LightState light_from_string(const std::string& s) {
  if (s == "red") return LightState::Red;
  if (s == "green") return LightState::Green;
  throw SchemaError("unknown light state '" + s + "'");
}

}  // namespace

DrivingCommand command_from_string(std::string_view s) {
  if (s == "left") return DrivingCommand::Left;
  if (s == "straight") return DrivingCommand::Straight;
  if (s == "right") return DrivingCommand::Right;
  throw SchemaError("unknown driving command '" + std::string(s) + "'");
}

Json to_json(const EgoState& s) {
  return Json{{"x", s.pose.x},
              {"y", s.pose.y},
              {"heading", s.pose.heading},
              {"velocity", s.velocity},
              {"acceleration", s.acceleration},
              {"timestamp", round_timestamp(s.timestamp)}};
}

EgoState ego_state_from_json(const Json& j) {
  expect_keys(j, {"x", "y", "heading", "velocity", "acceleration", "timestamp"}, {}, "ego_state");
  EgoState s;
  s.pose = {num(j, "x", "ego_state"), num(j, "y", "ego_state"), num(j, "heading", "ego_state")};
  s.velocity = num(j, "velocity", "ego_state");
  s.acceleration = num(j, "acceleration", "ego_state");
  s.timestamp = num(j, "timestamp", "ego_state");
  return s;
}

Json to_json(const Trajectory& t) {
  Json wps = Json::array();
  for (const auto& w : t.waypoints) {
    wps.push_back(Json{{"x", w.pose.x}, {"y", w.pose.y}, {"heading", w.pose.heading},
                       {"timestamp", round_timestamp(w.timestamp)}});
  }
  return Json{{"frame", t.frame == Frame::World ? "world" : "ego-local"}, {"waypoints", std::move(wps)}};
}

Trajectory trajectory_from_json(const Json& j) {
  expect_keys(j, {"frame", "waypoints"}, {}, "trajectory");
  Trajectory t;
  const std::string frame = str(j, "frame", "trajectory");
  if (frame == "world") {
    t.frame = Frame::World;
  } else if (frame == "ego-local") {
    t.frame = Frame::EgoLocal;
  } else {
    throw SchemaError("trajectory.frame: unknown frame '" + frame + "'");
  }
  for (const auto& w : arr(j, "waypoints", "trajectory")) {
    expect_keys(w, {"x", "y", "heading", "timestamp"}, {}, "waypoint");
    t.waypoints.push_back({{num(w, "x", "waypoint"), num(w, "y", "waypoint"), num(w, "heading", "waypoint")},
                           num(w, "timestamp", "waypoint")});
  }
  return t;
}

Json to_json(const IdmParams& p) {
  return Json{{"v0", p.v0},           {"time_headway", p.time_headway}, {"min_gap", p.min_gap},
              {"a_max", p.a_max},     {"b_comfort", p.b_comfort},       {"delta", p.delta},
              {"max_decel", p.max_decel}};
}

IdmParams idm_from_json(const Json& j) {
  expect_keys(j, {"v0", "time_headway", "min_gap", "a_max", "b_comfort", "delta"}, {"max_decel"}, "idm");
  IdmParams p;
  p.v0 = num(j, "v0", "idm");
  p.time_headway = num(j, "time_headway", "idm");
  p.min_gap = num(j, "min_gap", "idm");
  p.a_max = num(j, "a_max", "idm");
  p.b_comfort = num(j, "b_comfort", "idm");
  p.delta = num(j, "delta", "idm");
  if (j.contains("max_decel")) p.max_decel = num(j, "max_decel", "idm");
  return p;
}

Json to_json(const MapModel& map) {
  Json areas = Json::array();
  for (const auto& a : map.drivable_areas) {
    Json poly = Json::array();
    for (Vec2 p : a.polygon.points) poly.push_back(point(p));
    areas.push_back(Json{{"id", a.id}, {"polygon", std::move(poly)}});
  }
  Json lanes = Json::array();
  for (const auto& l : map.lanes) {
    Json cl = Json::array();
    for (Vec2 p : l.centerline.points()) cl.push_back(point(p));
    lanes.push_back(Json{{"id", l.id},
                         {"centerline", std::move(cl)},
                         {"width", l.width},
                         {"speed_limit", l.speed_limit},
                         {"successors", l.successors}});
  }
  Json stops = Json::array();
  for (const auto& s : map.stop_lines) {
    Json sched = Json::array();
    for (const auto& ph : s.light_schedule) {
      sched.push_back(Json{{"t_start", round_timestamp(ph.t_start)},
                           {"t_end", round_timestamp(ph.t_end)},
                           {"state", to_string(ph.state)}});
    }
    stops.push_back(Json{{"id", s.id},
                         {"lane_id", s.lane_id},
                         {"segment", Json::array({point(s.a), point(s.b)})},
                         {"light_schedule", std::move(sched)}});
  }
  return Json{{"drivable_areas", std::move(areas)},
              {"lanes", std::move(lanes)},
              {"stop_lines", std::move(stops)},
              {"route", map.route}};
}

MapModel map_from_json(const Json& j) {
  expect_keys(j, {"drivable_areas", "lanes", "stop_lines", "route"}, {}, "map");
  MapModel map;
  for (const auto& a : arr(j, "drivable_areas", "map")) {
    expect_keys(a, {"id", "polygon"}, {}, "drivable_area");
    DrivableArea area;
    area.id = str(a, "id", "drivable_area");
    for (const auto& p : arr(a, "polygon", "drivable_area")) area.polygon.points.push_back(point_from(p, "polygon"));
    map.drivable_areas.push_back(std::move(area));
  }
  for (const auto& l : arr(j, "lanes", "map")) {
    expect_keys(l, {"id", "centerline", "width", "speed_limit", "successors"}, {}, "lane");
    Lane lane;
    lane.id = str(l, "id", "lane");
    std::vector<Vec2> pts;
    for (const auto& p : arr(l, "centerline", "lane")) pts.push_back(point_from(p, "centerline"));
    lane.centerline = Polyline(std::move(pts));
    lane.width = num(l, "width", "lane");
    lane.speed_limit = num(l, "speed_limit", "lane");
    lane.successors = strings(l, "successors", "lane");
    map.lanes.push_back(std::move(lane));
  }
  for (const auto& s : arr(j, "stop_lines", "map")) {
    expect_keys(s, {"id", "lane_id", "segment", "light_schedule"}, {}, "stop_line");
    StopLine sl;
    sl.id = str(s, "id", "stop_line");
    sl.lane_id = str(s, "lane_id", "stop_line");
    const Json& seg = arr(s, "segment", "stop_line");
    if (seg.size() != 2) throw SchemaError("stop_line.segment: expected two points");
    sl.a = point_from(seg[0], "segment");
    sl.b = point_from(seg[1], "segment");
    for (const auto& ph : arr(s, "light_schedule", "stop_line")) {
      expect_keys(ph, {"t_start", "t_end", "state"}, {}, "light_phase");
      sl.light_schedule.push_back({num(ph, "t_start", "light_phase"), num(ph, "t_end", "light_phase"),
                                   light_from_string(str(ph, "state", "light_phase"))});
    }
    map.stop_lines.push_back(std::move(sl));
  }
  map.route = strings(j, "route", "map");
  map.rebuild();
  return map;
}

Json to_json(const AgentTrack& a) {
  Json states = Json::array();
  for (const auto& s : a.states) {
    states.push_back(Json{{"x", s.pose.x}, {"y", s.pose.y}, {"heading", s.pose.heading},
                          {"velocity", s.velocity}, {"timestamp", round_timestamp(s.timestamp)}});
  }
  Json j{{"id", a.id},
         {"length", a.length},
         {"width", a.width},
         {"behavior", to_string(a.behavior)},
         {"lane_path", a.lane_path},
         {"states", std::move(states)}};
  if (a.idm) j["idm"] = to_json(*a.idm);
  return j;
}

namespace {

AgentTrack agent_from_json(const Json& j) {
  expect_keys(j, {"id", "length", "width", "behavior", "lane_path", "states"}, {"idm"}, "agent");
  AgentTrack a;
  a.id = str(j, "id", "agent");
  a.length = num(j, "length", "agent");
  a.width = num(j, "width", "agent");
  const std::string beh = str(j, "behavior", "agent");
  if (beh == "replay") {
    a.behavior = AgentBehavior::Replay;
  } else if (beh == "reactive") {
    a.behavior = AgentBehavior::Reactive;
  } else {
    throw SchemaError("agent.behavior: unknown value '" + beh + "'");
  }
  a.lane_path = strings(j, "lane_path", "agent");
  for (const auto& s : arr(j, "states", "agent")) {
    expect_keys(s, {"x", "y", "heading", "velocity", "timestamp"}, {}, "agent_state");
    a.states.push_back({{num(s, "x", "agent_state"), num(s, "y", "agent_state"), num(s, "heading", "agent_state")},
                        num(s, "velocity", "agent_state"),
                        num(s, "timestamp", "agent_state")});
  }
  if (j.contains("idm")) a.idm = idm_from_json(j.at("idm"));
  return a;
}

}  // namespace

Json to_json(const Scenario& sc) {
  Json hist = Json::array();
  for (const auto& s : sc.ego_history) hist.push_back(to_json(s));
  Json agents = Json::array();
  for (const auto& a : sc.agents) agents.push_back(to_json(a));
  return Json{{"id", sc.id},
              {"map", to_json(sc.map)},
              {"ego_history", std::move(hist)},
              {"agents", std::move(agents)},
              {"command", to_string(sc.command)},
              {"expert_trajectory", to_json(sc.expert_trajectory)},
              {"rng_seed", sc.rng_seed}};
}

Scenario scenario_from_json(const Json& j) {
  expect_keys(j, {"id", "map", "ego_history", "agents", "command", "expert_trajectory", "rng_seed"}, {}, "scenario");
  Scenario sc;
  sc.id = str(j, "id", "scenario");
  sc.map = map_from_json(j.at("map"));
  for (const auto& s : arr(j, "ego_history", "scenario")) sc.ego_history.push_back(ego_state_from_json(s));
  for (const auto& a : arr(j, "agents", "scenario")) sc.agents.push_back(agent_from_json(a));
  sc.command = command_from_string(str(j, "command", "scenario"));
  sc.expert_trajectory = trajectory_from_json(j.at("expert_trajectory"));
  if (!j.at("rng_seed").is_number_unsigned() && !j.at("rng_seed").is_number_integer()) {
    throw SchemaError("scenario.rng_seed: expected an integer");
  }
  sc.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  return sc;
}

std::string dump_scenario(const Scenario& sc) { return to_json(sc).dump(); }

Json parse_json_text(std::string_view text, std::string_view what) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string(what) + ": " + e.what());
  }
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_json_text(buf.str(), path.string());
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

Scenario load_scenario(const std::filesystem::path& path) {
  const Json j = read_json_file(path);
  Scenario sc;
  try {
    sc = scenario_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  const auto violations = validate_scenario(sc);
  if (!violations.empty()) {
    throw ValidationError(path.string() + ": invariant '" + violations.front().invariant + "' violated by " +
                          violations.front().element);
  }
  return sc;
}

void save_scenario(const Scenario& sc, const std::filesystem::path& path) {
  write_text_file(path, dump_scenario(sc) + "\n");
}

}  // namespace pseudosim
