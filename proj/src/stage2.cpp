#include "pseudosim/stage2.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pseudosim/errors.hpp"
#include "pseudosim/metrics.hpp"
#include "pseudosim/traffic.hpp"

namespace pseudosim {

std::pair<double, double> longitudinal_bounds(double v0) {
  const double d_min = v0 <= 16.0 ? v0 * v0 / 8.0 : 4.0 * v0 - 32.0;
  return {d_min, 4.0 * v0 + 32.0};
}

namespace {

double start_arc_length(const Scenario& sc) {
  return sc.map.route_line().project(sc.current_ego().pose.position()).s;
}

Vec2 expert_endpoint(const Scenario& sc) {
  return sc.expert_trajectory.waypoints.at(kStage2StartTick).pose.position();
}

}  // namespace

std::vector<GridOffset> raw_start_grid(const Scenario& sc) {
  const auto [d_min, d_max] = longitudinal_bounds(std::max(0.0, sc.current_ego().velocity));
  const int n_lat = static_cast<int>(std::lround(2.0 * kLateralMax / kLateralStep)) + 1;
  std::vector<GridOffset> out;
  for (int i = 0; d_min + i * kLongitudinalStep <= d_max + 1e-9; ++i) {
    for (int j = 0; j < n_lat; ++j) out.push_back({-kLateralMax + j * kLateralStep, d_min + i * kLongitudinalStep});
  }
  return out;
}

Vec2 grid_position(const Scenario& sc, const GridOffset& g) {
  return sc.map.route_line().embed(start_arc_length(sc) + g.lon, g.lat);
}

std::vector<GridOffset> sample_start_grid(const Scenario& sc) {
  const Vec2 target = expert_endpoint(sc);
  const Polyline& route = sc.map.route_line();
  const double s0 = start_arc_length(sc);
  struct Ranked {
    double dist;
    GridOffset g;
  };
  std::vector<Ranked> ranked;
  for (const auto& g : raw_start_grid(sc)) ranked.push_back({distance(route.embed(s0 + g.lon, g.lat), target), g});
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    if (a.g.lon != b.g.lon) return a.g.lon < b.g.lon;
    return a.g.lat < b.g.lat;
  });
  std::vector<GridOffset> out;
  for (std::size_t i = 0; i < ranked.size() && i < kMaxObservations; ++i) out.push_back(ranked[i].g);
  return out;
}

void TrajectoryBank::add(const Scenario& sc) {
  std::vector<EgoState> states(sc.ego_history.begin(), sc.ego_history.end() - 1);
  const auto future = expert_states(sc);
  states.insert(states.end(), future.begin(), future.end());
  add(sc.id, std::move(states), sc.map.route_line());
}

void TrajectoryBank::add(std::string id, std::vector<EgoState> states, const Polyline& route) {
  if (states.size() < static_cast<std::size_t>(kHistoryStates)) {
    throw ConfigError("bank entry '" + id + "' is shorter than 1.5 s");
  }
  Entry e;
  e.id = std::move(id);
  for (const auto& st : states) {
    const auto proj = route.project(st.pose.position());
    e.lateral.push_back(proj.d);
    e.relative_heading.push_back(normalize_angle(st.pose.heading - route.heading_at(proj.s)));
  }
  e.states = std::move(states);
  entries_.push_back(std::move(e));
}

std::optional<StartCandidate> match_heading_history(const GridOffset& g, const Scenario& sc,
                                                    const TrajectoryBank& bank, const MatchTolerances& tol) {
  if (bank.empty()) throw ConfigError("trajectory bank is empty");
  const auto expert = expert_states(sc);
  const EgoState& target = expert.at(kStage2StartTick);
  constexpr double kHeadingScale = 0.35;

  const TrajectoryBank::Entry* best = nullptr;
  std::size_t best_k = 0;
  double best_cost = std::numeric_limits<double>::infinity();
  for (const auto& e : bank.entries()) {
    for (std::size_t k = kHistoryStates - 1; k < e.states.size(); ++k) {
      const double dd = e.lateral[k] - g.lat;
      const double dv = e.states[k].velocity - target.velocity;
      const double da = e.states[k].acceleration - target.acceleration;
      const double dh = e.relative_heading[k] / kHeadingScale;
      const double cost = dd * dd + dv * dv + da * da + dh * dh;
      if (cost < best_cost) {
        best_cost = cost;
        best = &e;
        best_k = k;
      }
    }
  }
  if (best == nullptr) return std::nullopt;

  const Polyline& route = sc.map.route_line();
  const double s = start_arc_length(sc) + g.lon;
  const EgoState& m = best->states[best_k];
  StartCandidate c;
  c.grid = g;
  const Vec2 p = route.embed(s, g.lat);
  c.pose = {p.x, p.y, normalize_angle(route.heading_at(s) + best->relative_heading[best_k])};
  const auto end_proj = route.project(target.pose.position());
  c.relative = {s - end_proj.s, g.lat - end_proj.d};
  c.matched_velocity = m.velocity;
  c.source_trajectory_id = best->id;

  if (std::abs(m.velocity - target.velocity) > tol.velocity) return std::nullopt;
  if (std::abs(m.acceleration - target.acceleration) > tol.acceleration) return std::nullopt;
  if (std::abs(normalize_angle(c.pose.heading - target.pose.heading)) > tol.heading) return std::nullopt;

  // rigid transform placing the matched state on the candidate pose
  const Pose2D& anchor = m.pose;
  for (std::size_t k = best_k + 1 - kHistoryStates; k <= best_k; ++k) {
    EgoState h = best->states[k];
    h.pose = to_world(c.pose, to_local(anchor, h.pose));
    h.timestamp = tick_time(static_cast<long>(k) - static_cast<long>(best_k));
    c.matched_history.push_back(h);
  }
  c.matched_history.back().pose = c.pose;
  return c;
}

Scenario derive_stage2_scenario(const Scenario& sc, const StartCandidate& c, std::size_t index) {
  Scenario out;
  out.id = sc.id + "#" + std::to_string(index);
  out.map = sc.map;
  for (auto& sl : out.map.stop_lines) {
    for (auto& ph : sl.light_schedule) {
      ph.t_start -= kStage2StartTime;
      ph.t_end -= kStage2StartTime;
    }
  }
  out.map.rebuild();
  out.command = sc.command;
  out.rng_seed = sc.rng_seed;
  out.ego_history = c.matched_history;
  // the expert's own 4 s state and onwards serve as the human reference
  out.expert_trajectory.frame = Frame::World;
  const auto& wps = sc.expert_trajectory.waypoints;
  for (std::size_t k = kStage2StartTick; k < wps.size(); ++k) {
    out.expert_trajectory.waypoints.push_back(
        {wps[k].pose, tick_time(static_cast<long>(k) - kStage2StartTick)});
  }
  for (const auto& ag : sc.agents) {
    AgentTrack a = ag;
    a.states.clear();
    const std::size_t first = std::min<std::size_t>(kStage2StartTick, ag.states.size() - 1);
    for (std::size_t k = first; k < ag.states.size(); ++k) {
      AgentState st = ag.states[k];
      st.timestamp = tick_time(static_cast<long>(k - first));
      a.states.push_back(st);
    }
    out.agents.push_back(std::move(a));
  }
  return out;
}

bool reject_invalid_keep(const StartCandidate& c, const Scenario& sc4) {
  const MetricsConfig cfg;
  const OrientedBox box = ego_box(c.pose, cfg);
  // NC: any contact at the start
  const TrafficModel model(sc4);
  for (const auto& ag : model.snapshots(model.initial_state())) {
    if (boxes_overlap(box, ag.box)) return false;
  }
  // DAC
  for (const auto& corner : box.corners()) {
    if (!sc4.map.in_drivable_area(corner)) return false;
  }
  // DDC
  const LaneLocator lanes(sc4.map);
  const auto hit = lanes.containing_lane(c.pose);
  if (hit && hit->heading_diff > 0.5 * kPi) return false;
  // TLC
  const Polyline& route = sc4.map.route_line();
  const double s_start = route.project(c.pose.position()).s;
  const double s_expert = route.project(sc4.expert_trajectory.waypoints.front().pose.position()).s;
  for (const auto& sl : sc4.map.stop_lines) {
    if (sl.state_at(0.0) != LightState::Red) continue;
    if (segment_intersects_box(sl.a, sl.b, box)) return false;
    if (std::find(sc4.map.route.begin(), sc4.map.route.end(), sl.lane_id) == sc4.map.route.end()) continue;
    const double s_line = route.project((sl.a + sl.b) * 0.5).s;
    if (s_start > s_line && s_expert < s_line) return false;
  }
  return true;
}

Stage2Set build_stage2_set(const Scenario& sc, const TrajectoryBank& bank, const MatchTolerances& tol) {
  Stage2Set set;
  set.parent_scenario_id = sc.id;
  const auto grid = sample_start_grid(sc);
  set.candidates = grid.size();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    auto c = match_heading_history(grid[i], sc, bank, tol);
    if (!c) continue;
    ++set.matched;
    Scenario derived = derive_stage2_scenario(sc, *c, i);
    if (!reject_invalid_keep(*c, derived)) continue;
    if (!validate_scenario(derived).empty()) continue;
    set.observations.push_back({sc.id, i, std::move(*c), std::move(derived)});
  }
  set.discarded = set.observations.size() < kMinObservations;
  if (set.discarded) set.observations.clear();
  return set;
}

Stage2Set downsample(const Stage2Set& set, double density) {
  if (!(density > 0.0 && density <= 1.0)) throw ConfigError("density must lie in (0, 1]");
  const auto stride = static_cast<std::size_t>(std::lround(1.0 / density));
  if (stride == 0 || std::abs(stride * density - 1.0) > 1e-9) {
    throw ConfigError("density must be the reciprocal of an integer");
  }
  Stage2Set out = set;
  out.observations.clear();
  for (std::size_t i = 0; i < set.observations.size(); i += stride) out.observations.push_back(set.observations[i]);
  return out;
}

Json to_json(const Stage2Set& set) {
  Json obs = Json::array();
  for (const auto& o : set.observations) {
    Json hist = Json::array();
    for (const auto& h : o.start.matched_history) hist.push_back(to_json(h));
    obs.push_back(Json{{"index", o.index},
                       {"lat", o.start.grid.lat},
                       {"lon", o.start.grid.lon},
                       {"relative", {o.start.relative.s, o.start.relative.d}},
                       {"pose", {o.start.pose.x, o.start.pose.y, o.start.pose.heading}},
                       {"matched_velocity", o.start.matched_velocity},
                       {"source", o.start.source_trajectory_id},
                       {"history", std::move(hist)}});
  }
  return Json{{"parent", set.parent_scenario_id},
              {"discarded", set.discarded},
              {"candidates", set.candidates},
              {"matched", set.matched},
              {"observations", std::move(obs)}};
}

Stage2Set stage2_from_json(const Json& j, const Scenario& parent) {
  expect_keys(j, {"parent", "discarded", "candidates", "matched", "observations"}, {}, "stage2");
  Stage2Set set;
  try {
    set.parent_scenario_id = j.at("parent").get<std::string>();
    set.discarded = j.at("discarded").get<bool>();
    set.candidates = j.at("candidates").get<std::size_t>();
    set.matched = j.at("matched").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("stage2: ") + e.what());
  }
  if (set.parent_scenario_id != parent.id) {
    throw SchemaError("stage2: parent '" + set.parent_scenario_id + "' does not match scenario '" + parent.id + "'");
  }
  for (const auto& o : j.at("observations")) {
    expect_keys(o, {"index", "lat", "lon", "relative", "pose", "matched_velocity", "source", "history"}, {},
                "stage2.observation");
    StartCandidate c;
    try {
      c.grid = {o.at("lat").get<double>(), o.at("lon").get<double>()};
      c.relative = {o.at("relative").at(0).get<double>(), o.at("relative").at(1).get<double>()};
      c.pose = {o.at("pose").at(0).get<double>(), o.at("pose").at(1).get<double>(), o.at("pose").at(2).get<double>()};
      c.matched_velocity = o.at("matched_velocity").get<double>();
      c.source_trajectory_id = o.at("source").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(std::string("stage2.observation: ") + e.what());
    }
    for (const auto& h : o.at("history")) c.matched_history.push_back(ego_state_from_json(h));
    const auto index = o.at("index").get<std::size_t>();
    Scenario derived = derive_stage2_scenario(parent, c, index);
    const auto violations = validate_scenario(derived);
    if (!violations.empty()) {
      throw ValidationError("stage2 observation " + std::to_string(index) + ": invariant '" +
                            violations.front().invariant + "' violated by " + violations.front().element);
    }
    set.observations.push_back({set.parent_scenario_id, index, std::move(c), std::move(derived)});
  }
  return set;
}

Stage2Set load_stage2(const std::filesystem::path& path, const Scenario& parent) {
  return stage2_from_json(read_json_file(path), parent);
}

void save_stage2(const Stage2Set& set, const std::filesystem::path& path) {
  write_text_file(path, to_json(set).dump() + "\n");
}

}  // namespace pseudosim
