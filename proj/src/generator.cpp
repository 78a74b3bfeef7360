#include "pseudosim/generator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>

#include "pseudosim/errors.hpp"
#include "pseudosim/metrics.hpp"
#include "pseudosim/rollout.hpp"
#include "pseudosim/scene_io.hpp"
#include "pseudosim/traffic.hpp"

namespace pseudosim {

std::string to_string(Layout l) {
  switch (l) {
    case Layout::Straight: return "straight";
    case Layout::Curve: return "curve";
    case Layout::Intersection: return "intersection";
    case Layout::LaneMerge: return "lane-merge";
  }
  return "straight";
}

Layout layout_from_string(std::string_view s) {
  if (s == "straight") return Layout::Straight;
  if (s == "curve") return Layout::Curve;
  if (s == "intersection") return Layout::Intersection;
  if (s == "lane-merge") return Layout::LaneMerge;
  throw ConfigError("unknown layout '" + std::string(s) + "'");
}

namespace {

constexpr double kLaneWidth = 3.5;
constexpr double kArcSpacing = 1.0;
constexpr double kExpertLatAccel = 2.0;
constexpr double kExpertPlanDecel = 1.5;
constexpr double kAgentSpacing = 12.0;

struct Primitive {
  double length;
  double curvature;
};

Pose2D advance(const Pose2D& p, double s, double k) {
  if (std::abs(k) < 1e-12) return {p.x + s * std::cos(p.heading), p.y + s * std::sin(p.heading), p.heading};
  const double h1 = p.heading + k * s;
  return {p.x + (std::sin(h1) - std::sin(p.heading)) / k, p.y - (std::cos(h1) - std::cos(p.heading)) / k,
          normalize_angle(h1)};
}

// Straight primitives contribute only their endpoints.
std::vector<Pose2D> sample_path(const Pose2D& start, const std::vector<Primitive>& prims) {
  std::vector<Pose2D> out{start};
  Pose2D cur = start;
  for (const auto& prim : prims) {
    const int n = std::abs(prim.curvature) < 1e-12 ? 1 : static_cast<int>(std::ceil(prim.length / kArcSpacing));
    const double ds = prim.length / n;
    for (int i = 1; i <= n; ++i) out.push_back(advance(cur, i * ds, prim.curvature));
    cur = out.back();
  }
  return out;
}

std::vector<Vec2> offset(const std::vector<Pose2D>& ref, double d) {
  std::vector<Vec2> out;
  out.reserve(ref.size());
  for (const auto& p : ref) out.push_back(p.position() + unit(p.heading + 0.5 * kPi) * d);
  return out;
}

std::vector<Vec2> reversed(std::vector<Vec2> v) {
  std::reverse(v.begin(), v.end());
  return v;
}

Polygon band(const std::vector<Pose2D>& ref, double half_width) {
  Polygon poly;
  poly.points = offset(ref, half_width);
  auto right = reversed(offset(ref, -half_width));
  poly.points.insert(poly.points.end(), right.begin(), right.end());
  return poly;
}

Polygon rect(double x0, double y0, double x1, double y1) { return Polygon{{{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}}; }

std::vector<Vec2> arc(Vec2 center, double radius, double phi0, double phi1) {
  const int n = static_cast<int>(std::ceil(std::abs(phi1 - phi0) * radius / kArcSpacing));
  std::vector<Vec2> pts;
  for (int i = 0; i <= n; ++i) {
    const double phi = phi0 + (phi1 - phi0) * i / n;
    pts.push_back(center + Vec2{std::cos(phi), std::sin(phi)} * radius);
  }
  return pts;
}

Lane lane(std::string id, std::vector<Vec2> pts, double speed, std::vector<std::string> succ = {}) {
  Lane l;
  l.id = std::move(id);
  l.centerline = Polyline(std::move(pts));
  l.width = kLaneWidth;
  l.speed_limit = speed;
  l.successors = std::move(succ);
  return l;
}

struct Slot {
  std::vector<std::string> path;
  double s_min;
  double s_max;
  double speed_limit;
  bool parking;
};

struct Layout_ {
  MapModel map;
  double ego_start_s = 0.0;  // route arc length at t = 0
  std::vector<Slot> slots;
  DrivingCommand command = DrivingCommand::Straight;
  int max_agents = 6;
};

// Phase bounds land on the millisecond grid the file format stores.
std::vector<LightPhase> phases(std::initializer_list<LightPhase> ps) {
  std::vector<LightPhase> out(ps);
  for (auto& ph : out) {
    ph.t_start = round_timestamp(ph.t_start);
    ph.t_end = round_timestamp(ph.t_end);
  }
  return out;
}

// Four-lane road along a reference path: forward lanes on the right.
Layout_ road_layout(const std::vector<Primitive>& prims, double speed, bool merge) {
  Layout_ out;
  const Pose2D start{-40.0, 0.0, 0.0};
  const auto ref = sample_path(start, prims);
  MapModel& map = out.map;
  map.drivable_areas.push_back({"road", band(ref, 2.0 * kLaneWidth)});
  map.lanes.push_back(lane("f0", offset(ref, -0.5 * kLaneWidth), speed));
  map.lanes.push_back(lane("b0", reversed(offset(ref, 0.5 * kLaneWidth)), speed));
  map.lanes.push_back(lane("b1", reversed(offset(ref, 1.5 * kLaneWidth)), speed));
  if (!merge) {
    map.lanes.push_back(lane("f1", offset(ref, -1.5 * kLaneWidth), speed));
    map.route = {"f0"};
    out.ego_start_s = 40.0;
    out.slots = {{{"f0"}, 15.0, 200.0, speed, false},
                 {{"f0"}, 0.0, 20.0, speed, false},
                 {{"f1"}, 20.0, 220.0, speed, true},
                 {{"f1"}, 0.0, 60.0, speed, false},
                 {{"b0"}, 100.0, 330.0, speed, false},
                 {{"b1"}, 100.0, 330.0, speed, false}};
    return out;
  }
  // merge: outer lane split where the on-ramp joins it
  const double y = -1.5 * kLaneWidth;
  const double x_total = start.x + prims.front().length;
  map.lanes.push_back(lane("f1a", {{-40.0, y}, {100.0, y}}, speed, {"f1b"}));
  map.lanes.push_back(lane("f1b", {{100.0, y}, {x_total, y}}, speed));
  const Vec2 ramp0{-60.0, y - 12.0};
  const Vec2 ramp1{100.0, y};
  map.lanes.push_back(lane("ramp", {ramp0, ramp1}, speed, {"f1b"}));
  const double ramp_heading = std::atan2(ramp1.y - ramp0.y, ramp1.x - ramp0.x);
  const std::vector<Pose2D> ramp_ref{{ramp0.x, ramp0.y, ramp_heading}, {ramp1.x, ramp1.y, ramp_heading}};
  map.drivable_areas.push_back({"ramp", band(ramp_ref, 0.5 * kLaneWidth + 0.75)});
  map.route = {"f1a", "f1b"};
  out.ego_start_s = 40.0;
  out.slots = {{{"f1a", "f1b"}, 15.0, 135.0, speed, false},
               {{"f1a", "f1b"}, 0.0, 20.0, speed, false},
               {{"ramp", "f1b"}, 40.0, 150.0, speed, false},
               {{"f0"}, 20.0, 200.0, speed, true},
               {{"b0"}, 100.0, 330.0, speed, false},
               {{"b1"}, 100.0, 330.0, speed, false}};
  return out;
}

Layout_ intersection_layout(double speed, std::mt19937_64& rng) {
  Layout_ out;
  MapModel& map = out.map;
  const double w = kLaneWidth;
  const double turn_speed = 6.0;
  const double cross_speed = 9.0;
  // east-west road y in [-7, 7], north-south road x in [53, 67], plaza [40, 80] x [-20, 20]
  map.drivable_areas.push_back({"ew", rect(-100.0, -2 * w, 260.0, 2 * w)});
  map.drivable_areas.push_back({"ns", rect(60.0 - 2 * w, -150.0, 60.0 + 2 * w, 150.0)});
  map.drivable_areas.push_back({"plaza", rect(40.0, -20.0, 80.0, 20.0)});

  auto straight3 = [&](const std::string& base, Vec2 a, Vec2 b, Vec2 c, Vec2 d, double v) {
    map.lanes.push_back(lane(base + "_in", {a, b}, v, {base + "_mid"}));
    map.lanes.push_back(lane(base + "_mid", {b, c}, v, {base + "_out"}));
    map.lanes.push_back(lane(base + "_out", {c, d}, v));
  };
  straight3("ew_f0", {-100, -0.5 * w}, {40, -0.5 * w}, {80, -0.5 * w}, {260, -0.5 * w}, speed);
  straight3("ew_f1", {-100, -1.5 * w}, {40, -1.5 * w}, {80, -1.5 * w}, {260, -1.5 * w}, speed);
  straight3("ew_b0", {260, 0.5 * w}, {80, 0.5 * w}, {40, 0.5 * w}, {-100, 0.5 * w}, speed);
  straight3("ns_f0", {60 + 0.5 * w, -150}, {60 + 0.5 * w, -20}, {60 + 0.5 * w, 20}, {60 + 0.5 * w, 150},
            cross_speed);
  straight3("ns_b0", {60 - 0.5 * w, 150}, {60 - 0.5 * w, 20}, {60 - 0.5 * w, -20}, {60 - 0.5 * w, -150},
            cross_speed);
  // turns from the inner eastbound approach
  const double r_left = 60 + 0.5 * w - 40;
  const double r_right = 60 - 0.5 * w - 40;
  map.lanes.push_back(lane("turn_left", arc({40, -0.5 * w + r_left}, r_left, -0.5 * kPi, 0.0), turn_speed,
                           {"ns_f0_out"}));
  map.lanes.push_back(lane("turn_right", arc({40, -0.5 * w - r_right}, r_right, 0.5 * kPi, 0.0), turn_speed,
                           {"ns_b0_out"}));
  // snap arc ends onto the lanes they join
  for (auto& l : map.lanes) {
    if (l.id == "turn_left" || l.id == "turn_right") {
      auto pts = l.centerline.points();
      pts.front() = {40.0, -0.5 * w};
      pts.back() = l.id == "turn_left" ? Vec2{60 + 0.5 * w, 20.0} : Vec2{60 - 0.5 * w, -20.0};
      l.centerline = Polyline(std::move(pts));
    }
  }
  for (auto& l : map.lanes) {
    if (l.id == "ew_f0_in") l.successors = {"ew_f0_mid", "turn_left", "turn_right"};
  }

  std::uniform_int_distribution<int> cmd(0, 2);
  const int c = cmd(rng);
  out.command = c == 0 ? DrivingCommand::Left : (c == 1 ? DrivingCommand::Straight : DrivingCommand::Right);
  if (out.command == DrivingCommand::Left) {
    map.route = {"ew_f0_in", "turn_left", "ns_f0_out"};
  } else if (out.command == DrivingCommand::Right) {
    map.route = {"ew_f0_in", "turn_right", "ns_b0_out"};
  } else {
    map.route = {"ew_f0_in", "ew_f0_mid", "ew_f0_out"};
  }
  out.ego_start_s = 100.0;

  // east-west red first then green, or green then red after the ego has passed
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<LightPhase> ew;
  std::vector<LightPhase> ns;
  if (u01(rng) < 0.6) {
    const double t_green = tick_time(std::lround(10.0 + 40.0 * u01(rng)));
    ew = phases({{-2.0, t_green, LightState::Red}, {t_green, 30.0, LightState::Green}});
    ns = phases({{-2.0, t_green - 1.5, LightState::Green}, {t_green - 1.5, 30.0, LightState::Red}});
  } else {
    const double t_red = tick_time(std::lround(80.0 + 30.0 * u01(rng)));
    ew = phases({{-2.0, t_red, LightState::Green}, {t_red, 30.0, LightState::Red}});
    ns = phases({{-2.0, t_red + 1.5, LightState::Red}, {t_red + 1.5, 30.0, LightState::Green}});
  }
  map.stop_lines.push_back({"sl_ew_f0", "ew_f0_in", {40, -w}, {40, 0}, ew});
  map.stop_lines.push_back({"sl_ew_f1", "ew_f1_in", {40, -2 * w}, {40, -w}, ew});
  map.stop_lines.push_back({"sl_ew_b0", "ew_b0_in", {80, 0}, {80, w}, ew});
  map.stop_lines.push_back({"sl_ns_f0", "ns_f0_in", {60, -20}, {60 + w, -20}, ns});
  map.stop_lines.push_back({"sl_ns_b0", "ns_b0_in", {60 - w, 20}, {60, 20}, ns});

  out.slots = {{{"ew_f0_in", "ew_f0_mid", "ew_f0_out"}, 115.0, 240.0, speed, false},
               {{"ew_f0_in", "ew_f0_mid", "ew_f0_out"}, 60.0, 85.0, speed, false},
               {{"ew_f1_in", "ew_f1_mid", "ew_f1_out"}, 60.0, 240.0, speed, false},
               {{"ew_b0_in", "ew_b0_mid", "ew_b0_out"}, 0.0, 150.0, speed, false},
               {{"ns_f0_in", "ns_f0_mid", "ns_f0_out"}, 30.0, 125.0, cross_speed, false},
               {{"ns_b0_in", "ns_b0_mid", "ns_b0_out"}, 30.0, 125.0, cross_speed, false}};
  out.max_agents = 8;
  return out;
}

// Privileged driver: centerline following with IDM speed control, a
// curvature speed cap and schedule-aware stopping at red lights.
class ExpertDriver {
 public:
  explicit ExpertDriver(const MapModel& map) : map_(map) {
    const Polyline& route = map.route_line();
    double s_end = 0.0;
    for (const auto& id : map.route) {
      const Lane* l = map.find_lane(id);
      s_end += l->centerline.length();
      spans_.push_back({s_end, l->speed_limit});
    }
    for (std::size_t i = 0; i < map.stop_lines.size(); ++i) {
      const auto& sl = map.stop_lines[i];
      if (std::find(map.route.begin(), map.route.end(), sl.lane_id) == map.route.end()) continue;
      stops_.push_back({route.project((sl.a + sl.b) * 0.5).s, i});
    }
  }

  double acceleration(double s, double v, double t, const std::vector<AgentSnapshot>& agents) const {
    IdmParams p;
    p.v0 = desired_speed(s);
    const double half_len = 2.3;
    double gap = std::numeric_limits<double>::infinity();
    double v_lead = 0.0;
    const Polyline& route = map_.route_line();
    for (const auto& ag : agents) {
      const auto proj = route.project(ag.box.center, s, s + kLeadLookahead);
      if (!(proj.s > s + 1e-9) || proj.distance > 0.5 * kLaneWidth) continue;
      const double g = proj.s - s - half_len - 0.5 * ag.box.length;
      if (g < gap) {
        gap = g;
        v_lead = ag.velocity;
      }
    }
    for (const auto& stop : stops_) {
      const double g = stop.first - s - half_len;
      if (g <= 0.0 || g > kLeadLookahead) continue;
      const StopLine& sl = map_.stop_lines[stop.second];
      const bool red_now = sl.state_at(t) == LightState::Red;
      bool red_soon = false;
      for (double dt = 0.0; dt <= 4.0; dt += 0.5) red_soon = red_soon || sl.state_at(t + dt) == LightState::Red;
      const bool can_stop = v * v / (2.0 * std::max(g - 1.0, 0.1)) <= 3.0;
      if ((red_now || red_soon) && (can_stop || red_now) && g < gap) {
        gap = g;
        v_lead = 0.0;
      }
    }
    if (gap <= 0.0) return -p.max_decel;
    return idm_acceleration(v, v_lead, gap, p);
  }

  double desired_speed(double s) const {
    double limit = spans_.back().second;
    for (const auto& span : spans_) {
      if (s < span.first) {
        limit = span.second;
        break;
      }
    }
    const Polyline& route = map_.route_line();
    double allowed = limit;
    for (double ahead = 0.0; ahead <= 60.0; ahead += 1.0) {
      const double k = std::abs(route.curvature_at(s + ahead));
      if (k < 1e-4) continue;
      const double v_curve = std::sqrt(kExpertLatAccel / k);
      allowed = std::min(allowed, std::sqrt(v_curve * v_curve + 2.0 * kExpertPlanDecel * ahead));
    }
    return std::max(allowed, 1.0);
  }

 private:
  const MapModel& map_;
  std::vector<std::pair<double, double>> spans_;
  std::vector<std::pair<double, std::size_t>> stops_;
};

}  // namespace

Scenario generate_scenario(const GeneratorConfig& cfg) {
  if (!(cfg.density >= 0.0 && cfg.density <= 1.0)) throw ConfigError("density must lie in [0, 1]");
  if (!(cfg.speed >= 3.0 && cfg.speed <= 20.0)) throw ConfigError("speed must lie in [3, 20] m/s");

  std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(cfg.layout));
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  Layout_ lay;
  switch (cfg.layout) {
    case Layout::Straight: lay = road_layout({{400.0, 0.0}}, cfg.speed, false); break;
    case Layout::Curve: {
      const double radius = 50.0 + 50.0 * u01(rng);
      const double sign = u01(rng) < 0.5 ? 1.0 : -1.0;
      lay = road_layout({{60.0, 0.0}, {0.5 * kPi * radius, sign / radius}, {220.0, 0.0}}, cfg.speed, false);
      break;
    }
    case Layout::Intersection: lay = intersection_layout(std::min(cfg.speed, 12.0), rng); break;
    case Layout::LaneMerge: lay = road_layout({{400.0, 0.0}}, cfg.speed, true); break;
  }

  Scenario sc;
  sc.id = to_string(cfg.layout) + "-" + std::to_string(cfg.seed);
  sc.rng_seed = cfg.seed;
  sc.command = lay.command;
  sc.map = std::move(lay.map);
  sc.map.rebuild();
  const Polyline& route = sc.map.route_line();
  const Vec2 ego_start = route.point_at(lay.ego_start_s);

  // background agents
  const int n_agents = static_cast<int>(std::lround(cfg.density * lay.max_agents));
  std::vector<Vec2> occupied{ego_start};
  for (int i = 0; i < n_agents; ++i) {
    for (int attempt = 0; attempt < 40; ++attempt) {
      const Slot& slot = lay.slots[static_cast<std::size_t>(u01(rng) * lay.slots.size()) % lay.slots.size()];
      const double s = slot.s_min + (slot.s_max - slot.s_min) * u01(rng);
      const bool parked = slot.parking && u01(rng) < 0.4;
      const double speed_factor = 0.6 + 0.4 * u01(rng);
      const Polyline path = concat_lanes(sc.map, slot.path);
      if (s >= path.length()) continue;
      const Vec2 pos = path.point_at(s);
      const bool clash = std::any_of(occupied.begin(), occupied.end(),
                                     [&](Vec2 o) { return distance(o, pos) < kAgentSpacing; });
      if (clash) continue;
      occupied.push_back(pos);
      AgentTrack ag;
      ag.id = "agent" + std::to_string(sc.agents.size());
      ag.lane_path = slot.path;
      const Pose2D pose{pos.x, pos.y, path.heading_at(s)};
      if (parked) {
        ag.behavior = AgentBehavior::Replay;
        for (int k = 0; k <= kExpertFutureTicks; ++k) ag.states.push_back({pose, 0.0, tick_time(k)});
      } else {
        ag.behavior = AgentBehavior::Reactive;
        IdmParams idm;
        idm.v0 = slot.speed_limit * speed_factor;
        ag.idm = idm;
        ag.states.push_back({pose, idm.v0, 0.0});
      }
      sc.agents.push_back(std::move(ag));
      break;
    }
  }

  // expert: 1.5 s of history, then the recorded future with reactive traffic
  const ExpertDriver driver(sc.map);
  const double v_start = cfg.speed * (0.8 + 0.2 * u01(rng));
  double v = std::min(v_start, driver.desired_speed(lay.ego_start_s - 1.5 * v_start));
  double s = lay.ego_start_s - 1.5 * v;
  TrafficModel traffic(sc);
  TrafficState ts = traffic.initial_state();
  std::vector<EgoState> ego;
  for (int k = -(kHistoryStates - 1); k <= kExpertFutureTicks; ++k) {
    const double t = tick_time(k);
    std::vector<AgentSnapshot> snaps;
    if (k >= 0) snaps = traffic.snapshots(ts);
    const double a = driver.acceleration(s, v, t, snaps);
    EgoState st;
    st.pose = {route.point_at(s).x, route.point_at(s).y, route.heading_at(s)};
    st.velocity = v;
    st.acceleration = a;
    st.timestamp = t;
    ego.push_back(st);
    if (k >= 0) {
      ts = traffic.step(ts, st);
      for (std::size_t i = 0; i < sc.agents.size(); ++i) {
        if (sc.agents[i].behavior != AgentBehavior::Reactive) continue;
        const AgentSnapshot snap = traffic.snapshot(ts, i);
        sc.agents[i].states.push_back(
            {{snap.box.center.x, snap.box.center.y, snap.box.heading}, snap.velocity, tick_time(k + 1)});
      }
    }
    v = std::max(0.0, v + a * kTickSeconds);
    s += v * kTickSeconds;
    if (s > route.length() - 1.0) throw GenerationError(sc.id + ": expert ran off the end of the route");
  }
  for (auto& ag : sc.agents) {
    if (ag.behavior == AgentBehavior::Reactive) ag.states.resize(kExpertFutureTicks + 1);
  }
  sc.ego_history.assign(ego.begin(), ego.begin() + kHistoryStates);
  sc.expert_trajectory.frame = Frame::World;
  for (std::size_t k = kHistoryStates - 1; k < ego.size(); ++k) {
    sc.expert_trajectory.waypoints.push_back({ego[k].pose, ego[k].timestamp});
  }

  const auto violations = validate_scenario(sc);
  if (!violations.empty()) {
    throw GenerationError(sc.id + ": invariant '" + violations.front().invariant + "' violated by " +
                          violations.front().element);
  }
  // the expert must be clean on every multiplicative term over the longest horizon used
  const TrafficModel check_model(sc);
  const Rollout expert = expert_rollout(check_model, 80);
  const SubscoreVector s8 = evaluate_subscores(expert, 0.0);
  if (s8.nc != 1.0 || s8.dac != 1.0 || s8.ddc != 1.0 || s8.tlc != 1.0) {
    throw GenerationError(sc.id + ": expert violates a multiplicative constraint");
  }
  return sc;
}

Scenario generate_scenario_with_retry(const GeneratorConfig& cfg, int max_attempts, int* attempts) {
  GeneratorConfig c = cfg;
  for (int i = 0; i < max_attempts; ++i) {
    c.seed = cfg.seed + static_cast<std::uint64_t>(i) * 1000003ULL;
    try {
      Scenario sc = generate_scenario(c);
      if (attempts != nullptr) *attempts = i + 1;
      return sc;
    } catch (const GenerationError&) {
      if (i + 1 == max_attempts) throw;
    }
  }
  throw GenerationError("no attempts made");
}

}  // namespace pseudosim
