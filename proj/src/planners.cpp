#include "pseudosim/planners.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "pseudosim/dynamics.hpp"
#include "pseudosim/errors.hpp"

namespace pseudosim {

namespace {

constexpr double kLaneSearchRadius = 10.0;
constexpr double kEgoHalfLength = 2.3;
constexpr double kEgoWidth = 1.9;
constexpr double kBlendTime = 2.0;
constexpr double kPlanBrake = 3.0;

bool near(const std::vector<Vec2>& pts, Vec2 c, double r) {
  Vec2 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  Vec2 hi = lo * -1.0;
  for (const auto& p : pts) {
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
  }
  const double dx = std::max({lo.x - c.x, 0.0, c.x - hi.x});
  const double dy = std::max({lo.y - c.y, 0.0, c.y - hi.y});
  return std::hypot(dx, dy) <= r;
}

std::vector<Vec2> clip_centerline(const std::vector<Vec2>& pts, Vec2 c, double r) {
  std::size_t first = pts.size();
  std::size_t last = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (distance(pts[i], c) <= r) {
      first = std::min(first, i);
      last = i;
    }
  }
  if (first == pts.size()) return pts;  // long segment passing by
  first = first > 0 ? first - 1 : 0;
  last = std::min(pts.size() - 1, last + 1);
  return {pts.begin() + static_cast<long>(first), pts.begin() + static_cast<long>(last) + 1};
}

}  // namespace

PlannerInput make_planner_input(const Scenario& sc, const std::vector<EgoState>& history,
                                const std::vector<AgentSnapshot>& agents, double t) {
  if (history.empty()) throw ConfigError("planner input needs an ego history");
  const Pose2D frame = history.back().pose;
  const Vec2 c = frame.position();
  PlannerInput in;
  in.command = sc.command;
  for (const auto& h : history) {
    EgoState l = h;
    l.pose = to_local(frame, h.pose);
    l.timestamp = h.timestamp - t;
    in.ego_history.push_back(l);
  }
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const auto& a = agents[i];
    if (distance(a.box.center, c) > kMapViewRadius) continue;
    AgentView v;
    v.id = i < sc.agents.size() ? sc.agents[i].id : std::to_string(i);
    v.box = a.box;
    v.box.center = to_local(frame, a.box.center);
    v.box.heading = normalize_angle(a.box.heading - frame.heading);
    v.velocity = a.velocity;
    in.agents.push_back(v);
  }
  for (const auto& da : sc.map.drivable_areas) {
    if (!near(da.polygon.points, c, kMapViewRadius)) continue;
    Polygon p;
    for (const auto& pt : da.polygon.points) p.points.push_back(to_local(frame, pt));
    in.map.drivable_areas.push_back(std::move(p));
  }
  for (const auto& lane : sc.map.lanes) {
    if (!near(lane.centerline.points(), c, kMapViewRadius)) continue;
    if (lane.centerline.project(c).distance > kMapViewRadius) continue;
    LaneView v;
    v.id = lane.id;
    for (const auto& pt : clip_centerline(lane.centerline.points(), c, kMapViewRadius)) {
      v.centerline.push_back(to_local(frame, pt));
    }
    v.width = lane.width;
    v.speed_limit = lane.speed_limit;
    v.successors = lane.successors;
    in.map.lanes.push_back(std::move(v));
  }
  for (const auto& sl : sc.map.stop_lines) {
    if (distance((sl.a + sl.b) * 0.5, c) > kMapViewRadius) continue;
    in.map.stop_lines.push_back({sl.id, sl.lane_id, to_local(frame, sl.a), to_local(frame, sl.b), sl.state_at(t)});
  }
  return in;
}

void validate_plan(const Trajectory& plan) {
  if (plan.waypoints.size() != static_cast<std::size_t>(kPlanWaypoints)) {
    throw ProtocolError("plan has " + std::to_string(plan.waypoints.size()) + " waypoints, expected 40");
  }
  for (const auto& w : plan.waypoints) {
    if (!std::isfinite(w.pose.x) || !std::isfinite(w.pose.y) || !std::isfinite(w.pose.heading)) {
      throw ProtocolError("plan has a non-finite waypoint");
    }
  }
}

Trajectory local_trajectory(const std::vector<Pose2D>& poses) {
  Trajectory t;
  t.frame = Frame::EgoLocal;
  for (std::size_t k = 0; k < poses.size(); ++k) {
    t.waypoints.push_back({poses[k], tick_time(static_cast<long>(k) + 1)});
  }
  return t;
}

// ---- constant kinematics ----

Trajectory constant_kinematics_plan(const PlannerInput& in, const ConstantKinematicsParams& p) {
  const auto& h = in.ego_history;
  const double v = std::max(0.0, h.back().velocity) * p.speed_scale;
  double yaw_rate = p.curvature_bias;
  if (h.size() >= 2) yaw_rate += normalize_angle(h.back().pose.heading - h[h.size() - 2].pose.heading) / kTickSeconds;
  std::vector<Pose2D> poses;
  for (int k = 1; k <= kPlanWaypoints; ++k) {
    const double t = tick_time(k);
    if (std::abs(yaw_rate) < 1e-9) {
      poses.push_back({v * t, 0.0, 0.0});
    } else {
      const double r = v / yaw_rate;
      poses.push_back({r * std::sin(yaw_rate * t), r * (1.0 - std::cos(yaw_rate * t)), normalize_angle(yaw_rate * t)});
    }
  }
  return local_trajectory(poses);
}

// ---- lane following ----

double LanePath::limit_at(double s) const {
  for (const auto& [end, limit] : limits) {
    if (s < end) return limit;
  }
  return limits.empty() ? 10.0 : limits.back().second;
}

namespace {

const LaneView* find_view(const MapView& m, const std::string& id) {
  for (const auto& l : m.lanes) {
    if (l.id == id) return &l;
  }
  return nullptr;
}

double turn_angle(const LaneView& l) {
  const Polyline line(l.centerline);
  if (line.empty()) return 0.0;
  return normalize_angle(line.heading_at(line.length()) - line.heading_at(0.0));
}

const LaneView* pick_successor(const MapView& m, const LaneView& lane, DrivingCommand cmd) {
  const LaneView* best = nullptr;
  double best_key = std::numeric_limits<double>::infinity();
  for (const auto& id : lane.successors) {
    const LaneView* s = find_view(m, id);
    if (s == nullptr || s->centerline.size() < 2) continue;
    const double turn = turn_angle(*s);
    const double key = cmd == DrivingCommand::Left ? -turn : (cmd == DrivingCommand::Right ? turn : std::abs(turn));
    if (key < best_key) {
      best_key = key;
      best = s;
    }
  }
  return best;
}

}  // namespace

LanePath build_lane_path(const PlannerInput& in, double min_length) {
  const LaneView* start = nullptr;
  double best_cost = std::numeric_limits<double>::infinity();
  for (const auto& l : in.map.lanes) {
    if (l.centerline.size() < 2) continue;
    const Polyline line(l.centerline);
    const auto proj = line.project({0.0, 0.0});
    if (proj.distance > kLaneSearchRadius) continue;
    const double dh = std::abs(normalize_angle(line.heading_at(proj.s)));
    if (dh > 0.5 * kPi) continue;
    const double cost = proj.distance + 5.0 * dh;
    if (cost < best_cost) {
      best_cost = cost;
      start = &l;
    }
  }
  if (start == nullptr) throw NoLaneError("no same-direction lane within 10 m of the ego");

  LanePath out;
  std::vector<Vec2> pts;
  double total = 0.0;
  const double s_start = Polyline(start->centerline).project({0.0, 0.0}).s;
  const LaneView* lane = start;
  for (int guard = 0; lane != nullptr && guard < 32; ++guard) {
    for (const auto& p : lane->centerline) {
      if (!pts.empty() && distance(pts.back(), p) < 1e-6) continue;
      if (!pts.empty()) total += distance(pts.back(), p);
      pts.push_back(p);
    }
    out.limits.push_back({total, lane->speed_limit});
    if (total - s_start >= min_length) break;
    lane = pick_successor(in.map, *lane, in.command);
  }
  out.line = Polyline(std::move(pts));
  return out;
}

Trajectory lane_profile_plan(const PlannerInput& in, const LanePath& path, const IdmParams& p,
                             double speed_fraction, double target_offset) {
  const Polyline& line = path.line;
  const auto proj = line.project({0.0, 0.0});
  const double s0 = proj.s;
  const double d0 = proj.d;
  double v = std::max(0.0, in.ego_history.back().velocity);

  struct Leader {
    double s;  ///< rear bumper arc length at t = 0
    double v;
  };
  std::vector<Leader> leaders;
  for (const auto& a : in.agents) {
    const auto pa = line.project(a.box.center, s0, s0 + kLeadLookahead + 50.0);
    if (!(pa.s > s0)) continue;
    if (std::abs(pa.d - target_offset) > 0.5 * (kEgoWidth + a.box.width) + 0.2) continue;
    const double along = a.velocity * std::cos(normalize_angle(a.box.heading - line.heading_at(pa.s)));
    leaders.push_back({pa.s - 0.5 * a.box.length, std::max(0.0, along)});
  }
  for (const auto& sl : in.map.stop_lines) {
    if (sl.state != LightState::Red) continue;
    const auto ps = line.project((sl.a + sl.b) * 0.5, s0, s0 + kLeadLookahead + 50.0);
    if (ps.distance > 1.75 || ps.s - s0 - kEgoHalfLength <= 0.0) continue;
    leaders.push_back({ps.s, 0.0});
  }

  std::vector<double> arcs;
  double s = s0;
  for (int k = 0; k < kPlanWaypoints; ++k) {
    const double t = tick_time(k);
    IdmParams q = p;
    q.v0 = std::max(0.0, std::min(p.v0, path.limit_at(s)) * speed_fraction);
    double gap = std::numeric_limits<double>::infinity();
    double v_lead = 0.0;
    for (const auto& l : leaders) {
      const double g = l.s + l.v * t - s - kEgoHalfLength;
      if (g < gap) {
        gap = g;
        v_lead = l.v;
      }
    }
    double a;
    if (gap <= 0.0) {
      a = -q.max_decel;
    } else if (q.v0 <= 1e-9) {
      a = -std::min(kPlanBrake, v / kTickSeconds);
    } else {
      a = idm_acceleration(v, v_lead, gap, q);
      if (std::isinf(gap)) a = std::max(a, -kPlanBrake);
    }
    v = std::max(0.0, v + a * kTickSeconds);
    s += v * kTickSeconds;
    arcs.push_back(s);
  }

  std::vector<Pose2D> poses;
  Vec2 prev = line.embed(s0, d0);
  for (int k = 0; k < kPlanWaypoints; ++k) {
    const double t = tick_time(k + 1);
    const double blend = t < kBlendTime ? 0.5 * (1.0 + std::cos(kPi * t / kBlendTime)) : 0.0;
    const double d = target_offset + (d0 - target_offset) * blend;
    const Vec2 p_k = line.embed(arcs[k], d);
    const Vec2 step = p_k - prev;
    const double heading = norm(step) > 1e-3 ? std::atan2(step.y, step.x)
                                             : (poses.empty() ? line.heading_at(arcs[k]) : poses.back().heading);
    poses.push_back({p_k.x, p_k.y, heading});
    prev = p_k;
  }
  return local_trajectory(poses);
}

Trajectory idm_plan(const PlannerInput& in, const IdmParams& p) {
  return lane_profile_plan(in, build_lane_path(in), p, 1.0, 0.0);
}

// ---- PDM-Closed style ----

Trajectory max_brake_plan(const PlannerInput& in) {
  const VehicleParams vp;
  double v = std::max(0.0, in.ego_history.back().velocity);
  double x = 0.0;
  std::vector<Pose2D> poses;
  for (int k = 0; k < kPlanWaypoints; ++k) {
    v = std::max(0.0, v + vp.accel_min * kTickSeconds);
    x += v * kTickSeconds;
    poses.push_back({x, 0.0, 0.0});
  }
  return local_trajectory(poses);
}

namespace {

bool in_view_drivable(const MapView& m, Vec2 p) {
  return std::any_of(m.drivable_areas.begin(), m.drivable_areas.end(),
                     [&](const Polygon& poly) { return poly.contains(p); });
}

// True when the innermost lane containing `pose` runs against it.
bool against_lane(const MapView& m, const Pose2D& pose) {
  double best = std::numeric_limits<double>::infinity();
  bool against = false;
  for (const auto& lane : m.lanes) {
    if (lane.centerline.size() < 2) continue;
    const Polyline line(lane.centerline);
    const auto proj = line.project(pose.position());
    if (proj.distance > 0.5 * lane.width || std::abs(proj.distance - std::abs(proj.d)) > 1e-6) continue;
    if (proj.distance >= best) continue;
    best = proj.distance;
    against = std::abs(normalize_angle(pose.heading - line.heading_at(proj.s))) > 0.5 * kPi;
  }
  return against;
}

// Constant-speed forecast along the agent's lane (and its successors in view);
// agents off every lane keep their heading. Index k is the box at tick k.
std::vector<OrientedBox> forecast(const AgentView& a, const MapView& m, int ticks) {
  const LaneView* lane = nullptr;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& l : m.lanes) {
    if (l.centerline.size() < 2) continue;
    const Polyline line(l.centerline);
    const auto proj = line.project(a.box.center);
    if (proj.distance > 0.5 * l.width || proj.distance >= best) continue;
    if (std::abs(normalize_angle(a.box.heading - line.heading_at(proj.s))) > 0.25 * kPi) continue;
    best = proj.distance;
    lane = &l;
  }
  std::vector<OrientedBox> out;
  out.reserve(static_cast<std::size_t>(ticks) + 1);
  if (lane == nullptr) {
    for (int k = 0; k <= ticks; ++k) {
      OrientedBox b = a.box;
      b.center = b.center + unit(b.heading) * (a.velocity * tick_time(k));
      out.push_back(b);
    }
    return out;
  }
  std::vector<Vec2> pts = lane->centerline;
  for (int hop = 0; hop < 3 && !lane->successors.empty(); ++hop) {
    const auto next = std::find_if(m.lanes.begin(), m.lanes.end(),
                                   [&](const LaneView& l) { return l.id == lane->successors.front(); });
    if (next == m.lanes.end() || next->centerline.empty()) break;
    lane = &*next;
    for (Vec2 p : lane->centerline) {
      if (distance(p, pts.back()) > 1e-6) pts.push_back(p);
    }
  }
  const Polyline line(std::move(pts));
  const auto proj = line.project(a.box.center);
  for (int k = 0; k <= ticks; ++k) {
    const double s = proj.s + a.velocity * tick_time(k);
    OrientedBox b = a.box;
    b.center = line.embed(s, proj.d);
    b.heading = line.heading_at(s);
    out.push_back(b);
  }
  return out;
}

}  // namespace

std::vector<PdmCandidate> pdm_candidates(const PlannerInput& in, const PdmParams& p) {
  const LanePath path = build_lane_path(in);
  const MetricsConfig mcfg;
  const EgoState& now = in.ego_history.back();
  EgoState init = now;
  init.pose = {0.0, 0.0, 0.0};
  init.timestamp = 0.0;
  const double s0 = path.line.project({0.0, 0.0}).s;

  // horizon plus the ttc look-ahead
  std::vector<std::vector<OrientedBox>> futures;
  for (const auto& a : in.agents) futures.push_back(forecast(a, in.map, kPlanWaypoints + 10));

  std::vector<PdmCandidate> out;
  std::vector<double> progress;
  std::vector<std::array<double, 4>> terms;  // penalties, ttc, comfort
  for (double frac : p.speed_fractions) {
    for (double off : p.lateral_offsets) {
      PdmCandidate c;
      c.speed_fraction = frac;
      c.lateral_offset = off;
      c.plan = lane_profile_plan(in, path, p.idm, frac, off);
      const auto states = track_trajectory(init, c.plan, default_gain_table());

      double nc = 1.0;
      double dac = 1.0;
      double ttc = 1.0;
      double wrong_way = 0.0;
      for (std::size_t k = 1; k < states.size(); ++k) {
        const OrientedBox box = ego_box(states[k].pose, mcfg);
        if (against_lane(in.map, states[k].pose)) {
          wrong_way += distance(states[k].pose.position(), states[k - 1].pose.position());
        }
        for (const auto& f : futures) {
          if (boxes_overlap(box, f[k])) nc = 0.0;
        }
        for (const auto& corner : box.corners()) {
          if (!in_view_drivable(in.map, corner)) dac = 0.0;
        }
        if (ttc > 0.0 && states[k].velocity > mcfg.ttc_min_speed) {
          for (int j = 1; j <= 10 && ttc > 0.0; ++j) {
            const double dt = tick_time(j);
            Pose2D ahead = states[k].pose;
            ahead.x += std::cos(ahead.heading) * states[k].velocity * dt;
            ahead.y += std::sin(ahead.heading) * states[k].velocity * dt;
            const OrientedBox front = ego_box(ahead, mcfg).front_half();
            for (const auto& f : futures) {
              if (boxes_overlap(box, f[k])) continue;
              if (boxes_overlap(front, f[k + static_cast<std::size_t>(j)])) {
                ttc = 0.0;
                break;
              }
            }
          }
        }
      }
      std::vector<Pose2D> poses;
      std::vector<double> speeds;
      for (std::size_t k = 0; k + 1 < in.ego_history.size(); ++k) {
        poses.push_back(in.ego_history[k].pose);
        speeds.push_back(in.ego_history[k].velocity);
      }
      for (const auto& st : states) {
        poses.push_back(st.pose);
        speeds.push_back(st.velocity);
      }
      const double hc = comfort_within_bounds(poses, speeds, mcfg) ? 1.0 : 0.0;
      const double ddc = wrong_way > mcfg.ddc_zero_distance ? 0.0 : wrong_way > mcfg.ddc_half_distance ? 0.5 : 1.0;
      // progress of the plan itself: offsets along the same profile then tie
      // exactly instead of differing by tracking residue
      const Vec2 end = c.plan.waypoints.back().pose.position();
      progress.push_back(std::max(0.0, path.line.project(end).s - s0));
      terms.push_back({nc * dac * ddc, ttc, hc, 0.0});
      out.push_back(std::move(c));
    }
  }
  const double best_progress = *std::max_element(progress.begin(), progress.end());
  const double wsum = p.w_progress + p.w_ttc + p.w_comfort;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double ep = best_progress > 1e-6 ? progress[i] / best_progress : 1.0;
    out[i].score = terms[i][0] * (p.w_progress * ep + p.w_ttc * terms[i][1] + p.w_comfort * terms[i][2]) / wsum;
  }
  return out;
}

Trajectory pdm_closed_plan(const PlannerInput& in, const PdmParams& p) {
  auto cands = pdm_candidates(in, p);
  double best_score = 0.0;
  for (const auto& c : cands) best_score = std::max(best_score, c.score);
  if (best_score <= 0.0) return max_brake_plan(in);
  const PdmCandidate* best = nullptr;
  for (const auto& c : cands) {
    if (c.score < best_score - 1e-9) continue;
    if (best == nullptr || std::abs(c.lateral_offset) < std::abs(best->lateral_offset) ||
        (std::abs(c.lateral_offset) == std::abs(best->lateral_offset) && c.speed_fraction > best->speed_fraction)) {
      best = &c;
    }
  }
  return best->plan;
}

// ---- degradation ----

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

DegradedPlanner::DegradedPlanner(std::string id, std::unique_ptr<Planner> base, NoiseSpec noise, std::uint64_t seed)
    : id_(std::move(id)), base_(std::move(base)), noise_(noise), seed_(seed) {
  if (!std::isfinite(noise.jitter_sigma) || noise.jitter_sigma < 0.0 || !std::isfinite(noise.heading_bias) ||
      noise.latency_ticks < 0) {
    throw ConfigError("planner '" + id_ + "': invalid noise spec");
  }
}

DegradedPlanner::DegradedPlanner(const DegradedPlanner& o)
    : id_(o.id_), base_(o.base_->clone()), noise_(o.noise_), seed_(o.seed_), history_(o.history_) {}

void DegradedPlanner::reset() {
  history_.clear();
  base_->reset();
}

Trajectory DegradedPlanner::plan(const PlannerInput& in, const PlanContext& ctx) {
  Trajectory out = base_->plan(in, ctx);
  if (noise_.latency_ticks > 0) {
    history_[ctx.tick] = plan_to_world(out, ctx.ego_world, tick_time(ctx.tick));
    auto it = history_.upper_bound(ctx.tick - noise_.latency_ticks);
    const long src = it == history_.begin() ? history_.begin()->first : std::prev(it)->first;
    const auto& stale = history_.at(src).waypoints;
    out.waypoints.clear();
    const long shift = ctx.tick - src;
    for (long j = 0; j < kPlanWaypoints; ++j) {
      const long idx = shift + j;
      Pose2D w;
      if (idx < kPlanWaypoints) {
        w = stale[static_cast<std::size_t>(idx)].pose;
      } else {
        const Pose2D& a = stale[kPlanWaypoints - 2].pose;
        const Pose2D& b = stale[kPlanWaypoints - 1].pose;
        const double n = static_cast<double>(idx - (kPlanWaypoints - 1));
        w = {b.x + (b.x - a.x) * n, b.y + (b.y - a.y) * n, b.heading};
      }
      out.waypoints.push_back({to_local(ctx.ego_world, w), tick_time(j + 1)});
    }
    out.frame = Frame::EgoLocal;
    history_.erase(history_.begin(), history_.lower_bound(src));
  }
  if (noise_.heading_bias != 0.0) {
    const Pose2D rot{0.0, 0.0, noise_.heading_bias};
    for (auto& w : out.waypoints) w.pose = to_world(rot, w.pose);
  }
  if (noise_.jitter_sigma > 0.0) {
    std::mt19937_64 rng(mix(seed_ ^ mix(fnv1a(ctx.scenario_id) ^ mix(static_cast<std::uint64_t>(ctx.tick)))));
    std::normal_distribution<double> n(0.0, noise_.jitter_sigma);
    for (auto& w : out.waypoints) {
      w.pose.x += n(rng);
      w.pose.y += n(rng);
    }
  }
  return out;
}

}  // namespace pseudosim
