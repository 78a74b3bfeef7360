#include "pseudosim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pseudosim/errors.hpp"

namespace pseudosim {

std::string to_string(Subscore m) {
  static constexpr std::array<const char*, 9> names{"nc", "dac", "ddc", "tlc", "ep", "ttc", "lk", "hc", "ec"};
  return names[static_cast<std::size_t>(m)];
}

bool is_penalty(Subscore m) {
  return m == Subscore::NC || m == Subscore::DAC || m == Subscore::DDC || m == Subscore::TLC;
}

double SubscoreVector::get(Subscore m) const {
  switch (m) {
    case Subscore::NC: return nc;
    case Subscore::DAC: return dac;
    case Subscore::DDC: return ddc;
    case Subscore::TLC: return tlc;
    case Subscore::EP: return ep;
    case Subscore::TTC: return ttc;
    case Subscore::LK: return lk;
    case Subscore::HC: return hc;
    case Subscore::EC: return ec;
  }
  return 0.0;
}

void SubscoreVector::set(Subscore m, double v) {
  switch (m) {
    case Subscore::NC: nc = v; break;
    case Subscore::DAC: dac = v; break;
    case Subscore::DDC: ddc = v; break;
    case Subscore::TLC: tlc = v; break;
    case Subscore::EP: ep = v; break;
    case Subscore::TTC: ttc = v; break;
    case Subscore::LK: lk = v; break;
    case Subscore::HC: hc = v; break;
    case Subscore::EC: ec = v; break;
  }
}

bool SubscoreVector::in_range() const {
  auto binary = [](double v) { return v == 0.0 || v == 1.0; };
  auto ternary = [](double v) { return v == 0.0 || v == 0.5 || v == 1.0; };
  return ternary(nc) && binary(dac) && ternary(ddc) && binary(tlc) && ep >= 0.0 && ep <= 1.0 && binary(ttc) &&
         binary(lk) && binary(hc) && binary(ec);
}

double MetricWeights::weight(Subscore m) const {
  switch (m) {
    case Subscore::EP: return ep;
    case Subscore::TTC: return ttc;
    case Subscore::LK: return lk;
    case Subscore::HC: return hc;
    case Subscore::EC: return ec;
    default: return 0.0;
  }
}

MetricWeights MetricWeights::reduced() {
  MetricWeights w;
  w.enabled[static_cast<std::size_t>(Subscore::TLC)] = false;
  w.enabled[static_cast<std::size_t>(Subscore::LK)] = false;
  w.enabled[static_cast<std::size_t>(Subscore::EC)] = false;
  return w;
}

LaneLocator::LaneLocator(const MapModel& map) : map_(&map) {
  for (const auto& lane : map.lanes) {
    Bounds b{{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()},
             {-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()}};
    for (Vec2 p : lane.centerline.points()) {
      b.lo = {std::min(b.lo.x, p.x), std::min(b.lo.y, p.y)};
      b.hi = {std::max(b.hi.x, p.x), std::max(b.hi.y, p.y)};
    }
    bounds_.push_back(b);
  }
}

namespace {

bool near_bounds(Vec2 p, Vec2 lo, Vec2 hi, double margin) {
  return p.x >= lo.x - margin && p.x <= hi.x + margin && p.y >= lo.y - margin && p.y <= hi.y + margin;
}

}  // namespace

std::optional<LaneLocator::Hit> LaneLocator::containing_lane(const Pose2D& p) const {
  std::optional<Hit> best;
  for (std::size_t i = 0; i < map_->lanes.size(); ++i) {
    const Lane& lane = map_->lanes[i];
    if (!near_bounds(p.position(), bounds_[i].lo, bounds_[i].hi, lane.width)) continue;
    const auto proj = lane.centerline.project(p.position());
    // a foot clamped to a lane end means the point is outside that lane
    if (proj.distance > 0.5 * lane.width || std::abs(proj.distance - std::abs(proj.d)) > 1e-6) continue;
    if (best && std::abs(proj.d) >= best->offset) continue;
    const double diff = std::abs(normalize_angle(p.heading - lane.centerline.heading_at(proj.s)));
    best = Hit{&lane, std::abs(proj.d), diff};
  }
  return best;
}

std::optional<LaneLocator::Hit> LaneLocator::nearest_same_direction(const Pose2D& p, double max_distance) const {
  std::optional<Hit> best;
  for (std::size_t i = 0; i < map_->lanes.size(); ++i) {
    const Lane& lane = map_->lanes[i];
    if (!near_bounds(p.position(), bounds_[i].lo, bounds_[i].hi, max_distance)) continue;
    const auto proj = lane.centerline.project(p.position());
    if (proj.distance > max_distance) continue;
    const double diff = std::abs(normalize_angle(p.heading - lane.centerline.heading_at(proj.s)));
    if (diff > 0.5 * kPi) continue;
    if (best && proj.distance >= best->offset) continue;
    best = Hit{&lane, proj.distance, diff};
  }
  return best;
}

OrientedBox ego_box(const Pose2D& p, const MetricsConfig& cfg) {
  return {p.position(), p.heading, cfg.ego_length, cfg.ego_width};
}

namespace {

bool off_lane(const LaneLocator& lanes, const Pose2D& p) {
  const auto hit = lanes.nearest_same_direction(p);
  return !hit || hit->offset > 0.5 * hit->lane->width;
}

OrientedBox advance(const OrientedBox& b, double v, double t) {
  OrientedBox out = b;
  out.center = b.center + unit(b.heading) * (v * t);
  return out;
}

}  // namespace

SafetyScores evaluate_safety(const Rollout& r, const MetricsConfig& cfg) {
  SafetyScores out;
  if (r.scenario == nullptr) return out;
  const LaneLocator lanes(r.scenario->map);
  const std::size_t n_agents = r.agents.empty() ? 0 : r.agents.front().size();

  std::vector<bool> stationary(n_agents, true);
  for (const auto& tick : r.agents) {
    for (std::size_t j = 0; j < tick.size() && j < n_agents; ++j) {
      if (tick[j].velocity >= cfg.stationary_speed) stationary[j] = false;
    }
  }

  std::vector<bool> collided(n_agents, false);
  for (std::size_t k = 0; k < r.ego_states.size() && k < r.agents.size(); ++k) {
    const EgoState& ego = r.ego_states[k];
    const OrientedBox box = ego_box(ego.pose, cfg);
    const OrientedBox front = box.front_half();
    for (std::size_t j = 0; j < r.agents[k].size(); ++j) {
      const AgentSnapshot& ag = r.agents[k][j];
      if (!boxes_overlap(box, ag.box)) continue;
      if (collided[j]) continue;
      collided[j] = true;
      const bool moving = ego.velocity >= cfg.stationary_speed;
      const bool at_fault = moving && (boxes_overlap(front, ag.box) || off_lane(lanes, ego.pose));
      if (!at_fault) continue;
      out.nc = std::min(out.nc, stationary[j] ? 0.5 : 0.0);
    }

    if (ego.velocity <= cfg.ttc_min_speed) continue;
    const int steps = static_cast<int>(std::lround(cfg.ttc_horizon / kTickSeconds));
    for (std::size_t j = 0; j < r.agents[k].size() && out.ttc > 0.0; ++j) {
      const AgentSnapshot& ag = r.agents[k][j];
      if (boxes_overlap(box, ag.box)) continue;
      for (int m = 1; m <= steps; ++m) {
        const double t = m * kTickSeconds;
        const OrientedBox ego_future = advance(box, ego.velocity, t).front_half();
        if (boxes_overlap(ego_future, advance(ag.box, ag.velocity, t))) {
          out.ttc = 0.0;
          break;
        }
      }
    }
  }
  return out;
}

ComplianceScores evaluate_compliance(const Rollout& r, const MetricsConfig& cfg) {
  ComplianceScores out;
  if (r.scenario == nullptr) return out;
  const MapModel& map = r.scenario->map;
  const LaneLocator lanes(map);

  double wrong_way = 0.0;
  int lk_run = 0;
  for (std::size_t k = 0; k < r.ego_states.size(); ++k) {
    const EgoState& ego = r.ego_states[k];
    const OrientedBox box = ego_box(ego.pose, cfg);

    if (out.dac > 0.0) {
      for (Vec2 c : box.corners()) {
        if (!map.in_drivable_area(c)) {
          out.dac = 0.0;
          break;
        }
      }
    }

    if (k > 0) {
      const auto hit = lanes.containing_lane(ego.pose);
      if (hit && hit->heading_diff > 0.5 * kPi) {
        wrong_way += distance(ego.pose.position(), r.ego_states[k - 1].pose.position());
      }
    }

    for (const auto& sl : map.stop_lines) {
      if (sl.state_at(ego.timestamp) != LightState::Red) continue;
      if (segment_intersects_box(sl.a, sl.b, box)) out.tlc = 0.0;
    }

    const auto same = lanes.nearest_same_direction(ego.pose);
    if (!same || same->offset > cfg.lk_max_offset) {
      ++lk_run;
      if ((lk_run - 1) * kTickSeconds > cfg.lk_max_duration + 1e-9) out.lk = 0.0;
    } else {
      lk_run = 0;
    }
  }
  if (wrong_way > cfg.ddc_zero_distance) {
    out.ddc = 0.0;
  } else if (wrong_way > cfg.ddc_half_distance) {
    out.ddc = 0.5;
  }
  return out;
}

double route_progress(const MapModel& map, const std::vector<EgoState>& states) {
  if (states.size() < 2 || map.route_line().empty()) return 0.0;
  const double s0 = map.route_line().project(states.front().pose.position()).s;
  const double s1 = map.route_line().project(states.back().pose.position()).s;
  return s1 - s0;
}

double evaluate_progress(const Rollout& r, double reference_progress, const MetricsConfig& cfg) {
  if (reference_progress < cfg.ep_min_reference || r.scenario == nullptr) return 1.0;
  const double progress = route_progress(r.scenario->map, r.ego_states);
  return std::clamp(progress / reference_progress, 0.0, 1.0);
}

namespace {

// Savitzky-Golay first derivative over a 5-sample window; NaN where undefined.
std::vector<double> smooth_derivative(const std::vector<double>& y, double dt) {
  std::vector<double> d(y.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t k = 2; k + 2 < y.size(); ++k) {
    d[k] = (-2.0 * y[k - 2] - y[k - 1] + y[k + 1] + 2.0 * y[k + 2]) / (10.0 * dt);
  }
  return d;
}

std::vector<double> unwrap(const std::vector<Pose2D>& poses) {
  std::vector<double> out;
  out.reserve(poses.size());
  for (const auto& p : poses) {
    if (out.empty()) {
      out.push_back(p.heading);
    } else {
      out.push_back(out.back() + normalize_angle(p.heading - out.back()));
    }
  }
  return out;
}

bool within(const std::vector<double>& xs, double bound) {
  return std::all_of(xs.begin(), xs.end(), [&](double x) { return !std::isfinite(x) || std::abs(x) <= bound; });
}

bool comfort_check(const std::vector<Pose2D>& poses, const std::vector<double>& speeds, const MetricsConfig& cfg) {
  auto deriv = [](const std::vector<double>& y) { return smooth_derivative(y, kTickSeconds); };
  const std::vector<double> lon = deriv(speeds);
  const std::vector<double> yaw_rate = deriv(unwrap(poses));
  std::vector<double> lat(speeds.size());
  for (std::size_t k = 0; k < speeds.size(); ++k) lat[k] = speeds[k] * yaw_rate[k];
  return within(lon, cfg.max_lon_accel) && within(lat, cfg.max_lat_accel) && within(deriv(lon), cfg.max_jerk) &&
         within(yaw_rate, cfg.max_yaw_rate) && within(deriv(yaw_rate), cfg.max_yaw_accel);
}

}  // namespace

bool comfort_within_bounds(const std::vector<Pose2D>& poses, const std::vector<double>& speeds,
                           const MetricsConfig& cfg) {
  return comfort_check(poses, speeds, cfg);
}

bool plan_transition_comfortable(const Trajectory& previous, const Trajectory& plan, const MetricsConfig& cfg) {
  if (previous.waypoints.size() < 2 || plan.waypoints.empty()) return true;
  const std::size_t window = static_cast<std::size_t>(std::lround(cfg.ec_window / kTickSeconds));
  std::vector<Pose2D> poses{previous.waypoints[0].pose};
  for (std::size_t i = 0; i < plan.waypoints.size() && i < window; ++i) poses.push_back(plan.waypoints[i].pose);
  std::vector<double> speeds(poses.size());
  speeds[0] = distance(previous.waypoints[1].pose.position(), previous.waypoints[0].pose.position()) / kTickSeconds;
  for (std::size_t i = 1; i < poses.size(); ++i) {
    speeds[i] = distance(poses[i].position(), poses[i - 1].position()) / kTickSeconds;
  }
  return comfort_check(poses, speeds, cfg);
}

ComfortScores evaluate_comfort(const Rollout& r, const MetricsConfig& cfg) {
  ComfortScores out;
  std::vector<Pose2D> poses;
  std::vector<double> speeds;
  for (const auto& s : r.history) {
    poses.push_back(s.pose);
    speeds.push_back(s.velocity);
  }
  for (const auto& s : r.ego_states) {
    poses.push_back(s.pose);
    speeds.push_back(s.velocity);
  }
  out.hc = comfort_check(poses, speeds, cfg) ? 1.0 : 0.0;

  if (r.previous_plan && !r.plans.empty() && !plan_transition_comfortable(*r.previous_plan, r.plans.front(), cfg)) {
    out.ec = 0.0;
  }
  for (std::size_t i = 1; i < r.plans.size() && out.ec > 0.0; ++i) {
    if (!plan_transition_comfortable(r.plans[i - 1], r.plans[i], cfg)) out.ec = 0.0;
  }
  return out;
}

SubscoreVector evaluate_subscores(const Rollout& r, double reference_progress, const MetricsConfig& cfg) {
  SubscoreVector s;
  const SafetyScores safety = evaluate_safety(r, cfg);
  const ComplianceScores comp = evaluate_compliance(r, cfg);
  const ComfortScores comfort = evaluate_comfort(r, cfg);
  s.nc = safety.nc;
  s.ttc = safety.ttc;
  s.dac = comp.dac;
  s.ddc = comp.ddc;
  s.tlc = comp.tlc;
  s.lk = comp.lk;
  s.ep = evaluate_progress(r, reference_progress, cfg);
  s.hc = comfort.hc;
  s.ec = comfort.ec;
  return s;
}

SubscoreVector apply_human_filter(const SubscoreVector& agent, const SubscoreVector& human) {
  SubscoreVector out = agent;
  for (Subscore m : kAllSubscores) {
    if (human.get(m) == 0.0) out.set(m, 1.0);
  }
  return out;
}

double penalty_product(const SubscoreVector& s, const MetricWeights& w) {
  double p = 1.0;
  for (Subscore m : kAllSubscores) {
    if (is_penalty(m) && w.is_enabled(m)) p *= s.get(m);
  }
  return p;
}

double weighted_average(const SubscoreVector& s, const MetricWeights& w) {
  double num = 0.0;
  double den = 0.0;
  for (Subscore m : kAllSubscores) {
    if (is_penalty(m) || !w.is_enabled(m)) continue;
    num += w.weight(m) * s.get(m);
    den += w.weight(m);
  }
  if (!(den > 0.0)) throw ConfigError("EPDMS needs at least one enabled weighted-average subscore");
  return num / den;
}

double compose_epdms(const SubscoreVector& filtered, const MetricWeights& w) {
  const double avg = weighted_average(filtered, w);
  return penalty_product(filtered, w) * avg;
}

}  // namespace pseudosim
