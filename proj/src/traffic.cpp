#include "pseudosim/traffic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pseudosim/errors.hpp"

namespace pseudosim {

double idm_acceleration(double v, double v_lead, double gap, const IdmParams& p) {
  const double free_term = std::pow(std::max(v, 0.0) / p.v0, p.delta);
  double interaction = 0.0;
  if (std::isfinite(gap)) {
    if (!(gap > 0.0)) throw DomainError("IDM gap must be positive, got " + std::to_string(gap));
    double s_star = p.min_gap + v * p.time_headway + v * (v - v_lead) / (2.0 * std::sqrt(p.a_max * p.b_comfort));
    s_star = std::max(s_star, p.min_gap);
    interaction = (s_star / gap) * (s_star / gap);
  }
  const double a = p.a_max * (1.0 - free_term - interaction);
  return std::clamp(a, -std::max(2.0 * p.b_comfort, p.max_decel), p.a_max);
}

TrafficModel::TrafficModel(const Scenario& sc, double ego_length) : sc_(&sc), ego_length_(ego_length) {
  for (const auto& ag : sc.agents) {
    paths_.push_back(concat_lanes(sc.map, ag.lane_path));
    const Polyline& path = paths_.back();

    std::vector<LaneSpan> spans;
    double s_end = 0.0;
    for (const auto& id : ag.lane_path) {
      const Lane* lane = sc.map.find_lane(id);
      if (lane == nullptr) continue;
      s_end += lane->centerline.length();
      spans.push_back({s_end, lane->speed_limit, lane->width});
    }
    spans_.push_back(std::move(spans));

    std::vector<StopOnPath> stops;
    for (std::size_t i = 0; i < sc.map.stop_lines.size(); ++i) {
      const auto& sl = sc.map.stop_lines[i];
      if (std::find(ag.lane_path.begin(), ag.lane_path.end(), sl.lane_id) == ag.lane_path.end()) continue;
      const auto proj = path.project((sl.a + sl.b) * 0.5);
      stops.push_back({proj.s, i});
    }
    stops_.push_back(std::move(stops));
  }
}

TrafficState TrafficModel::initial_state() const {
  TrafficState ts;
  for (std::size_t i = 0; i < paths_.size(); ++i) {
    const auto& ag = sc_->agents[i];
    const AgentState& s0 = ag.states.front();
    ts.agents.push_back({paths_[i].project(s0.pose.position()).s, s0.velocity});
  }
  return ts;
}

AgentSnapshot TrafficModel::snapshot(const TrafficState& ts, std::size_t i) const {
  const auto& ag = sc_->agents[i];
  if (ag.behavior == AgentBehavior::Replay) {
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(std::max<long>(ts.tick, 0)),
                                                ag.states.size() - 1);
    const AgentState& s = ag.states[k];
    return {{s.pose.position(), s.pose.heading, ag.length, ag.width}, s.velocity};
  }
  const double s = ts.agents[i].progress;
  return {{paths_[i].point_at(s), paths_[i].heading_at(s), ag.length, ag.width}, ts.agents[i].velocity};
}

std::vector<AgentSnapshot> TrafficModel::snapshots(const TrafficState& ts) const {
  std::vector<AgentSnapshot> out;
  out.reserve(paths_.size());
  for (std::size_t i = 0; i < paths_.size(); ++i) out.push_back(snapshot(ts, i));
  return out;
}

IdmParams TrafficModel::idm_params(std::size_t agent, double progress) const {
  const auto& ag = sc_->agents[agent];
  if (ag.idm) return *ag.idm;
  IdmParams p;
  for (const auto& span : spans_[agent]) {
    p.v0 = span.speed_limit;
    if (progress < span.s_end) break;
  }
  return p;
}

std::optional<LeadInfo> TrafficModel::find_lead(const TrafficState& ts, std::size_t agent,
                                                const EgoState& ego) const {
  const Polyline& path = paths_[agent];
  const double s_self = ts.agents[agent].progress;
  const double half_len = 0.5 * sc_->agents[agent].length;
  double half_width = 1.75;
  for (const auto& span : spans_[agent]) {
    half_width = 0.5 * span.width;
    if (s_self < span.s_end) break;
  }

  std::optional<LeadInfo> best;
  auto consider = [&](Vec2 center, double other_len, double v_other) {
    const auto proj = path.project(center, s_self, s_self + kLeadLookahead + half_len + 0.5 * other_len);
    if (!(proj.s > s_self + 1e-9) || proj.distance > half_width) return;
    if (proj.s - s_self > kLeadLookahead) return;
    const double gap = proj.s - s_self - half_len - 0.5 * other_len;
    if (!best || gap < best->gap) best = LeadInfo{v_other, gap};
  };

  for (std::size_t j = 0; j < paths_.size(); ++j) {
    if (j == agent) continue;
    const AgentSnapshot snap = snapshot(ts, j);
    consider(snap.box.center, snap.box.length, snap.velocity);
  }
  consider(ego.pose.position(), ego_length_, ego.velocity);

  const double t = tick_time(ts.tick);
  for (const auto& stop : stops_[agent]) {
    if (sc_->map.stop_lines[stop.line].state_at(t) != LightState::Red) continue;
    const double gap = stop.s - s_self - half_len;
    if (gap <= 0.0 || gap > kLeadLookahead) continue;
    if (!best || gap < best->gap) best = LeadInfo{0.0, gap};
  }
  return best;
}

TrafficState TrafficModel::step(const TrafficState& ts, const EgoState& ego, double dt) const {
  TrafficState next = ts;
  next.tick = ts.tick + 1;
  for (std::size_t i = 0; i < paths_.size(); ++i) {
    const auto& ag = sc_->agents[i];
    if (ag.behavior == AgentBehavior::Replay) {
      const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(next.tick), ag.states.size() - 1);
      next.agents[i] = {paths_[i].project(ag.states[k].pose.position()).s, ag.states[k].velocity};
      continue;
    }
    const AgentProgress cur = ts.agents[i];
    const IdmParams p = idm_params(i, cur.progress);
    const auto lead = find_lead(ts, i, ego);
    double a;
    if (!lead) {
      a = idm_acceleration(cur.velocity, 0.0, std::numeric_limits<double>::infinity(), p);
    } else if (lead->gap <= 0.0) {
      a = -std::max(2.0 * p.b_comfort, p.max_decel);
    } else {
      a = idm_acceleration(cur.velocity, lead->v_lead, lead->gap, p);
    }
    const double v = std::max(0.0, cur.velocity + a * dt);
    next.agents[i] = {std::min(cur.progress + v * dt, paths_[i].length()), v};
  }
  return next;
}

std::optional<LeadInfo> find_lead(const TrafficModel& model, const TrafficState& ts, std::size_t agent,
                                  const EgoState& ego) {
  return model.find_lead(ts, agent, ego);
}

TrafficState step_traffic(const TrafficModel& model, const TrafficState& ts, const EgoState& ego, double dt) {
  return model.step(ts, ego, dt);
}

}  // namespace pseudosim
