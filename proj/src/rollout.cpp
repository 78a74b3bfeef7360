#include "pseudosim/rollout.hpp"

#include <algorithm>

namespace pseudosim {

Rollout simulate_with_traffic(const TrafficModel& model, std::vector<EgoState> ego_states,
                              const TrafficState& initial) {
  Rollout r;
  r.scenario = &model.scenario();
  r.history = history_prefix(model.scenario());
  r.traffic_states.reserve(ego_states.size());
  r.agents.reserve(ego_states.size());
  TrafficState ts = initial;
  for (std::size_t k = 0; k < ego_states.size(); ++k) {
    if (k > 0) ts = model.step(ts, ego_states[k - 1]);
    r.traffic_states.push_back(ts);
    r.agents.push_back(model.snapshots(ts));
  }
  r.ego_states = std::move(ego_states);
  return r;
}

Rollout expert_rollout(const TrafficModel& model, int ticks) {
  std::vector<EgoState> states = expert_states(model.scenario());
  states.resize(std::min<std::size_t>(states.size(), static_cast<std::size_t>(ticks) + 1));
  Rollout r = simulate_with_traffic(model, std::move(states), model.initial_state());
  Trajectory plan;
  for (std::size_t k = 1; k < r.ego_states.size(); ++k) {
    plan.waypoints.push_back({r.ego_states[k].pose, r.ego_states[k].timestamp});
  }
  r.plans.push_back(std::move(plan));
  return r;
}

std::vector<EgoState> history_prefix(const Scenario& sc) {
  std::vector<EgoState> h = sc.ego_history;
  if (!h.empty()) h.pop_back();
  return h;
}

}  // namespace pseudosim
