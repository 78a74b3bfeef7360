#pragma once

#include <vector>

#include "pseudosim/metrics.hpp"
#include "pseudosim/traffic.hpp"

namespace pseudosim {

/// Steps reactive traffic alongside a precomputed ego trajectory. Agents at
/// tick k+1 react to the ego state at tick k.
Rollout simulate_with_traffic(const TrafficModel& model, std::vector<EgoState> ego_states,
                              const TrafficState& initial);

/// Expert replay over `ticks` ticks (ticks + 1 states) with reactive traffic.
Rollout expert_rollout(const TrafficModel& model, int ticks);

/// Scenario history minus its final state, which opens the rollout.
std::vector<EgoState> history_prefix(const Scenario& sc);

}  // namespace pseudosim
