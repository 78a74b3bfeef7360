#pragma once

#include <optional>
#include <vector>

#include "pseudosim/geometry.hpp"
#include "pseudosim/scene.hpp"

namespace pseudosim {

/// Intelligent Driver Model acceleration. `gap` = +infinity means no leader.
/// Throws DomainError for a non-positive finite gap.
double idm_acceleration(double v, double v_lead, double gap, const IdmParams& p);

struct LeadInfo {
  double v_lead = 0.0;
  double gap = 0.0;
};

struct AgentProgress {
  double progress = 0.0;
  double velocity = 0.0;

  bool operator==(const AgentProgress&) const = default;
};

struct TrafficState {
  std::vector<AgentProgress> agents;
  long tick = 0;

  bool operator==(const TrafficState&) const = default;
};

struct AgentSnapshot {
  OrientedBox box;
  double velocity = 0.0;
};

inline constexpr double kLeadLookahead = 100.0;

/// Per-scenario path geometry for the background agents. Holds a reference
/// to the scenario, which must outlive it.
class TrafficModel {
 public:
  explicit TrafficModel(const Scenario& sc, double ego_length = 4.6);

  const Scenario& scenario() const { return *sc_; }
  std::size_t size() const { return paths_.size(); }

  TrafficState initial_state() const;
  AgentSnapshot snapshot(const TrafficState& ts, std::size_t agent) const;
  std::vector<AgentSnapshot> snapshots(const TrafficState& ts) const;
  IdmParams idm_params(std::size_t agent, double progress) const;
  const Polyline& path(std::size_t agent) const { return paths_[agent]; }

  std::optional<LeadInfo> find_lead(const TrafficState& ts, std::size_t agent, const EgoState& ego) const;
  TrafficState step(const TrafficState& ts, const EgoState& ego, double dt = kTickSeconds) const;

 private:
  struct StopOnPath {
    double s;
    std::size_t line;
  };
  struct LaneSpan {
    double s_end;
    double speed_limit;
    double width;
  };

  const Scenario* sc_;
  double ego_length_;
  std::vector<Polyline> paths_;
  std::vector<std::vector<StopOnPath>> stops_;
  std::vector<std::vector<LaneSpan>> spans_;
};

std::optional<LeadInfo> find_lead(const TrafficModel& model, const TrafficState& ts, std::size_t agent,
                                  const EgoState& ego);
TrafficState step_traffic(const TrafficModel& model, const TrafficState& ts, const EgoState& ego,
                          double dt = kTickSeconds);

}  // namespace pseudosim
