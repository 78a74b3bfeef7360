#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "pseudosim/geometry.hpp"
#include "pseudosim/scene.hpp"
#include "pseudosim/traffic.hpp"

namespace pseudosim {

enum class Subscore { NC, DAC, DDC, TLC, EP, TTC, LK, HC, EC };

inline constexpr std::array<Subscore, 9> kAllSubscores{Subscore::NC,  Subscore::DAC, Subscore::DDC,
                                                       Subscore::TLC, Subscore::EP,  Subscore::TTC,
                                                       Subscore::LK,  Subscore::HC,  Subscore::EC};

std::string to_string(Subscore m);
/// True for the multiplicative terms NC, DAC, DDC and TLC.
bool is_penalty(Subscore m);

struct SubscoreVector {
  double nc = 1.0;
  double dac = 1.0;
  double ddc = 1.0;
  double tlc = 1.0;
  double ep = 1.0;
  double ttc = 1.0;
  double lk = 1.0;
  double hc = 1.0;
  double ec = 1.0;

  double get(Subscore m) const;
  void set(Subscore m, double v);
  /// Every field lies in its admissible value set.
  bool in_range() const;
  bool operator==(const SubscoreVector&) const = default;
};

struct MetricWeights {
  double ep = 5.0;
  double ttc = 5.0;
  double lk = 2.0;
  double hc = 2.0;
  double ec = 2.0;
  std::array<bool, 9> enabled{true, true, true, true, true, true, true, true, true};

  double weight(Subscore m) const;
  bool is_enabled(Subscore m) const { return enabled[static_cast<std::size_t>(m)]; }

  static MetricWeights full() { return {}; }
  /// Drops TLC, LK and EC.
  static MetricWeights reduced();
};

/// Thresholds behind the rule-based subscores, kept in one place so they can
/// be recalibrated together.
struct MetricsConfig {
  double ddc_half_distance = 2.0;
  double ddc_zero_distance = 6.0;
  double lk_max_offset = 0.5;
  double lk_max_duration = 1.0;
  double ttc_horizon = 1.0;
  double ttc_min_speed = 0.5;
  double stationary_speed = 0.1;
  double ep_min_reference = 5.0;
  double max_lon_accel = 4.89;
  double max_lat_accel = 4.89;
  double max_jerk = 8.37;
  double max_yaw_rate = 0.95;
  double max_yaw_accel = 1.93;
  double ec_window = 1.0;
  double ego_length = 4.6;
  double ego_width = 1.9;
};

/// Simulated ego and traffic states on the 10 Hz grid.
struct Rollout {
  const Scenario* scenario = nullptr;
  std::vector<EgoState> history;     ///< states before ego_states.front(), oldest first
  std::vector<EgoState> ego_states;  ///< includes the start state
  std::vector<TrafficState> traffic_states;
  std::vector<std::vector<AgentSnapshot>> agents;  ///< per tick, aligned with ego_states
  std::vector<Trajectory> plans;                   ///< committed world-frame plans, in order
  std::optional<Trajectory> previous_plan;
};

struct SafetyScores {
  double nc = 1.0;
  double ttc = 1.0;
};

struct ComplianceScores {
  double dac = 1.0;
  double ddc = 1.0;
  double tlc = 1.0;
  double lk = 1.0;
};

struct ComfortScores {
  double hc = 1.0;
  double ec = 1.0;
};

/// Lane lookups with per-lane bounding-box rejection.
class LaneLocator {
 public:
  explicit LaneLocator(const MapModel& map);

  struct Hit {
    const Lane* lane = nullptr;
    double offset = 0.0;       ///< |lateral offset|
    double heading_diff = 0.0; ///< |ego heading - lane heading|
  };

  /// Lane whose centerline is laterally closest among those containing p.
  std::optional<Hit> containing_lane(const Pose2D& p) const;
  /// Nearest lane whose direction is within 90 degrees of p.heading.
  std::optional<Hit> nearest_same_direction(const Pose2D& p, double max_distance = 20.0) const;

 private:
  struct Bounds {
    Vec2 lo, hi;
  };
  const MapModel* map_;
  std::vector<Bounds> bounds_;
};

OrientedBox ego_box(const Pose2D& p, const MetricsConfig& cfg);

SafetyScores evaluate_safety(const Rollout& r, const MetricsConfig& cfg = {});
ComplianceScores evaluate_compliance(const Rollout& r, const MetricsConfig& cfg = {});
double route_progress(const MapModel& map, const std::vector<EgoState>& states);
double evaluate_progress(const Rollout& r, double reference_progress, const MetricsConfig& cfg = {});
ComfortScores evaluate_comfort(const Rollout& r, const MetricsConfig& cfg = {});

/// Comfort bounds on a pose/speed sequence sampled every 0.1 s.
bool comfort_within_bounds(const std::vector<Pose2D>& poses, const std::vector<double>& speeds,
                           const MetricsConfig& cfg);
/// Splices the previous plan's first tick onto `plan` and checks comfort.
bool plan_transition_comfortable(const Trajectory& previous, const Trajectory& plan, const MetricsConfig& cfg);

SubscoreVector evaluate_subscores(const Rollout& r, double reference_progress, const MetricsConfig& cfg = {});

/// Human reference filter: a subscore the expert scores 0 on is forgiven.
SubscoreVector apply_human_filter(const SubscoreVector& agent, const SubscoreVector& human);

/// Throws ConfigError when every weighted-average term is disabled.
double compose_epdms(const SubscoreVector& filtered, const MetricWeights& w);
/// Product of the enabled penalty terms.
double penalty_product(const SubscoreVector& s, const MetricWeights& w);
/// Weighted mean of the enabled average terms.
double weighted_average(const SubscoreVector& s, const MetricWeights& w);

}  // namespace pseudosim
