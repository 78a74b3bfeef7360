#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pseudosim/scene.hpp"
#include "pseudosim/scene_io.hpp"

namespace pseudosim {

inline constexpr double kStage2StartTime = 4.0;
inline constexpr int kStage2StartTick = 40;
inline constexpr double kLateralStep = 0.5;
inline constexpr double kLateralMax = 2.0;
inline constexpr double kLongitudinalStep = 5.0;
inline constexpr std::size_t kMaxObservations = 20;
inline constexpr std::size_t kMinObservations = 5;

struct MatchTolerances {
  double velocity = 1.0;       ///< m/s
  double acceleration = 1.0;   ///< m/s^2
  double heading = 20.0 * kPi / 180.0;
};

/// Reachable window of the 4 s endpoint under +-4 m/s^2, measured from the
/// scene start along the route.
std::pair<double, double> longitudinal_bounds(double v0);

/// Offset on the route frame anchored at the scene start: `lon` is arc length
/// ahead of the start, `lat` is signed lateral offset (left positive).
struct GridOffset {
  double lat = 0.0;
  double lon = 0.0;
  bool operator==(const GridOffset&) const = default;
};

/// Full lateral x longitudinal grid, unranked.
std::vector<GridOffset> raw_start_grid(const Scenario& sc);

/// Grid ranked by distance to the expert endpoint (ties: smaller lon, then
/// smaller lat) and truncated to the nearest kMaxObservations.
std::vector<GridOffset> sample_start_grid(const Scenario& sc);

Vec2 grid_position(const Scenario& sc, const GridOffset& g);

struct StartCandidate {
  GridOffset grid;
  FrenetCoord relative;  ///< {lon, lat} relative to the expert endpoint
  Pose2D pose;
  std::vector<EgoState> matched_history;  ///< 16 states ending at `pose`, t in [-1.5, 0]
  double matched_velocity = 0.0;
  std::string source_trajectory_id;
};

/// Route-relative motion library. Each indexed state carries its lateral
/// offset and heading relative to the route of the scene it was driven in.
class TrajectoryBank {
 public:
  struct Entry {
    std::string id;
    std::vector<EgoState> states;
    std::vector<double> lateral;
    std::vector<double> relative_heading;
  };

  void add(const Scenario& sc);
  /// Requires at least kHistoryStates states.
  void add(std::string id, std::vector<EgoState> states, const Polyline& route);

  const std::vector<Entry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

 private:
  std::vector<Entry> entries_;
};

/// Nearest bank state to (lat, expert endpoint speed and acceleration), then
/// the tolerance filters against the expert endpoint state.
std::optional<StartCandidate> match_heading_history(const GridOffset& g, const Scenario& sc,
                                                    const TrajectoryBank& bank, const MatchTolerances& tol = {});

/// Scenario as seen from the 4 s mark: agents and lights re-timed, the
/// expert truncated, and the ego history taken from the candidate.
Scenario derive_stage2_scenario(const Scenario& sc, const StartCandidate& c, std::size_t index);

/// Keep iff the start footprint is clear of agents, inside the drivable
/// area, not against traffic, and not on or past a Red line the expert has
/// not passed.
bool reject_invalid_keep(const StartCandidate& c, const Scenario& sc4);

struct SyntheticObservation {
  std::string parent_scenario_id;
  std::size_t index = 0;
  StartCandidate start;
  Scenario scenario;
};

struct Stage2Set {
  std::string parent_scenario_id;
  bool discarded = false;
  std::size_t candidates = 0;  ///< grid points examined
  std::size_t matched = 0;     ///< survived history matching
  std::vector<SyntheticObservation> observations;
};

Stage2Set build_stage2_set(const Scenario& sc, const TrajectoryBank& bank, const MatchTolerances& tol = {});

/// Every k-th observation with k = 1 / density; keeps ceil(n * density).
Stage2Set downsample(const Stage2Set& set, double density);

/// Observations are stored as start candidates; derived scenarios are
/// rebuilt from the parent on load.
Json to_json(const Stage2Set& set);
Stage2Set stage2_from_json(const Json& j, const Scenario& parent);
Stage2Set load_stage2(const std::filesystem::path& path, const Scenario& parent);
void save_stage2(const Stage2Set& set, const std::filesystem::path& path);

}  // namespace pseudosim
