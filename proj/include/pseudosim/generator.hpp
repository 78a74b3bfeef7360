#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "pseudosim/scene.hpp"

namespace pseudosim {

enum class Layout { Straight, Curve, Intersection, LaneMerge };

std::string to_string(Layout l);
Layout layout_from_string(std::string_view s);

/// Procedural scenario settings.
/// density in [0, 1] scales the agent count; speed in [3, 20] m/s is the
/// route speed limit.
struct GeneratorConfig {
  Layout layout = Layout::Straight;
  double density = 0.5;
  double speed = 10.0;
  std::uint64_t seed = 1;
};

/// Length of the generated expert future; covers an 8 s closed-loop episode
/// started 4 s into the scene.
inline constexpr int kExpertFutureTicks = 125;

/// Deterministic in the config. Throws GenerationError when the privileged
/// driver cannot produce a clean expert.
Scenario generate_scenario(const GeneratorConfig& cfg);

/// Retries with derived seeds; `attempts` receives the number of tries used.
Scenario generate_scenario_with_retry(const GeneratorConfig& cfg, int max_attempts, int* attempts = nullptr);

}  // namespace pseudosim
