#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pseudosim/metrics.hpp"
#include "pseudosim/planners.hpp"
#include "pseudosim/stage2.hpp"
#include "pseudosim/traffic.hpp"

namespace pseudosim {

enum class StageMode { Product, Mean, Hybrid };
enum class Weighting { Gaussian, Uniform, Knn };

std::string to_string(StageMode m);
std::string to_string(Weighting w);
StageMode stage_mode_from_string(std::string_view s);
Weighting weighting_from_string(std::string_view s);

struct AggregationConfig {
  double sigma2 = 0.1;  ///< m^2
  StageMode stage_mode = StageMode::Product;
  Weighting weighting = Weighting::Gaussian;
  int knn_k = 3;
  MetricWeights weights = MetricWeights::full();

  /// Throws ConfigError on sigma2 <= 0 or k < 1.
  void validate() const;
};

inline constexpr int kStageOneTicks = 40;
inline constexpr int kClosedLoopTicks = 80;

/// Planner-independent per-scene data: traffic model, human reference and
/// privileged progress for one horizon.
struct SceneContext {
  explicit SceneContext(const Scenario& sc, int ticks);
  SceneContext(const SceneContext&) = delete;
  SceneContext& operator=(const SceneContext&) = delete;

  const Scenario& scenario;
  TrafficModel model;
  int ticks;
  SubscoreVector human;
  double reference_progress = 0.0;
};

/// Pseudo-simulation contexts for one scene, built once and shared read-only
/// by every planner worker. The closed-loop context is a separate
/// SceneContext(sc, kClosedLoopTicks).
struct PreparedScene {
  PreparedScene(const Scenario& sc, const Stage2Set* set);

  const Scenario& scenario;
  SceneContext stage1;
  std::vector<std::unique_ptr<SceneContext>> stage2;  ///< aligned with set->observations
  const Stage2Set* set;
};

/// Privileged reference planner used for the progress normalizer.
std::unique_ptr<Planner> reference_planner();

struct StageScore {
  SubscoreVector raw;
  SubscoreVector filtered;
  double score = 0.0;
  double penalty = 0.0;  ///< product of enabled penalty terms
  double average = 0.0;  ///< weighted mean of enabled average terms
};

StageScore score_rollout(const Rollout& r, const SceneContext& ctx, const MetricWeights& w);

struct StageOneResult {
  StageScore score;
  Vec2 endpoint;  ///< simulated ego position at 4 s
  Rollout rollout;
};

/// One inference and a 4 s tracked rollout with reactive traffic.
StageOneResult run_stage1(const SceneContext& ctx, Planner& planner, const MetricWeights& w);

/// Stage-1 pipeline with the planner's plan supplied directly.
Rollout open_loop_rollout(const SceneContext& ctx, const Trajectory& local_plan);

/// Normalized proximity weights. Distances are shifted by the minimum before
/// exponentiation; non-finite totals fall back to uniform weights.
std::vector<double> gaussian_weights(const std::vector<Vec2>& points, Vec2 center, double sigma2);

struct ObservationResult {
  std::size_t index = 0;
  bool failed = false;
  std::string error;
  Vec2 start;
  StageScore score;
  double weight = 0.0;  ///< normalized, 0 for failed observations
};

struct StageTwoResult {
  std::vector<ObservationResult> observations;
  double s2 = 0.0;
  double penalty = 0.0;  ///< weighted penalty products
  double average = 0.0;  ///< weighted averages
};

/// Weights over successful observations; sets weight fields and the
/// aggregate values. Throws StageError when nothing succeeded.
void weigh_stage2(StageTwoResult& r, Vec2 endpoint, const AggregationConfig& cfg);

StageTwoResult run_stage2(const PreparedScene& scene, Planner& planner, Vec2 endpoint, const AggregationConfig& cfg);

double aggregate(const StageScore& s1, const StageTwoResult& s2, const AggregationConfig& cfg);

struct CombinedScore {
  std::string scenario_id;
  std::string planner_id;
  StageOneResult stage1;
  StageTwoResult stage2;
  double combined = 0.0;
  int inference_count = 0;
};

CombinedScore run_pseudo_simulation(const PreparedScene& scene, Planner& planner, const AggregationConfig& cfg);

struct ClosedLoopResult {
  StageScore score;
  Rollout rollout;
  int inference_count = 0;
};

/// Replans every tick and executes the first 0.1 s of each plan.
Rollout closed_loop_rollout(const SceneContext& ctx, Planner& planner, int ticks);
ClosedLoopResult run_closed_loop(const SceneContext& ctx, Planner& planner, const MetricWeights& w);

}  // namespace pseudosim
