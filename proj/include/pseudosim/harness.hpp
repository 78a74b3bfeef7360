#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pseudosim/evaluator.hpp"
#include "pseudosim/scene_io.hpp"
#include "pseudosim/stage2.hpp"

namespace pseudosim {

namespace fs = std::filesystem;

// ---- manifest ----

struct ExperimentManifest {
  fs::path scenario_dir;  ///< <id>.json per scenario
  fs::path stage2_dir;    ///< <id>.json per kept Stage-2 set
  std::vector<std::string> scenarios;
  std::vector<Json> planners;  ///< make_planner specs
  AggregationConfig aggregation;
  bool reduced_metrics = false;
  double density = 1.0;  ///< fraction of Stage-2 observations kept
  fs::path output_dir;

  /// Throws ConfigError on duplicate ids or invalid settings.
  void validate() const;
  /// Evaluation settings that affect pseudo-simulation scores (no paths, no
  /// planner list).
  Json settings() const;
  /// The subset closed-loop scores depend on.
  Json closed_loop_settings() const;
  /// Hex digest of the settings plus the planner spec; keys result records.
  std::string config_hash(const Json& planner_spec) const;
  std::string closed_loop_config_hash(const Json& planner_spec) const;
  /// Aggregation with the metric weights selected by reduced_metrics.
  AggregationConfig aggregation_config() const;
};

Json to_json(const ExperimentManifest& m);
/// Relative paths are resolved against `base`.
ExperimentManifest manifest_from_json(const Json& j, const fs::path& base);
ExperimentManifest load_manifest(const fs::path& path);
void save_manifest(const ExperimentManifest& m, const fs::path& path);

/// 64-bit FNV-1a, hex encoded.
std::string fnv1a_hex(std::string_view text);

// ---- generation ----

struct GenerateOptions {
  std::size_t count = 40;
  std::uint64_t seed = 1;
  double traffic_density = 0.5;
  double speed = 10.0;
  int max_attempts = 10;
  int workers = 1;
};

struct GenerateSummary {
  std::size_t generated = 0;
  std::size_t discarded = 0;  ///< fewer than kMinObservations survivors
  std::size_t retries = 0;    ///< extra attempts over all scenes
  std::vector<std::string> failures;  ///< scenes that never generated
  std::vector<std::string> kept;
  std::size_t observations = 0;  ///< over kept sets
};

/// Writes <out>/scenarios, <out>/stage2 and <out>/manifest.json (default zoo).
GenerateSummary cmd_generate(const GenerateOptions& opt, const fs::path& out);

/// Rebuilds Stage-2 sets for every scenario file in `scenario_dir`.
GenerateSummary cmd_stage2(const fs::path& scenario_dir, const fs::path& stage2_dir, int workers);

// ---- batch evaluation ----

struct LoadedScene {
  Scenario scenario;
  std::optional<Stage2Set> set;  ///< downsampled to the manifest density
};

std::vector<LoadedScene> load_scenes(const ExperimentManifest& m, bool with_stage2);

Json subscores_to_json(const SubscoreVector& s);
SubscoreVector subscores_from_json(const Json& j);

/// Observation-weighted filtered subscores of a Stage-2 result.
SubscoreVector weighted_subscores(const StageTwoResult& r);

Json pseudo_record(const CombinedScore& c, const std::string& config, const Json& settings);
Json closed_loop_record(const ClosedLoopResult& c, const std::string& planner, const std::string& scenario,
                        const std::string& config);
Json failed_record(const std::string& kind, const std::string& planner, const std::string& scenario,
                   const std::string& config, const Json& settings, const std::string& error,
                   int inference_count);

/// "planner\tscenario\tconfig"
std::string record_key(const Json& record);

struct PairJob {
  std::size_t planner = 0;
  std::size_t scene = 0;
};

/// Receives each record as it completes; calls are serialized.
using RecordSink = std::function<void(const Json&)>;

/// One record per job, in job order. Engine errors become failed records.
/// The serial version is the reference the parallel one is tested against.
std::vector<Json> evaluate_pseudo_serial(const ExperimentManifest& m, const std::vector<const PreparedScene*>& scenes,
                                         const std::vector<PairJob>& jobs, const RecordSink& sink = {});
std::vector<Json> evaluate_pseudo_parallel(const ExperimentManifest& m,
                                           const std::vector<const PreparedScene*>& scenes,
                                           const std::vector<PairJob>& jobs, int workers,
                                           const RecordSink& sink = {});
std::vector<Json> evaluate_closed_loop_serial(const ExperimentManifest& m,
                                              const std::vector<const SceneContext*>& scenes,
                                              const std::vector<PairJob>& jobs, const RecordSink& sink = {});
std::vector<Json> evaluate_closed_loop_parallel(const ExperimentManifest& m,
                                                const std::vector<const SceneContext*>& scenes,
                                                const std::vector<PairJob>& jobs, int workers,
                                                const RecordSink& sink = {});

struct RunSummary {
  std::size_t records = 0;
  std::size_t computed = 0;
  std::size_t skipped = 0;  ///< already present in the results file
  std::size_t failed = 0;
  double mean_inference_count = 0.0;

  double failure_rate() const { return records == 0 ? 0.0 : static_cast<double>(failed) / records; }
};

/// Resumable: records already in `results` under the same key are kept and
/// their pairs skipped. The file is rewritten sorted by key.
RunSummary cmd_evaluate(const ExperimentManifest& m, const fs::path& results, int workers);
RunSummary cmd_closed_loop(const ExperimentManifest& m, const fs::path& results, int workers);

// ---- results files ----

/// Line-delimited records. Missing file -> IoError, malformed line -> ParseError.
std::vector<Json> read_results(const fs::path& path);
/// Sorted by record_key; written to a sibling file and renamed into place.
void write_results(const fs::path& path, std::vector<Json> records);

// ---- correlation ----

struct PlannerPoint {
  std::string planner;
  double pseudo = 0.0;  ///< mean combined score, failures as 0
  double stage1 = 0.0;  ///< mean stage-1 score
  double closed_loop = 0.0;
  std::size_t scenes = 0;
  std::size_t failed_pseudo = 0;
  std::size_t failed_closed_loop = 0;
};

struct Correlation {
  double pearson = 0.0;
  double spearman = 0.0;
  double r_squared = 0.0;
  std::size_t points = 0;
};

Correlation correlation(const std::vector<double>& xs, const std::vector<double>& ys);

struct CorrelationReport {
  Json settings;
  std::vector<PlannerPoint> points;
  Correlation pseudo;  ///< two-stage score against closed loop
  Correlation stage1;  ///< stage-1-only score against closed loop
  double mean_pseudo_inferences = 0.0;
  double mean_closed_loop_inferences = 0.0;
  double max_pseudo_inferences = 0.0;
};

/// Throws GridMismatch unless both inputs hold exactly one record per
/// (planner, scenario) on the same grid.
CorrelationReport correlate(const std::vector<Json>& pseudo, const std::vector<Json>& closed_loop);

Json to_json(const CorrelationReport& r);
/// planner,pseudo,stage1,closed_loop per line, for external plotting.
std::string scatter_csv(const CorrelationReport& r);
/// One line per report: its settings and both correlations.
std::string ablation_table(const std::vector<CorrelationReport>& reports);

// ---- report ----

struct ReportTables {
  std::string csv;   ///< planner,metric,stage,value
  std::string text;  ///< aligned, one row per subscore and stage
  Json summary;
};

/// Subscore means over successful records; EPDMS means count failures as 0.
/// Every stored score is recomputed from its subscores; a mismatch above
/// 1e-9 throws ValidationError. Throws DegenerateData on an empty list.
ReportTables make_report(const std::vector<Json>& pseudo);

}  // namespace pseudosim
