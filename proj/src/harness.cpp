#include "pseudosim/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include <omp.h>

#include "pseudosim/errors.hpp"
#include "pseudosim/generator.hpp"
#include "pseudosim/stats.hpp"

namespace pseudosim {

// ---- manifest ----

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void ExperimentManifest::validate() const {
  aggregation_config().validate();
  if (!(density > 0.0 && density <= 1.0)) throw ConfigError("density must lie in (0, 1]");
  if (scenarios.empty()) throw ConfigError("manifest lists no scenarios");
  if (planners.empty()) throw ConfigError("manifest lists no planners");
  std::set<std::string> seen;
  for (const auto& id : scenarios) {
    if (!seen.insert(id).second) throw ConfigError("duplicate scenario '" + id + "'");
  }
  seen.clear();
  for (const auto& p : planners) {
    if (!p.is_object() || !p.contains("id") || !p["id"].is_string()) throw ConfigError("planner spec without id");
    const auto id = p["id"].get<std::string>();
    if (!seen.insert(id).second) throw ConfigError("duplicate planner '" + id + "'");
  }
}

Json ExperimentManifest::settings() const {
  return Json{{"sigma2", aggregation.sigma2},
              {"stage_mode", to_string(aggregation.stage_mode)},
              {"weighting", to_string(aggregation.weighting)},
              {"knn_k", aggregation.knn_k},
              {"metrics", reduced_metrics ? "reduced" : "full"},
              {"density", density}};
}

Json ExperimentManifest::closed_loop_settings() const { return Json{{"metrics", reduced_metrics ? "reduced" : "full"}}; }

std::string ExperimentManifest::config_hash(const Json& planner_spec) const {
  return fnv1a_hex(settings().dump() + "\n" + planner_spec.dump());
}

std::string ExperimentManifest::closed_loop_config_hash(const Json& planner_spec) const {
  return fnv1a_hex(closed_loop_settings().dump() + "\n" + planner_spec.dump());
}

AggregationConfig ExperimentManifest::aggregation_config() const {
  AggregationConfig cfg = aggregation;
  cfg.weights = reduced_metrics ? MetricWeights::reduced() : MetricWeights::full();
  return cfg;
}

Json to_json(const ExperimentManifest& m) {
  Json scenarios = Json::array();
  for (const auto& s : m.scenarios) scenarios.push_back(s);
  Json planners = Json::array();
  for (const auto& p : m.planners) planners.push_back(p);
  return Json{{"scenario_dir", m.scenario_dir.generic_string()},
              {"stage2_dir", m.stage2_dir.generic_string()},
              {"scenarios", std::move(scenarios)},
              {"planners", std::move(planners)},
              {"aggregation",
               {{"sigma2", m.aggregation.sigma2},
                {"stage_mode", to_string(m.aggregation.stage_mode)},
                {"weighting", to_string(m.aggregation.weighting)},
                {"knn_k", m.aggregation.knn_k}}},
              {"metrics", m.reduced_metrics ? "reduced" : "full"},
              {"density", m.density},
              {"output_dir", m.output_dir.generic_string()}};
}

ExperimentManifest manifest_from_json(const Json& j, const fs::path& base) {
  expect_keys(j, {"scenario_dir", "stage2_dir", "scenarios", "planners"},
              {"aggregation", "metrics", "density", "output_dir"}, "manifest");
  ExperimentManifest m;
  auto resolve = [&](const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : (base / path).lexically_normal();
  };
  try {
    m.scenario_dir = resolve(j.at("scenario_dir").get<std::string>());
    m.stage2_dir = resolve(j.at("stage2_dir").get<std::string>());
    for (const auto& s : j.at("scenarios")) m.scenarios.push_back(s.get<std::string>());
    for (const auto& p : j.at("planners")) m.planners.push_back(p);
    if (j.contains("aggregation")) {
      const auto& a = j.at("aggregation");
      expect_keys(a, {}, {"sigma2", "stage_mode", "weighting", "knn_k"}, "manifest.aggregation");
      if (a.contains("sigma2")) m.aggregation.sigma2 = a.at("sigma2").get<double>();
      if (a.contains("stage_mode")) m.aggregation.stage_mode = stage_mode_from_string(a.at("stage_mode").get<std::string>());
      if (a.contains("weighting")) m.aggregation.weighting = weighting_from_string(a.at("weighting").get<std::string>());
      if (a.contains("knn_k")) m.aggregation.knn_k = a.at("knn_k").get<int>();
    }
    if (j.contains("metrics")) {
      const auto metrics = j.at("metrics").get<std::string>();
      if (metrics != "full" && metrics != "reduced") throw ConfigError("metrics must be full or reduced");
      m.reduced_metrics = metrics == "reduced";
    }
    if (j.contains("density")) m.density = j.at("density").get<double>();
    m.output_dir = resolve(j.value("output_dir", std::string("results")));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("manifest: ") + e.what());
  }
  m.validate();
  return m;
}

ExperimentManifest load_manifest(const fs::path& path) {
  return manifest_from_json(read_json_file(path), path.parent_path());
}

void save_manifest(const ExperimentManifest& m, const fs::path& path) {
  // paths are stored relative to the manifest so a run directory can move
  const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  ExperimentManifest rel = m;
  auto relative = [&](const fs::path& p) { return p.is_absolute() ? p.lexically_proximate(fs::absolute(base)) : p.lexically_proximate(base); };
  rel.scenario_dir = relative(m.scenario_dir);
  rel.stage2_dir = relative(m.stage2_dir);
  rel.output_dir = relative(m.output_dir);
  write_text_file(path, to_json(rel).dump(2) + "\n");
}

// ---- generation ----

namespace {

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

int thread_count(int workers) { return std::max(1, workers); }

// Bank over every scene, then one set per scene.
std::vector<Stage2Set> build_sets(const std::vector<Scenario>& scenes, int workers) {
  TrajectoryBank bank;
  for (const auto& sc : scenes) bank.add(sc);
  std::vector<Stage2Set> sets(scenes.size());
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic) num_threads(thread_count(workers))
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    try {
      sets[i] = build_stage2_set(scenes[i], bank);
    } catch (...) {
#pragma omp critical(pseudosim_build_sets)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return sets;
}

void write_sets(const std::vector<Stage2Set>& sets, const fs::path& stage2_dir, GenerateSummary& out) {
  make_dir(stage2_dir);
  for (const auto& set : sets) {
    const fs::path file = stage2_dir / (set.parent_scenario_id + ".json");
    if (set.discarded) {
      ++out.discarded;
      std::error_code ec;
      fs::remove(file, ec);  // a stale set from an earlier run must not survive
      continue;
    }
    save_stage2(set, file);
    out.kept.push_back(set.parent_scenario_id);
    out.observations += set.observations.size();
  }
}

}  // namespace

GenerateSummary cmd_generate(const GenerateOptions& opt, const fs::path& out) {
  if (opt.count == 0) throw ConfigError("scene count must be positive");
  if (opt.max_attempts < 1) throw ConfigError("max_attempts must be positive");
  const fs::path scenario_dir = out / "scenarios";
  const fs::path stage2_dir = out / "stage2";
  make_dir(scenario_dir);

  std::vector<std::optional<Scenario>> generated(opt.count);
  std::vector<int> attempts(opt.count, 0);
  std::vector<std::string> errors(opt.count);
#pragma omp parallel for schedule(dynamic) num_threads(thread_count(opt.workers))
  for (std::size_t i = 0; i < opt.count; ++i) {
    GeneratorConfig cfg;
    cfg.layout = static_cast<Layout>(i % 4);
    cfg.density = opt.traffic_density;
    cfg.speed = opt.speed;
    cfg.seed = opt.seed + i / 4;
    try {
      generated[i] = generate_scenario_with_retry(cfg, opt.max_attempts, &attempts[i]);
    } catch (const Error& e) {
      attempts[i] = opt.max_attempts;
      errors[i] = to_string(cfg.layout) + "-" + std::to_string(cfg.seed) + ": " + e.what();
    }
  }

  GenerateSummary summary;
  std::vector<Scenario> scenes;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < opt.count; ++i) {
    summary.retries += static_cast<std::size_t>(std::max(0, attempts[i] - 1));
    if (!generated[i]) {
      summary.failures.push_back(errors[i]);
      continue;
    }
    if (!ids.insert(generated[i]->id).second) throw GenerationError("duplicate scenario id " + generated[i]->id);
    scenes.push_back(std::move(*generated[i]));
  }
  summary.generated = scenes.size();
  if (scenes.empty()) throw GenerationError("no scenario could be generated");
  for (const auto& sc : scenes) save_scenario(sc, scenario_dir / (sc.id + ".json"));

  write_sets(build_sets(scenes, opt.workers), stage2_dir, summary);

  ExperimentManifest m;
  m.scenario_dir = scenario_dir;
  m.stage2_dir = stage2_dir;
  m.scenarios = summary.kept;
  m.planners = default_zoo();
  m.output_dir = out / "results";
  if (!m.scenarios.empty()) save_manifest(m, out / "manifest.json");
  return summary;
}

GenerateSummary cmd_stage2(const fs::path& scenario_dir, const fs::path& stage2_dir, int workers) {
  std::vector<fs::path> files;
  std::error_code ec;
  for (const auto& e : fs::directory_iterator(scenario_dir, ec)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  if (ec) throw IoError("cannot list " + scenario_dir.string() + ": " + ec.message());
  if (files.empty()) throw IoError("no scenario files in " + scenario_dir.string());
  std::sort(files.begin(), files.end());
  std::vector<Scenario> scenes;
  for (const auto& f : files) scenes.push_back(load_scenario(f));
  GenerateSummary summary;
  summary.generated = scenes.size();
  write_sets(build_sets(scenes, workers), stage2_dir, summary);
  return summary;
}

// ---- records ----

std::vector<LoadedScene> load_scenes(const ExperimentManifest& m, bool with_stage2) {
  std::vector<LoadedScene> out;
  out.reserve(m.scenarios.size());
  for (const auto& id : m.scenarios) {
    LoadedScene s{load_scenario(m.scenario_dir / (id + ".json")), std::nullopt};
    if (s.scenario.id != id) throw SchemaError("file for '" + id + "' holds scenario '" + s.scenario.id + "'");
    if (with_stage2) {
      Stage2Set set = load_stage2(m.stage2_dir / (id + ".json"), s.scenario);
      if (set.discarded || set.observations.empty()) throw ConfigError("scenario '" + id + "' has no stage-2 set");
      s.set = m.density < 1.0 ? downsample(set, m.density) : std::move(set);
    }
    out.push_back(std::move(s));
  }
  return out;
}

Json subscores_to_json(const SubscoreVector& s) {
  Json j = Json::object();
  for (Subscore m : kAllSubscores) j[to_string(m)] = s.get(m);
  return j;
}

SubscoreVector subscores_from_json(const Json& j) {
  SubscoreVector s;
  try {
    for (Subscore m : kAllSubscores) s.set(m, j.at(to_string(m)).get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("subscores: ") + e.what());
  }
  return s;
}

SubscoreVector weighted_subscores(const StageTwoResult& r) {
  SubscoreVector out;
  for (Subscore m : kAllSubscores) out.set(m, 0.0);
  for (const auto& o : r.observations) {
    if (o.failed) continue;
    for (Subscore m : kAllSubscores) out.set(m, out.get(m) + o.weight * o.score.filtered.get(m));
  }
  return out;
}

Json pseudo_record(const CombinedScore& c, const std::string& config, const Json& settings) {
  Json obs = Json::array();
  for (const auto& o : c.stage2.observations) {
    if (o.failed) {
      obs.push_back(Json{{"index", o.index}, {"error", o.error}});
      continue;
    }
    obs.push_back(Json{{"index", o.index},
                       {"weight", o.weight},
                       {"filtered", subscores_to_json(o.score.filtered)},
                       {"epdms", o.score.score}});
  }
  const auto& s1 = c.stage1.score;
  return Json{{"kind", "pseudo"},
              {"planner", c.planner_id},
              {"scenario", c.scenario_id},
              {"config", config},
              {"settings", settings},
              {"status", "ok"},
              {"stage1",
               {{"subscores", subscores_to_json(s1.raw)},
                {"filtered", subscores_to_json(s1.filtered)},
                {"epdms", s1.score},
                {"penalty", s1.penalty},
                {"average", s1.average}}},
              {"stage2",
               {{"subscores", subscores_to_json(weighted_subscores(c.stage2))},
                {"epdms", c.stage2.s2},
                {"penalty", c.stage2.penalty},
                {"average", c.stage2.average},
                {"observations", std::move(obs)}}},
              {"epdms", c.combined},
              {"inference_count", c.inference_count}};
}

Json closed_loop_record(const ClosedLoopResult& c, const std::string& planner, const std::string& scenario,
                        const std::string& config) {
  return Json{{"kind", "closed_loop"},
              {"planner", planner},
              {"scenario", scenario},
              {"config", config},
              {"status", "ok"},
              {"subscores", subscores_to_json(c.score.raw)},
              {"filtered", subscores_to_json(c.score.filtered)},
              {"cls", c.score.score},
              {"inference_count", c.inference_count}};
}

Json failed_record(const std::string& kind, const std::string& planner, const std::string& scenario,
                   const std::string& config, const Json& settings, const std::string& error,
                   int inference_count) {
  Json j{{"kind", kind}, {"planner", planner}, {"scenario", scenario}, {"config", config}};
  if (!settings.is_null()) j["settings"] = settings;
  j["status"] = "failed";
  j["error"] = error;
  j["inference_count"] = inference_count;
  return j;
}

std::string record_key(const Json& record) {
  try {
    return record.at("planner").get<std::string>() + "\t" + record.at("scenario").get<std::string>() + "\t" +
           record.at("config").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("result record: ") + e.what());
  }
}

// ---- batch evaluation ----

namespace {

template <class Scene, class Eval>
std::vector<Json> run_serial(const std::vector<PairJob>& jobs, const Eval& eval, const RecordSink& sink) {
  std::vector<Json> out;
  out.reserve(jobs.size());
  for (const auto& job : jobs) {
    out.push_back(eval(job));
    if (sink) sink(out.back());
  }
  return out;
}

template <class Eval>
std::vector<Json> run_parallel(const std::vector<PairJob>& jobs, int workers, const Eval& eval,
                               const RecordSink& sink) {
  std::vector<Json> out(jobs.size());
  std::exception_ptr error;
  // each job writes its own slot, so the result order never depends on scheduling
#pragma omp parallel for schedule(dynamic) num_threads(thread_count(workers))
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    try {
      out[i] = eval(jobs[i]);
#pragma omp critical(pseudosim_sink)
      if (sink) sink(out[i]);
    } catch (...) {
#pragma omp critical(pseudosim_jobs)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return out;
}

std::string planner_id(const Json& spec) { return spec.at("id").get<std::string>(); }

auto pseudo_evaluator(const ExperimentManifest& m, const std::vector<const PreparedScene*>& scenes) {
  return [&m, &scenes, cfg = m.aggregation_config(), settings = m.settings()](const PairJob& job) {
    const Json& spec = m.planners.at(job.planner);
    const PreparedScene& scene = *scenes.at(job.scene);
    const std::string config = m.config_hash(spec);
    try {
      auto planner = make_planner(spec);
      return pseudo_record(run_pseudo_simulation(scene, *planner, cfg), config, settings);
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      return failed_record("pseudo", planner_id(spec), scene.scenario.id, config, settings, e.what(),
                           1 + static_cast<int>(scene.stage2.size()));
    }
  };
}

auto closed_loop_evaluator(const ExperimentManifest& m, const std::vector<const SceneContext*>& scenes) {
  return [&m, &scenes, weights = m.aggregation_config().weights](const PairJob& job) {
    const Json& spec = m.planners.at(job.planner);
    const SceneContext& ctx = *scenes.at(job.scene);
    const std::string config = m.closed_loop_config_hash(spec);
    try {
      auto planner = make_planner(spec);
      return closed_loop_record(run_closed_loop(ctx, *planner, weights), planner_id(spec), ctx.scenario.id, config);
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      return failed_record("closed_loop", planner_id(spec), ctx.scenario.id, config, Json(), e.what(), ctx.ticks);
    }
  };
}

}  // namespace

std::vector<Json> evaluate_pseudo_serial(const ExperimentManifest& m, const std::vector<const PreparedScene*>& scenes,
                                         const std::vector<PairJob>& jobs, const RecordSink& sink) {
  return run_serial<PreparedScene>(jobs, pseudo_evaluator(m, scenes), sink);
}

std::vector<Json> evaluate_pseudo_parallel(const ExperimentManifest& m,
                                           const std::vector<const PreparedScene*>& scenes,
                                           const std::vector<PairJob>& jobs, int workers, const RecordSink& sink) {
  return run_parallel(jobs, workers, pseudo_evaluator(m, scenes), sink);
}

std::vector<Json> evaluate_closed_loop_serial(const ExperimentManifest& m,
                                              const std::vector<const SceneContext*>& scenes,
                                              const std::vector<PairJob>& jobs, const RecordSink& sink) {
  return run_serial<SceneContext>(jobs, closed_loop_evaluator(m, scenes), sink);
}

std::vector<Json> evaluate_closed_loop_parallel(const ExperimentManifest& m,
                                                const std::vector<const SceneContext*>& scenes,
                                                const std::vector<PairJob>& jobs, int workers,
                                                const RecordSink& sink) {
  return run_parallel(jobs, workers, closed_loop_evaluator(m, scenes), sink);
}

// ---- results files ----

namespace {

std::vector<Json> parse_results(const fs::path& path, bool tolerate_torn_tail) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  std::vector<Json> out;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    const bool terminated = end != std::string::npos;
    if (!terminated) end = text.size();
    const std::string_view line(text.data() + pos, end - pos);
    ++line_no;
    pos = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      out.push_back(Json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      // an interrupted appender leaves at most one unterminated line
      if (tolerate_torn_tail && !terminated) break;
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::string record_line(const Json& j) { return j.dump() + "\n"; }

std::vector<PairJob> pending_jobs(const ExperimentManifest& m, const std::vector<Json>& existing, bool closed_loop) {
  std::set<std::string> done;
  for (const auto& r : existing) done.insert(record_key(r));
  std::vector<PairJob> jobs;
  for (std::size_t p = 0; p < m.planners.size(); ++p) {
    const std::string config = closed_loop ? m.closed_loop_config_hash(m.planners[p]) : m.config_hash(m.planners[p]);
    const std::string id = planner_id(m.planners[p]);
    for (std::size_t s = 0; s < m.scenarios.size(); ++s) {
      if (!done.count(id + "\t" + m.scenarios[s] + "\t" + config)) jobs.push_back({p, s});
    }
  }
  return jobs;
}

// Appends each record as it lands so an interrupted run can resume.
class Appender {
 public:
  explicit Appender(const fs::path& path) : out_(path, std::ios::binary | std::ios::app) {
    if (!out_) throw IoError("cannot append to " + path.string());
  }
  void operator()(const Json& j) {
    out_ << record_line(j);
    out_.flush();
  }

 private:
  std::ofstream out_;
};

template <class Run>
RunSummary run_resumable(const ExperimentManifest& m, const fs::path& results, bool closed_loop, const Run& run) {
  m.validate();
  for (const auto& spec : m.planners) make_planner(spec);  // reject bad specs before any work
  if (!results.parent_path().empty()) make_dir(results.parent_path());
  std::vector<Json> records;
  std::error_code ec;
  if (fs::exists(results, ec)) records = parse_results(results, true);
  RunSummary summary;
  summary.skipped = records.size();
  const auto jobs = pending_jobs(m, records, closed_loop);
  if (!jobs.empty()) {
    Appender app(results);
    RecordSink sink = [&app](const Json& j) { app(j); };
    auto fresh = run(jobs, sink);
    summary.computed = fresh.size();
    for (auto& r : fresh) records.push_back(std::move(r));
  }
  double inferences = 0.0;
  for (const auto& r : records) {
    if (r.value("status", "") != "ok") ++summary.failed;
    inferences += r.value("inference_count", 0);
  }
  summary.records = records.size();
  summary.mean_inference_count = records.empty() ? 0.0 : inferences / static_cast<double>(records.size());
  write_results(results, std::move(records));
  return summary;
}

std::vector<std::size_t> scenes_in(const std::vector<PairJob>& jobs) {
  std::set<std::size_t> s;
  for (const auto& j : jobs) s.insert(j.scene);
  return {s.begin(), s.end()};
}

}  // namespace

std::vector<Json> read_results(const fs::path& path) { return parse_results(path, false); }

void write_results(const fs::path& path, std::vector<Json> records) {
  std::vector<std::pair<std::string, std::size_t>> order;
  order.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) order.emplace_back(record_key(records[i]), i);
  std::sort(order.begin(), order.end());
  std::string text;
  for (const auto& [key, i] : order) text += record_line(records[i]);
  fs::path tmp = path;
  tmp += ".tmp";
  write_text_file(tmp, text);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot replace " + path.string() + ": " + ec.message());
}

RunSummary cmd_evaluate(const ExperimentManifest& m, const fs::path& results, int workers) {
  return run_resumable(m, results, false, [&](const std::vector<PairJob>& jobs, const RecordSink& sink) {
    auto loaded = load_scenes(m, true);
    const auto needed = scenes_in(jobs);
    std::vector<std::unique_ptr<PreparedScene>> prepared(loaded.size());
    std::exception_ptr error;
#pragma omp parallel for schedule(dynamic) num_threads(thread_count(workers))
    for (std::size_t k = 0; k < needed.size(); ++k) {
      const std::size_t i = needed[k];
      try {
        prepared[i] = std::make_unique<PreparedScene>(loaded[i].scenario, &*loaded[i].set);
      } catch (...) {
#pragma omp critical(pseudosim_prepare)
        if (!error) error = std::current_exception();
      }
    }
    if (error) std::rethrow_exception(error);
    std::vector<const PreparedScene*> scenes;
    for (const auto& p : prepared) scenes.push_back(p.get());
    return evaluate_pseudo_parallel(m, scenes, jobs, workers, sink);
  });
}

RunSummary cmd_closed_loop(const ExperimentManifest& m, const fs::path& results, int workers) {
  return run_resumable(m, results, true, [&](const std::vector<PairJob>& jobs, const RecordSink& sink) {
    auto loaded = load_scenes(m, false);
    const auto needed = scenes_in(jobs);
    std::vector<std::unique_ptr<SceneContext>> contexts(loaded.size());
    std::exception_ptr error;
#pragma omp parallel for schedule(dynamic) num_threads(thread_count(workers))
    for (std::size_t k = 0; k < needed.size(); ++k) {
      const std::size_t i = needed[k];
      try {
        contexts[i] = std::make_unique<SceneContext>(loaded[i].scenario, kClosedLoopTicks);
      } catch (...) {
#pragma omp critical(pseudosim_prepare)
        if (!error) error = std::current_exception();
      }
    }
    if (error) std::rethrow_exception(error);
    std::vector<const SceneContext*> scenes;
    for (const auto& c : contexts) scenes.push_back(c.get());
    return evaluate_closed_loop_parallel(m, scenes, jobs, workers, sink);
  });
}

// ---- correlation ----

Correlation correlation(const std::vector<double>& xs, const std::vector<double>& ys) {
  Correlation c;
  c.pearson = pearson_r(xs, ys);
  c.spearman = spearman_rho(xs, ys);
  c.r_squared = c.pearson * c.pearson;
  c.points = xs.size();
  return c;
}

namespace {

using Grid = std::map<std::pair<std::string, std::string>, const Json*>;

Grid index_records(const std::vector<Json>& records, const std::string& kind, Json* settings) {
  Grid grid;
  std::optional<std::string> settings_text;
  for (const auto& r : records) {
    if (r.value("kind", "") != kind) {
      throw GridMismatch("expected " + kind + " records, found '" + r.value("kind", "") + "'");
    }
    const auto key = std::make_pair(r.at("planner").get<std::string>(), r.at("scenario").get<std::string>());
    if (!grid.emplace(key, &r).second) {
      throw GridMismatch("two " + kind + " records for (" + key.first + ", " + key.second +
                         "); the file mixes configurations");
    }
    if (settings != nullptr && r.contains("settings")) {
      const std::string text = r.at("settings").dump();
      if (settings_text && *settings_text != text) throw GridMismatch(kind + " records use different settings");
      if (!settings_text) {
        settings_text = text;
        *settings = r.at("settings");
      }
    }
  }
  return grid;
}

bool ok(const Json& r) { return r.value("status", "") == "ok"; }

}  // namespace

CorrelationReport correlate(const std::vector<Json>& pseudo, const std::vector<Json>& closed_loop) {
  CorrelationReport out;
  const Grid pg = index_records(pseudo, "pseudo", &out.settings);
  const Grid cg = index_records(closed_loop, "closed_loop", nullptr);
  std::set<std::string> planners, scenarios;
  for (const auto& [key, r] : pg) {
    planners.insert(key.first);
    scenarios.insert(key.second);
  }
  for (const auto& [key, r] : pg) {
    if (!cg.count(key)) throw GridMismatch("no closed-loop record for (" + key.first + ", " + key.second + ")");
  }
  for (const auto& [key, r] : cg) {
    if (!pg.count(key)) throw GridMismatch("no pseudo record for (" + key.first + ", " + key.second + ")");
  }
  if (pg.size() != planners.size() * scenarios.size()) {
    throw GridMismatch("planners were not all evaluated on the same scenarios");
  }

  std::vector<double> pseudo_means, stage1_means, cls_means;
  for (const auto& planner : planners) {
    PlannerPoint p;
    p.planner = planner;
    for (const auto& scenario : scenarios) {
      const Json& pr = *pg.at({planner, scenario});
      const Json& cr = *cg.at({planner, scenario});
      if (ok(pr)) {
        p.pseudo += pr.at("epdms").get<double>();
        p.stage1 += pr.at("stage1").at("epdms").get<double>();
      } else {
        ++p.failed_pseudo;
      }
      if (ok(cr)) {
        p.closed_loop += cr.at("cls").get<double>();
      } else {
        ++p.failed_closed_loop;
      }
      ++p.scenes;
    }
    const double n = static_cast<double>(p.scenes);
    p.pseudo /= n;
    p.stage1 /= n;
    p.closed_loop /= n;
    pseudo_means.push_back(p.pseudo);
    stage1_means.push_back(p.stage1);
    cls_means.push_back(p.closed_loop);
    out.points.push_back(p);
  }
  out.pseudo = correlation(pseudo_means, cls_means);
  out.stage1 = correlation(stage1_means, cls_means);

  double pi = 0.0, ci = 0.0;
  for (const auto& [key, r] : pg) {
    const double c = r->at("inference_count").get<double>();
    pi += c;
    out.max_pseudo_inferences = std::max(out.max_pseudo_inferences, c);
  }
  for (const auto& [key, r] : cg) ci += r->at("inference_count").get<double>();
  out.mean_pseudo_inferences = pi / static_cast<double>(pg.size());
  out.mean_closed_loop_inferences = ci / static_cast<double>(cg.size());
  return out;
}

namespace {

Json to_json(const Correlation& c) {
  return Json{{"pearson_r", c.pearson}, {"spearman_rho", c.spearman}, {"r_squared", c.r_squared}, {"points", c.points}};
}

}  // namespace

Json to_json(const CorrelationReport& r) {
  Json points = Json::array();
  for (const auto& p : r.points) {
    points.push_back(Json{{"planner", p.planner},
                          {"pseudo", p.pseudo},
                          {"stage1", p.stage1},
                          {"closed_loop", p.closed_loop},
                          {"scenes", p.scenes},
                          {"failed_pseudo", p.failed_pseudo},
                          {"failed_closed_loop", p.failed_closed_loop}});
  }
  const double ratio = r.mean_pseudo_inferences > 0.0 ? r.mean_closed_loop_inferences / r.mean_pseudo_inferences : 0.0;
  return Json{{"settings", r.settings},
              {"two_stage", to_json(r.pseudo)},
              {"stage1_only", to_json(r.stage1)},
              {"inferences",
               {{"pseudo_mean", r.mean_pseudo_inferences},
                {"pseudo_max", r.max_pseudo_inferences},
                {"closed_loop_mean", r.mean_closed_loop_inferences},
                {"ratio", ratio}}},
              {"points", std::move(points)}};
}

std::string scatter_csv(const CorrelationReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "planner,pseudo,stage1,closed_loop\n";
  for (const auto& p : r.points) out << p.planner << "," << p.pseudo << "," << p.stage1 << "," << p.closed_loop << "\n";
  return out.str();
}

std::string ablation_table(const std::vector<CorrelationReport>& reports) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-8s %-8s %-9s %-7s %-7s %8s %8s %8s\n", "sigma2", "density", "weighting", "mode",
                "metrics", "r", "rho", "r_s1");
  out << line;
  for (const auto& r : reports) {
    const Json& s = r.settings;
    auto text = [&](const char* k) { return s.contains(k) ? s.at(k).dump() : std::string("-"); };
    auto str = [&](const char* k) { return s.contains(k) ? s.at(k).get<std::string>() : std::string("-"); };
    std::snprintf(line, sizeof line, "%-8s %-8s %-9s %-7s %-7s %8.4f %8.4f %8.4f\n", text("sigma2").c_str(),
                  text("density").c_str(), str("weighting").c_str(), str("stage_mode").c_str(), str("metrics").c_str(),
                  r.pseudo.pearson, r.pseudo.spearman, r.stage1.pearson);
    out << line;
  }
  return out.str();
}

// ---- report ----

namespace {

double recompute_error(const Json& r) {
  const Json& s = r.at("settings");
  const MetricWeights w = s.at("metrics").get<std::string>() == "reduced" ? MetricWeights::reduced() : MetricWeights::full();
  const StageMode mode = stage_mode_from_string(s.at("stage_mode").get<std::string>());
  double err = 0.0;
  auto track = [&err](double stored, double recomputed) { err = std::max(err, std::abs(stored - recomputed)); };

  const SubscoreVector f1 = subscores_from_json(r.at("stage1").at("filtered"));
  const double s1 = compose_epdms(f1, w);
  track(r.at("stage1").at("epdms").get<double>(), s1);
  double s2 = 0.0, pen2 = 0.0, avg2 = 0.0;
  for (const auto& o : r.at("stage2").at("observations")) {
    if (!o.contains("filtered")) continue;
    const SubscoreVector f = subscores_from_json(o.at("filtered"));
    const double wt = o.at("weight").get<double>();
    const double e = compose_epdms(f, w);
    track(o.at("epdms").get<double>(), e);
    s2 += wt * e;
    pen2 += wt * penalty_product(f, w);
    avg2 += wt * weighted_average(f, w);
  }
  track(r.at("stage2").at("epdms").get<double>(), s2);
  double combined = 0.0;
  switch (mode) {
    case StageMode::Product: combined = s1 * s2; break;
    case StageMode::Mean: combined = 0.5 * (s1 + s2); break;
    case StageMode::Hybrid:
      combined = penalty_product(f1, w) * pen2 * 0.5 * (weighted_average(f1, w) + avg2);
      break;
  }
  track(r.at("epdms").get<double>(), combined);
  return err;
}

struct PlannerTotals {
  std::size_t records = 0;
  std::size_t failed = 0;
  SubscoreVector s1, s2;
  double epdms_s1 = 0.0, epdms_s2 = 0.0, epdms = 0.0;

  PlannerTotals() {
    for (Subscore m : kAllSubscores) {
      s1.set(m, 0.0);
      s2.set(m, 0.0);
    }
  }
};

}  // namespace

ReportTables make_report(const std::vector<Json>& pseudo) {
  if (pseudo.empty()) throw DegenerateData("results file holds no records");
  std::map<std::string, PlannerTotals> totals;
  double max_error = 0.0;
  for (const auto& r : pseudo) {
    if (r.value("kind", "") != "pseudo") throw SchemaError("report expects pseudo-simulation records");
    auto& t = totals[r.at("planner").get<std::string>()];
    ++t.records;
    if (!ok(r)) {
      ++t.failed;
      continue;
    }
    max_error = std::max(max_error, recompute_error(r));
    const SubscoreVector a = subscores_from_json(r.at("stage1").at("filtered"));
    const SubscoreVector b = subscores_from_json(r.at("stage2").at("subscores"));
    for (Subscore m : kAllSubscores) {
      t.s1.set(m, t.s1.get(m) + a.get(m));
      t.s2.set(m, t.s2.get(m) + b.get(m));
    }
    t.epdms_s1 += r.at("stage1").at("epdms").get<double>();
    t.epdms_s2 += r.at("stage2").at("epdms").get<double>();
    t.epdms += r.at("epdms").get<double>();
  }
  if (max_error > 1e-9) {
    throw ValidationError("stored scores disagree with their subscores by " + std::to_string(max_error));
  }

  struct Row {
    std::string metric, stage;
    std::vector<double> values;
  };
  std::vector<Row> rows;
  for (Subscore m : kAllSubscores) {
    rows.push_back({to_string(m), "S1", {}});
    rows.push_back({to_string(m), "S2", {}});
  }
  rows.push_back({"EPDMS", "S1", {}});
  rows.push_back({"EPDMS", "S2", {}});
  rows.push_back({"EPDMS", "", {}});

  ReportTables out;
  Json planners = Json::array();
  for (const auto& [id, t] : totals) {
    const std::size_t scored = t.records - t.failed;
    const double k = scored == 0 ? 0.0 : 1.0 / static_cast<double>(scored);
    const double n = 1.0 / static_cast<double>(t.records);
    std::size_t row = 0;
    Json s1 = Json::object(), s2 = Json::object();
    for (Subscore m : kAllSubscores) {
      rows[row++].values.push_back(t.s1.get(m) * k);
      rows[row++].values.push_back(t.s2.get(m) * k);
      s1[to_string(m)] = t.s1.get(m) * k;
      s2[to_string(m)] = t.s2.get(m) * k;
    }
    // failed pairs score 0, so EPDMS divides by every record
    rows[row++].values.push_back(t.epdms_s1 * n);
    rows[row++].values.push_back(t.epdms_s2 * n);
    rows[row++].values.push_back(t.epdms * n);
    s1["EPDMS"] = t.epdms_s1 * n;
    s2["EPDMS"] = t.epdms_s2 * n;
    planners.push_back(Json{{"planner", id},
                            {"records", t.records},
                            {"failed", t.failed},
                            {"stage1", std::move(s1)},
                            {"stage2", std::move(s2)},
                            {"epdms", t.epdms * n}});
  }
  out.summary = Json{{"planners", std::move(planners)}, {"recompute_max_error", max_error}};

  std::ostringstream csv;
  csv.precision(17);
  csv << "planner,metric,stage,value\n";
  std::size_t col = 0;
  for (const auto& [id, t] : totals) {
    for (const auto& r : rows) csv << id << "," << r.metric << "," << r.stage << "," << r.values[col] << "\n";
    ++col;
  }
  out.csv = csv.str();

  std::vector<std::size_t> widths;
  std::ostringstream text;
  char cell[64];
  std::snprintf(cell, sizeof cell, "%-6s %-5s", "metric", "stage");
  text << cell;
  for (const auto& [id, t] : totals) {
    widths.push_back(std::max<std::size_t>(id.size(), 6));
    text << "  " << std::string(widths.back() - id.size(), ' ') << id;
  }
  text << "\n";
  for (const auto& r : rows) {
    std::snprintf(cell, sizeof cell, "%-6s %-5s", r.metric.c_str(), r.stage.c_str());
    text << cell;
    for (std::size_t c = 0; c < r.values.size(); ++c) {
      std::snprintf(cell, sizeof cell, "%*.1f", static_cast<int>(widths[c]), 100.0 * r.values[c]);
      text << "  " << cell;
    }
    text << "\n";
  }
  out.text = text.str();
  return out;
}

}  // namespace pseudosim
