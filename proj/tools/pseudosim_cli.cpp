#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "pseudosim/errors.hpp"
#include "pseudosim/harness.hpp"

using namespace pseudosim;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitFailures = 3;

struct EvalOverrides {
  std::optional<double> sigma2;
  std::optional<std::string> stage_mode;
  std::optional<std::string> weighting;
  std::optional<int> knn_k;
  std::optional<double> density;
  std::optional<std::string> metrics;
};

void add_eval_flags(CLI::App* cmd, EvalOverrides& o) {
  cmd->add_option("--sigma2", o.sigma2, "Gaussian weighting variance in m^2 (default 0.1)");
  cmd->add_option("--stage-mode", o.stage_mode, "product | mean | hybrid (default product)")
      ->check(CLI::IsMember({"product", "mean", "hybrid"}));
  cmd->add_option("--weighting", o.weighting, "gaussian | uniform | knn (default gaussian)")
      ->check(CLI::IsMember({"gaussian", "uniform", "knn"}));
  cmd->add_option("--knn-k", o.knn_k, "neighbours for knn weighting");
  cmd->add_option("--density", o.density, "fraction of stage-2 observations kept (default 1.0)");
}

void add_metrics_flag(CLI::App* cmd, EvalOverrides& o) {
  cmd->add_option("--metrics", o.metrics, "full | reduced")->check(CLI::IsMember({"full", "reduced"}));
}

ExperimentManifest load_with_overrides(const std::string& path, const EvalOverrides& o) {
  ExperimentManifest m = load_manifest(path);
  if (o.sigma2) m.aggregation.sigma2 = *o.sigma2;
  if (o.stage_mode) m.aggregation.stage_mode = stage_mode_from_string(*o.stage_mode);
  if (o.weighting) m.aggregation.weighting = weighting_from_string(*o.weighting);
  if (o.knn_k) m.aggregation.knn_k = *o.knn_k;
  if (o.density) m.density = *o.density;
  if (o.metrics) m.reduced_metrics = *o.metrics == "reduced";
  m.validate();
  return m;
}

void print_generate(const GenerateSummary& s) {
  std::printf("scenarios: %zu generated, %zu failed after retries (%zu retries)\n", s.generated, s.failures.size(),
              s.retries);
  std::printf("stage-2 sets: %zu kept, %zu discarded (< %zu survivors), %zu observations\n", s.kept.size(),
              s.discarded, kMinObservations, s.observations);
  for (const auto& f : s.failures) std::printf("  failed: %s\n", f.c_str());
}

int finish_run(const RunSummary& s, const fs::path& results, double max_failure_rate) {
  std::printf("%s: %zu records (%zu computed, %zu resumed), %zu failed, mean inference count %.2f\n",
              results.string().c_str(), s.records, s.computed, s.skipped, s.failed, s.mean_inference_count);
  if (s.failure_rate() > max_failure_rate) {
    std::fprintf(stderr, "failure rate %.3f exceeds %.3f\n", s.failure_rate(), max_failure_rate);
    return kExitFailures;
  }
  return 0;
}

void write_file(const fs::path& path, const std::string& text) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  write_text_file(path, text);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage pseudo-simulation planner evaluation"};
  app.require_subcommand(1);
  app.fallthrough();

  std::uint64_t seed = 1;
  int workers = 1;
  std::string out;
  app.add_option("--seed", seed, "generation seed");
  app.add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", out, "output directory or file");

  GenerateOptions gen;
  std::string gen_config;
  auto* generate = app.add_subcommand("generate", "generate scenarios and their stage-2 sets");
  generate->add_option("--count", gen.count, "number of scenarios");
  generate->add_option("--traffic-density", gen.traffic_density, "agent density in [0, 1]");
  generate->add_option("--speed", gen.speed, "route speed limit in m/s");
  generate->add_option("--max-attempts", gen.max_attempts, "generation attempts per scene");
  generate->add_option("--config", gen_config, "JSON document with the same fields (flags win)");

  std::string scenario_dir;
  auto* stage2 = app.add_subcommand("stage2", "rebuild stage-2 sets for a scenario directory");
  stage2->add_option("--scenarios", scenario_dir, "scenario directory")->required();

  std::string manifest_path;
  double max_failure_rate = 0.25;
  EvalOverrides eval_o, cl_o;
  auto* evaluate = app.add_subcommand("evaluate", "two-stage pseudo-simulation over the manifest grid");
  evaluate->add_option("--manifest", manifest_path, "experiment manifest")->required();
  evaluate->add_option("--max-failure-rate", max_failure_rate, "exit 3 above this fraction of failed pairs");
  add_eval_flags(evaluate, eval_o);
  add_metrics_flag(evaluate, eval_o);

  auto* closed = app.add_subcommand("closed-loop", "8 s closed-loop runs over the manifest grid");
  closed->add_option("--manifest", manifest_path, "experiment manifest")->required();
  closed->add_option("--max-failure-rate", max_failure_rate, "exit 3 above this fraction of failed pairs");
  add_metrics_flag(closed, cl_o);

  std::vector<std::string> pseudo_files;
  std::string closed_file;
  auto* corr = app.add_subcommand("correlate", "planner-level correlation of pseudo and closed-loop scores");
  corr->add_option("--pseudo", pseudo_files, "pseudo-simulation results (one per configuration)")->required();
  corr->add_option("--closed-loop", closed_file, "closed-loop results")->required();

  std::string results_file, scatter_closed;
  auto* report = app.add_subcommand("report", "per-planner subscore table split by stage");
  report->add_option("--results", results_file, "pseudo-simulation results")->required();
  report->add_option("--closed-loop", scatter_closed, "also write scatter data against these closed-loop results");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*generate) {
      if (!gen_config.empty()) {
        // flags given explicitly override the document
        const Json j = read_json_file(gen_config);
        expect_keys(j, {}, {"count", "seed", "traffic_density", "speed", "max_attempts"}, "generator config");
        if (j.contains("count") && generate->count("--count") == 0) gen.count = j["count"].get<std::size_t>();
        if (j.contains("seed") && app.count("--seed") == 0) seed = j["seed"].get<std::uint64_t>();
        if (j.contains("traffic_density") && generate->count("--traffic-density") == 0)
          gen.traffic_density = j["traffic_density"].get<double>();
        if (j.contains("speed") && generate->count("--speed") == 0) gen.speed = j["speed"].get<double>();
        if (j.contains("max_attempts") && generate->count("--max-attempts") == 0)
          gen.max_attempts = j["max_attempts"].get<int>();
      }
      gen.seed = seed;
      gen.workers = workers;
      const auto s = cmd_generate(gen, out.empty() ? fs::path("run") : fs::path(out));
      print_generate(s);
      if (s.kept.empty()) {
        std::fprintf(stderr, "no scene kept a stage-2 set\n");
        return kExitData;
      }
      return 0;
    }
    if (*stage2) {
      const fs::path dir = out.empty() ? fs::path(scenario_dir).parent_path() / "stage2" : fs::path(out);
      print_generate(cmd_stage2(scenario_dir, dir, workers));
      return 0;
    }
    if (*evaluate) {
      const auto m = load_with_overrides(manifest_path, eval_o);
      const fs::path results = out.empty() ? m.output_dir / "pseudo.jsonl" : fs::path(out);
      return finish_run(cmd_evaluate(m, results, workers), results, max_failure_rate);
    }
    if (*closed) {
      const auto m = load_with_overrides(manifest_path, cl_o);
      const fs::path results = out.empty() ? m.output_dir / "closed_loop.jsonl" : fs::path(out);
      return finish_run(cmd_closed_loop(m, results, workers), results, max_failure_rate);
    }
    if (*corr) {
      const auto cl = read_results(closed_file);
      std::vector<CorrelationReport> reports;
      for (const auto& f : pseudo_files) reports.push_back(correlate(read_results(f), cl));
      for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto& r = reports[i];
        std::printf("%s\n", pseudo_files[i].c_str());
        for (const auto& p : r.points) {
          std::printf("  %-18s pseudo %.4f  stage1 %.4f  closed-loop %.4f\n", p.planner.c_str(), p.pseudo, p.stage1,
                      p.closed_loop);
        }
        std::printf("  two-stage   r %.4f  rho %.4f  R2 %.4f  (n=%zu)\n", r.pseudo.pearson, r.pseudo.spearman,
                    r.pseudo.r_squared, r.pseudo.points);
        std::printf("  stage1-only r %.4f  rho %.4f  R2 %.4f\n", r.stage1.pearson, r.stage1.spearman,
                    r.stage1.r_squared);
        std::printf("  inferences per scene: pseudo %.2f (max %.0f), closed-loop %.2f\n", r.mean_pseudo_inferences,
                    r.max_pseudo_inferences, r.mean_closed_loop_inferences);
      }
      if (!out.empty()) {
        const fs::path dir(out);
        for (std::size_t i = 0; i < reports.size(); ++i) {
          const std::string stem = fs::path(pseudo_files[i]).stem().string();
          write_file(dir / (stem + ".correlation.json"), to_json(reports[i]).dump(2) + "\n");
          write_file(dir / (stem + ".scatter.csv"), scatter_csv(reports[i]));
        }
        if (reports.size() > 1) write_file(dir / "ablation.txt", ablation_table(reports));
      }
      if (reports.size() > 1) std::printf("\n%s", ablation_table(reports).c_str());
      return 0;
    }
    if (*report) {
      const auto records = read_results(results_file);
      const auto t = make_report(records);
      std::printf("%s", t.text.c_str());
      if (!out.empty()) {
        const fs::path dir(out);
        write_file(dir / "report.csv", t.csv);
        write_file(dir / "report.txt", t.text);
        write_file(dir / "summary.json", t.summary.dump(2) + "\n");
        if (!scatter_closed.empty()) {
          write_file(dir / "scatter.csv", scatter_csv(correlate(records, read_results(scatter_closed))));
        }
      }
      return 0;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kExitUsage;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error: malformed document: %s\n", e.what());
    return kExitData;
  }
  return kExitUsage;
}
