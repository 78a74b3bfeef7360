// Serial reference against the OpenMP evaluators on the same (planner, scene)
// jobs. Outputs must match byte for byte; only the wall time may differ.
#include <chrono>
#include <cstdio>
#include <thread>

#include "CLI11.hpp"

#include "pseudosim/harness.hpp"
#include "pseudosim/planners.hpp"

using namespace pseudosim;

namespace {

template <class Fn>
double seconds(Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string joined(const std::vector<Json>& records) {
  std::string s;
  for (const auto& r : records) s += r.dump() + "\n";
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Serial vs parallel evaluation benchmark"};
  std::size_t scenes = 8;
  std::size_t planners = 6;
  int workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  std::string dir = (fs::temp_directory_path() / "pseudosim_bench").string();
  app.add_option("--scenes", scenes, "generated scenes (kept ones are evaluated)");
  app.add_option("--planners", planners, "leading members of the default zoo");
  app.add_option("--workers", workers, "threads for the parallel runs")->check(CLI::PositiveNumber);
  app.add_option("--dir", dir, "scratch directory");
  CLI11_PARSE(app, argc, argv);

  fs::remove_all(dir);
  GenerateOptions gen;
  gen.count = scenes;
  GenerateSummary summary;
  const double t_gen_serial = seconds([&] { summary = cmd_generate(gen, fs::path(dir) / "serial"); });
  gen.workers = workers;
  const double t_gen_parallel = seconds([&] { cmd_generate(gen, fs::path(dir) / "parallel"); });

  ExperimentManifest m = load_manifest(fs::path(dir) / "serial" / "manifest.json");
  if (planners < m.planners.size()) m.planners.resize(planners);
  const auto loaded = load_scenes(m, true);
  std::vector<std::unique_ptr<PreparedScene>> prepared;
  std::vector<std::unique_ptr<SceneContext>> contexts;
  std::vector<const PreparedScene*> ps;
  std::vector<const SceneContext*> cs;
  for (const auto& s : loaded) {
    prepared.push_back(std::make_unique<PreparedScene>(s.scenario, &*s.set));
    contexts.push_back(std::make_unique<SceneContext>(s.scenario, kClosedLoopTicks));
    ps.push_back(prepared.back().get());
    cs.push_back(contexts.back().get());
  }
  std::vector<PairJob> jobs;
  for (std::size_t p = 0; p < m.planners.size(); ++p) {
    for (std::size_t s = 0; s < loaded.size(); ++s) jobs.push_back({p, s});
  }

  std::vector<Json> a, b, c, d;
  const double t_ps = seconds([&] { a = evaluate_pseudo_serial(m, ps, jobs); });
  const double t_pp = seconds([&] { b = evaluate_pseudo_parallel(m, ps, jobs, workers); });
  const double t_cs = seconds([&] { c = evaluate_closed_loop_serial(m, cs, jobs); });
  const double t_cp = seconds([&] { d = evaluate_closed_loop_parallel(m, cs, jobs, workers); });

  const bool same = joined(a) == joined(b) && joined(c) == joined(d);
  std::printf("%zu scenes kept of %zu, %zu planners, %zu jobs, %d workers (%u hardware threads)\n", loaded.size(),
              summary.generated, m.planners.size(), jobs.size(), workers, std::thread::hardware_concurrency());
  std::printf("%-22s %10s %10s %8s\n", "kernel", "serial s", "omp s", "speedup");
  auto row = [](const char* name, double s, double p) { std::printf("%-22s %10.3f %10.3f %7.2fx\n", name, s, p, s / p); };
  row("generate + stage-2", t_gen_serial, t_gen_parallel);
  row("pseudo-simulation", t_ps, t_pp);
  row("closed loop", t_cs, t_cp);
  std::printf("outputs identical: %s\n", same ? "yes" : "NO");
  return same ? 0 : 1;
}
