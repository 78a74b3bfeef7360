#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"

#include "pseudosim/errors.hpp"
#include "pseudosim/evaluator.hpp"
#include "pseudosim/generator.hpp"

using namespace pseudosim;

namespace {

// Replays the scenario's expert from the current tick, in the ego frame.
class ExpertPlanner : public Planner {
 public:
  explicit ExpertPlanner(const Scenario& sc) : sc_(&sc) {}
  const std::string& id() const override { return id_; }
  Trajectory plan(const PlannerInput&, const PlanContext& ctx) override {
    const auto& wps = sc_->expert_trajectory.waypoints;
    std::vector<Pose2D> poses;
    for (long k = ctx.tick + 1; k <= ctx.tick + kPlanWaypoints; ++k) {
      poses.push_back(to_local(ctx.ego_world, wps.at(static_cast<std::size_t>(k)).pose));
    }
    return local_trajectory(poses);
  }
  std::unique_ptr<Planner> clone() const override { return std::make_unique<ExpertPlanner>(*this); }

 private:
  const Scenario* sc_;
  std::string id_ = "expert";
};

// Fails on the listed Stage-2 observation indices, otherwise delegates.
class FlakyPlanner : public Planner {
 public:
  FlakyPlanner(std::unique_ptr<Planner> base, std::set<std::size_t> fail) : base_(std::move(base)), fail_(std::move(fail)) {}
  const std::string& id() const override { return base_->id(); }
  Trajectory plan(const PlannerInput& in, const PlanContext& ctx) override {
    const auto hash = ctx.scenario_id.find('#');
    if (hash != std::string::npos && fail_.count(std::stoul(ctx.scenario_id.substr(hash + 1))) > 0) {
      throw ProtocolError("scripted failure");
    }
    return base_->plan(in, ctx);
  }
  std::unique_ptr<Planner> clone() const override {
    return std::make_unique<FlakyPlanner>(base_->clone(), fail_);
  }

 private:
  std::unique_ptr<Planner> base_;
  std::set<std::size_t> fail_;
};

std::unique_ptr<Planner> pdm() { return std::make_unique<PdmClosedPlanner>("pdm", PdmParams{}); }
std::unique_ptr<Planner> stopper() {
  return std::make_unique<ConstantKinematicsPlanner>("stop", ConstantKinematicsParams{0.0, 0.0});
}
std::unique_ptr<Planner> cv() {
  return std::make_unique<ConstantKinematicsPlanner>("cv", ConstantKinematicsParams{1.0, 0.0});
}

MapModel two_lane_map() {
  MapModel m;
  m.drivable_areas.push_back({"road", Polygon{{{-100.0, -3.5}, {400.0, -3.5}, {400.0, 5.25}, {-100.0, 5.25}}}});
  std::vector<Vec2> a, b;
  for (double x = -100.0; x <= 400.0; x += 10.0) {
    a.push_back({x, 0.0});
    b.push_back({x, 3.5});
  }
  m.lanes.push_back({"fwd", Polyline(a), 3.5, 15.0, {}});
  m.lanes.push_back({"fwd2", Polyline(b), 3.5, 15.0, {}});
  m.route = {"fwd"};
  m.rebuild();
  return m;
}

Scenario open_road() {
  Scenario sc = fixtures::straight_scenario();
  sc.map = two_lane_map();
  return sc;
}

Stage2Set open_road_set(const Scenario& sc) {
  TrajectoryBank bank;
  for (int i = -5; i <= 5; ++i) {
    std::vector<EgoState> states;
    for (int k = -15; k <= 80; ++k) states.push_back({{10.0 * tick_time(k), 0.5 * i, 0.0}, 10.0, 0.0, tick_time(k)});
    bank.add("drive" + std::to_string(i), std::move(states), sc.map.route_line());
  }
  return build_stage2_set(sc, bank);
}

// Straight for 120 m, a 40 m radius left quarter turn, then straight north.
Scenario curve_scenario() {
  std::vector<Vec2> pts;
  for (double x = -100.0; x < 20.0; x += 5.0) pts.push_back({x, 0.0});
  for (int i = 0; i <= 20; ++i) {
    const double phi = 0.5 * kPi * i / 20.0;
    pts.push_back({20.0 + 40.0 * std::sin(phi), 40.0 - 40.0 * std::cos(phi)});
  }
  for (double y = 45.0; y <= 200.0; y += 5.0) pts.push_back({60.0, y});
  const Polyline line(pts);
  std::vector<Vec2> left, right;
  for (double s = 0.0; s <= line.length(); s += 2.0) {
    left.push_back(line.embed(s, 3.0));
    right.push_back(line.embed(s, -3.0));
  }
  left.push_back(line.points().back() + Vec2{-3.0, 0.0});
  right.push_back(line.points().back() + Vec2{3.0, 0.0});
  std::vector<Vec2> ring(right.begin(), right.end());
  ring.insert(ring.end(), left.rbegin(), left.rend());

  Scenario sc;
  sc.id = "curve";
  sc.map.drivable_areas.push_back({"road", Polygon{ring}});
  sc.map.lanes.push_back({"lane", line, 3.5, 12.0, {}});
  sc.map.route = {"lane"};
  sc.map.rebuild();
  for (int k = -15; k <= 0; ++k) sc.ego_history.push_back({{10.0 * tick_time(k), 0.0, 0.0}, 10.0, 0.0, tick_time(k)});
  sc.expert_trajectory.frame = Frame::World;
  for (int k = 0; k <= 125; ++k) {
    const double s = 100.0 + 10.0 * tick_time(k);
    const Vec2 p = line.point_at(s);
    sc.expert_trajectory.waypoints.push_back({{p.x, p.y, line.heading_at(s)}, tick_time(k)});
  }
  sc.rng_seed = 1;
  return sc;
}

StageScore scored(double s, double penalty = 1.0) { return {{}, {}, s, penalty, s / penalty}; }

StageTwoResult synthetic(const std::vector<Vec2>& starts, const std::vector<double>& scores) {
  StageTwoResult r;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    ObservationResult o;
    o.index = i;
    o.start = starts[i];
    o.score = scored(scores[i]);
    r.observations.push_back(o);
  }
  return r;
}

}  // namespace

TEST_CASE("gaussian_weights: worked values and symmetry") {
  const auto w = gaussian_weights({{0.0, 0.0}, {1.0, 0.0}}, {0.0, 0.0}, 0.1);
  const double e5 = std::exp(-5.0);
  CHECK(w[0] == doctest::Approx(1.0 / (1.0 + e5)).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(e5 / (1.0 + e5)).epsilon(1e-12));
  CHECK(w[0] == doctest::Approx(0.99331).epsilon(1e-5));
  CHECK(w[1] == doctest::Approx(0.00669).epsilon(1e-3));

  const auto ring = gaussian_weights({{1, 0}, {0, 1}, {-1, 0}, {0, -1}}, {0, 0}, 0.1);
  for (double x : ring) CHECK(x == doctest::Approx(0.25));
  CHECK(gaussian_weights({{7, 7}}, {0, 0}, 0.1) == std::vector<double>{1.0});

  // far from every point the raw kernel underflows; the minimum shift keeps the ratios
  const auto far = gaussian_weights({{1000.0, 0.0}, {1001.0, 0.0}}, {0, 0}, 0.1);
  CHECK(far[0] + far[1] == doctest::Approx(1.0));
  CHECK(far[0] > 0.99);
}

TEST_CASE("gaussian_weights: normalised for random sets") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Vec2> pts(1 + trial % 20);
    for (auto& p : pts) p = {u(rng), u(rng)};
    for (double s2 : {1e-4, 0.1, 1.0, 1e6}) {
      const auto w = gaussian_weights(pts, {u(rng), u(rng)}, s2);
      double sum = 0.0;
      for (double x : w) {
        REQUIRE(x >= 0.0);
        sum += x;
      }
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("weigh_stage2: kernel limits, weighting modes and failures") {
  const std::vector<Vec2> starts{{0.0, 0.0}, {0.5, 0.0}, {1.0, 0.0}, {0.0, 1.0}, {2.0, 2.0}};
  const std::vector<double> scores{1.0, 0.0, 0.0, 0.2, 0.4};
  const Vec2 endpoint{0.1, 0.0};
  AggregationConfig cfg;

  StageTwoResult r = synthetic(starts, {1, 1, 1, 1, 1});
  for (Weighting w : {Weighting::Gaussian, Weighting::Uniform, Weighting::Knn}) {
    cfg.weighting = w;
    weigh_stage2(r, endpoint, cfg);
    CHECK(r.s2 == doctest::Approx(1.0));
  }

  cfg = {};
  cfg.sigma2 = 1e-4;
  r = synthetic(starts, scores);
  weigh_stage2(r, endpoint, cfg);
  CHECK(r.s2 == doctest::Approx(1.0).epsilon(1e-9));
  cfg.sigma2 = 1e6;
  weigh_stage2(r, endpoint, cfg);
  CHECK(std::abs(r.s2 - 0.32) < 1e-6);

  cfg = {};
  cfg.weighting = Weighting::Uniform;
  weigh_stage2(r, endpoint, cfg);
  CHECK(r.s2 == doctest::Approx(0.32));
  cfg.weighting = Weighting::Knn;
  cfg.knn_k = 2;
  weigh_stage2(r, endpoint, cfg);
  CHECK(r.s2 == doctest::Approx(0.5));

  // failed observations drop out and the rest renormalise
  cfg = {};
  r = synthetic(starts, scores);
  r.observations[0].failed = true;
  weigh_stage2(r, endpoint, cfg);
  CHECK(r.observations[0].weight == 0.0);
  double sum = 0.0;
  for (const auto& o : r.observations) sum += o.weight;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.s2 < 0.2);
  for (auto& o : r.observations) o.failed = true;
  CHECK_THROWS_AS(weigh_stage2(r, endpoint, cfg), StageError);
}

TEST_CASE("weigh_stage2: raising one observation never lowers s2") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-2.0, 2.0), s(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Vec2> starts(8);
    std::vector<double> scores(8);
    for (std::size_t i = 0; i < 8; ++i) {
      starts[i] = {u(rng), u(rng)};
      scores[i] = s(rng);
    }
    for (Weighting w : {Weighting::Gaussian, Weighting::Uniform, Weighting::Knn}) {
      AggregationConfig cfg;
      cfg.weighting = w;
      StageTwoResult base = synthetic(starts, scores);
      weigh_stage2(base, {0.0, 0.0}, cfg);
      auto up = scores;
      const std::size_t i = static_cast<std::size_t>(trial) % 8;
      up[i] = std::min(1.0, up[i] + 0.3);
      StageTwoResult raised = synthetic(starts, up);
      weigh_stage2(raised, {0.0, 0.0}, cfg);
      CHECK(raised.s2 >= base.s2 - 1e-15);
      for (StageMode m : {StageMode::Product, StageMode::Mean}) {
        cfg.stage_mode = m;
        const StageScore s1 = scored(0.7);
        CHECK(aggregate(s1, raised, cfg) >= aggregate(s1, base, cfg) - 1e-15);
      }
    }
  }
}

TEST_CASE("aggregate: product, mean and hybrid") {
  AggregationConfig cfg;
  StageTwoResult s2;
  s2.s2 = 0.5;
  s2.penalty = 0.5;
  s2.average = 1.0;
  CHECK(aggregate(scored(0.8), s2, cfg) == doctest::Approx(0.40));
  CHECK(aggregate(scored(0.0), s2, cfg) == 0.0);
  cfg.stage_mode = StageMode::Mean;
  CHECK(aggregate(scored(0.8), s2, cfg) == doctest::Approx(0.65));
  cfg.stage_mode = StageMode::Hybrid;
  // penalties multiply, averages are averaged: 1.0 * 0.5 * (0.8 + 1.0) / 2
  CHECK(aggregate(scored(0.8), s2, cfg) == doctest::Approx(0.45));
  CHECK(aggregate(scored(0.4, 0.5), s2, cfg) == doctest::Approx(0.5 * 0.5 * 0.5 * (0.8 + 1.0)));

  AggregationConfig bad;
  bad.sigma2 = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = {};
  bad.knn_k = 0;
  CHECK_NOTHROW(bad.validate());  // k only matters for knn weighting
  bad.weighting = Weighting::Knn;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(stage_mode_from_string(to_string(StageMode::Hybrid)) == StageMode::Hybrid);
  CHECK(weighting_from_string(to_string(Weighting::Knn)) == Weighting::Knn);
  CHECK_THROWS_AS(stage_mode_from_string("geometric"), ConfigError);
}

TEST_CASE("run_stage1: privileged planner, expert replay and a stop request") {
  const Scenario sc = open_road();
  const SceneContext ctx(sc, kStageOneTicks);
  auto p = pdm();
  const auto good = run_stage1(ctx, *p, MetricWeights::full());
  CHECK(good.score.score >= 0.9);
  CHECK(distance(good.endpoint, sc.expert_trajectory.waypoints[40].pose.position()) < 2.0);
  CHECK(good.endpoint == good.rollout.ego_states.back().pose.position());
  CHECK(good.rollout.ego_states.size() == 41);

  auto stop = stopper();
  const auto halted = run_stage1(ctx, *stop, MetricWeights::full());
  CHECK(halted.score.raw.ep < 0.3);
  CHECK(distance(halted.endpoint, sc.current_ego().pose.position()) < 15.0);

  for (Layout l : {Layout::Straight, Layout::Curve, Layout::Intersection, Layout::LaneMerge}) {
    const Scenario g = generate_scenario_with_retry({l, 0.5, 10.0, 4}, 10);
    const SceneContext gctx(g, kStageOneTicks);
    ExpertPlanner expert(g);
    const auto r = run_stage1(gctx, expert, MetricWeights::full());
    INFO(g.id);
    CHECK(r.score.raw.nc == gctx.human.nc);
    CHECK(r.score.raw.dac == gctx.human.dac);
    CHECK(r.score.raw.ddc == gctx.human.ddc);
    CHECK(r.score.raw.tlc == gctx.human.tlc);
    CHECK(r.score.filtered.in_range());
  }
}

TEST_CASE("run_pseudo_simulation: inference counts and determinism") {
  const Scenario sc = open_road();
  Stage2Set set = open_road_set(sc);
  REQUIRE(set.observations.size() >= 12);

  Stage2Set twelve = set;
  twelve.observations.resize(12);
  const PreparedScene scene12(sc, &twelve);
  auto p = pdm();
  const AggregationConfig cfg;
  const CombinedScore a = run_pseudo_simulation(scene12, *p, cfg);
  CHECK(a.inference_count == 13);
  CHECK(a.combined == a.stage1.score.score * a.stage2.s2);
  CHECK(a.combined >= 0.0);
  CHECK(a.combined <= 1.0);
  double sum = 0.0;
  for (const auto& o : a.stage2.observations) sum += o.weight;
  CHECK(std::abs(sum - 1.0) < 1e-9);

  const CombinedScore b = run_pseudo_simulation(scene12, *p, cfg);
  CHECK(b.combined == a.combined);
  CHECK(b.stage1.endpoint == a.stage1.endpoint);

  Stage2Set twenty = set;
  while (twenty.observations.size() < kMaxObservations) twenty.observations.push_back(set.observations.front());
  twenty.observations.resize(kMaxObservations);
  const PreparedScene scene20(sc, &twenty);
  auto cheap = cv();
  CHECK(run_pseudo_simulation(scene20, *cheap, cfg).inference_count == 21);
}

TEST_CASE("run_stage2: failed observations are excluded with renormalisation") {
  const Scenario sc = open_road();
  const Stage2Set set = open_road_set(sc);
  const PreparedScene scene(sc, &set);
  std::set<std::size_t> fail{set.observations[0].index, set.observations[2].index};
  FlakyPlanner flaky(cv(), fail);
  const auto r = run_pseudo_simulation(scene, flaky, AggregationConfig{});
  CHECK(r.inference_count == 1 + static_cast<int>(set.observations.size()));
  double sum = 0.0;
  int failed = 0;
  for (const auto& o : r.stage2.observations) {
    sum += o.weight;
    if (o.failed) {
      ++failed;
      CHECK(o.weight == 0.0);
      CHECK(o.error.find("scripted failure") != std::string::npos);
    }
  }
  CHECK(failed == 2);
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

  std::set<std::size_t> all;
  for (const auto& o : set.observations) all.insert(o.index);
  FlakyPlanner dead(cv(), all);
  CHECK_THROWS_AS(run_pseudo_simulation(scene, dead, AggregationConfig{}), StageError);
}

TEST_CASE("run_closed_loop: 80 inferences, privileged planner scores high") {
  const Scenario sc = open_road();
  const SceneContext ctx(sc, kClosedLoopTicks);
  auto p = pdm();
  const auto r = run_closed_loop(ctx, *p, MetricWeights::full());
  CHECK(r.inference_count == 80);
  CHECK(r.rollout.ego_states.size() == 81);
  CHECK(r.rollout.plans.size() == 80);
  CHECK(r.score.score >= 0.9);
}

TEST_CASE("run_closed_loop: constant velocity leaves the road in a curve") {
  const Scenario sc = curve_scenario();
  REQUIRE(validate_scenario(sc).empty());
  const SceneContext ctx(sc, kClosedLoopTicks);
  CHECK(ctx.human.dac == 1.0);
  auto p = cv();
  const auto r = run_closed_loop(ctx, *p, MetricWeights::full());
  CHECK(r.score.filtered.dac == 0.0);
  CHECK(r.score.score == 0.0);
  auto good = pdm();
  CHECK(run_closed_loop(ctx, *good, MetricWeights::full()).score.filtered.dac == 1.0);
}

TEST_CASE("PreparedScene contexts do not depend on the planner") {
  const Scenario sc = open_road();
  const Stage2Set set = open_road_set(sc);
  const PreparedScene a(sc, &set), b(sc, &set);
  CHECK(a.stage1.reference_progress == b.stage1.reference_progress);
  CHECK(a.stage1.human == b.stage1.human);
  REQUIRE(a.stage2.size() == set.observations.size());
  for (std::size_t i = 0; i < a.stage2.size(); ++i) CHECK(a.stage2[i]->reference_progress == b.stage2[i]->reference_progress);
  // only the weights differ between planners
  auto p = pdm();
  auto q = stopper();
  const auto rp = run_pseudo_simulation(a, *p, AggregationConfig{});
  const auto rq = run_pseudo_simulation(a, *q, AggregationConfig{});
  for (std::size_t i = 0; i < rp.stage2.observations.size(); ++i) {
    CHECK(rp.stage2.observations[i].start == rq.stage2.observations[i].start);
  }
}
