#include "pseudosim/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pseudosim/dynamics.hpp"
#include "pseudosim/errors.hpp"
#include "pseudosim/rollout.hpp"

namespace pseudosim {

std::string to_string(StageMode m) {
  switch (m) {
    case StageMode::Product: return "product";
    case StageMode::Mean: return "mean";
    case StageMode::Hybrid: return "hybrid";
  }
  return "product";
}

std::string to_string(Weighting w) {
  switch (w) {
    case Weighting::Gaussian: return "gaussian";
    case Weighting::Uniform: return "uniform";
    case Weighting::Knn: return "knn";
  }
  return "gaussian";
}

StageMode stage_mode_from_string(std::string_view s) {
  if (s == "product") return StageMode::Product;
  if (s == "mean") return StageMode::Mean;
  if (s == "hybrid") return StageMode::Hybrid;
  throw ConfigError("unknown stage mode '" + std::string(s) + "'");
}

Weighting weighting_from_string(std::string_view s) {
  if (s == "gaussian") return Weighting::Gaussian;
  if (s == "uniform") return Weighting::Uniform;
  if (s == "knn") return Weighting::Knn;
  throw ConfigError("unknown weighting '" + std::string(s) + "'");
}

void AggregationConfig::validate() const {
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw ConfigError("sigma2 must be positive");
  if (weighting == Weighting::Knn && knn_k < 1) throw ConfigError("knn k must be at least 1");
}

std::unique_ptr<Planner> reference_planner() {
  PdmParams p;
  p.idm.v0 = 30.0;  // capped by the lane limits
  return std::make_unique<PdmClosedPlanner>("reference", p);
}

namespace {

PlanContext context_for(const Scenario& sc, long tick, const Pose2D& pose) { return {sc.id, tick, pose}; }

Trajectory checked_plan(Planner& planner, const PlannerInput& in, const PlanContext& ctx) {
  Trajectory plan;
  try {
    plan = planner.plan(in, ctx);
    validate_plan(plan);
  } catch (const PlannerError& e) {
    throw PlannerError("planner '" + planner.id() + "' on " + ctx.scenario_id + " tick " +
                       std::to_string(ctx.tick) + ": " + e.what());
  }
  return plan;
}

Rollout open_loop(const Scenario& sc, const TrafficModel& model, const Trajectory& local_plan) {
  const EgoState& start = sc.current_ego();
  auto states = track_trajectory(start, local_plan, default_gain_table());
  Rollout r = simulate_with_traffic(model, std::move(states), model.initial_state());
  r.plans.push_back(plan_to_world(local_plan, start.pose, start.timestamp));
  return r;
}

Rollout closed_loop(const Scenario& sc, const TrafficModel& model, Planner& planner, int ticks) {
  planner.reset();
  const GainTable& gains = default_gain_table();
  Rollout r;
  r.scenario = &sc;
  r.history = history_prefix(sc);
  std::vector<EgoState> window = sc.ego_history;
  TrafficState ts = model.initial_state();
  EgoState ego = sc.current_ego();
  BicycleState bike{ego.pose, std::max(0.0, ego.velocity), 0.0};
  r.ego_states.push_back(ego);
  for (int k = 0; k < ticks; ++k) {
    const auto snaps = model.snapshots(ts);
    r.traffic_states.push_back(ts);
    r.agents.push_back(snaps);
    const double t = tick_time(k);
    const PlannerInput in = make_planner_input(sc, window, snaps, t);
    const Trajectory plan = checked_plan(planner, in, context_for(sc, k, ego.pose));
    const Trajectory world = plan_to_world(plan, ego.pose, t);
    if (k == 0) {
      const TrackingReference ref(ego.pose, world.waypoints);
      if (!ref.stationary()) {
        bike.steering = std::clamp(std::atan(gains.params().wheelbase * ref.curvature(0.0)),
                                   -gains.params().steer_limit, gains.params().steer_limit);
      }
    }
    r.plans.push_back(world);
    const double v_before = bike.velocity;
    bike = track_first_tick(bike, world, gains);
    const TrafficState next = model.step(ts, ego);
    ego = {bike.pose, bike.velocity, (bike.velocity - v_before) / kTickSeconds, tick_time(k + 1)};
    r.ego_states.push_back(ego);
    window.erase(window.begin());
    window.push_back(ego);
    ts = next;
  }
  r.traffic_states.push_back(ts);
  r.agents.push_back(model.snapshots(ts));
  return r;
}

}  // namespace

SceneContext::SceneContext(const Scenario& sc, int ticks_) : scenario(sc), model(sc), ticks(ticks_) {
  auto ref = reference_planner();
  Rollout ref_rollout;
  if (ticks <= kStageOneTicks) {
    const PlannerInput in = make_planner_input(sc, sc.ego_history, model.snapshots(model.initial_state()), 0.0);
    ref_rollout = open_loop(sc, model, checked_plan(*ref, in, context_for(sc, 0, sc.current_ego().pose)));
  } else {
    ref_rollout = closed_loop(sc, model, *ref, ticks);
  }
  reference_progress = route_progress(sc.map, ref_rollout.ego_states);
  human = evaluate_subscores(expert_rollout(model, ticks), reference_progress);
}

PreparedScene::PreparedScene(const Scenario& sc, const Stage2Set* set_)
    : scenario(sc), stage1(sc, kStageOneTicks), set(set_) {
  if (set != nullptr) {
    for (const auto& o : set->observations) stage2.push_back(std::make_unique<SceneContext>(o.scenario, kStageOneTicks));
  }
}

StageScore score_rollout(const Rollout& r, const SceneContext& ctx, const MetricWeights& w) {
  StageScore s;
  s.raw = evaluate_subscores(r, ctx.reference_progress);
  s.filtered = apply_human_filter(s.raw, ctx.human);
  s.score = compose_epdms(s.filtered, w);
  s.penalty = penalty_product(s.filtered, w);
  s.average = weighted_average(s.filtered, w);
  return s;
}

Rollout open_loop_rollout(const SceneContext& ctx, const Trajectory& local_plan) {
  return open_loop(ctx.scenario, ctx.model, local_plan);
}

StageOneResult run_stage1(const SceneContext& ctx, Planner& planner, const MetricWeights& w) {
  const Scenario& sc = ctx.scenario;
  planner.reset();
  const PlannerInput in = make_planner_input(sc, sc.ego_history, ctx.model.snapshots(ctx.model.initial_state()), 0.0);
  const Trajectory plan = checked_plan(planner, in, context_for(sc, 0, sc.current_ego().pose));
  StageOneResult out;
  out.rollout = open_loop(sc, ctx.model, plan);
  out.score = score_rollout(out.rollout, ctx, w);
  out.endpoint = out.rollout.ego_states.back().pose.position();
  return out;
}

std::vector<double> gaussian_weights(const std::vector<Vec2>& points, Vec2 center, double sigma2) {
  if (points.empty()) return {};
  std::vector<double> d2;
  for (const auto& p : points) {
    const double d = distance(p, center);
    d2.push_back(d * d);
  }
  const double shift = *std::min_element(d2.begin(), d2.end());
  std::vector<double> w;
  double total = 0.0;
  for (double v : d2) {
    w.push_back(std::exp(-(v - shift) / (2.0 * sigma2)));
    total += w.back();
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(w.size()));
    return w;
  }
  for (double& v : w) v /= total;
  return w;
}

void weigh_stage2(StageTwoResult& r, Vec2 endpoint, const AggregationConfig& cfg) {
  std::vector<std::size_t> ok;
  for (std::size_t i = 0; i < r.observations.size(); ++i) {
    r.observations[i].weight = 0.0;
    if (!r.observations[i].failed) ok.push_back(i);
  }
  if (ok.empty()) throw StageError("no stage-2 observation was scored");
  std::vector<double> w(ok.size(), 1.0 / static_cast<double>(ok.size()));
  if (cfg.weighting == Weighting::Gaussian) {
    std::vector<Vec2> pts;
    for (auto i : ok) pts.push_back(r.observations[i].start);
    w = gaussian_weights(pts, endpoint, cfg.sigma2);
  } else if (cfg.weighting == Weighting::Knn) {
    std::vector<std::size_t> order(ok.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return distance(r.observations[ok[a]].start, endpoint) < distance(r.observations[ok[b]].start, endpoint);
    });
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(cfg.knn_k), ok.size());
    std::fill(w.begin(), w.end(), 0.0);
    for (std::size_t j = 0; j < k; ++j) w[order[j]] = 1.0 / static_cast<double>(k);
  }
  r.s2 = r.penalty = r.average = 0.0;
  for (std::size_t j = 0; j < ok.size(); ++j) {
    auto& o = r.observations[ok[j]];
    o.weight = w[j];
    r.s2 += w[j] * o.score.score;
    r.penalty += w[j] * o.score.penalty;
    r.average += w[j] * o.score.average;
  }
}

StageTwoResult run_stage2(const PreparedScene& scene, Planner& planner, Vec2 endpoint, const AggregationConfig& cfg) {
  if (scene.set == nullptr || scene.set->observations.empty()) throw StageError(scene.scenario.id + ": no stage-2 set");
  StageTwoResult r;
  for (std::size_t i = 0; i < scene.stage2.size(); ++i) {
    const auto& obs = scene.set->observations[i];
    ObservationResult o;
    o.index = obs.index;
    o.start = obs.start.pose.position();
    try {
      o.score = run_stage1(*scene.stage2[i], planner, cfg.weights).score;
    } catch (const PlannerError& e) {
      o.failed = true;
      o.error = e.what();
    }
    r.observations.push_back(std::move(o));
  }
  weigh_stage2(r, endpoint, cfg);
  return r;
}

double aggregate(const StageScore& s1, const StageTwoResult& s2, const AggregationConfig& cfg) {
  switch (cfg.stage_mode) {
    case StageMode::Product: return s1.score * s2.s2;
    case StageMode::Mean: return 0.5 * (s1.score + s2.s2);
    case StageMode::Hybrid: return s1.penalty * s2.penalty * 0.5 * (s1.average + s2.average);
  }
  return 0.0;
}

CombinedScore run_pseudo_simulation(const PreparedScene& scene, Planner& planner, const AggregationConfig& cfg) {
  cfg.validate();
  CombinedScore out;
  out.scenario_id = scene.scenario.id;
  out.planner_id = planner.id();
  out.stage1 = run_stage1(scene.stage1, planner, cfg.weights);
  out.stage2 = run_stage2(scene, planner, out.stage1.endpoint, cfg);
  out.combined = aggregate(out.stage1.score, out.stage2, cfg);
  out.inference_count = 1 + static_cast<int>(scene.stage2.size());
  return out;
}

Rollout closed_loop_rollout(const SceneContext& ctx, Planner& planner, int ticks) {
  return closed_loop(ctx.scenario, ctx.model, planner, ticks);
}

ClosedLoopResult run_closed_loop(const SceneContext& ctx, Planner& planner, const MetricWeights& w) {
  ClosedLoopResult out;
  out.rollout = closed_loop(ctx.scenario, ctx.model, planner, ctx.ticks);
  out.score = score_rollout(out.rollout, ctx, w);
  out.inference_count = ctx.ticks;
  return out;
}

}  // namespace pseudosim
