#include <cmath>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"

#include "pseudosim/errors.hpp"
#include "pseudosim/evaluator.hpp"
#include "pseudosim/generator.hpp"
#include "pseudosim/planners.hpp"

using namespace pseudosim;

namespace {

PlannerInput input_for(const Scenario& sc) {
  const TrafficModel model(sc);
  return make_planner_input(sc, sc.ego_history, model.snapshots(model.initial_state()), 0.0);
}

PlanContext ctx_for(const Scenario& sc, long tick = 0) { return {sc.id, tick, sc.current_ego().pose}; }

// Straight approach to a fork at x = 0: "left" bends to +y, "right" to -y.
Scenario fork_scenario(DrivingCommand cmd) {
  Scenario sc = fixtures::straight_scenario();
  MapModel& m = sc.map;
  m = MapModel{};
  m.drivable_areas.push_back({"road", Polygon{{{-100, -60}, {120, -60}, {120, 60}, {-100, 60}}}});
  std::vector<Vec2> in, left, right;
  for (double x = -100.0; x <= 30.0; x += 10.0) in.push_back({x, 0.0});
  for (int i = 0; i <= 20; ++i) {
    const double phi = 0.5 * kPi * i / 20.0;
    left.push_back({30.0 + 50.0 * std::sin(phi), 50.0 - 50.0 * std::cos(phi)});
    right.push_back({30.0 + 50.0 * std::sin(phi), -50.0 + 50.0 * std::cos(phi)});
  }
  m.lanes.push_back({"in", Polyline(in), 3.5, 10.0, {"left", "right"}});
  m.lanes.push_back({"left", Polyline(left), 3.5, 10.0, {}});
  m.lanes.push_back({"right", Polyline(right), 3.5, 10.0, {}});
  m.route = {"in", cmd == DrivingCommand::Right ? "right" : "left"};
  m.rebuild();
  sc.command = cmd;
  return sc;
}

// Records the tick it was called at in the lateral coordinate of every waypoint.
class TickEcho : public Planner {
 public:
  const std::string& id() const override { return id_; }
  Trajectory plan(const PlannerInput&, const PlanContext& ctx) override {
    std::vector<Pose2D> poses;
    for (int k = 1; k <= kPlanWaypoints; ++k) poses.push_back({1.0 * k, static_cast<double>(ctx.tick), 0.0});
    return local_trajectory(poses);
  }
  std::unique_ptr<Planner> clone() const override { return std::make_unique<TickEcho>(*this); }

 private:
  std::string id_ = "tick";
};

Json external_spec(const std::string& mode, int timeout_ms = 2000) {
  return Json{{"id", "ext-" + mode},
              {"type", "external"},
              {"params", {{"command", {ECHO_PLANNER, mode}}, {"timeout_ms", timeout_ms}}}};
}

}  // namespace

TEST_CASE("constant kinematics: straight, stop and closed-form arc") {
  const Scenario sc = fixtures::straight_scenario();
  const PlannerInput in = input_for(sc);
  REQUIRE(in.ego_history.size() == 16);
  CHECK(in.ego_history.back().pose == Pose2D{});

  const Trajectory straight = constant_kinematics_plan(in, {1.0, 0.0});
  REQUIRE(straight.waypoints.size() == 40);
  CHECK(straight.waypoints.back().pose.x == doctest::Approx(40.0));
  CHECK(straight.waypoints.back().pose.y == 0.0);

  for (const auto& w : constant_kinematics_plan(in, {0.0, 0.0}).waypoints) CHECK(w.pose == Pose2D{});

  const Trajectory arc = constant_kinematics_plan(in, {1.0, 0.05});
  const double r = 10.0 / 0.05, phi = 0.05 * 4.0;
  CHECK(r == 200.0);
  CHECK(std::abs(arc.waypoints.back().pose.x - r * std::sin(phi)) < 1e-6);
  CHECK(std::abs(arc.waypoints.back().pose.y - r * (1.0 - std::cos(phi))) < 1e-6);
  for (const auto& w : arc.waypoints) CHECK(std::abs(norm(w.pose.position() - Vec2{0.0, r}) - r) < 1e-6);
}

TEST_CASE("validate_plan rejects wrong lengths and non-finite values") {
  const Scenario sc = fixtures::straight_scenario();
  Trajectory t = constant_kinematics_plan(input_for(sc), {});
  CHECK_NOTHROW(validate_plan(t));
  Trajectory shorter = t;
  shorter.waypoints.pop_back();
  CHECK_THROWS_AS(validate_plan(shorter), ProtocolError);
  Trajectory nan = t;
  nan.waypoints[7].pose.y = std::nan("");
  CHECK_THROWS_AS(validate_plan(nan), ProtocolError);
}

TEST_CASE("planner input is expressed in the ego frame and clipped to the view radius") {
  Scenario sc = fixtures::straight_scenario();
  for (auto& s : sc.ego_history) s.pose = to_world(Pose2D{5.0, -1.0, 0.3}, s.pose);
  sc.agents.push_back(fixtures::parked_agent("near", 30.0, 0.0));
  sc.agents.push_back(fixtures::parked_agent("far", 300.0, 0.0));
  const PlannerInput in = input_for(sc);
  CHECK(in.ego_history.back().pose.x == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(in.ego_history.back().pose.heading == doctest::Approx(0.0).epsilon(1e-12));
  REQUIRE(in.agents.size() == 1);
  CHECK(in.agents[0].id == "near");
  for (const auto& lane : in.map.lanes) {
    for (Vec2 p : lane.centerline) CHECK(norm(p) <= kMapViewRadius + 10.0 + 1e-9);
  }
}

TEST_CASE("idm planner: free road, stopped leader, fork and no lane") {
  IdmParams p;
  p.v0 = 10.0;
  const Scenario sc = fixtures::straight_scenario();
  const Trajectory free = idm_plan(input_for(sc), p);
  for (const auto& w : free.waypoints) {
    CHECK(w.pose.x == doctest::Approx(10.0 * w.timestamp).epsilon(1e-6));
    CHECK(std::abs(w.pose.y) < 1e-9);
  }

  Scenario blocked = sc;
  blocked.agents.push_back(fixtures::parked_agent("stopped", 20.0, 0.0));
  const Trajectory brake = idm_plan(input_for(blocked), p);
  const double final_gap = 20.0 - brake.waypoints.back().pose.x - 4.6;
  CHECK(final_gap >= p.min_gap - 0.5);
  for (std::size_t k = 1; k < brake.waypoints.size(); ++k) {
    CHECK(brake.waypoints[k].pose.x >= brake.waypoints[k - 1].pose.x - 1e-12);
  }

  const Trajectory right = idm_plan(input_for(fork_scenario(DrivingCommand::Right)), p);
  const Trajectory left = idm_plan(input_for(fork_scenario(DrivingCommand::Left)), p);
  CHECK(right.waypoints.back().pose.y < -1.0);
  CHECK(left.waypoints.back().pose.y > 1.0);

  Scenario lost = sc;
  for (auto& s : lost.ego_history) s.pose.y += 30.0;
  CHECK_THROWS_AS(idm_plan(input_for(lost), p), NoLaneError);
}

TEST_CASE("pdm closed: free road, partial blockage and full blockage") {
  const PdmParams p;
  const Scenario sc = fixtures::straight_scenario();
  const PlannerInput in = input_for(sc);
  const auto cands = pdm_candidates(in, p);
  CHECK(cands.size() == p.speed_fractions.size() * p.lateral_offsets.size());
  const Trajectory chosen = pdm_closed_plan(in, p);
  bool matched = false;
  for (const auto& c : cands) {
    if (c.lateral_offset == 0.0 && c.speed_fraction == 1.0) matched = c.plan == chosen;
  }
  CHECK(matched);

  Scenario partial = sc;
  partial.agents.push_back(fixtures::parked_agent("edge", 30.0, -1.6));
  const Trajectory dodge = pdm_closed_plan(input_for(partial), p);
  const double end_y = dodge.waypoints.back().pose.y;
  CHECK(end_y > 0.5);
  // the dodge stays on the road
  CHECK(end_y + 0.95 < 5.25);

  Scenario wall = sc;
  for (double y : {-1.0, 1.2, 3.4, 5.0}) wall.agents.push_back(fixtures::parked_agent("w" + std::to_string(y), 8.0, y));
  const PlannerInput win = input_for(wall);
  for (const auto& c : pdm_candidates(win, p)) CHECK(c.score == 0.0);
  CHECK(pdm_closed_plan(win, p) == max_brake_plan(win));
}

TEST_CASE("pdm closed: choice is invariant to rescaling its score weights") {
  for (Layout l : {Layout::Straight, Layout::Curve, Layout::Intersection, Layout::LaneMerge}) {
    const Scenario sc = generate_scenario_with_retry({l, 0.8, 10.0, 6}, 10);
    const PlannerInput in = input_for(sc);
    PdmParams p;
    PdmParams scaled = p;
    scaled.w_progress *= 3.7;
    scaled.w_ttc *= 3.7;
    scaled.w_comfort *= 3.7;
    INFO(sc.id);
    CHECK(pdm_closed_plan(in, p) == pdm_closed_plan(in, scaled));
  }
}

TEST_CASE("degraded planner: identity, jitter statistics, bias and latency") {
  const Scenario sc = fixtures::straight_scenario();
  const PlannerInput in = input_for(sc);
  auto base = [] { return std::make_unique<ConstantKinematicsPlanner>("ck", ConstantKinematicsParams{}); };

  DegradedPlanner same("same", base(), NoiseSpec{}, 1);
  CHECK(same.plan(in, ctx_for(sc)) == base()->plan(in, ctx_for(sc)));

  // per-axis sigma 0.5: displacement magnitude is Rayleigh with mean 0.5 sqrt(pi/2)
  DegradedPlanner jitter("jitter", base(), NoiseSpec{0.5, 0.0, 0}, 7);
  const Trajectory clean = base()->plan(in, ctx_for(sc));
  double sum = 0.0;
  int n = 0;
  for (long tick = 0; tick < 250; ++tick) {
    const Trajectory noisy = jitter.plan(in, ctx_for(sc, tick));
    for (std::size_t k = 0; k < noisy.waypoints.size(); ++k) {
      sum += distance(noisy.waypoints[k].pose.position(), clean.waypoints[k].pose.position());
      ++n;
    }
  }
  CHECK(n == 10000);
  CHECK(sum / n == doctest::Approx(0.5 * std::sqrt(kPi / 2.0)).epsilon(0.025));
  // deterministic per (seed, scenario, tick)
  CHECK(jitter.plan(in, ctx_for(sc, 3)) == jitter.plan(in, ctx_for(sc, 3)));
  CHECK_FALSE(jitter.plan(in, ctx_for(sc, 3)) == jitter.plan(in, ctx_for(sc, 4)));

  DegradedPlanner bias("bias", base(), NoiseSpec{0.0, 0.1, 0}, 1);
  const Pose2D end = bias.plan(in, ctx_for(sc)).waypoints.back().pose;
  CHECK(std::atan2(end.y, end.x) == doctest::Approx(0.1));
  CHECK(norm(end.position()) == doctest::Approx(40.0));

  DegradedPlanner late("late", std::make_unique<TickEcho>(), NoiseSpec{0.0, 0.0, 5}, 1);
  for (long tick = 0; tick <= 8; ++tick) {
    const Trajectory t = late.plan(in, ctx_for(sc, tick));
    const double expected_source = static_cast<double>(std::max(0L, tick - 5));
    INFO("tick " << tick);
    CHECK(t.waypoints.front().pose.y == expected_source);
    // the stale plan is advanced by the ticks that passed since it was made
    CHECK(t.waypoints.front().pose.x == doctest::Approx(1.0 + (tick - expected_source)));
  }
  late.reset();
  CHECK(late.plan(in, ctx_for(sc, 20)).waypoints.front().pose.y == 20.0);
}

TEST_CASE("external planner: protocol round trip and failure modes") {
  const Scenario sc = fixtures::straight_scenario();
  const PlannerInput in = input_for(sc);
  auto echo = make_planner(external_spec("straight"));
  const Trajectory t = echo->plan(in, ctx_for(sc));
  REQUIRE(t.waypoints.size() == 40);
  CHECK(t.waypoints.back().pose.x == doctest::Approx(40.0));
  // the process stays up between requests; a clone gets its own
  CHECK(echo->plan(in, ctx_for(sc, 1)) == t);
  auto twin = echo->clone();
  CHECK(twin->plan(in, ctx_for(sc)) == t);

  CHECK_THROWS_AS(make_planner(external_spec("short"))->plan(in, ctx_for(sc)), ProtocolError);
  CHECK_THROWS_AS(make_planner(external_spec("garbage"))->plan(in, ctx_for(sc)), ProtocolError);
  CHECK_THROWS_AS(make_planner(external_spec("old-version"))->plan(in, ctx_for(sc)), ProtocolError);
  CHECK_THROWS_AS(make_planner(external_spec("crash"))->plan(in, ctx_for(sc)), ExitError);
  CHECK_THROWS_AS(make_planner(external_spec("hang", 300))->plan(in, ctx_for(sc)), TimeoutError);
  Json missing = external_spec("straight");
  missing["params"]["command"] = {"/nonexistent/planner"};
  CHECK_THROWS_AS(make_planner(missing)->plan(in, ctx_for(sc)), PlannerError);

  // the wire format of the input round trips
  const PlannerInput back = planner_input_from_json(to_json(in));
  CHECK(to_json(back).dump() == to_json(in).dump());
  CHECK_THROWS_AS(parse_plan_response("{\"waypoints\": 3}"), ProtocolError);
}

TEST_CASE("make_planner validates specs") {
  CHECK_THROWS_AS(make_planner(Json{{"type", "idm"}}), ConfigError);
  CHECK_THROWS_AS(make_planner(Json{{"id", "x"}, {"type", "neural"}}), ConfigError);
  CHECK_THROWS_AS(make_planner(Json{{"id", "x"}, {"type", "external"}}), ConfigError);
  CHECK_THROWS_AS(make_planner(Json{{"id", "x"}, {"type", "pdm_closed"}, {"params", {{"lateral_offsets", Json::array()}}}}),
                  ConfigError);
  CHECK(make_planner(Json{{"id", "x"}, {"type", "idm"}})->id() == "x");
}

TEST_CASE("default zoo: at least 20 distinct, deterministic planners in three families") {
  const auto zoo = default_zoo();
  CHECK(zoo.size() >= 20);
  std::set<std::string> ids, types;
  const Scenario sc = generate_scenario_with_retry({Layout::Intersection, 0.8, 10.0, 2}, 10);
  const PlannerInput in = input_for(sc);
  for (const auto& spec : zoo) {
    CHECK(ids.insert(spec["id"].get<std::string>()).second);
    types.insert(spec["type"].get<std::string>());
    auto a = make_planner(spec);
    auto b = make_planner(spec);
    INFO(spec.dump());
    CHECK(a->plan(in, ctx_for(sc)) == b->plan(in, ctx_for(sc)));
    CHECK(a->clone()->plan(in, ctx_for(sc, 2)) == b->plan(in, ctx_for(sc, 2)));
  }
  CHECK(types == std::set<std::string>{"constant_kinematics", "idm", "pdm_closed"});
}

TEST_CASE("zoo families are ordered by mean closed-loop score") {
  std::vector<Scenario> scenes;
  for (std::uint64_t i = 0; i < 20; ++i) {
    scenes.push_back(generate_scenario_with_retry({static_cast<Layout>(i % 4), 0.5, 10.0, 100 + i}, 10));
  }
  std::vector<std::unique_ptr<SceneContext>> ctxs;
  for (const auto& s : scenes) ctxs.push_back(std::make_unique<SceneContext>(s, kClosedLoopTicks));

  std::map<std::string, std::pair<double, int>> family;
  for (const auto& spec : default_zoo()) {
    // degraded members count toward their base family; a planner error scores 0
    auto p = make_planner(spec);
    for (const auto& c : ctxs) {
      p->reset();
      auto& [sum, n] = family[spec["type"].get<std::string>()];
      try {
        sum += run_closed_loop(*c, *p, MetricWeights::full()).score.score;
      } catch (const PlannerError&) {
      }
      ++n;
    }
  }
  const auto mean = [&](const std::string& t) { return family[t].first / family[t].second; };
  MESSAGE("pdm " << mean("pdm_closed") << " idm " << mean("idm") << " ck " << mean("constant_kinematics"));
  CHECK(mean("pdm_closed") > mean("idm"));
  CHECK(mean("idm") > mean("constant_kinematics"));
}
