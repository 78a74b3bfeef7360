#include <functional>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"

#include "pseudosim/errors.hpp"
#include "pseudosim/generator.hpp"
#include "pseudosim/metrics.hpp"
#include "pseudosim/rollout.hpp"

using namespace pseudosim;

namespace {

// 41 states on the 10 Hz grid; pose(k) gives position, heading and speed.
std::vector<EgoState> states_from(const std::function<EgoState(int)>& at, int n = 41) {
  std::vector<EgoState> out;
  for (int k = 0; k < n; ++k) {
    EgoState s = at(k);
    s.timestamp = tick_time(k);
    out.push_back(s);
  }
  return out;
}

std::vector<EgoState> cruise(double v, double y = 0.0) {
  return states_from([=](int k) { return EgoState{{v * tick_time(k), y, 0.0}, v, 0.0, 0.0}; });
}

Rollout rollout_on(const Scenario& sc, std::vector<EgoState> states) {
  const TrafficModel model(sc);
  return simulate_with_traffic(model, std::move(states), model.initial_state());
}

const double kValues[9][3] = {{0, 0.5, 1}, {0, 1, 1}, {0, 0.5, 1}, {0, 1, 1}, {0, 0.37, 1},
                              {0, 1, 1},   {0, 1, 1}, {0, 1, 1},   {0, 1, 1}};

SubscoreVector random_valid(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, 2);
  std::uniform_real_distribution<double> unit01(0.0, 1.0);
  SubscoreVector s;
  for (std::size_t i = 0; i < kAllSubscores.size(); ++i) s.set(kAllSubscores[i], kValues[i][pick(rng)]);
  s.ep = unit01(rng);
  return s;
}

}  // namespace

TEST_CASE("safety: empty road") {
  const Scenario sc = fixtures::straight_scenario();
  const auto s = evaluate_safety(rollout_on(sc, cruise(10.0)));
  CHECK(s.nc == 1.0);
  CHECK(s.ttc == 1.0);
}

TEST_CASE("safety: driving into a stopped vehicle is a stationary at-fault collision") {
  Scenario sc = fixtures::straight_scenario();
  sc.agents.push_back(fixtures::parked_agent("parked", 30.0, 0.0));
  const auto s = evaluate_safety(rollout_on(sc, cruise(10.0)));
  CHECK(s.nc == 0.5);
  CHECK(s.ttc == 0.0);
}

TEST_CASE("safety: a moving vehicle hit head-on scores zero") {
  Scenario sc = fixtures::straight_scenario();
  AgentTrack slow = fixtures::parked_agent("slow", 20.0, 0.0);
  for (int k = 1; k <= 40; ++k) slow.states.push_back({{20.0 + 2.0 * tick_time(k), 0.0, 0.0}, 2.0, 0.0});
  slow.states[0].velocity = 2.0;
  sc.agents.push_back(slow);
  CHECK(evaluate_safety(rollout_on(sc, cruise(10.0))).nc == 0.0);
}

TEST_CASE("safety: being rear-ended while stopped is not at fault") {
  Scenario sc = fixtures::straight_scenario();
  AgentTrack rammer = fixtures::parked_agent("rammer", -20.0, 0.0);
  for (int k = 0; k <= 40; ++k) {
    const double x = -20.0 + 10.0 * tick_time(k);
    if (k == 0) rammer.states[0] = {{x, 0.0, 0.0}, 10.0, 0.0};
    else rammer.states.push_back({{x, 0.0, 0.0}, 10.0, 0.0});
  }
  sc.agents.push_back(rammer);
  const auto s = evaluate_safety(rollout_on(sc, cruise(0.0)));
  CHECK(s.nc == 1.0);
  CHECK(s.ttc == 1.0);
}

TEST_CASE("safety: a vehicle ahead within one second trips TTC only") {
  Scenario sc = fixtures::straight_scenario();
  AgentTrack lead = fixtures::parked_agent("lead", 9.0, 0.0);
  for (int k = 0; k <= 40; ++k) {
    const AgentState st{{9.0 + 5.0 * tick_time(k), 0.0, 0.0}, 5.0, 0.0};
    if (k == 0) lead.states[0] = st;
    else lead.states.push_back(st);
  }
  sc.agents.push_back(lead);
  // ego at 10 m/s brakes to the leader's speed before touching
  const auto states = states_from([](int k) {
    const double t = tick_time(k);
    const double v = std::max(5.0, 10.0 - 4.0 * t);
    const double x = t < 1.25 ? 10.0 * t - 2.0 * t * t : 9.375 + 5.0 * (t - 1.25);
    return EgoState{{x, 0.0, 0.0}, v, 0.0, 0.0};
  });
  const auto s = evaluate_safety(rollout_on(sc, states));
  CHECK(s.nc == 1.0);
  CHECK(s.ttc == 0.0);
}

TEST_CASE("compliance: expert rollouts of generated scenarios are clean") {
  for (Layout l : {Layout::Straight, Layout::Curve, Layout::Intersection, Layout::LaneMerge}) {
    const Scenario sc = generate_scenario_with_retry({l, 0.5, 10.0, 12}, 10);
    const TrafficModel model(sc);
    const auto c = evaluate_compliance(expert_rollout(model, 40));
    INFO(sc.id);
    CHECK(c.dac == 1.0);
    CHECK(c.ddc == 1.0);
    CHECK(c.tlc == 1.0);
    CHECK(c.lk == 1.0);
  }
}

TEST_CASE("compliance: one tick with a corner 0.3 m off the road fails DAC") {
  const Scenario sc = fixtures::straight_scenario();
  auto states = cruise(10.0);
  // half width 0.95, road edge at y = -1.75
  states[20].pose.y = -1.1;
  CHECK(evaluate_compliance(rollout_on(sc, states)).dac == 0.0);
  states[20].pose.y = -0.7;
  CHECK(evaluate_compliance(rollout_on(sc, states)).dac == 1.0);
}

TEST_CASE("compliance: wrong-way distance bands") {
  const Scenario sc = fixtures::straight_scenario();
  auto against = [&](double metres) {
    // facing -x on the +x lane, reversing course for `metres`
    return states_from([=](int k) {
      const double d = std::min(metres, 0.5 * std::max(0, k - 5));
      return EgoState{{50.0 - d, 0.0, kPi}, 5.0, 0.0, 0.0};
    });
  };
  CHECK(evaluate_compliance(rollout_on(sc, against(1.5))).ddc == 1.0);
  CHECK(evaluate_compliance(rollout_on(sc, against(4.0))).ddc == 0.5);
  CHECK(evaluate_compliance(rollout_on(sc, against(6.0))).ddc == 0.5);
  CHECK(evaluate_compliance(rollout_on(sc, against(7.0))).ddc == 0.0);
}

TEST_CASE("compliance: crossing a red stop line") {
  Scenario sc = fixtures::straight_scenario();
  sc.map.stop_lines.push_back({"sl", "fwd", {20.0, -1.75}, {20.0, 1.75}, {{0.0, 2.0, LightState::Red}}});
  CHECK(evaluate_compliance(rollout_on(sc, cruise(10.0))).tlc == 0.0);
  // the line turns green before the ego reaches it
  sc.map.stop_lines[0].light_schedule[0].t_end = 1.0;
  CHECK(evaluate_compliance(rollout_on(sc, cruise(10.0))).tlc == 1.0);
}

TEST_CASE("compliance: lane keeping tolerates up to one second off-centre") {
  const Scenario sc = fixtures::straight_scenario();
  auto drift = [&](int ticks) {
    auto states = cruise(10.0);
    for (int k = 10; k < 10 + ticks; ++k) states[static_cast<std::size_t>(k)].pose.y = 0.8;
    return states;
  };
  CHECK(evaluate_compliance(rollout_on(sc, drift(11))).lk == 1.0);
  CHECK(evaluate_compliance(rollout_on(sc, drift(12))).lk == 0.0);
}

TEST_CASE("progress ratio against the reference") {
  const Scenario sc = fixtures::straight_scenario();
  const Rollout r = rollout_on(sc, cruise(5.0, 0.0));  // 20 m in 4 s
  CHECK(evaluate_progress(r, 40.0) == doctest::Approx(0.5));
  CHECK(evaluate_progress(r, 3.0) == 1.0);
  CHECK(evaluate_progress(r, 16.0) == 1.0);
  CHECK(route_progress(sc.map, r.ego_states) == doctest::Approx(20.0));
}

TEST_CASE("comfort: constant velocity passes, a hard braking spike fails") {
  const Scenario sc = fixtures::straight_scenario();
  Rollout r = rollout_on(sc, cruise(10.0));
  auto c = evaluate_comfort(r);
  CHECK(c.hc == 1.0);
  CHECK(c.ec == 1.0);

  r.ego_states = states_from([](int k) {
    // 8 m/s^2 for one second from t = 1 s
    const double t = tick_time(k);
    const double tb = std::clamp(t - 1.0, 0.0, 1.0);
    const double v = 10.0 - 8.0 * tb;
    const double x = 10.0 * std::min(t, 1.0) + 10.0 * tb - 4.0 * tb * tb + 2.0 * std::max(0.0, t - 2.0);
    return EgoState{{x, 0.0, 0.0}, v, -8.0, 0.0};
  });
  CHECK(evaluate_comfort(r).hc == 0.0);
}

TEST_CASE("comfort: a 30 degree jump between consecutive plans fails EC") {
  auto plan = [](double heading, Vec2 start) {
    Trajectory t;
    for (int k = 0; k <= 40; ++k) {
      t.waypoints.push_back({{start.x + 10.0 * tick_time(k) * std::cos(heading),
                              start.y + 10.0 * tick_time(k) * std::sin(heading), heading},
                             tick_time(k)});
    }
    return t;
  };
  const MetricsConfig cfg;
  const Trajectory north = plan(0.5 * kPi, {0.0, 0.0});
  const Trajectory next_same = plan(0.5 * kPi, {0.0, 1.0});
  const Trajectory next_off = plan(0.5 * kPi + kPi / 6.0, {0.0, 1.0});
  CHECK(plan_transition_comfortable(north, next_same, cfg));
  CHECK_FALSE(plan_transition_comfortable(north, next_off, cfg));

  Rollout r = rollout_on(fixtures::straight_scenario(), cruise(10.0));
  r.plans = {north, next_off};
  CHECK(evaluate_comfort(r).ec == 0.0);
  r.plans = {north, next_same};
  CHECK(evaluate_comfort(r).ec == 1.0);
}

TEST_CASE("human filter: exhaustive over which subscores the expert zeroes") {
  std::mt19937_64 rng(5);
  for (unsigned mask = 0; mask < (1u << 9); ++mask) {
    SubscoreVector human;
    for (std::size_t i = 0; i < 9; ++i) {
      // graded subscores may also sit at 0.5, which must not trigger the filter
      const bool zero = (mask >> i) & 1u;
      human.set(kAllSubscores[i], zero ? 0.0 : (i == 0 || i == 2 ? 0.5 : 1.0));
    }
    const SubscoreVector agent = random_valid(rng);
    const SubscoreVector out = apply_human_filter(agent, human);
    for (std::size_t i = 0; i < 9; ++i) {
      const Subscore m = kAllSubscores[i];
      CHECK(out.get(m) == (((mask >> i) & 1u) ? 1.0 : agent.get(m)));
      CHECK(out.get(m) >= agent.get(m));
    }
    CHECK(apply_human_filter(out, human) == out);
    CHECK(out.in_range());
  }
  SubscoreVector agent, human;
  agent.dac = 0.0;
  human.dac = 0.0;
  CHECK(apply_human_filter(agent, human).dac == 1.0);
  human.dac = 1.0;
  CHECK(apply_human_filter(agent, human).dac == 0.0);
  agent.nc = 0.5;
  CHECK(apply_human_filter(agent, human).nc == 0.5);
}

TEST_CASE("compose_epdms: worked values") {
  const MetricWeights w;
  SubscoreVector s;
  CHECK(compose_epdms(s, w) == 1.0);
  s.nc = 0.0;
  CHECK(compose_epdms(s, w) == 0.0);
  s = {};
  s.ep = 0.5;
  // (5 * 0.5 + 5 + 2 + 2 + 2) / 16
  CHECK(compose_epdms(s, w) == doctest::Approx(0.84375).epsilon(1e-15));

  const MetricWeights red = MetricWeights::reduced();
  CHECK(compose_epdms(s, red) == doctest::Approx((2.5 + 5.0 + 2.0) / 12.0));
  s.tlc = 0.0;
  s.lk = 0.0;
  s.ec = 0.0;
  CHECK(compose_epdms(s, red) == doctest::Approx((2.5 + 5.0 + 2.0) / 12.0));
  CHECK(compose_epdms(s, w) == 0.0);
  s = {};
  s.nc = 0.5;
  s.ddc = 0.5;
  CHECK(compose_epdms(s, w) == doctest::Approx(0.25));

  MetricWeights none;
  for (Subscore m : kAllSubscores) {
    if (!is_penalty(m)) none.enabled[static_cast<std::size_t>(m)] = false;
  }
  CHECK_THROWS_AS(compose_epdms(SubscoreVector{}, none), ConfigError);
}

TEST_CASE("compose_epdms: bounded, monotone, vetoed by any zero penalty") {
  std::mt19937_64 rng(17);
  for (const MetricWeights& w : {MetricWeights::full(), MetricWeights::reduced()}) {
    for (int trial = 0; trial < 2000; ++trial) {
      const SubscoreVector s = random_valid(rng);
      const double e = compose_epdms(s, w);
      REQUIRE(e >= 0.0);
      REQUIRE(e <= 1.0);
      CHECK(e == doctest::Approx(penalty_product(s, w) * weighted_average(s, w)));
      for (std::size_t i = 0; i < 9; ++i) {
        const Subscore m = kAllSubscores[i];
        SubscoreVector up = s;
        up.set(m, m == Subscore::EP ? std::min(1.0, s.ep + 0.1) : 1.0);
        CHECK(compose_epdms(up, w) >= e - 1e-15);
        if (is_penalty(m) && w.is_enabled(m) && s.get(m) == 0.0) CHECK(e == 0.0);
      }
    }
  }
}

TEST_CASE("expert rollouts score at least 0.9") {
  for (Layout l : {Layout::Straight, Layout::Curve, Layout::Intersection, Layout::LaneMerge}) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const Scenario sc = generate_scenario_with_retry({l, 0.5, 10.0, seed}, 10);
      const TrafficModel model(sc);
      const Rollout r = expert_rollout(model, 40);
      const double ref = route_progress(sc.map, r.ego_states);
      const SubscoreVector s = evaluate_subscores(r, ref);
      INFO(sc.id);
      CHECK(s.in_range());
      CHECK(compose_epdms(s, MetricWeights::full()) >= 0.9);
    }
  }
}
