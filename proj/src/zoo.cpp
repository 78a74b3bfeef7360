#include <cmath>

#include "pseudosim/errors.hpp"
#include "pseudosim/planners.hpp"

namespace pseudosim {

namespace {

double opt(const Json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) throw ConfigError(std::string("planner param '") + key + "' must be a number");
  return j.at(key).get<double>();
}

IdmParams idm_from(const Json& p) {
  IdmParams idm;
  idm.v0 = opt(p, "v0", idm.v0);
  idm.time_headway = opt(p, "time_headway", idm.time_headway);
  idm.min_gap = opt(p, "min_gap", idm.min_gap);
  idm.a_max = opt(p, "a_max", idm.a_max);
  idm.b_comfort = opt(p, "b_comfort", idm.b_comfort);
  return idm;
}

std::vector<double> list_or(const Json& p, const char* key, std::vector<double> fallback) {
  if (!p.contains(key)) return fallback;
  try {
    return p.at(key).get<std::vector<double>>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("planner param '") + key + "' must be a list of numbers");
  }
}

}  // namespace

std::unique_ptr<Planner> make_planner(const Json& spec) {
  if (!spec.is_object() || !spec.contains("id") || !spec.contains("type")) {
    throw ConfigError("planner spec needs 'id' and 'type'");
  }
  const auto id = spec.at("id").get<std::string>();
  const auto type = spec.at("type").get<std::string>();
  const Json params = spec.value("params", Json::object());
  std::unique_ptr<Planner> p;
  if (type == "constant_kinematics") {
    p = std::make_unique<ConstantKinematicsPlanner>(
        id, ConstantKinematicsParams{opt(params, "speed_scale", 1.0), opt(params, "curvature_bias", 0.0)});
  } else if (type == "idm") {
    p = std::make_unique<IdmPlanner>(id, idm_from(params));
  } else if (type == "pdm_closed") {
    PdmParams pdm;
    pdm.speed_fractions = list_or(params, "speed_fractions", pdm.speed_fractions);
    pdm.lateral_offsets = list_or(params, "lateral_offsets", pdm.lateral_offsets);
    if (pdm.speed_fractions.empty() || pdm.lateral_offsets.empty()) {
      throw ConfigError("planner '" + id + "': empty candidate grid");
    }
    pdm.idm = idm_from(params);
    pdm.w_progress = opt(params, "w_progress", pdm.w_progress);
    pdm.w_ttc = opt(params, "w_ttc", pdm.w_ttc);
    pdm.w_comfort = opt(params, "w_comfort", pdm.w_comfort);
    p = std::make_unique<PdmClosedPlanner>(id, std::move(pdm));
  } else if (type == "external") {
    if (!params.contains("command") || !params.at("command").is_array()) {
      throw ConfigError("planner '" + id + "': external planners need a 'command' list");
    }
    const auto timeout = std::chrono::milliseconds(
        static_cast<long>(opt(params, "timeout_ms", static_cast<double>(kDefaultPlannerTimeout.count()))));
    p = std::make_unique<ExternalPlanner>(id, params.at("command").get<std::vector<std::string>>(), timeout);
  } else {
    throw ConfigError("planner '" + id + "': unknown type '" + type + "'");
  }
  if (spec.contains("noise")) {
    const Json& n = spec.at("noise");
    NoiseSpec noise;
    noise.jitter_sigma = opt(n, "jitter", 0.0);
    noise.heading_bias = opt(n, "heading_bias", 0.0);
    noise.latency_ticks = static_cast<int>(std::lround(opt(n, "latency", 0.0)));
    const auto seed = spec.value("seed", std::uint64_t{0});
    p = std::make_unique<DegradedPlanner>(id, std::move(p), noise, seed);
  }
  return p;
}

std::vector<Json> default_zoo() {
  std::vector<Json> zoo;
  auto add = [&](std::string id, std::string type, Json params, Json noise = nullptr, std::uint64_t seed = 0) {
    Json spec{{"id", std::move(id)}, {"type", std::move(type)}, {"params", std::move(params)}};
    if (!noise.is_null()) {
      spec["noise"] = std::move(noise);
      spec["seed"] = seed;
    }
    zoo.push_back(std::move(spec));
  };
  add("ck-1.0", "constant_kinematics", {{"speed_scale", 1.0}});
  add("ck-0.8", "constant_kinematics", {{"speed_scale", 0.8}});
  add("ck-1.2", "constant_kinematics", {{"speed_scale", 1.2}});
  add("ck-0.5", "constant_kinematics", {{"speed_scale", 0.5}});
  add("ck-left", "constant_kinematics", {{"speed_scale", 1.0}, {"curvature_bias", 0.03}});
  add("ck-right", "constant_kinematics", {{"speed_scale", 1.0}, {"curvature_bias", -0.03}});

  add("idm-v6", "idm", {{"v0", 6.0}});
  add("idm-v8", "idm", {{"v0", 8.0}});
  add("idm-v10", "idm", {{"v0", 10.0}});
  add("idm-v14", "idm", {{"v0", 14.0}});
  add("idm-th1", "idm", {{"v0", 12.0}, {"time_headway", 1.0}, {"min_gap", 1.0}});
  add("idm-th3", "idm", {{"v0", 12.0}, {"time_headway", 3.0}});

  add("pdm", "pdm_closed", {{"v0", 14.0}});
  add("pdm-v10", "pdm_closed", {{"v0", 10.0}});
  add("pdm-centre", "pdm_closed", {{"v0", 14.0}, {"lateral_offsets", {0.0}}});
  add("pdm-cautious", "pdm_closed", {{"v0", 8.0}, {"speed_fractions", {0.5, 0.75}}});

  add("pdm-jitter0.05", "pdm_closed", {{"v0", 14.0}}, {{"jitter", 0.05}}, 11);
  add("pdm-jitter0.15", "pdm_closed", {{"v0", 14.0}}, {{"jitter", 0.15}}, 12);
  add("pdm-bias", "pdm_closed", {{"v0", 14.0}}, {{"heading_bias", 0.05}}, 13);
  add("pdm-lat3", "pdm_closed", {{"v0", 14.0}}, {{"latency", 3}}, 14);
  add("pdm-lat8", "pdm_closed", {{"v0", 14.0}}, {{"latency", 8}}, 15);
  add("idm-jitter0.1", "idm", {{"v0", 12.0}}, {{"jitter", 0.1}}, 16);
  add("idm-bias", "idm", {{"v0", 12.0}}, {{"heading_bias", -0.08}}, 17);
  add("idm-lat5", "idm", {{"v0", 12.0}}, {{"latency", 5}}, 18);
  return zoo;
}

}  // namespace pseudosim
