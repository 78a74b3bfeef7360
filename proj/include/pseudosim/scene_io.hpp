#pragma once

#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>

#include "json.hpp"

#include "pseudosim/scene.hpp"

namespace pseudosim {

using Json = nlohmann::ordered_json;

/// Rejects unknown keys and reports missing ones as SchemaError.
void expect_keys(const Json& obj, std::initializer_list<std::string_view> required,
                 std::initializer_list<std::string_view> optional, std::string_view where);

double round_timestamp(double t);

Json to_json(const Scenario& sc);
Json to_json(const MapModel& map);
Json to_json(const EgoState& s);
Json to_json(const AgentTrack& a);
Json to_json(const Trajectory& t);
Json to_json(const IdmParams& p);

Scenario scenario_from_json(const Json& j);
MapModel map_from_json(const Json& j);
EgoState ego_state_from_json(const Json& j);
Trajectory trajectory_from_json(const Json& j);
IdmParams idm_from_json(const Json& j);

DrivingCommand command_from_string(std::string_view s);

/// Compact single-line text used for files and the planner wire protocol.
std::string dump_scenario(const Scenario& sc);

Scenario load_scenario(const std::filesystem::path& path);
void save_scenario(const Scenario& sc, const std::filesystem::path& path);

Json parse_json_text(std::string_view text, std::string_view what);
Json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace pseudosim
