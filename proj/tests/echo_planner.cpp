// Test double for the external planner protocol. The first argument picks a
// behaviour: straight (default), short, hang, crash, garbage, old-version.
#include <chrono>
#include <iostream>
#include <string>
#include <thread>

#include "json.hpp"

int main(int argc, char** argv) {
  const std::string mode = argc > 1 ? argv[1] : "straight";
  std::string line;
  if (!std::getline(std::cin, line)) return 1;
  std::cout << nlohmann::json{{"handshake", mode == "old-version" ? "pseudosim/0" : "pseudosim/1"}}.dump() << "\n"
            << std::flush;

  while (std::getline(std::cin, line)) {
    const auto req = nlohmann::json::parse(line);
    if (mode == "crash") return 3;
    if (mode == "hang") std::this_thread::sleep_for(std::chrono::hours(1));
    if (mode == "garbage") {
      std::cout << "{\"waypoints\": [1, 2\n" << std::flush;
      continue;
    }
    const double v = req["input"]["ego_history"].back()["velocity"].get<double>();
    const int n = mode == "short" ? 39 : 40;
    nlohmann::json wps = nlohmann::json::array();
    for (int k = 1; k <= n; ++k) wps.push_back({v * 0.1 * k, 0.0, 0.0});
    std::cout << nlohmann::json{{"waypoints", wps}}.dump() << "\n" << std::flush;
  }
  return 0;
}
