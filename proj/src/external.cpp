#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>

#include "pseudosim/errors.hpp"
#include "pseudosim/planners.hpp"

namespace pseudosim {

namespace {

Json point(Vec2 p) { return Json::array({p.x, p.y}); }

Vec2 point_from(const Json& j, const char* where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw SchemaError(std::string(where) + ": expected [x, y]");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

double number(const Json& j, const char* key, const char* where) {
  if (!j.contains(key) || !j.at(key).is_number()) {
    throw SchemaError(std::string(where) + "." + key + ": expected a number");
  }
  return j.at(key).get<double>();
}

}  // namespace

Json to_json(const PlannerInput& in) {
  Json hist = Json::array();
  for (const auto& s : in.ego_history) hist.push_back(to_json(s));
  Json agents = Json::array();
  for (const auto& a : in.agents) {
    agents.push_back(Json{{"id", a.id},
                          {"x", a.box.center.x},
                          {"y", a.box.center.y},
                          {"heading", a.box.heading},
                          {"length", a.box.length},
                          {"width", a.box.width},
                          {"velocity", a.velocity}});
  }
  Json areas = Json::array();
  for (const auto& p : in.map.drivable_areas) {
    Json pts = Json::array();
    for (const auto& v : p.points) pts.push_back(point(v));
    areas.push_back(std::move(pts));
  }
  Json lanes = Json::array();
  for (const auto& l : in.map.lanes) {
    Json pts = Json::array();
    for (const auto& v : l.centerline) pts.push_back(point(v));
    lanes.push_back(Json{{"id", l.id},
                         {"centerline", std::move(pts)},
                         {"width", l.width},
                         {"speed_limit", l.speed_limit},
                         {"successors", l.successors}});
  }
  Json lines = Json::array();
  for (const auto& s : in.map.stop_lines) {
    lines.push_back(Json{{"id", s.id},
                         {"lane_id", s.lane_id},
                         {"segment", Json::array({point(s.a), point(s.b)})},
                         {"state", to_string(s.state)}});
  }
  return Json{{"ego_history", std::move(hist)},
              {"agents", std::move(agents)},
              {"map", Json{{"drivable_areas", std::move(areas)}, {"lanes", std::move(lanes)}, {"stop_lines", std::move(lines)}}},
              {"command", to_string(in.command)}};
}

PlannerInput planner_input_from_json(const Json& j) {
  expect_keys(j, {"ego_history", "agents", "map", "command"}, {}, "input");
  PlannerInput in;
  for (const auto& s : j.at("ego_history")) in.ego_history.push_back(ego_state_from_json(s));
  for (const auto& a : j.at("agents")) {
    expect_keys(a, {"id", "x", "y", "heading", "length", "width", "velocity"}, {}, "input.agents");
    AgentView v;
    v.id = a.at("id").get<std::string>();
    v.box = {{number(a, "x", "agent"), number(a, "y", "agent")},
             number(a, "heading", "agent"),
             number(a, "length", "agent"),
             number(a, "width", "agent")};
    v.velocity = number(a, "velocity", "agent");
    in.agents.push_back(v);
  }
  const Json& m = j.at("map");
  expect_keys(m, {"drivable_areas", "lanes", "stop_lines"}, {}, "input.map");
  for (const auto& area : m.at("drivable_areas")) {
    Polygon p;
    for (const auto& v : area) p.points.push_back(point_from(v, "input.map.drivable_areas"));
    in.map.drivable_areas.push_back(std::move(p));
  }
  for (const auto& l : m.at("lanes")) {
    expect_keys(l, {"id", "centerline", "width", "speed_limit", "successors"}, {}, "input.map.lanes");
    LaneView v;
    v.id = l.at("id").get<std::string>();
    for (const auto& p : l.at("centerline")) v.centerline.push_back(point_from(p, "input.map.lanes"));
    v.width = number(l, "width", "lane");
    v.speed_limit = number(l, "speed_limit", "lane");
    v.successors = l.at("successors").get<std::vector<std::string>>();
    in.map.lanes.push_back(std::move(v));
  }
  for (const auto& s : m.at("stop_lines")) {
    expect_keys(s, {"id", "lane_id", "segment", "state"}, {}, "input.map.stop_lines");
    StopLineView v;
    v.id = s.at("id").get<std::string>();
    v.lane_id = s.at("lane_id").get<std::string>();
    v.a = point_from(s.at("segment").at(0), "input.map.stop_lines");
    v.b = point_from(s.at("segment").at(1), "input.map.stop_lines");
    v.state = s.at("state").get<std::string>() == "red" ? LightState::Red : LightState::Green;
    in.map.stop_lines.push_back(v);
  }
  in.command = command_from_string(j.at("command").get<std::string>());
  return in;
}

Trajectory parse_plan_response(const std::string& line) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ProtocolError(std::string("response is not valid: ") + e.what());
  }
  if (!j.is_object() || !j.contains("waypoints") || !j.at("waypoints").is_array()) {
    throw ProtocolError("response lacks a waypoints array");
  }
  std::vector<Pose2D> poses;
  for (const auto& w : j.at("waypoints")) {
    if (!w.is_array() || w.size() != 3 || !w[0].is_number() || !w[1].is_number() || !w[2].is_number()) {
      throw ProtocolError("waypoint must be [x, y, heading]");
    }
    poses.push_back({w[0].get<double>(), w[1].get<double>(), w[2].get<double>()});
  }
  Trajectory t = local_trajectory(poses);
  validate_plan(t);
  return t;
}

ExternalPlanner::ExternalPlanner(std::string id, std::vector<std::string> argv, std::chrono::milliseconds timeout)
    : id_(std::move(id)), argv_(std::move(argv)), timeout_(timeout) {
  if (argv_.empty()) throw ConfigError("planner '" + id_ + "': empty command");
}

ExternalPlanner::ExternalPlanner(const ExternalPlanner& o) : id_(o.id_), argv_(o.argv_), timeout_(o.timeout_) {}

ExternalPlanner::~ExternalPlanner() { stop(); }

void ExternalPlanner::start() {
  int in_pipe[2];
  int out_pipe[2];
  if (pipe2(in_pipe, O_CLOEXEC) != 0 || pipe2(out_pipe, O_CLOEXEC) != 0) throw ExitError(id_ + ": pipe: " + std::strerror(errno));
  // SIGPIPE would kill the harness when a planner dies mid-write
  static const bool sigpipe_ignored = [] {
    signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)sigpipe_ignored;
  std::vector<char*> args;
  for (auto& a : argv_) args.push_back(a.data());
  args.push_back(nullptr);
  const pid_t pid = fork();
  if (pid < 0) throw ExitError(id_ + ": fork: " + std::strerror(errno));
  if (pid == 0) {
    // dup2 clears close-on-exec on the standard streams only
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    execvp(args[0], args.data());
    _exit(127);
  }
  close(in_pipe[0]);
  close(out_pipe[1]);
  pid_ = pid;
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  buffer_.clear();

  send_line(Json{{"handshake", kProtocolVersion}}.dump());
  const std::string reply = read_line();
  Json j;
  try {
    j = Json::parse(reply);
  } catch (const nlohmann::json::parse_error&) {
    stop();
    throw ProtocolError(id_ + ": malformed handshake reply");
  }
  if (!j.is_object() || j.value("handshake", "") != kProtocolVersion) {
    stop();
    throw ProtocolError(id_ + ": handshake version mismatch");
  }
}

void ExternalPlanner::stop() {
  if (pid_ <= 0) return;
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  to_child_ = from_child_ = -1;
  int status = 0;
  if (waitpid(pid_, &status, WNOHANG) == 0) {
    kill(pid_, SIGKILL);
    waitpid(pid_, &status, 0);
  }
  pid_ = -1;
}

void ExternalPlanner::send_line(const std::string& line) {
  const std::string data = line + "\n";
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = write(to_child_, data.data() + off, data.size() - off);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      stop();
      throw ExitError(id_ + ": planner process closed its input");
    }
    off += static_cast<std::size_t>(n);
  }
}

std::string ExternalPlanner::read_line() {
  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  for (;;) {
    const auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) {
      stop();
      throw TimeoutError(id_ + ": no response within " + std::to_string(timeout_.count()) + " ms");
    }
    pollfd pfd{from_child_, POLLIN, 0};
    const int r = poll(&pfd, 1, static_cast<int>(left.count()));
    if (r < 0 && errno == EINTR) continue;
    if (r == 0) continue;
    char buf[65536];
    const ssize_t n = read(from_child_, buf, sizeof(buf));
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      stop();
      throw ExitError(id_ + ": planner process exited");
    }
    buffer_.append(buf, static_cast<std::size_t>(n));
  }
}

Trajectory ExternalPlanner::plan(const PlannerInput& in, const PlanContext& ctx) {
  if (pid_ <= 0) start();
  send_line(Json{{"scenario_id", ctx.scenario_id}, {"tick", ctx.tick}, {"input", to_json(in)}}.dump());
  const std::string line = read_line();
  try {
    return parse_plan_response(line);
  } catch (const ProtocolError& e) {
    throw ProtocolError(id_ + ": " + e.what());
  }
}

}  // namespace pseudosim
