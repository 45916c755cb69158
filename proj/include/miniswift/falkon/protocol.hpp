#pragma once

#include <nlohmann/json.hpp>

#include <stdexcept>
#include <string>

#include "miniswift/falkon/core.hpp"

namespace miniswift::falkon::wire {

using nlohmann::json;

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Message type names. One JSON object per line, discriminated by "type".
inline constexpr const char* kRegister = "REGISTER";
inline constexpr const char* kRegistered = "REGISTERED";
inline constexpr const char* kTask = "TASK";
inline constexpr const char* kResult = "RESULT";
inline constexpr const char* kHeartbeat = "HEARTBEAT";
inline constexpr const char* kBye = "BYE";
inline constexpr const char* kSubmit = "SUBMIT";
inline constexpr const char* kAck = "ACK";
inline constexpr const char* kNotify = "NOTIFY";
inline constexpr const char* kError = "ERROR";
inline constexpr const char* kStats = "STATS";

inline json parse(const std::string& line) {
  json m = json::parse(line, nullptr, false);
  if (m.is_discarded() || !m.is_object() || !m.contains("type") || !m["type"].is_string())
    throw ProtocolError("malformed message: " + line.substr(0, 120));
  return m;
}

inline std::string type_of(const json& m) { return m.at("type").get<std::string>(); }

inline json job_fields(const exec::JobSpec& j) {
  json m;
  m["exe"] = j.executable;
  m["args"] = j.args;
  m["dir"] = j.sandbox_dir;
  json ins = json::array();
  for (const auto& s : j.stage_in) ins.push_back({{"src", s.source}, {"rel", s.rel}});
  json outs = json::array();
  for (const auto& s : j.stage_out) outs.push_back({{"rel", s.rel}, {"dest", s.dest}});
  m["stageins"] = std::move(ins);
  m["stageouts"] = std::move(outs);
  if (!j.env.empty()) m["env"] = j.env;
  if (!j.key.empty()) m["key"] = j.key;
  if (j.declared_duration) m["duration_s"] = *j.declared_duration;
  return m;
}

inline exec::JobSpec job_from(const json& m) {
  exec::JobSpec j;
  j.executable = m.at("exe").get<std::string>();
  j.args = m.value("args", std::vector<std::string>{});
  j.sandbox_dir = m.value("dir", std::string{});
  for (const auto& s : m.value("stageins", json::array())) j.stage_in.push_back({s.at("src"), s.at("rel")});
  for (const auto& s : m.value("stageouts", json::array())) j.stage_out.push_back({s.at("rel"), s.at("dest")});
  j.env = m.value("env", std::map<std::string, std::string>{});
  j.key = m.value("key", std::string{});
  if (m.contains("duration_s")) j.declared_duration = m["duration_s"].get<double>();
  return j;
}

inline json result_fields(const TaskResult& r) {
  json m;
  m["exit"] = r.exit_code;
  if (r.signal) m["signal"] = *r.signal;
  m["duration_ms"] = r.duration_ms;
  m["host"] = r.host;
  if (!r.reason.empty()) m["reason"] = r.reason;
  if (!r.stderr_text.empty()) m["stderr"] = r.stderr_text;
  if (r.usage.available) {
    m["user_s"] = r.usage.user_s;
    m["system_s"] = r.usage.system_s;
  }
  return m;
}

inline TaskResult result_from(const json& m) {
  TaskResult r;
  r.exit_code = m.value("exit", 0);
  if (m.contains("signal")) r.signal = m["signal"].get<int>();
  r.duration_ms = m.value("duration_ms", 0.0);
  r.host = m.value("host", std::string{});
  r.reason = m.value("reason", std::string{});
  r.stderr_text = m.value("stderr", std::string{});
  if (m.contains("user_s")) {
    r.usage.available = true;
    r.usage.user_s = m["user_s"].get<double>();
    r.usage.system_s = m.value("system_s", 0.0);
  }
  return r;
}

inline std::string reg(const std::string& worker_id, int slots) {
  return json{{"type", kRegister}, {"worker_id", worker_id}, {"slots", slots}}.dump();
}
inline std::string registered(const std::string& worker_id, double heartbeat_s) {
  return json{{"type", kRegistered}, {"worker_id", worker_id}, {"heartbeat_s", heartbeat_s}}.dump();
}
inline std::string task(TaskId id, const exec::JobSpec& j) {
  json m = job_fields(j);
  m["type"] = kTask;
  m["task_id"] = id;
  return m.dump();
}
inline std::string result(TaskId id, const TaskResult& r) {
  json m = result_fields(r);
  m["type"] = kResult;
  m["task_id"] = id;
  return m.dump();
}
inline std::string heartbeat(const std::string& worker_id) {
  return json{{"type", kHeartbeat}, {"worker_id", worker_id}}.dump();
}
inline std::string bye() { return json{{"type", kBye}}.dump(); }
inline std::string submit(std::int64_t tag, const exec::JobSpec& j) {
  json m = job_fields(j);
  m["type"] = kSubmit;
  m["tag"] = tag;
  return m.dump();
}
inline std::string ack(std::int64_t tag, TaskId id) { return json{{"type", kAck}, {"tag", tag}, {"task_id", id}}.dump(); }
inline std::string error(std::int64_t tag, const std::string& what) {
  return json{{"type", kError}, {"tag", tag}, {"error", what}}.dump();
}
inline std::string notify(TaskId id, const TaskResult& r) {
  json m = result_fields(r);
  m["type"] = kNotify;
  m["task_id"] = id;
  return m.dump();
}

inline json stats_json(const Stats& s, int workers, std::size_t free_slots) {
  return json{{"type", kStats},
              {"queue_length", s.queue_length},
              {"enqueued", s.enqueued},
              {"dispatch_count", s.dispatch_count},
              {"completions", s.completions},
              {"successes", s.successes},
              {"duplicate_results", s.duplicate_results},
              {"requeues", s.requeues},
              {"throughput_ewma", s.throughput_ewma},
              {"task_messages", s.task_messages},
              {"result_messages", s.result_messages},
              {"registration_messages", s.registration_messages},
              {"heartbeat_messages", s.heartbeat_messages},
              {"workers", workers},
              {"free_slots", free_slots}};
}

}  // namespace miniswift::falkon::wire
