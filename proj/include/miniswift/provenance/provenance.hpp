#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "miniswift/exec/provider.hpp"
#include "miniswift/util/digest.hpp"

namespace miniswift::provenance {

namespace fs = std::filesystem;

struct FileEntry {
  std::string path;
  std::int64_t size = -1;  // -1 when the file is absent
  std::string digest;
};

// One execution attempt of one task, self-contained.
struct InvocationRecord {
  std::int64_t task_id = 0;
  int attempt = 0;
  std::string proc;
  std::string site;
  std::string host_name;
  std::string host_id;
  std::string working_dir;
  std::map<std::string, std::string> environment;
  std::vector<std::string> command_line;
  std::optional<int> exit_code;
  std::optional<int> signal;
  std::string status;  // succeeded | failed
  std::string reason;
  double user_s = 0, system_s = 0;
  bool usage_unavailable = true;
  double wallclock_ms = 0;
  double start = 0, end = 0;
  std::vector<FileEntry> stage_in, stage_out;
  std::vector<std::string> inputs, outputs;  // logical paths
};

inline void to_json(nlohmann::json& j, const FileEntry& f) {
  j = {{"path", f.path}, {"size", f.size}, {"digest", f.digest}};
}
inline void from_json(const nlohmann::json& j, FileEntry& f) {
  f.path = j.value("path", "");
  f.size = j.value("size", std::int64_t{-1});
  f.digest = j.value("digest", "");
}

inline void to_json(nlohmann::json& j, const InvocationRecord& r) {
  j = {{"task_id", r.task_id},
       {"attempt", r.attempt},
       {"proc", r.proc},
       {"site", r.site},
       {"host_name", r.host_name},
       {"host_id", r.host_id},
       {"working_dir", r.working_dir},
       {"environment", r.environment},
       {"command_line", r.command_line},
       {"status", r.status},
       {"reason", r.reason},
       {"user_time_s", r.user_s},
       {"system_time_s", r.system_s},
       {"usage_unavailable", r.usage_unavailable},
       {"wallclock_ms", r.wallclock_ms},
       {"start", r.start},
       {"end", r.end},
       {"stage_in", r.stage_in},
       {"stage_out", r.stage_out},
       {"inputs", r.inputs},
       {"outputs", r.outputs}};
  if (r.exit_code) j["exit_code"] = *r.exit_code;
  if (r.signal) j["signal"] = *r.signal;
}

inline void from_json(const nlohmann::json& j, InvocationRecord& r) {
  r.task_id = j.value("task_id", std::int64_t{0});
  r.attempt = j.value("attempt", 0);
  r.proc = j.value("proc", "");
  r.site = j.value("site", "");
  r.host_name = j.value("host_name", "");
  r.host_id = j.value("host_id", "");
  r.working_dir = j.value("working_dir", "");
  r.environment = j.value("environment", std::map<std::string, std::string>{});
  r.command_line = j.value("command_line", std::vector<std::string>{});
  if (j.contains("exit_code")) r.exit_code = j["exit_code"].get<int>();
  if (j.contains("signal")) r.signal = j["signal"].get<int>();
  r.status = j.value("status", "");
  r.reason = j.value("reason", "");
  r.user_s = j.value("user_time_s", 0.0);
  r.system_s = j.value("system_time_s", 0.0);
  r.usage_unavailable = j.value("usage_unavailable", true);
  r.wallclock_ms = j.value("wallclock_ms", 0.0);
  r.start = j.value("start", 0.0);
  r.end = j.value("end", 0.0);
  r.stage_in = j.value("stage_in", std::vector<FileEntry>{});
  r.stage_out = j.value("stage_out", std::vector<FileEntry>{});
  r.inputs = j.value("inputs", std::vector<std::string>{});
  r.outputs = j.value("outputs", std::vector<std::string>{});
}

inline FileEntry describe_file(const std::string& path, bool digest = true) {
  FileEntry f{path, -1, ""};
  std::error_code ec;
  auto sz = fs::file_size(path, ec);
  if (!ec) {
    f.size = static_cast<std::int64_t>(sz);
    if (digest)
      if (auto d = file_digest(path)) f.digest = to_hex(*d);
  }
  return f;
}

inline const std::vector<std::string>& default_env_allowlist() {
  static const std::vector<std::string> names = {"PATH", "HOST", "HOSTNAME", "USER", "PWD"};
  return names;
}

// Captures allowlisted variables from the submitting process plus the job's
// own environment. With full_env every process variable is kept.
inline std::map<std::string, std::string> capture_environment(const exec::JobSpec& job,
                                                              const std::vector<std::string>& extra = {},
                                                              bool full_env = false) {
  std::map<std::string, std::string> out;
  if (full_env) {
    for (char** e = ::environ; e && *e; ++e) {
      std::string kv = *e;
      auto eq = kv.find('=');
      if (eq != std::string::npos) out[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
  } else {
    auto take = [&](const std::string& k) {
      if (const char* v = std::getenv(k.c_str())) out[k] = v;
    };
    for (const auto& k : default_env_allowlist()) take(k);
    for (const auto& k : extra) take(k);
  }
  for (const auto& [k, v] : job.env) out[k] = v;
  return out;
}

inline InvocationRecord make_record(std::int64_t task_id, int attempt, const exec::JobSpec& job,
                                    const exec::JobStatus& st, bool digests = true) {
  InvocationRecord r;
  r.task_id = task_id;
  r.attempt = attempt;
  r.host_name = st.host.empty() ? "unknown" : st.host;
  r.host_id = to_hex(fnv1a64(r.host_name));
  r.working_dir = job.sandbox_dir;
  r.command_line.push_back(job.executable);
  r.command_line.insert(r.command_line.end(), job.args.begin(), job.args.end());
  if (st.signal != 0)
    r.signal = st.signal;
  else
    r.exit_code = st.exit_code;
  r.status = st.succeeded() ? "succeeded" : "failed";
  r.reason = st.reason;
  r.user_s = st.usage.user_s;
  r.system_s = st.usage.system_s;
  r.usage_unavailable = !st.usage.available;
  r.start = st.start_t;
  r.end = st.end_t;
  r.wallclock_ms = std::max(0.0, st.end_t - st.start_t) * 1000.0;
  for (const auto& s : job.stage_in) r.stage_in.push_back(describe_file(s.source, digests));
  for (const auto& s : job.stage_out) r.stage_out.push_back(describe_file(s.dest, digests));
  return r;
}

inline fs::path record_path(const fs::path& run_dir, std::int64_t task_id, int attempt) {
  return run_dir / "provenance" / (std::to_string(task_id) + "." + std::to_string(attempt) + ".json");
}

// Writes `<run-dir>/provenance/<task-id>.<attempt>.json`. Returns false on
// write failure; callers report it as a warning.
inline bool record_invocation(const fs::path& run_dir, const InvocationRecord& r) {
  std::error_code ec;
  fs::create_directories(run_dir / "provenance", ec);
  std::ofstream out(record_path(run_dir, r.task_id, r.attempt));
  if (!out) return false;
  out << nlohmann::json(r).dump(2) << '\n';
  return static_cast<bool>(out);
}

inline std::vector<InvocationRecord> load_records(const fs::path& run_dir) {
  std::vector<InvocationRecord> out;
  std::error_code ec;
  if (!fs::is_directory(run_dir / "provenance", ec)) return out;
  for (const auto& e : fs::directory_iterator(run_dir / "provenance")) {
    if (e.path().extension() != ".json") continue;
    std::ifstream in(e.path());
    auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) continue;
    out.push_back(j.get<InvocationRecord>());
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return std::tie(a.task_id, a.attempt) < std::tie(b.task_id, b.attempt);
  });
  return out;
}

class UnknownDataset : public std::runtime_error {
 public:
  explicit UnknownDataset(const std::string& p) : std::runtime_error("unknown dataset '" + p + "'") {}
};

struct DerivationStep {
  std::int64_t task_id = 0;
  std::string proc;
  std::vector<std::string> outputs;
  std::vector<std::string> inputs;
  int depth = 1;  // 1 for the direct producer
};

struct Derivation {
  std::string dataset;
  std::vector<DerivationStep> steps;  // by depth, then task id
  int depth = 0;                      // longest producer chain
};

// `a` names `b` or a dataset inside it.
inline bool path_within(const std::string& b, const std::string& a) {
  if (b.size() < a.size() || b.compare(0, a.size(), a) != 0) return false;
  return b.size() == a.size() || b[a.size()] == '.' || b[a.size()] == '[';
}

inline Derivation derivation_of(const std::vector<InvocationRecord>& all, const std::string& logical) {
  std::vector<const InvocationRecord*> ok;
  for (const auto& r : all)
    if (r.status == "succeeded") ok.push_back(&r);
  auto producers_of = [&](const std::string& p) {
    std::vector<const InvocationRecord*> out;
    for (auto* r : ok)
      for (const auto& o : r->outputs)
        if (path_within(p, o) || path_within(o, p)) {
          out.push_back(r);
          break;
        }
    return out;
  };
  bool known = false;
  for (const auto& r : all)
    for (const auto* list : {&r.inputs, &r.outputs})
      for (const auto& x : *list)
        if (path_within(logical, x) || path_within(x, logical)) known = true;
  if (!known) throw UnknownDataset(logical);

  Derivation d;
  d.dataset = logical;
  std::map<std::int64_t, int> depth;
  std::map<std::int64_t, const InvocationRecord*> by_id;
  std::function<int(const InvocationRecord*, std::set<std::int64_t>&)> visit =
      [&](const InvocationRecord* r, std::set<std::int64_t>& path) -> int {
    if (auto it = depth.find(r->task_id); it != depth.end()) return it->second;
    if (!path.insert(r->task_id).second) return 0;  // cycle guard
    int below = 0;
    for (const auto& in : r->inputs)
      for (auto* p : producers_of(in))
        if (p->task_id != r->task_id) below = std::max(below, visit(p, path));
    path.erase(r->task_id);
    by_id[r->task_id] = r;
    return depth[r->task_id] = below + 1;
  };
  std::set<std::int64_t> path;
  for (auto* p : producers_of(logical)) d.depth = std::max(d.depth, visit(p, path));
  // Steps: everything reachable, ordered from the dataset outward.
  std::set<std::int64_t> seen;
  std::vector<std::pair<const InvocationRecord*, int>> frontier;
  for (auto* p : producers_of(logical))
    if (seen.insert(p->task_id).second) frontier.emplace_back(p, 1);
  for (std::size_t i = 0; i < frontier.size(); ++i) {
    auto [r, lvl] = frontier[i];
    d.steps.push_back(DerivationStep{r->task_id, r->proc, r->outputs, r->inputs, lvl});
    for (const auto& in : r->inputs)
      for (auto* p : producers_of(in))
        if (seen.insert(p->task_id).second) frontier.emplace_back(p, lvl + 1);
  }
  return d;
}

inline Derivation derivation_of(const fs::path& run_dir, const std::string& logical) {
  return derivation_of(load_records(run_dir), logical);
}

}  // namespace miniswift::provenance
