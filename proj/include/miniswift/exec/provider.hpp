#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "miniswift/exec/stub.hpp"
#include "miniswift/util/digest.hpp"
#include "miniswift/util/event_loop.hpp"

namespace miniswift::exec {

using JobId = std::int64_t;

struct StageIn {
  std::string source;  // physical path
  std::string rel;     // sandbox-relative path
};

struct StageOut {
  std::string rel;
  std::string dest;
};

// One provider submission. A job with members is a bundle: the members run
// one after another in one sandbox and each gets its own status.
struct JobSpec {
  JobId job_id = 0;
  std::string key;  // stable identity of the work, used for deterministic simulation
  std::string executable;
  std::vector<std::string> args;
  std::string stdin_path, stdout_path, stderr_path;
  std::string sandbox_dir;
  std::vector<StageIn> stage_in;
  std::vector<StageOut> stage_out;
  std::map<std::string, std::string> env;
  std::optional<double> declared_duration;
  std::optional<std::string> host_hint;
  std::vector<JobSpec> members;

  bool is_bundle() const { return !members.empty(); }
};

enum class Phase { queued, running, completed, failed, cancelled };

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::queued: return "queued";
    case Phase::running: return "running";
    case Phase::completed: return "completed";
    case Phase::failed: return "failed";
    case Phase::cancelled: return "cancelled";
  }
  return "?";
}

struct ResourceUsage {
  double user_s = 0;
  double system_s = 0;
  bool available = false;
};

struct JobStatus {
  Phase phase = Phase::queued;
  int exit_code = 0;
  std::optional<int> signal;
  std::string reason;  // for Phase::failed
  std::string host;
  std::string stderr_text;
  double submit_t = 0, start_t = 0, end_t = 0;
  ResourceUsage usage;
  std::vector<JobStatus> members;

  bool succeeded() const { return phase == Phase::completed && exit_code == 0 && !signal; }
};

class SubmitRejected : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class UnknownJob : public std::out_of_range {
 public:
  explicit UnknownJob(JobId id) : std::out_of_range("unknown job " + std::to_string(id)) {}
};
class UnsupportedCapability : public std::logic_error {
 public:
  explicit UnsupportedCapability(const std::string& what) : std::logic_error(what + " is not supported") {}
};

using CompletionFn = std::function<void(JobId, const JobStatus&)>;

// submit / status / cancel / suspend / resume over some execution resource.
// Completions are delivered on the attached event loop's thread.
class Provider {
 public:
  virtual ~Provider() = default;
  virtual std::string kind() const = 0;
  virtual void attach(EventLoop& loop, CompletionFn on_done) = 0;
  virtual JobId submit(JobSpec job) = 0;
  virtual JobStatus status(JobId id) const = 0;
  virtual void cancel(JobId id) = 0;
  virtual void suspend(JobId) { throw UnsupportedCapability(kind() + " suspend"); }
  virtual void resume(JobId) { throw UnsupportedCapability(kind() + " resume"); }
  // No job may start on `host` before time `until`.
  virtual void suspend_host(const std::string& host, double until) {
    (void)host;
    (void)until;
  }
  virtual void shutdown() {}
};

// Sandbox-relative name for a physical path: no leading '/', no '..'.
inline std::string sandbox_rel(const std::string& physical) {
  std::string s = physical;
  while (!s.empty() && s.front() == '/') s.erase(s.begin());
  for (std::size_t p; (p = s.find("..")) != std::string::npos;) s.replace(p, 2, "__");
  return s.empty() ? "_" : s;
}

// In-process stand-in for running a job: used by the simulated providers.
// Failures are injected deterministically from the job key.
struct SimExecution {
  bool materialize = true;          // write output files
  double failure_rate = 0;          // chance that an attempt exits 1
  std::uint64_t seed = 0;
  std::map<std::string, std::string> host_errors;  // host -> stderr text emitted by every job there
  std::map<std::string, int> forced_exit;          // job key -> exit code

  // Fills exit status and, on success, writes the stub outputs. The job key
  // is expected to distinguish attempts.
  void run(const JobSpec& job, const std::string& host, JobStatus& st) const {
    st.phase = Phase::completed;
    st.host = host;
    if (auto it = host_errors.find(host); it != host_errors.end()) {
      st.exit_code = 1;
      st.stderr_text = it->second;
      return;
    }
    if (auto it = forced_exit.find(job.key); it != forced_exit.end()) {
      st.exit_code = it->second;
      return;
    }
    if (failure_rate > 0 && keyed_uniform(seed, job.key) < failure_rate) {
      st.exit_code = 1;
      st.stderr_text = "injected failure";
      return;
    }
    st.exit_code = 0;
    if (!materialize || job.executable == ":") return;
    std::vector<std::filesystem::path> ins, outs;
    for (const auto& s : job.stage_in) ins.emplace_back(s.source);
    for (const auto& s : job.stage_out) outs.emplace_back(s.dest);
    if (!write_stub_outputs(job.executable, ins, outs)) {
      st.exit_code = 1;
      st.stderr_text = "cannot write outputs";
    }
  }
};

}  // namespace miniswift::exec
