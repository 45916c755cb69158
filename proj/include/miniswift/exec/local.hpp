#pragma once

#include <spawn.h>
#include <sys/resource.h>
#include <sys/wait.h>
#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "miniswift/exec/provider.hpp"

extern char** environ;

namespace miniswift::exec {

struct LocalParams {
  int max_parallel = 4;
  bool keep_sandbox = false;
  std::string stub;                 // when set, executables not found on app_dirs run through this stub
  std::vector<std::string> app_dirs;
};

inline std::string local_hostname() {
  char buf[256] = {0};
  if (gethostname(buf, sizeof buf - 1) != 0 || buf[0] == 0) return "localhost";
  return buf;
}

// Runs one job in its sandbox: stage in, spawn, wait, stage out. Blocking;
// safe to call from any thread.
inline JobStatus run_local(const JobSpec& job, const LocalParams& params) {
  namespace fs = std::filesystem;
  JobStatus st;
  st.host = local_hostname();
  auto clock = [] {
    return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
  };
  st.start_t = clock();
  auto fail = [&](std::string reason) {
    st.phase = Phase::failed;
    st.reason = std::move(reason);
    st.end_t = clock();
    return st;
  };
  std::error_code ec;
  fs::path box = job.sandbox_dir;
  if (box.empty()) box = fs::current_path();
  bool own_box = !job.sandbox_dir.empty();
  if (own_box) fs::create_directories(box, ec);
  if (ec) return fail("sandbox: " + ec.message());

  for (const auto& s : job.stage_in) {
    if (!fs::exists(s.source, ec)) return fail("stage-in-missing: " + s.source);
    fs::path dst = box / s.rel;
    fs::create_directories(dst.parent_path(), ec);
    fs::remove(dst, ec);
    fs::create_hard_link(s.source, dst, ec);
    if (ec) {
      ec.clear();
      fs::copy_file(s.source, dst, fs::copy_options::overwrite_existing, ec);
      if (ec) return fail("stage-in: " + ec.message());
    }
  }
  for (const auto& s : job.stage_out) fs::create_directories((box / s.rel).parent_path(), ec);

  if (job.executable == ":") {
    st.phase = Phase::completed;
    st.exit_code = 0;
  } else {
    std::vector<std::string> argv;
    std::string exe = job.executable;
    bool found = exe.find('/') != std::string::npos;
    if (!found) {
      for (const auto& dir : params.app_dirs) {
        fs::path cand = fs::path(dir) / exe;
        if (fs::exists(cand, ec)) {
          exe = fs::absolute(cand).string();
          found = true;
          break;
        }
      }
    }
    if (!found && !params.stub.empty()) {
      argv.push_back(params.stub);
      exe = params.stub;
      found = true;
    }
    argv.push_back(job.executable);
    for (const auto& a : job.args) argv.push_back(a);

    std::vector<std::string> envs;
    for (char** e = environ; *e; ++e) {
      std::string kv = *e;
      auto key = kv.substr(0, kv.find('='));
      if (!job.env.count(key)) envs.push_back(kv);
    }
    for (const auto& [k, v] : job.env) envs.push_back(k + "=" + v);
    std::vector<char*> cargv, cenv;
    for (auto& a : argv) cargv.push_back(a.data());
    cargv.push_back(nullptr);
    for (auto& e : envs) cenv.push_back(e.data());
    cenv.push_back(nullptr);

    std::string out_path = job.stdout_path.empty() ? (box / "stdout.txt").string() : job.stdout_path;
    std::string err_path = job.stderr_path.empty() ? (box / "stderr.txt").string() : job.stderr_path;
    std::string in_path = job.stdin_path.empty() ? "/dev/null" : job.stdin_path;
    posix_spawn_file_actions_t fa;
    posix_spawn_file_actions_init(&fa);
    posix_spawn_file_actions_addopen(&fa, 0, in_path.c_str(), O_RDONLY, 0);
    posix_spawn_file_actions_addopen(&fa, 1, out_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    posix_spawn_file_actions_addopen(&fa, 2, err_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    posix_spawn_file_actions_addchdir_np(&fa, box.c_str());
    pid_t pid = 0;
    int rc = found ? posix_spawn(&pid, exe.c_str(), &fa, nullptr, cargv.data(), cenv.data())
                   : posix_spawnp(&pid, exe.c_str(), &fa, nullptr, cargv.data(), cenv.data());
    posix_spawn_file_actions_destroy(&fa);
    if (rc != 0) return fail("spawn-failed: " + exe + ": " + std::strerror(rc));
    int status = 0;
    struct rusage ru {};
    while (wait4(pid, &status, 0, &ru) < 0 && errno == EINTR) {
    }
    st.usage.user_s = static_cast<double>(ru.ru_utime.tv_sec) + ru.ru_utime.tv_usec / 1e6;
    st.usage.system_s = static_cast<double>(ru.ru_stime.tv_sec) + ru.ru_stime.tv_usec / 1e6;
    st.usage.available = true;
    st.phase = Phase::completed;
    if (WIFSIGNALED(status)) {
      st.signal = WTERMSIG(status);
      st.exit_code = -1;
    } else {
      st.exit_code = WEXITSTATUS(status);
    }
    std::ifstream err(err_path);
    std::string text((std::istreambuf_iterator<char>(err)), std::istreambuf_iterator<char>());
    if (text.size() > 4096) text = text.substr(text.size() - 4096);
    st.stderr_text = text;
  }

  if (st.succeeded()) {
    for (const auto& s : job.stage_out) {
      fs::path src = box / s.rel;
      if (!fs::exists(src, ec)) return fail("stage-out-missing: " + s.rel);
      fs::create_directories(fs::path(s.dest).parent_path(), ec);
      fs::copy_file(src, s.dest, fs::copy_options::overwrite_existing, ec);
      if (ec) return fail("stage-out: " + ec.message());
    }
  }
  st.end_t = clock();
  if (st.succeeded() && !params.keep_sandbox && own_box) fs::remove_all(box, ec);
  return st;
}

// Bounded worker pool running jobs through run_local.
class LocalProvider : public Provider {
 public:
  explicit LocalProvider(LocalParams p) : params_(std::move(p)) {}
  ~LocalProvider() override { shutdown(); }

  std::string kind() const override { return "local"; }

  void attach(EventLoop& loop, CompletionFn on_done) override {
    loop_ = &loop;
    on_done_ = std::move(on_done);
    if (workers_.empty())
      for (int i = 0; i < std::max(1, params_.max_parallel); ++i) workers_.emplace_back([this] { work(); });
  }

  JobId submit(JobSpec job) override {
    std::lock_guard<std::mutex> lock(mu_);
    if (stopping_) throw SubmitRejected("local provider is shut down");
    JobId id = next_id_++;
    JobStatus st;
    st.submit_t = loop_->now();
    status_[id] = st;
    queue_.emplace_back(id, std::move(job));
    loop_->begin_external();
    cv_.notify_one();
    return id;
  }

  JobStatus status(JobId id) const override {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = status_.find(id);
    if (it == status_.end()) throw UnknownJob(id);
    return it->second;
  }

  void cancel(JobId id) override {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = std::find_if(queue_.begin(), queue_.end(), [&](const auto& q) { return q.first == id; });
    if (it == queue_.end()) return;
    queue_.erase(it);
    status_[id].phase = Phase::cancelled;
    loop_->post([this] { loop_->end_external(); });
  }

  void shutdown() override {
    {
      std::lock_guard<std::mutex> lock(mu_);
      stopping_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_)
      if (t.joinable()) t.join();
    workers_.clear();
  }

 private:
  void work() {
    while (true) {
      std::pair<JobId, JobSpec> item;
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
        if (queue_.empty()) return;
        item = std::move(queue_.front());
        queue_.pop_front();
        status_[item.first].phase = Phase::running;
      }
      JobStatus st;
      double submit_t = 0;
      {
        std::lock_guard<std::mutex> lock(mu_);
        submit_t = status_[item.first].submit_t;
      }
      if (item.second.is_bundle()) {
        st.phase = Phase::completed;
        st.host = local_hostname();
        for (auto m : item.second.members) {
          m.sandbox_dir = item.second.sandbox_dir;
          st.members.push_back(run_local(m, params_));
        }
      } else {
        st = run_local(item.second, params_);
      }
      st.submit_t = submit_t;
      {
        std::lock_guard<std::mutex> lock(mu_);
        status_[item.first] = st;
      }
      JobId id = item.first;
      loop_->post([this, id, st] {
        loop_->end_external();
        if (on_done_) on_done_(id, st);
      });
    }
  }

  LocalParams params_;
  EventLoop* loop_ = nullptr;
  CompletionFn on_done_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::pair<JobId, JobSpec>> queue_;
  std::map<JobId, JobStatus> status_;
  std::vector<std::thread> workers_;
  bool stopping_ = false;
  JobId next_id_ = 1;
};

}  // namespace miniswift::exec
