#pragma once

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "miniswift/exec/provider.hpp"
#include "miniswift/falkon/protocol.hpp"
#include "miniswift/falkon/service.hpp"
#include "miniswift/falkon/worker.hpp"
#include "miniswift/util/net.hpp"

namespace miniswift::falkon {

// A service plus in-process workers on this machine, torn down together.
class LocalDeployment {
 public:
  struct Options {
    int workers = 4;
    int slots = 1;
    exec::LocalParams local;
    ServiceConfig service;
    double crash_rate = 0;
    std::uint64_t seed = 0;
  };

  explicit LocalDeployment(Options opt) : opt_(std::move(opt)), service_(opt_.service) {
    reports_.resize(static_cast<std::size_t>(std::max(0, opt_.workers)));
    service_thread_ = std::thread([this] { service_.run(); });
    for (int i = 0; i < opt_.workers; ++i) {
      WorkerOptions w;
      w.port = service_.port();
      w.slots = opt_.slots;
      w.id = "w" + std::to_string(i);
      w.local = opt_.local;
      w.crash_rate = opt_.crash_rate;
      w.seed = opt_.seed;
      w.backoff_initial_s = 0.01;
      w.backoff_max_s = 0.2;
      w.stop = &stop_;
      worker_threads_.emplace_back([this, w, i] { reports_[static_cast<std::size_t>(i)] = run_worker(w); });
    }
  }
  LocalDeployment(const LocalDeployment&) = delete;
  LocalDeployment& operator=(const LocalDeployment&) = delete;
  ~LocalDeployment() { shutdown(); }

  int port() const { return service_.port(); }
  Service& service() { return service_; }

  void shutdown() {
    if (down_) return;
    down_ = true;
    stop_ = true;
    for (auto& t : worker_threads_) t.join();
    service_.stop();
    service_thread_.join();
  }

  const std::vector<WorkerReport>& reports() const { return reports_; }

 private:
  Options opt_;
  Service service_;
  std::atomic<bool> stop_{false};
  bool down_ = false;
  std::thread service_thread_;
  std::vector<std::thread> worker_threads_;
  std::vector<WorkerReport> reports_;
};

// Submits tasks to a running service and collects notifications; a reader
// thread hands each result to the callback.
class Client {
 public:
  using ResultFn = std::function<void(std::int64_t tag, const TaskResult&)>;

  Client(const std::string& host, int port, ResultFn on_result)
      : ch_(net::connect_tcp(host, port)), on_result_(std::move(on_result)) {
    reader_ = std::thread([this] { read_loop(); });
  }
  Client(const Client&) = delete;
  Client& operator=(const Client&) = delete;
  ~Client() { close(); }

  void submit(std::int64_t tag, const exec::JobSpec& job) {
    std::lock_guard<std::mutex> lock(write_mu_);
    ch_.write_line(wire::submit(tag, job));
  }

  void close() {
    if (closed_.exchange(true)) return;
    ch_.shutdown();
    if (reader_.joinable()) reader_.join();
    ch_.close();
  }

  std::size_t errors() const { return errors_; }

 private:
  void read_loop() {
    while (true) {
      auto line = ch_.read_line();
      if (!line) break;
      wire::json m;
      try {
        m = wire::parse(*line);
      } catch (const wire::ProtocolError&) {
        continue;
      }
      std::string type = wire::type_of(m);
      if (type == wire::kAck) {
        std::lock_guard<std::mutex> lock(map_mu_);
        TaskId task = m.at("task_id").get<TaskId>();
        std::int64_t tag = m.at("tag").get<std::int64_t>();
        if (auto early = early_.find(task); early != early_.end()) {
          TaskResult r = early->second;
          early_.erase(early);
          on_result_(tag, r);
        } else {
          tags_[task] = tag;
        }
      } else if (type == wire::kNotify) {
        TaskId task = m.at("task_id").get<TaskId>();
        TaskResult r = wire::result_from(m);
        std::int64_t tag = 0;
        {
          std::lock_guard<std::mutex> lock(map_mu_);
          auto it = tags_.find(task);
          if (it == tags_.end()) {
            early_[task] = r;
            continue;
          }
          tag = it->second;
          tags_.erase(it);
        }
        on_result_(tag, r);
      } else if (type == wire::kError) {
        ++errors_;
        TaskResult r;
        r.exit_code = -1;
        r.reason = "falkon: " + m.value("error", std::string{"error"});
        on_result_(m.value("tag", std::int64_t{0}), r);
      }
    }
    TaskResult lost;
    lost.exit_code = -1;
    lost.reason = "falkon: connection lost";
    std::vector<std::int64_t> orphans;
    {
      std::lock_guard<std::mutex> lock(map_mu_);
      for (const auto& [task, tag] : tags_) orphans.push_back(tag);
      tags_.clear();
    }
    if (!closed_)
      for (auto tag : orphans) on_result_(tag, lost);
  }

  net::LineChannel ch_;
  ResultFn on_result_;
  std::thread reader_;
  std::mutex write_mu_, map_mu_;
  std::unordered_map<TaskId, std::int64_t> tags_;
  std::unordered_map<TaskId, TaskResult> early_;
  std::atomic<bool> closed_{false};
  std::atomic<std::size_t> errors_{0};
};

// Engine provider over a Falkon service. Bundles are split: each member is
// its own task, since the dispatcher handles fine-grained work directly.
class FalkonProvider : public exec::Provider {
 public:
  FalkonProvider(std::string host, int port) : host_(std::move(host)), port_(port) {}

  // Owns a local deployment started on first attach.
  explicit FalkonProvider(LocalDeployment::Options embedded) : embedded_opts_(std::move(embedded)) {}

  std::string kind() const override { return "falkon"; }

  void attach(EventLoop& loop, exec::CompletionFn on_done) override {
    loop_ = &loop;
    on_done_ = std::move(on_done);
    if (embedded_opts_ && !embedded_) {
      embedded_ = std::make_unique<LocalDeployment>(*embedded_opts_);
      host_ = "127.0.0.1";
      port_ = embedded_->port();
    }
    client_ = std::make_unique<Client>(host_, port_, [this](std::int64_t tag, const TaskResult& r) { on_result(tag, r); });
  }

  exec::JobId submit(exec::JobSpec job) override {
    exec::JobId id = next_id_++;
    Pending p;
    p.status.submit_t = loop_->now();
    p.status.phase = exec::Phase::running;
    std::vector<exec::JobSpec> parts;
    if (job.is_bundle()) {
      parts = job.members;
      p.status.members.resize(parts.size());
    } else {
      parts.push_back(job);
    }
    p.outstanding = parts.size();
    {
      std::lock_guard<std::mutex> lock(mu_);
      jobs_.emplace(id, std::move(p));
    }
    loop_->begin_external();
    for (std::size_t k = 0; k < parts.size(); ++k) {
      std::int64_t tag = next_tag_++;
      {
        std::lock_guard<std::mutex> lock(mu_);
        tag_job_[tag] = {id, job.is_bundle() ? static_cast<int>(k) : -1};
      }
      client_->submit(tag, parts[k]);
    }
    return id;
  }

  exec::JobStatus status(exec::JobId id) const override {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) throw exec::UnknownJob(id);
    return it->second.status;
  }

  void cancel(exec::JobId id) override {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) throw exec::UnknownJob(id);
    it->second.cancelled = true;
  }

  void shutdown() override {
    if (client_) client_->close();
    client_.reset();
    if (embedded_) embedded_->shutdown();
    embedded_.reset();
  }

  ~FalkonProvider() override { shutdown(); }

 private:
  struct Pending {
    exec::JobStatus status;
    std::size_t outstanding = 0;
    bool cancelled = false;
  };

  static void fill(exec::JobStatus& st, const TaskResult& r, double now) {
    st.phase = r.reason.empty() ? exec::Phase::completed : exec::Phase::failed;
    st.exit_code = r.exit_code;
    st.signal = r.signal;
    st.reason = r.reason;
    st.host = r.host;
    st.stderr_text = r.stderr_text;
    st.usage = r.usage;
    st.end_t = now;
    st.start_t = std::max(st.submit_t, now - r.duration_ms / 1000.0);
  }

  void on_result(std::int64_t tag, const TaskResult& r) {
    loop_->post([this, tag, r] {
      exec::JobId id = 0;
      exec::JobStatus done;
      bool cancelled = false;
      {
        std::lock_guard<std::mutex> lock(mu_);
        auto tj = tag_job_.find(tag);
        if (tj == tag_job_.end()) return;
        auto [job, member] = tj->second;
        tag_job_.erase(tj);
        auto& p = jobs_.at(job);
        double now = loop_->now();
        if (member < 0) {
          fill(p.status, r, now);
        } else {
          auto& ms = p.status.members[static_cast<std::size_t>(member)];
          ms.submit_t = p.status.submit_t;
          fill(ms, r, now);
        }
        if (--p.outstanding > 0) return;
        if (member >= 0) {
          p.status.phase = exec::Phase::completed;
          p.status.exit_code = 0;
          p.status.end_t = now;
          p.status.start_t = p.status.submit_t;
          if (!p.status.members.empty()) p.status.host = p.status.members.front().host;
        }
        cancelled = p.cancelled;
        if (cancelled) p.status.phase = exec::Phase::cancelled;
        id = job;
        done = p.status;
      }
      loop_->end_external();
      if (!cancelled && on_done_) on_done_(id, done);
    });
  }

  std::string host_;
  int port_ = 0;
  std::optional<LocalDeployment::Options> embedded_opts_;
  std::unique_ptr<LocalDeployment> embedded_;
  std::unique_ptr<Client> client_;
  EventLoop* loop_ = nullptr;
  exec::CompletionFn on_done_;
  mutable std::mutex mu_;
  std::map<exec::JobId, Pending> jobs_;
  std::unordered_map<std::int64_t, std::pair<exec::JobId, int>> tag_job_;
  exec::JobId next_id_ = 1;
  std::int64_t next_tag_ = 1;
};

}  // namespace miniswift::falkon
