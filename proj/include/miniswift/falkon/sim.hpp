#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "miniswift/exec/provider.hpp"
#include "miniswift/falkon/core.hpp"
#include "miniswift/util/digest.hpp"

namespace miniswift::falkon {

struct FalkonSimParams {
  int workers = 8;             // nodes allocated when the provider attaches
  int slots_per_worker = 1;
  double dispatch_rate = 487;  // tasks per second the service sends out
  double allocation_latency = 81;
  bool drp = false;            // grow and shrink the pool against the queue
  ProvisionerPolicy policy;
  double crash_rate = 0;       // chance a dispatch is lost to a worker crash
  std::uint64_t seed = 0;
  double reconnect_s = 1.0;    // before a crashed worker registers again
  exec::SimExecution exec;
};

// The dispatcher on virtual time: workers come from a simulated allocator,
// the service sends one task every 1/dispatch_rate seconds, and each task
// runs for its declared duration on a free worker slot.
class FalkonSimProvider : public exec::Provider {
 public:
  explicit FalkonSimProvider(FalkonSimParams p = {}) : p_(std::move(p)) {}

  std::string kind() const override { return "falkon-sim"; }
  const FalkonSimParams& params() const { return p_; }
  const Dispatcher& dispatcher() const { return d_; }
  int nodes_requested() const { return nodes_requested_; }

  void attach(EventLoop& loop, exec::CompletionFn on_done) override {
    loop_ = &loop;
    on_done_ = std::move(on_done);
    d_ = Dispatcher();
    jobs_.clear();
    task_job_.clear();
    disp_free_ = -std::numeric_limits<double>::infinity();
    wake_at_ = std::numeric_limits<double>::infinity();
    next_worker_ = 0;
    pending_alloc_ = 0;
    nodes_requested_ = 0;
    tick_armed_ = false;
    if (p_.workers > 0) allocate(p_.workers);
  }

  exec::JobId submit(exec::JobSpec job) override {
    exec::JobId id = next_id_++;
    Job j;
    j.status.submit_t = loop_->now();
    j.status.phase = exec::Phase::queued;
    std::vector<exec::JobSpec> parts = job.is_bundle() ? job.members : std::vector<exec::JobSpec>{job};
    bool bundle = job.is_bundle();
    j.bundle = bundle;
    if (bundle) j.status.members.resize(parts.size());
    j.outstanding = parts.size();
    jobs_.emplace(id, std::move(j));
    for (std::size_t k = 0; k < parts.size(); ++k) {
      TaskId t = d_.enqueue(std::move(parts[k]));
      task_job_[t] = {id, bundle ? static_cast<int>(k) : -1};
    }
    arm_tick();
    pump();
    return id;
  }

  exec::JobStatus status(exec::JobId id) const override {
    auto it = jobs_.find(id);
    if (it == jobs_.end()) throw exec::UnknownJob(id);
    return it->second.status;
  }

  void cancel(exec::JobId id) override {
    auto it = jobs_.find(id);
    if (it == jobs_.end()) throw exec::UnknownJob(id);
    it->second.cancelled = true;
    it->second.status.phase = exec::Phase::cancelled;
  }

 private:
  struct Job {
    exec::JobStatus status;
    std::size_t outstanding = 0;
    bool bundle = false;
    bool cancelled = false;
  };

  void allocate(int nodes) {
    pending_alloc_ += nodes;
    nodes_requested_ += nodes;
    for (int i = 0; i < nodes; ++i) {
      WorkerId w = "node" + std::to_string(next_worker_++);
      loop_->schedule_after(p_.allocation_latency, [this, w] { join(w); });
    }
  }

  void join(const WorkerId& w) {
    if (pending_alloc_ > 0) --pending_alloc_;
    d_.register_worker(w, p_.slots_per_worker, loop_->now());
    pump();
  }

  void arm_tick() {
    if (!p_.drp || tick_armed_) return;
    tick_armed_ = true;
    loop_->schedule_after(p_.policy.provision_period, [this] { tick(); });
  }

  void tick() {
    tick_armed_ = false;
    double now = loop_->now();
    for (const auto& w : d_.deregister_idle(now, p_.policy)) (void)w;
    int want = provision(d_.queue_length(), d_.free_slots(), d_.live_workers() + pending_alloc_, p_.policy);
    if (want > 0) allocate(want);
    bool idle_above_min = d_.live_workers() > p_.policy.min_workers;
    if (d_.queue_length() > 0 || busy_slots() > 0 || idle_above_min) arm_tick();
  }

  std::size_t busy_slots() const {
    std::size_t n = 0;
    for (const auto& [id, w] : d_.workers()) n += w.in_flight.size();
    return n;
  }

  void pump() {
    while (d_.queue_length() > 0 && d_.free_slots() > 0) {
      double now = loop_->now();
      if (disp_free_ > now) {
        // the service is still sending the previous task
        if (disp_free_ < wake_at_) {
          double at = disp_free_;
          wake_at_ = at;
          loop_->schedule_at(at, [this, at] {
            if (wake_at_ == at) wake_at_ = std::numeric_limits<double>::infinity();
            pump();
          });
        }
        return;
      }
      auto picks = d_.assign(now, 1);
      if (picks.empty()) return;
      auto [t, w] = picks.front();
      double start = now + 1.0 / p_.dispatch_rate;
      disp_free_ = start;
      const auto& entry = d_.task(t);
      int epoch = entry.dispatches;
      double dur = entry.spec.declared_duration.value_or(0.0);
      auto& job = jobs_.at(task_job_.at(t).first);
      if (job.status.phase == exec::Phase::queued) {
        job.status.phase = exec::Phase::running;
        job.status.start_t = start;
      }
      std::string crash_key = entry.spec.key + "@" + std::to_string(t) + "#" + std::to_string(epoch);
      if (p_.crash_rate > 0 && keyed_uniform(p_.seed, crash_key) < p_.crash_rate) {
        loop_->schedule_at(start + dur / 2, [this, w = w] { crash(w); });
      } else {
        loop_->schedule_at(start + dur, [this, t = t, w = w, epoch, start] { finish(t, w, epoch, start); });
      }
    }
  }

  void crash(const WorkerId& w) {
    const auto* reg = d_.worker(w);
    if (!reg || reg->state == WorkerState::deregistered) return;
    d_.worker_lost(w);
    WorkerId again = w + "'";
    loop_->schedule_after(p_.reconnect_s, [this, again] {
      d_.register_worker(again, p_.slots_per_worker, loop_->now());
      pump();
    });
    pump();
  }

  void finish(TaskId t, const WorkerId& w, int epoch, double start) {
    const auto& entry = d_.task(t);
    if (entry.state != TaskState::dispatched || entry.worker != w || entry.dispatches != epoch) return;
    double now = loop_->now();
    exec::JobStatus st;
    st.submit_t = jobs_.at(task_job_.at(t).first).status.submit_t;
    st.start_t = start;
    st.end_t = now;
    p_.exec.run(entry.spec, w, st);
    TaskResult r;
    r.exit_code = st.exit_code;
    r.host = w;
    r.stderr_text = st.stderr_text;
    r.duration_ms = (now - start) * 1000;
    d_.complete(w, t, r, now);
    auto [jid, member] = task_job_.at(t);
    task_job_.erase(t);
    auto& job = jobs_.at(jid);
    if (member >= 0) {
      job.status.members[static_cast<std::size_t>(member)] = st;
    } else {
      job.status.exit_code = st.exit_code;
      job.status.stderr_text = st.stderr_text;
      job.status.host = w;
      job.status.start_t = start;
    }
    if (--job.outstanding == 0) {
      if (!job.cancelled) {
        job.status.phase = exec::Phase::completed;
        if (job.bundle) {
          job.status.exit_code = 0;
          job.status.host = w;
        }
      }
      job.status.end_t = now;
      if (!job.cancelled && on_done_) on_done_(jid, job.status);
    }
    pump();
  }

  FalkonSimParams p_;
  EventLoop* loop_ = nullptr;
  exec::CompletionFn on_done_;
  Dispatcher d_;
  std::map<exec::JobId, Job> jobs_;
  std::map<TaskId, std::pair<exec::JobId, int>> task_job_;
  double disp_free_ = -std::numeric_limits<double>::infinity();
  double wake_at_ = std::numeric_limits<double>::infinity();
  int next_worker_ = 0;
  int pending_alloc_ = 0;
  int nodes_requested_ = 0;
  bool tick_armed_ = false;
  exec::JobId next_id_ = 1;
};

}  // namespace miniswift::falkon
