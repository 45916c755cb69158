#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <numeric>
#include <queue>
#include <string>
#include <vector>

#include "miniswift/exec/provider.hpp"

namespace miniswift::exec {

// A batch scheduler whose dispatcher starts at most one job every 1/r
// seconds, in release order, onto P x slots_per_node slots.
struct SimBatchModel {
  int nodes = 62;
  int slots_per_node = 1;
  double dispatch_rate = 2.0;      // r, jobs per second
  double queue_wait_base = 10.0;   // fixed queueing delay before a job is eligible
  double allocation_latency = 0;   // before the first start on each node

  int slots() const { return nodes * slots_per_node; }
  double overhead() const { return 1.0 / dispatch_rate; }
};

struct BatchJob {
  double release = 0;
  double duration = 0;
};

struct BatchTrace {
  std::vector<double> start;
  std::vector<double> end;
  std::vector<int> slot;
  double makespan = 0;
};

namespace detail {

// (free time, slot) with the earliest, then lowest-numbered slot on top.
using SlotHeap = std::priority_queue<std::pair<double, int>, std::vector<std::pair<double, int>>,
                                     std::greater<std::pair<double, int>>>;

inline SlotHeap initial_slots(const SimBatchModel& m) {
  SlotHeap h;
  for (int s = 0; s < m.slots(); ++s) h.emplace(m.allocation_latency, s);
  return h;
}

}  // namespace detail

// Reference trace: job i (taken in release order) begins dispatch at
// max(release + queue_wait_base, dispatcher free, earliest slot free) and
// starts 1/r later on that slot.
inline BatchTrace simulate_batch(const std::vector<BatchJob>& jobs, const SimBatchModel& m) {
  BatchTrace tr;
  std::size_t n = jobs.size();
  tr.start.assign(n, 0);
  tr.end.assign(n, 0);
  tr.slot.assign(n, -1);
  if (n == 0) return tr;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return jobs[a].release < jobs[b].release; });
  auto slots = detail::initial_slots(m);
  double disp_free = -std::numeric_limits<double>::infinity();
  double first = jobs[order.front()].release, last = first;
  for (auto i : order) {
    auto [slot_free, sid] = slots.top();
    slots.pop();
    double begin = std::max({jobs[i].release + m.queue_wait_base, disp_free, slot_free});
    double start = begin + m.overhead();
    disp_free = start;
    tr.start[i] = start;
    tr.end[i] = start + jobs[i].duration;
    tr.slot[i] = sid;
    slots.emplace(tr.end[i], sid);
    last = std::max(last, tr.end[i]);
  }
  tr.makespan = last - first;
  return tr;
}

// Event-driven provider over the same model, for engine runs in virtual
// time. Jobs execute through SimExecution when they finish.
class SimBatchProvider : public Provider {
 public:
  SimBatchProvider(std::string site, SimBatchModel model, SimExecution exec = {})
      : site_(std::move(site)), model_(model), exec_(std::move(exec)), slots_(detail::initial_slots(model_)) {}

  std::string kind() const override { return "simbatch"; }
  const SimBatchModel& model() const { return model_; }

  void attach(EventLoop& loop, CompletionFn on_done) override {
    loop_ = &loop;
    on_done_ = std::move(on_done);
    slots_ = detail::initial_slots(model_);
    fifo_.clear();
    jobs_.clear();
    host_until_.clear();
    disp_free_ = -std::numeric_limits<double>::infinity();
    wake_at_ = std::numeric_limits<double>::infinity();
  }

  JobId submit(JobSpec job) override {
    JobId id = next_id_++;
    Entry e;
    e.status.submit_t = loop_->now();
    e.release = e.status.submit_t;
    e.job = std::move(job);
    jobs_.emplace(id, std::move(e));
    fifo_.push_back(id);
    pump();
    return id;
  }

  JobStatus status(JobId id) const override {
    auto it = jobs_.find(id);
    if (it == jobs_.end()) throw UnknownJob(id);
    JobStatus st = it->second.status;
    if (st.phase == Phase::queued && it->second.dispatched && loop_->now() >= st.start_t) st.phase = Phase::running;
    return st;
  }

  void cancel(JobId id) override {
    auto it = jobs_.find(id);
    if (it == jobs_.end()) throw UnknownJob(id);
    auto& e = it->second;
    if (e.status.phase == Phase::completed || e.status.phase == Phase::failed) return;
    e.status.phase = Phase::cancelled;
    fifo_.erase(std::remove(fifo_.begin(), fifo_.end(), id), fifo_.end());
  }

  // Queue hold / release.
  void suspend(JobId id) override {
    auto it = jobs_.find(id);
    if (it == jobs_.end()) throw UnknownJob(id);
    if (!it->second.dispatched) it->second.held = true;
  }
  void resume(JobId id) override {
    auto it = jobs_.find(id);
    if (it == jobs_.end()) throw UnknownJob(id);
    it->second.held = false;
    pump();
  }

  void suspend_host(const std::string& host, double until) override {
    host_until_[host] = std::max(host_until_[host], until);
  }

  std::string host_of(int slot) const { return site_ + "-n" + std::to_string(slot / model_.slots_per_node); }

  std::size_t queued() const { return fifo_.size(); }

 private:
  struct Entry {
    JobSpec job;
    JobStatus status;
    double release = 0;
    bool dispatched = false;
    bool held = false;
  };

  double duration_of(const JobSpec& j) const {
    if (!j.is_bundle()) return j.declared_duration.value_or(0.0);
    double d = 0;
    for (const auto& m : j.members) d += m.declared_duration.value_or(0.0);
    return d;
  }

  void pump() {
    while (!fifo_.empty()) {
      auto pos = std::find_if(fifo_.begin(), fifo_.end(), [&](JobId id) { return !jobs_.at(id).held; });
      if (pos == fifo_.end()) return;
      JobId id = *pos;
      Entry& e = jobs_.at(id);
      // Skip over slots on suspended hosts.
      while (true) {
        auto [free_t, sid] = slots_.top();
        auto h = host_until_.find(host_of(sid));
        if (h == host_until_.end() || h->second <= free_t) break;
        slots_.pop();
        slots_.emplace(h->second, sid);
      }
      auto [slot_free, sid] = slots_.top();
      double begin = std::max({e.release + model_.queue_wait_base, disp_free_, slot_free});
      double now = loop_->now();
      if (begin > now) {
        if (begin < wake_at_) {
          wake_at_ = begin;
          loop_->schedule_at(begin, [this, begin] {
            if (wake_at_ == begin) wake_at_ = std::numeric_limits<double>::infinity();
            pump();
          });
        }
        return;
      }
      slots_.pop();
      fifo_.erase(pos);
      double start = std::max(begin, now) + model_.overhead();
      disp_free_ = start;
      double end = start + duration_of(e.job);
      slots_.emplace(end, sid);
      e.dispatched = true;
      e.status.start_t = start;
      e.status.host = host_of(sid);
      loop_->schedule_at(end, [this, id, end] { finish(id, end); });
    }
  }

  void finish(JobId id, double end) {
    Entry& e = jobs_.at(id);
    if (e.status.phase == Phase::cancelled) return;
    e.status.end_t = end;
    if (e.job.is_bundle()) {
      double t = e.status.start_t;
      for (const auto& m : e.job.members) {
        JobStatus ms;
        ms.submit_t = e.status.submit_t;
        ms.start_t = t;
        t += m.declared_duration.value_or(0.0);
        ms.end_t = t;
        exec_.run(m, e.status.host, ms);
        e.status.members.push_back(std::move(ms));
      }
      e.status.phase = Phase::completed;
      e.status.exit_code = 0;
    } else {
      exec_.run(e.job, e.status.host, e.status);
    }
    JobStatus st = e.status;
    e.job = JobSpec{};  // drop the payload, keep the status
    if (on_done_) on_done_(id, st);
  }

  std::string site_;
  SimBatchModel model_;
  SimExecution exec_;
  EventLoop* loop_ = nullptr;
  CompletionFn on_done_;
  detail::SlotHeap slots_;
  std::deque<JobId> fifo_;
  std::map<JobId, Entry> jobs_;
  std::map<std::string, double> host_until_;
  double disp_free_ = -std::numeric_limits<double>::infinity();
  double wake_at_ = std::numeric_limits<double>::infinity();
  JobId next_id_ = 1;
};

}  // namespace miniswift::exec
