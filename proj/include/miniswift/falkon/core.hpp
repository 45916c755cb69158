#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "miniswift/exec/provider.hpp"

namespace miniswift::falkon {

using TaskId = std::int64_t;
using WorkerId = std::string;

constexpr double kHeartbeatInterval = 5.0;
constexpr int kSuspectAfterMissed = 2;
constexpr int kRequeueAfterMissed = 3;
constexpr std::size_t kDefaultQueueBound = 2'000'000;

struct ProvisionerPolicy {
  int min_workers = 0;
  int max_workers = 32;
  int slots_per_node = 1;
  double idle_timeout = 60.0;
  double allocation_latency = 81.0;
  double provision_period = 1.0;

  void validate() const {
    if (min_workers < 0 || max_workers < min_workers) throw std::invalid_argument("provisioner: need 0 <= min_workers <= max_workers");
    if (slots_per_node < 1) throw std::invalid_argument("provisioner: slots_per_node must be >= 1");
    if (!(idle_timeout > 0)) throw std::invalid_argument("provisioner: idle_timeout must be > 0");
  }
};

// Nodes to request so that queued work fits, capped by the pool limit.
inline int provision(std::size_t queue_length, std::size_t free_slots, int current_nodes, const ProvisionerPolicy& p) {
  if (queue_length <= free_slots) return 0;
  std::size_t per = static_cast<std::size_t>(std::max(1, p.slots_per_node));
  std::size_t need = (queue_length - free_slots + per - 1) / per;
  int room = std::max(0, p.max_workers - current_nodes);
  return static_cast<int>(std::min<std::size_t>(need, static_cast<std::size_t>(room)));
}

class QueueFull : public std::runtime_error {
 public:
  QueueFull() : std::runtime_error("queue-full") {}
};

enum class TaskState { pending, dispatched, done, failed };
enum class WorkerState { idle, busy, suspect, deregistered };

inline const char* to_string(WorkerState s) {
  switch (s) {
    case WorkerState::idle: return "idle";
    case WorkerState::busy: return "busy";
    case WorkerState::suspect: return "suspect";
    case WorkerState::deregistered: return "deregistered";
  }
  return "?";
}

struct TaskResult {
  int exit_code = 0;
  std::optional<int> signal;
  double duration_ms = 0;
  std::string host;
  std::string reason;
  std::string stderr_text;
  exec::ResourceUsage usage;

  bool succeeded() const { return exit_code == 0 && !signal && reason.empty(); }
};

struct TaskEntry {
  exec::JobSpec spec;
  TaskState state = TaskState::pending;
  WorkerId worker;
  int dispatches = 0;
  int successes = 0;
  std::optional<TaskResult> result;
};

struct WorkerRegistration {
  WorkerId id;
  int slots = 1;
  double last_heartbeat = 0;
  WorkerState state = WorkerState::idle;
  double idle_since = 0;
  std::set<TaskId> in_flight;

  bool accepts() const {
    return (state == WorkerState::idle || state == WorkerState::busy) && static_cast<int>(in_flight.size()) < slots;
  }
};

struct Stats {
  std::size_t queue_length = 0;
  std::uint64_t enqueued = 0;
  std::uint64_t dispatch_count = 0;
  std::uint64_t completions = 0;
  std::uint64_t successes = 0;
  std::uint64_t duplicate_results = 0;
  std::uint64_t requeues = 0;
  double throughput_ewma = 0;
  // application messages on the worker channel
  std::uint64_t task_messages = 0;
  std::uint64_t result_messages = 0;
  std::uint64_t registration_messages = 0;
  std::uint64_t heartbeat_messages = 0;
};

struct Assignment {
  TaskId task;
  WorkerId worker;
};

struct Completion {
  TaskId task;
  bool recorded = false;  // false for a duplicate or stale result
  TaskResult result;
};

// The service's dispatch state: a FIFO queue of pending tasks, the set of
// registered workers and the tasks in flight on each. Time is passed in so the
// same state machine drives the socket service and the virtual-time provider.
class Dispatcher {
 public:
  explicit Dispatcher(std::size_t max_queue = kDefaultQueueBound) : max_queue_(max_queue) {}

  TaskId enqueue(exec::JobSpec spec) {
    if (pending_.size() >= max_queue_) throw QueueFull();
    TaskId id = next_task_++;
    TaskEntry e;
    e.spec = std::move(spec);
    tasks_.emplace(id, std::move(e));
    pending_.push_back(id);
    ++stats_.enqueued;
    return id;
  }

  void register_worker(const WorkerId& id, int slots, double now) {
    auto& w = workers_[id];
    if (!w.in_flight.empty()) requeue_worker(w);
    w.id = id;
    w.slots = std::max(1, slots);
    w.last_heartbeat = now;
    w.state = WorkerState::idle;
    w.idle_since = now;
    if (std::find(order_.begin(), order_.end(), id) == order_.end()) order_.push_back(id);
    stats_.registration_messages += 2;
  }

  void heartbeat(const WorkerId& id, double now) {
    ++stats_.heartbeat_messages;
    auto it = workers_.find(id);
    if (it == workers_.end() || it->second.state == WorkerState::deregistered) return;
    it->second.last_heartbeat = now;
    if (it->second.state == WorkerState::suspect)
      it->second.state = it->second.in_flight.empty() ? WorkerState::idle : WorkerState::busy;
  }

  // Pairs queue heads with workers that have a free slot, round robin, up to
  // `limit` assignments.
  std::vector<Assignment> assign(double now, std::size_t limit = static_cast<std::size_t>(-1)) {
    std::vector<Assignment> out;
    if (order_.empty()) return out;
    std::size_t misses = 0;
    while (!pending_.empty() && misses < order_.size() && out.size() < limit) {
      const WorkerId& wid = order_[cursor_ % order_.size()];
      ++cursor_;
      auto& w = workers_.at(wid);
      if (!w.accepts()) {
        ++misses;
        continue;
      }
      misses = 0;
      TaskId t = pending_.front();
      pending_.pop_front();
      auto& e = tasks_.at(t);
      e.state = TaskState::dispatched;
      e.worker = wid;
      ++e.dispatches;
      w.in_flight.insert(t);
      w.state = WorkerState::busy;
      ++stats_.dispatch_count;
      ++stats_.task_messages;
      out.push_back({t, wid});
    }
    (void)now;
    return out;
  }

  // Records a worker's result. Results for tasks that already reached a
  // terminal state are counted as duplicates and otherwise ignored.
  Completion complete(const WorkerId& wid, TaskId t, TaskResult r, double now) {
    ++stats_.result_messages;
    Completion c{t, false, r};
    if (auto w = workers_.find(wid); w != workers_.end()) {
      w->second.in_flight.erase(t);
      settle_worker(w->second, now);
    }
    auto it = tasks_.find(t);
    if (it == tasks_.end()) return c;
    auto& e = it->second;
    if (e.state == TaskState::done || e.state == TaskState::failed) {
      ++stats_.duplicate_results;
      return c;
    }
    if (e.state == TaskState::pending) pending_.erase(std::find(pending_.begin(), pending_.end(), t));
    if (e.state == TaskState::dispatched && e.worker != wid) {
      if (auto o = workers_.find(e.worker); o != workers_.end()) {
        o->second.in_flight.erase(t);
        settle_worker(o->second, now);
      }
    }
    e.state = r.succeeded() ? TaskState::done : TaskState::failed;
    if (r.succeeded()) {
      ++e.successes;
      ++stats_.successes;
    }
    e.result = r;
    ++stats_.completions;
    if (last_completion_ >= 0 && now > last_completion_) {
      double inst = 1.0 / (now - last_completion_);
      stats_.throughput_ewma = stats_.throughput_ewma == 0 ? inst : 0.9 * stats_.throughput_ewma + 0.1 * inst;
    }
    last_completion_ = now;
    c.recorded = true;
    return c;
  }

  // Connection drop: the worker's in-flight tasks go back to the queue head.
  std::vector<TaskId> worker_lost(const WorkerId& wid) {
    auto it = workers_.find(wid);
    if (it == workers_.end()) return {};
    auto ids = requeue_worker(it->second);
    it->second.state = WorkerState::deregistered;
    drop_from_order(wid);
    return ids;
  }

  void deregister(const WorkerId& wid) { worker_lost(wid); }

  // Heartbeat bookkeeping: suspect after two missed intervals, requeue and
  // drop after three. Returns the requeued tasks.
  std::vector<TaskId> check_liveness(double now) {
    std::vector<TaskId> out;
    std::vector<WorkerId> dropped;
    for (auto& [id, w] : workers_) {
      if (w.state == WorkerState::deregistered) continue;
      double silent = now - w.last_heartbeat;
      if (silent >= kRequeueAfterMissed * kHeartbeatInterval) {
        auto ids = requeue_worker(w);
        out.insert(out.end(), ids.begin(), ids.end());
        w.state = WorkerState::deregistered;
        dropped.push_back(id);
      } else if (silent >= kSuspectAfterMissed * kHeartbeatInterval) {
        w.state = WorkerState::suspect;
      }
    }
    for (const auto& id : dropped) drop_from_order(id);
    return out;
  }

  std::vector<WorkerId> deregister_idle(double now, const ProvisionerPolicy& p) {
    std::vector<WorkerId> out;
    int live = live_workers();
    for (const auto& id : order_) {
      if (live <= p.min_workers) break;
      auto& w = workers_.at(id);
      if (w.state != WorkerState::idle || !w.in_flight.empty()) continue;
      if (now - w.idle_since < p.idle_timeout) continue;
      w.state = WorkerState::deregistered;
      out.push_back(id);
      --live;
    }
    for (const auto& id : out) drop_from_order(id);
    return out;
  }

  std::size_t free_slots() const {
    std::size_t n = 0;
    for (const auto& [id, w] : workers_)
      if (w.accepts()) n += static_cast<std::size_t>(w.slots) - w.in_flight.size();
    return n;
  }

  int live_workers() const {
    int n = 0;
    for (const auto& [id, w] : workers_)
      if (w.state != WorkerState::deregistered) ++n;
    return n;
  }

  const Stats& stats() const {
    stats_.queue_length = pending_.size();
    return stats_;
  }
  std::size_t queue_length() const { return pending_.size(); }
  const TaskEntry& task(TaskId t) const { return tasks_.at(t); }
  bool has_task(TaskId t) const { return tasks_.count(t) != 0; }
  const std::map<WorkerId, WorkerRegistration>& workers() const { return workers_; }
  const WorkerRegistration* worker(const WorkerId& id) const {
    auto it = workers_.find(id);
    return it == workers_.end() ? nullptr : &it->second;
  }
  std::size_t max_queue() const { return max_queue_; }

  // Drops terminal tasks from the table once their results are consumed.
  void forget(TaskId t) {
    auto it = tasks_.find(t);
    if (it != tasks_.end() && (it->second.state == TaskState::done || it->second.state == TaskState::failed)) tasks_.erase(it);
  }

  // Bytes held per queued task: the table entry plus its queue slot, for
  // capacity accounting.
  static std::size_t record_bytes(const exec::JobSpec& typical) {
    std::size_t b = sizeof(TaskEntry) + sizeof(TaskId) + 4 * sizeof(void*);
    b += typical.executable.capacity() + typical.key.capacity();
    for (const auto& a : typical.args) b += sizeof(std::string) + a.capacity();
    return b;
  }

 private:
  std::vector<TaskId> requeue_worker(WorkerRegistration& w) {
    std::vector<TaskId> ids(w.in_flight.begin(), w.in_flight.end());
    for (auto it = ids.rbegin(); it != ids.rend(); ++it) {
      auto& e = tasks_.at(*it);
      if (e.state != TaskState::dispatched || e.worker != w.id) continue;
      e.state = TaskState::pending;
      e.worker.clear();
      pending_.push_front(*it);
      ++stats_.requeues;
    }
    w.in_flight.clear();
    return ids;
  }

  void drop_from_order(const WorkerId& id) {
    auto it = std::find(order_.begin(), order_.end(), id);
    if (it != order_.end()) order_.erase(it);
  }

  void settle_worker(WorkerRegistration& w, double now) {
    if (w.state == WorkerState::busy && w.in_flight.empty()) {
      w.state = WorkerState::idle;
      w.idle_since = now;
    }
  }

  std::size_t max_queue_;
  TaskId next_task_ = 1;
  std::unordered_map<TaskId, TaskEntry> tasks_;
  std::deque<TaskId> pending_;
  std::map<WorkerId, WorkerRegistration> workers_;
  std::vector<WorkerId> order_;
  std::size_t cursor_ = 0;
  double last_completion_ = -1;
  mutable Stats stats_;
};

}  // namespace miniswift::falkon
