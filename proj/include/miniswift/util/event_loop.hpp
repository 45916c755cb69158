#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <queue>
#include <vector>

namespace miniswift {

enum class ClockMode { virtual_time, wall };

// Single-owner event loop. `post` is the only thread-safe entry point; every
// other member must be called from the thread running `run`.
//
// In virtual mode the clock jumps to the next timer whenever no immediate
// event is queued, so simulated runs are exact and fast. In wall mode timers
// fire on the steady clock.
class EventLoop {
 public:
  using Fn = std::function<void()>;

  explicit EventLoop(ClockMode mode = ClockMode::virtual_time)
      : mode_(mode), origin_(std::chrono::steady_clock::now()) {}

  EventLoop(const EventLoop&) = delete;
  EventLoop& operator=(const EventLoop&) = delete;

  ClockMode mode() const { return mode_; }

  double now() const {
    if (mode_ == ClockMode::virtual_time) return virtual_now_;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - origin_).count();
  }

  void post(Fn fn) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      posted_.push_back(std::move(fn));
    }
    cv_.notify_one();
  }

  void schedule_at(double t, Fn fn) {
    if (t < now()) t = now();
    timers_.push(Timer{t, seq_++, std::move(fn)});
  }
  void schedule_after(double dt, Fn fn) { schedule_at(now() + (dt > 0 ? dt : 0), std::move(fn)); }

  // Asynchronous operations started outside the loop (e.g. worker threads)
  // register here so `run` keeps waiting for their completion posts.
  void begin_external() { ++external_; }
  void end_external() { --external_; }
  int external_pending() const { return external_; }

  // Runs until `done()` holds (checked after every event) or there is no
  // further work. Returns true when `done()` was satisfied.
  bool run(const std::function<bool()>& done) {
    while (true) {
      if (done()) return true;
      if (drain_posted()) continue;
      if (!timers_.empty()) {
        double t = timers_.top().at;
        if (mode_ == ClockMode::virtual_time) {
          if (external_ > 0 && wait_posted_for(std::chrono::milliseconds(0))) continue;
          virtual_now_ = t;
          fire_top();
          continue;
        }
        double wait = t - now();
        if (wait <= 0) {
          fire_top();
          continue;
        }
        wait_posted_for(std::chrono::duration<double>(wait));
        continue;
      }
      if (external_ > 0) {
        wait_posted_for(std::chrono::milliseconds(200));
        continue;
      }
      return done();
    }
  }

  std::size_t pending_timers() const { return timers_.size(); }

 private:
  struct Timer {
    double at;
    std::uint64_t seq;
    Fn fn;
  };
  struct Later {
    bool operator()(const Timer& a, const Timer& b) const {
      return a.at > b.at || (a.at == b.at && a.seq > b.seq);
    }
  };

  bool drain_posted() {
    std::deque<Fn> batch;
    {
      std::lock_guard<std::mutex> lock(mu_);
      batch.swap(posted_);
    }
    if (batch.empty()) return false;
    for (auto& fn : batch) fn();
    return true;
  }

  template <class Dur>
  bool wait_posted_for(Dur d) {
    std::unique_lock<std::mutex> lock(mu_);
    return cv_.wait_for(lock, d, [this] { return !posted_.empty(); });
  }

  void fire_top() {
    Fn fn = std::move(const_cast<Timer&>(timers_.top()).fn);
    timers_.pop();
    fn();
  }

  ClockMode mode_;
  std::chrono::steady_clock::time_point origin_;
  double virtual_now_ = 0.0;
  std::uint64_t seq_ = 0;
  int external_ = 0;
  std::priority_queue<Timer, std::vector<Timer>, Later> timers_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Fn> posted_;
};

}  // namespace miniswift
