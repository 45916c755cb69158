#pragma once

#include <unistd.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "miniswift/exec/local.hpp"
#include "miniswift/falkon/protocol.hpp"
#include "miniswift/util/digest.hpp"
#include "miniswift/util/net.hpp"

namespace miniswift::falkon {

struct WorkerOptions {
  std::string host = "127.0.0.1";
  int port = 0;
  int slots = 1;
  std::string id;  // defaults to host-pid
  exec::LocalParams local;
  double heartbeat_s = kHeartbeatInterval;
  // Injected crashes: on receiving a task the worker runs it and then drops
  // the connection without reporting, with this probability.
  double crash_rate = 0;
  std::uint64_t seed = 0;
  double backoff_initial_s = 0.05;
  double backoff_max_s = 2.0;
  double give_up_after_s = 30.0;  // of failed connection attempts; < 0 retries forever
  const std::atomic<bool>* stop = nullptr;
};

struct WorkerReport {
  int registrations = 0;
  int tasks_run = 0;
  int results_sent = 0;
  int crashes = 0;
  bool released = false;  // the service sent BYE
};

namespace detail {

inline TaskResult to_result(const exec::JobStatus& st) {
  TaskResult r;
  r.exit_code = st.exit_code;
  r.signal = st.signal;
  r.duration_ms = (st.end_t - st.start_t) * 1000.0;
  r.host = st.host;
  if (st.phase == exec::Phase::failed) r.reason = st.reason.empty() ? "failed" : st.reason;
  r.stderr_text = st.stderr_text;
  r.usage = st.usage;
  return r;
}

}  // namespace detail

// Connects, registers, executes received tasks in the local sandbox runner
// and reports results; reconnects with backoff when the connection drops.
// Returns when the service releases the worker, on stop, or after giving up.
inline WorkerReport run_worker(const WorkerOptions& opt) {
  WorkerReport rep;
  std::string base = opt.id.empty() ? exec::local_hostname() + "-" + std::to_string(::getpid()) : opt.id;
  auto stopped = [&] { return opt.stop && opt.stop->load(); };
  double backoff = opt.backoff_initial_s;
  auto failing_since = std::chrono::steady_clock::now();
  bool failing = false;

  for (int session = 0; !stopped(); ++session) {
    net::LineChannel ch;
    try {
      ch = net::LineChannel(net::connect_tcp(opt.host, opt.port));
    } catch (const net::NetError&) {
      auto now = std::chrono::steady_clock::now();
      if (!failing) {
        failing = true;
        failing_since = now;
      }
      if (opt.give_up_after_s >= 0 && std::chrono::duration<double>(now - failing_since).count() > opt.give_up_after_s)
        return rep;
      std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
      backoff = std::min(opt.backoff_max_s, backoff * 2);
      continue;
    }
    failing = false;
    backoff = opt.backoff_initial_s;
    std::string wid = session == 0 ? base : base + "#" + std::to_string(session);

    std::mutex write_mu;
    auto ch_alive = std::make_shared<std::atomic<bool>>(true);
    auto send = [&](const std::string& line) {
      std::lock_guard<std::mutex> lock(write_mu);
      if (!ch_alive->load()) return false;
      try {
        ch.write_line(line);
        return true;
      } catch (const net::NetError&) {
        ch_alive->store(false);
        return false;
      }
    };

    if (!send(wire::reg(wid, opt.slots))) continue;
    bool timed_out = false;
    auto first = ch.read_line(10000, &timed_out);
    if (!first) continue;
    try {
      if (wire::type_of(wire::parse(*first)) != wire::kRegistered) continue;
    } catch (const wire::ProtocolError&) {
      continue;
    }
    ++rep.registrations;

    std::mutex q_mu;
    std::condition_variable q_cv;
    std::deque<std::pair<TaskId, exec::JobSpec>> queue;
    bool q_closed = false;
    std::atomic<int> tasks_run{0}, results_sent{0};
    std::vector<std::thread> running;
    for (int k = 0; k < std::max(1, opt.slots); ++k) {
      running.emplace_back([&] {
        while (true) {
          std::pair<TaskId, exec::JobSpec> item;
          {
            std::unique_lock<std::mutex> lock(q_mu);
            q_cv.wait(lock, [&] { return q_closed || !queue.empty(); });
            if (queue.empty()) return;
            item = std::move(queue.front());
            queue.pop_front();
          }
          auto st = exec::run_local(item.second, opt.local);
          ++tasks_run;
          if (send(wire::result(item.first, detail::to_result(st)))) ++results_sent;
        }
      });
    }
    auto last_beat = std::chrono::steady_clock::now();
    bool end_all = false;
    while (!stopped()) {
      auto line = ch.read_line(100, &timed_out);
      auto now = std::chrono::steady_clock::now();
      if (std::chrono::duration<double>(now - last_beat).count() >= opt.heartbeat_s) {
        send(wire::heartbeat(wid));
        last_beat = now;
      }
      if (!line) {
        if (timed_out) continue;
        break;  // connection closed
      }
      wire::json m;
      try {
        m = wire::parse(*line);
      } catch (const wire::ProtocolError&) {
        break;
      }
      std::string type = wire::type_of(m);
      if (type == wire::kBye) {
        rep.released = true;
        end_all = true;
        break;
      }
      if (type != wire::kTask) continue;
      TaskId task = m.at("task_id").get<TaskId>();
      exec::JobSpec job = wire::job_from(m);
      bool crash = opt.crash_rate > 0 &&
                   keyed_uniform(opt.seed, wid + "/" + std::to_string(task)) < opt.crash_rate;
      if (crash) {
        exec::run_local(job, opt.local);
        ++tasks_run;
        ++rep.crashes;
        std::lock_guard<std::mutex> lock(write_mu);
        ch_alive->store(false);
        ch.shutdown();
        break;
      }
      {
        std::lock_guard<std::mutex> lock(q_mu);
        queue.emplace_back(task, std::move(job));
      }
      q_cv.notify_one();
    }
    {
      std::lock_guard<std::mutex> lock(q_mu);
      q_closed = true;
    }
    q_cv.notify_all();
    for (auto& t : running) t.join();
    {
      std::lock_guard<std::mutex> lock(write_mu);
      ch_alive->store(false);
      ch.close();
    }
    rep.tasks_run += tasks_run;
    rep.results_sent += results_sent;
    if (end_all) return rep;
  }
  return rep;
}

}  // namespace miniswift::falkon
