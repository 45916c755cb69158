#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "miniswift/falkon/core.hpp"
#include "miniswift/falkon/protocol.hpp"
#include "miniswift/util/net.hpp"

namespace miniswift::falkon {

struct ServiceConfig {
  std::string bind = "127.0.0.1";
  int port = 0;
  ProvisionerPolicy policy;
  bool drp = false;
  std::function<void(int)> allocate;  // asked for this many more nodes
  std::size_t max_queue = kDefaultQueueBound;
  double tick_s = 0.25;
  double heartbeat_s = kHeartbeatInterval;
};

// The dispatch service. One thread runs the poll loop and owns the
// dispatcher; stop() and the stats accessors may be called from any thread.
class Service {
 public:
  explicit Service(ServiceConfig cfg) : cfg_(std::move(cfg)), dispatcher_(cfg_.max_queue) {
    cfg_.policy.validate();
    listener_ = net::listen_tcp(cfg_.bind, cfg_.port, port_);
    net::set_nonblocking(listener_.get());
    int p[2];
    if (::pipe2(p, O_CLOEXEC | O_NONBLOCK) != 0) throw net::NetError(net::errno_text("pipe"));
    wake_r_ = net::Fd(p[0]);
    wake_w_ = net::Fd(p[1]);
    origin_ = std::chrono::steady_clock::now();
  }

  int port() const { return port_; }

  void stop() {
    stopping_ = true;
    char c = 1;
    [[maybe_unused]] auto n = ::write(wake_w_.get(), &c, 1);
  }

  void run() {
    double next_tick = now() + cfg_.tick_s;
    while (!stopping_) {
      std::vector<pollfd> fds;
      std::vector<std::uint64_t> ids;
      fds.push_back({listener_.get(), POLLIN, 0});
      fds.push_back({wake_r_.get(), POLLIN, 0});
      for (auto& [id, c] : conns_) {
        short ev = POLLIN;
        if (!c.out.empty()) ev |= POLLOUT;
        fds.push_back({c.fd.get(), ev, 0});
        ids.push_back(id);
      }
      int timeout = static_cast<int>(std::max(0.0, next_tick - now()) * 1000) + 1;
      int rc = ::poll(fds.data(), fds.size(), timeout);
      if (rc < 0 && errno != EINTR) throw net::NetError(net::errno_text("poll"));
      std::lock_guard<std::mutex> lock(mu_);
      if (fds[1].revents & POLLIN) {
        char buf[64];
        while (::read(wake_r_.get(), buf, sizeof buf) > 0) {
        }
      }
      if (fds[0].revents & POLLIN) accept_all();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        auto it = conns_.find(ids[i]);
        if (it == conns_.end()) continue;
        short re = fds[i + 2].revents;
        if (re & (POLLIN | POLLHUP | POLLERR)) read_from(ids[i]);
        it = conns_.find(ids[i]);
        if (it != conns_.end() && (re & POLLOUT)) flush(it->second);
      }
      if (now() >= next_tick) {
        tick();
        next_tick = now() + cfg_.tick_s;
      }
      pump();
      reap();
    }
    std::lock_guard<std::mutex> lock(mu_);
    for (auto& [id, c] : conns_) {
      if (c.role == Role::worker) {
        c.out += wire::bye() + "\n";
        flush(c);
      }
    }
    conns_.clear();
  }

  wire::json stats() const {
    std::lock_guard<std::mutex> lock(mu_);
    return wire::stats_json(dispatcher_.stats(), dispatcher_.live_workers(), dispatcher_.free_slots());
  }

  // Successes recorded per task, for exactly-once checks.
  std::map<TaskId, int> success_counts() const {
    std::lock_guard<std::mutex> lock(mu_);
    std::map<TaskId, int> out;
    for (TaskId t = 1; dispatcher_.has_task(t); ++t) out[t] = dispatcher_.task(t).successes;
    return out;
  }

  int nodes_requested() const {
    std::lock_guard<std::mutex> lock(mu_);
    return nodes_requested_;
  }

 private:
  enum class Role { unknown, worker, client };
  struct Conn {
    net::Fd fd;
    std::string in, out;
    Role role = Role::unknown;
    WorkerId worker;
    bool closing = false;
  };

  double now() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - origin_).count(); }

  void accept_all() {
    while (true) {
      int fd = ::accept4(listener_.get(), nullptr, nullptr, SOCK_NONBLOCK | SOCK_CLOEXEC);
      if (fd < 0) return;
      net::set_nodelay(fd);
      Conn c;
      c.fd = net::Fd(fd);
      conns_.emplace(next_conn_++, std::move(c));
    }
  }

  void read_from(std::uint64_t id) {
    Conn& c = conns_.at(id);
    char buf[16384];
    while (true) {
      ssize_t n = ::recv(c.fd.get(), buf, sizeof buf, 0);
      if (n > 0) {
        c.in.append(buf, static_cast<std::size_t>(n));
        continue;
      }
      if (n < 0 && errno == EINTR) continue;
      if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) break;
      c.closing = true;  // EOF or error
      break;
    }
    std::size_t start = 0;
    while (true) {
      auto nl = c.in.find('\n', start);
      if (nl == std::string::npos) break;
      std::string line = c.in.substr(start, nl - start);
      start = nl + 1;
      if (!line.empty()) handle(id, line);
      if (!conns_.count(id)) return;
    }
    conns_.at(id).in.erase(0, start);
  }

  void send(Conn& c, const std::string& line) {
    c.out += line;
    c.out.push_back('\n');
    flush(c);
  }

  void flush(Conn& c) {
    while (!c.out.empty()) {
      ssize_t n = ::send(c.fd.get(), c.out.data(), c.out.size(), MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        if (errno != EAGAIN && errno != EWOULDBLOCK) c.closing = true;
        return;
      }
      c.out.erase(0, static_cast<std::size_t>(n));
    }
  }

  void handle(std::uint64_t id, const std::string& line) {
    Conn& c = conns_.at(id);
    double t = now();
    wire::json m;
    std::string type;
    try {
      m = wire::parse(line);
      type = wire::type_of(m);
      if (type == wire::kRegister) {
        c.role = Role::worker;
        c.worker = m.at("worker_id").get<std::string>();
        if (auto old = worker_conn_.find(c.worker); old != worker_conn_.end() && old->second != id) {
          if (auto oc = conns_.find(old->second); oc != conns_.end()) oc->second.closing = true;
        }
        worker_conn_[c.worker] = id;
        dispatcher_.register_worker(c.worker, m.value("slots", 1), t);
        if (pending_alloc_ > 0) --pending_alloc_;
        send(c, wire::registered(c.worker, cfg_.heartbeat_s));
      } else if (type == wire::kHeartbeat) {
        dispatcher_.heartbeat(c.worker.empty() ? m.value("worker_id", std::string{}) : c.worker, t);
      } else if (type == wire::kResult) {
        TaskId task = m.at("task_id").get<TaskId>();
        auto done = dispatcher_.complete(c.worker, task, wire::result_from(m), t);
        if (done.recorded) {
          auto owner = owner_.find(task);
          if (owner != owner_.end()) {
            if (auto oc = conns_.find(owner->second); oc != conns_.end()) send(oc->second, wire::notify(task, done.result));
            owner_.erase(owner);
          }
        }
      } else if (type == wire::kBye) {
        if (c.role == Role::worker) {
          dispatcher_.deregister(c.worker);
          worker_conn_.erase(c.worker);
          c.worker.clear();
        }
        c.closing = true;
      } else if (type == wire::kSubmit) {
        c.role = Role::client;
        std::int64_t tag = m.value("tag", std::int64_t{0});
        try {
          TaskId task = dispatcher_.enqueue(wire::job_from(m));
          owner_[task] = id;
          send(c, wire::ack(tag, task));
        } catch (const QueueFull& e) {
          send(c, wire::error(tag, e.what()));
        }
      } else if (type == wire::kStats) {
        send(c, wire::stats_json(dispatcher_.stats(), dispatcher_.live_workers(), dispatcher_.free_slots()).dump());
      } else {
        throw wire::ProtocolError("unknown message type " + type);
      }
    } catch (const std::exception& e) {
      send(c, wire::error(m.is_object() ? m.value("tag", std::int64_t{0}) : 0, e.what()));
      c.closing = true;
    }
  }

  void pump() {
    for (const auto& a : dispatcher_.assign(now())) {
      auto wc = worker_conn_.find(a.worker);
      if (wc == worker_conn_.end() || !conns_.count(wc->second)) {
        dispatcher_.worker_lost(a.worker);
        continue;
      }
      send(conns_.at(wc->second), wire::task(a.task, dispatcher_.task(a.task).spec));
    }
  }

  void tick() {
    double t = now();
    dispatcher_.check_liveness(t);
    if (!cfg_.drp) return;
    for (const auto& w : dispatcher_.deregister_idle(t, cfg_.policy)) {
      if (auto wc = worker_conn_.find(w); wc != worker_conn_.end()) {
        if (auto c = conns_.find(wc->second); c != conns_.end()) {
          send(c->second, wire::bye());
          c->second.worker.clear();
          c->second.closing = true;
        }
        worker_conn_.erase(wc);
      }
    }
    int want = provision(dispatcher_.queue_length(), dispatcher_.free_slots(), dispatcher_.live_workers() + pending_alloc_,
                         cfg_.policy);
    if (want > 0 && cfg_.allocate) {
      pending_alloc_ += want;
      nodes_requested_ += want;
      cfg_.allocate(want);
    }
  }

  void reap() {
    for (auto it = conns_.begin(); it != conns_.end();) {
      if (!it->second.closing) {
        ++it;
        continue;
      }
      flush(it->second);
      if (it->second.role == Role::worker && !it->second.worker.empty()) {
        auto wc = worker_conn_.find(it->second.worker);
        if (wc != worker_conn_.end() && wc->second == it->first) {
          dispatcher_.worker_lost(it->second.worker);
          worker_conn_.erase(wc);
        }
      }
      it = conns_.erase(it);
    }
  }

  ServiceConfig cfg_;
  Dispatcher dispatcher_;
  net::Fd listener_, wake_r_, wake_w_;
  int port_ = 0;
  std::atomic<bool> stopping_{false};
  std::chrono::steady_clock::time_point origin_;
  std::map<std::uint64_t, Conn> conns_;
  std::uint64_t next_conn_ = 1;
  std::unordered_map<WorkerId, std::uint64_t> worker_conn_;
  std::unordered_map<TaskId, std::uint64_t> owner_;
  int pending_alloc_ = 0;
  int nodes_requested_ = 0;
  mutable std::mutex mu_;
};

}  // namespace miniswift::falkon
