#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "miniswift/exec/provider.hpp"

namespace miniswift::sched {

struct SiteRecord {
  std::string site_id;
  double score = 1.0;
  int in_flight = 0;
  int throttle = 1 << 30;
  std::set<std::string> apps;  // empty means any application
  std::map<std::string, double> suspended_hosts;
  std::uint64_t succeeded = 0, failed = 0, dispatched = 0;

  bool has_app(const std::string& app) const { return apps.empty() || app == ":" || apps.count(app) > 0; }
  bool under_throttle() const { return in_flight < throttle; }
  bool host_suspended(const std::string& host, double now) const {
    auto it = suspended_hosts.find(host);
    return it != suspended_hosts.end() && it->second > now;
  }
};

struct Policy {
  int max_retries = 3;
  int site_failure_threshold_k = 3;
  double suspend_seconds = 60;
  double cluster_window_s = 0.5;
  int cluster_cap = 1;
  double score_up = 1.05;
  double score_down = 0.8;
  double score_min = 0.1;
  double score_max = 10.0;
  std::vector<std::string> host_error_patterns = {"Stale NFS handle", "No space left on device",
                                                  "Read-only file system"};
};

enum class ErrorClass { transient, host, permanent };

inline const char* to_string(ErrorClass c) {
  switch (c) {
    case ErrorClass::transient: return "transient";
    case ErrorClass::host: return "host";
    case ErrorClass::permanent: return "permanent";
  }
  return "?";
}

enum class FailureAction { retry_same_site, reschedule_other_site, suspend_host_and_requeue, fail_permanent };

inline const char* to_string(FailureAction a) {
  switch (a) {
    case FailureAction::retry_same_site: return "retry-same-site";
    case FailureAction::reschedule_other_site: return "reschedule-other-site";
    case FailureAction::suspend_host_and_requeue: return "suspend-host-and-requeue";
    case FailureAction::fail_permanent: return "fail-permanent";
  }
  return "?";
}

struct FailureDecision {
  FailureAction action = FailureAction::retry_same_site;
  std::string site;        // where the next attempt goes (empty for fail-permanent)
  double resume_time = 0;  // for suspend-host-and-requeue
};

// What the scheduler needs to know about a failed attempt.
struct FailedAttempt {
  std::string app;
  int attempt = 0;              // 0-based index of the attempt that failed
  std::string site;
  std::string host;
  int consecutive_on_site = 1;  // failures in a row on `site`, including this one
  ErrorClass error = ErrorClass::transient;
};

struct Bundle {
  std::uint64_t bundle_id = 0;
  std::vector<std::size_t> members;
  std::string site;
};

class NoValidSite : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Scheduler {
 public:
  // Optional user policy: returns a site id to override proportional selection.
  using Callout = std::function<std::optional<std::string>(const std::string& app, const std::vector<SiteRecord>&)>;

  explicit Scheduler(Policy policy = {}, std::uint64_t seed = 0) : policy_(std::move(policy)), rng_(seed) {}

  const Policy& policy() const { return policy_; }
  Policy& policy() { return policy_; }
  void set_callout(Callout c) { callout_ = std::move(c); }
  void reseed(std::uint64_t seed) { rng_.seed(seed); }

  SiteRecord& add_site(SiteRecord s) {
    if (index_.count(s.site_id)) throw std::invalid_argument("duplicate site " + s.site_id);
    s.score = std::clamp(s.score, policy_.score_min, policy_.score_max);
    index_[s.site_id] = sites_.size();
    sites_.push_back(std::move(s));
    return sites_.back();
  }

  const std::vector<SiteRecord>& sites() const { return sites_; }
  SiteRecord& site(const std::string& id) { return sites_.at(index_.at(id)); }
  const SiteRecord& site(const std::string& id) const { return sites_.at(index_.at(id)); }
  bool has_site(const std::string& id) const { return index_.count(id) > 0; }

  bool valid(const SiteRecord& s, const std::string& app, const std::string& exclude = {}) const {
    return s.site_id != exclude && s.has_app(app) && s.under_throttle();
  }

  bool any_site_has_app(const std::string& app) const {
    return std::any_of(sites_.begin(), sites_.end(), [&](const auto& s) { return s.has_app(app); });
  }

  // Picks among valid sites with probability proportional to score.
  // Empty when none is valid; the caller parks the task.
  std::optional<std::string> select_site(const std::string& app, const std::string& exclude = {}) {
    if (callout_) {
      if (auto pick = callout_(app, sites_); pick && has_site(*pick) && valid(site(*pick), app, exclude))
        return pick;
    }
    double total = 0;
    for (const auto& s : sites_)
      if (valid(s, app, exclude)) total += s.score;
    if (total <= 0) return std::nullopt;
    double x = std::uniform_real_distribution<double>(0.0, total)(rng_);
    const SiteRecord* last = nullptr;
    for (const auto& s : sites_) {
      if (!valid(s, app, exclude)) continue;
      last = &s;
      if (x < s.score) return s.site_id;
      x -= s.score;
    }
    return last->site_id;
  }

  void on_dispatch(const std::string& id, int jobs = 1) {
    auto& s = site(id);
    s.in_flight += jobs;
    s.dispatched += jobs;
  }
  void on_job_done(const std::string& id, int jobs = 1) {
    auto& s = site(id);
    s.in_flight = std::max(0, s.in_flight - jobs);
  }

  void update_score(const std::string& id, bool success) {
    auto& s = site(id);
    if (success) {
      s.score = std::min(s.score * policy_.score_up, policy_.score_max);
      ++s.succeeded;
    } else {
      s.score = std::max(s.score * policy_.score_down, policy_.score_min);
      ++s.failed;
    }
  }

  ErrorClass classify(const exec::JobStatus& st) const {
    if (st.reason.rfind("stage-in-missing", 0) == 0) return ErrorClass::permanent;
    for (const auto& p : policy_.host_error_patterns)
      if (st.stderr_text.find(p) != std::string::npos || st.reason.find(p) != std::string::npos)
        return ErrorClass::host;
    return ErrorClass::transient;
  }

  FailureDecision handle_failure(const FailedAttempt& f, double now) {
    FailureDecision d;
    if (f.error == ErrorClass::permanent || f.attempt >= policy_.max_retries) {
      d.action = FailureAction::fail_permanent;
      return d;
    }
    if (f.consecutive_on_site >= policy_.site_failure_threshold_k) {
      bool other = std::any_of(sites_.begin(), sites_.end(),
                               [&](const auto& s) { return s.site_id != f.site && s.has_app(f.app); });
      if (other) {
        d.action = FailureAction::reschedule_other_site;
        return d;
      }
    }
    if (f.error == ErrorClass::host && !f.host.empty()) {
      d.action = FailureAction::suspend_host_and_requeue;
      d.site = f.site;
      d.resume_time = now + policy_.suspend_seconds;
      auto& until = site(f.site).suspended_hosts[f.host];
      until = std::max(until, d.resume_time);
      return d;
    }
    d.action = FailureAction::retry_same_site;
    d.site = f.site;
    return d;
  }

 private:
  Policy policy_;
  std::mt19937_64 rng_;
  std::vector<SiteRecord> sites_;
  std::map<std::string, std::size_t> index_;
  Callout callout_;
};

// Groups tasks by ready time. A window opens at the first arrival into an
// empty buffer; the buffer is flushed when the window closes or it holds cap
// tasks, whichever comes first.
inline std::vector<Bundle> cluster(const std::vector<double>& ready, double window, int cap) {
  std::vector<std::size_t> order(ready.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return ready[a] < ready[b]; });
  std::vector<Bundle> out;
  std::size_t cap_n = static_cast<std::size_t>(std::max(1, cap));
  std::size_t i = 0;
  while (i < order.size()) {
    double close = ready[order[i]] + window;
    Bundle b;
    b.bundle_id = out.size();
    while (i < order.size() && b.members.size() < cap_n && (b.members.empty() || ready[order[i]] < close))
      b.members.push_back(order[i++]);
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace miniswift::sched
