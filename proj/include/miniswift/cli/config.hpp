#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "miniswift/engine/config.hpp"
#include "miniswift/exec/local.hpp"
#include "miniswift/exec/simbatch.hpp"
#include "miniswift/falkon/client.hpp"
#include "miniswift/falkon/sim.hpp"
#include "miniswift/util/net.hpp"

namespace miniswift::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

inline void apply_policy(const json& j, sched::Policy& p) {
  if (!j.is_object()) throw ConfigError("scheduler settings must be an object");
  p.max_retries = j.value("max_retries", p.max_retries);
  p.site_failure_threshold_k = j.value("site_failure_threshold_k", p.site_failure_threshold_k);
  p.suspend_seconds = j.value("suspend_seconds", p.suspend_seconds);
  p.cluster_window_s = j.value("cluster_window_s", p.cluster_window_s);
  p.cluster_cap = j.value("cluster_cap", p.cluster_cap);
  p.score_up = j.value("score_up", p.score_up);
  p.score_down = j.value("score_down", p.score_down);
  if (j.contains("score_bounds")) {
    const auto& b = j.at("score_bounds");
    if (!b.is_array() || b.size() != 2) throw ConfigError("score_bounds must be [min, max]");
    p.score_min = b[0].get<double>();
    p.score_max = b[1].get<double>();
  }
  if (p.cluster_cap < 1) throw ConfigError("cluster_cap must be at least 1");
  if (p.max_retries < 0) throw ConfigError("max_retries must be non-negative");
}

inline falkon::ProvisionerPolicy falkon_policy(const json& j) {
  falkon::ProvisionerPolicy p;
  p.min_workers = j.value("min_workers", p.min_workers);
  p.max_workers = j.value("max_workers", p.max_workers);
  p.slots_per_node = j.value("slots_per_node", p.slots_per_node);
  p.idle_timeout = j.value("idle_timeout_s", p.idle_timeout);
  p.allocation_latency = j.value("allocation_latency_s", p.allocation_latency);
  p.provision_period = j.value("provision_period_s", p.provision_period);
  p.validate();
  return p;
}

// Defaults shared by every site built from a sites file.
struct SiteDefaults {
  exec::LocalParams local;
  exec::SimExecution sim;
};

inline exec::LocalParams local_params(const json& pp, const SiteDefaults& d) {
  exec::LocalParams lp = d.local;
  lp.max_parallel = pp.value("max_parallel", lp.max_parallel);
  lp.keep_sandbox = pp.value("keep_sandbox", lp.keep_sandbox);
  if (pp.contains("app_dirs")) lp.app_dirs = pp.at("app_dirs").get<std::vector<std::string>>();
  if (pp.contains("stub")) lp.stub = pp.at("stub").get<std::string>();
  return lp;
}

inline std::shared_ptr<exec::Provider> make_provider(const std::string& site, const std::string& kind, const json& pp,
                                                     const SiteDefaults& d) {
  if (kind == "local") return std::make_shared<exec::LocalProvider>(local_params(pp, d));
  if (kind == "simbatch") {
    exec::SimBatchModel m;
    m.nodes = pp.value("nodes", m.nodes);
    m.slots_per_node = pp.value("slots_per_node", m.slots_per_node);
    m.dispatch_rate = pp.value("dispatch_rate", m.dispatch_rate);
    m.queue_wait_base = pp.value("queue_wait_base_s", m.queue_wait_base);
    m.allocation_latency = pp.value("allocation_latency_s", m.allocation_latency);
    if (m.nodes < 1 || m.slots_per_node < 1 || !(m.dispatch_rate > 0)) throw ConfigError(site + ": bad simbatch params");
    return std::make_shared<exec::SimBatchProvider>(site, m, d.sim);
  }
  if (kind == "falkon") {
    if (pp.value("simulated", false)) {
      falkon::FalkonSimParams fp;
      fp.workers = pp.value("workers", fp.workers);
      fp.slots_per_worker = pp.value("slots", fp.slots_per_worker);
      fp.dispatch_rate = pp.value("dispatch_rate", fp.dispatch_rate);
      fp.allocation_latency = pp.value("allocation_latency_s", fp.allocation_latency);
      fp.drp = pp.value("drp", false);
      if (pp.contains("policy")) fp.policy = falkon_policy(pp.at("policy"));
      fp.exec = d.sim;
      return std::make_shared<falkon::FalkonSimProvider>(fp);
    }
    if (pp.contains("connect")) {
      auto [host, port] = net::split_endpoint(pp.at("connect").get<std::string>());
      return std::make_shared<falkon::FalkonProvider>(host, port);
    }
    falkon::LocalDeployment::Options opt;
    opt.workers = pp.value("workers", opt.workers);
    opt.slots = pp.value("slots", opt.slots);
    opt.local = local_params(pp, d);
    return std::make_shared<falkon::FalkonProvider>(opt);
  }
  throw ConfigError(site + ": unknown provider '" + kind + "'");
}

inline engine::Site make_site(const json& j, const SiteDefaults& d, const std::string& provider_override = {}) {
  if (!j.is_object() || !j.contains("site_id")) throw ConfigError("site entries need a site_id");
  engine::Site s;
  s.record.site_id = j.at("site_id").get<std::string>();
  std::string kind = provider_override.empty() ? j.value("provider", std::string{"local"}) : provider_override;
  json pp = j.value("provider_params", json::object());
  s.provider = make_provider(s.record.site_id, kind, pp, d);
  s.record.throttle = j.value("throttle", s.record.throttle);
  s.record.score = j.value("initial_score", s.record.score);
  if (j.contains("apps"))
    for (const auto& a : j.at("apps")) s.record.apps.insert(a.get<std::string>());
  return s;
}

inline std::vector<engine::Site> load_sites(const fs::path& file, const SiteDefaults& d,
                                            const std::string& provider_override = {}) {
  json j = read_json(file);
  if (j.is_object() && j.contains("sites")) j = j.at("sites");
  if (!j.is_array() || j.empty()) throw ConfigError(file.string() + ": expected a non-empty list of sites");
  std::vector<engine::Site> out;
  for (const auto& s : j) out.push_back(make_site(s, d, provider_override));
  return out;
}

inline bool all_simulated(const std::vector<engine::Site>& sites) {
  for (const auto& s : sites) {
    std::string k = s.provider->kind();
    if (k != "simbatch" && k != "falkon-sim") return false;
  }
  return true;
}

inline std::uint64_t env_seed(std::uint64_t fallback) {
  if (const char* s = std::getenv("MINISWIFT_SEED"); s && *s) return std::stoull(s);
  return fallback;
}

// run.json; relative paths resolve against the file's directory.
struct RunFile {
  fs::path sites_file;
  std::string provider;
  json scheduler = json::object();
  bool clustering = false;
  bool pipelining = true;
  std::uint64_t seed = 0;
  std::string clock;  // "virtual", "wall", or empty to choose from the providers
  fs::path run_dir;
  std::string durations = "constant:1";
  bool provenance = true;
  bool restart_log = true;

  static RunFile from_json(const json& j, const fs::path& base) {
    RunFile r;
    auto resolve = [&](const std::string& p) {
      if (p.empty()) return fs::path();
      return fs::path(p).is_absolute() ? fs::path(p) : base / p;
    };
    if (j.contains("sites_file")) r.sites_file = resolve(j.at("sites_file").get<std::string>());
    r.provider = j.value("provider", r.provider);
    r.scheduler = j.value("scheduler", r.scheduler);
    r.clustering = j.value("clustering", r.clustering);
    r.pipelining = j.value("pipelining", r.pipelining);
    r.seed = j.value("seed", r.seed);
    r.clock = j.value("clock", r.clock);
    if (j.contains("run_dir")) r.run_dir = resolve(j.at("run_dir").get<std::string>());
    r.durations = j.value("durations", r.durations);
    r.provenance = j.value("provenance", r.provenance);
    r.restart_log = j.value("restart_log", r.restart_log);
    if (!r.clock.empty() && r.clock != "virtual" && r.clock != "wall") throw ConfigError("clock must be virtual or wall");
    return r;
  }

  static RunFile load(const fs::path& file) { return from_json(read_json(file), fs::absolute(file).parent_path()); }

  json to_json() const {
    return {{"sites_file", sites_file.string()}, {"provider", provider},   {"scheduler", scheduler},
            {"clustering", clustering},          {"pipelining", pipelining}, {"seed", seed},
            {"clock", clock},                    {"run_dir", run_dir.string()}, {"durations", durations},
            {"provenance", provenance},          {"restart_log", restart_log}};
  }
};

// Without a sites file the run uses one local site.
inline engine::RunConfig build_config(const RunFile& rf, const SiteDefaults& d) {
  engine::RunConfig cfg;
  cfg.run_dir = rf.run_dir.empty() ? fs::path("run") : rf.run_dir;
  if (!rf.sites_file.empty()) {
    cfg.sites = load_sites(rf.sites_file, d, rf.provider);
  } else {
    json local = {{"site_id", "localhost"}, {"provider", rf.provider.empty() ? "local" : rf.provider}};
    cfg.sites.push_back(make_site(local, d));
  }
  apply_policy(rf.scheduler, cfg.policy);
  if (!rf.clustering) cfg.policy.cluster_cap = 1;
  cfg.pipelining = rf.pipelining;
  cfg.seed = env_seed(rf.seed);
  cfg.durations = engine::DurationModel::parse(rf.durations, cfg.seed);
  cfg.provenance = rf.provenance;
  cfg.restart_log = rf.restart_log;
  if (rf.clock == "virtual")
    cfg.clock = ClockMode::virtual_time;
  else if (rf.clock == "wall")
    cfg.clock = ClockMode::wall;
  else
    cfg.clock = all_simulated(cfg.sites) ? ClockMode::virtual_time : ClockMode::wall;
  return cfg;
}

}  // namespace miniswift::cli
