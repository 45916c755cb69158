#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "miniswift/bench/workloads.hpp"
#include "miniswift/engine/engine.hpp"
#include "miniswift/exec/simbatch.hpp"
#include "miniswift/frontend/loader.hpp"

namespace testutil {

namespace fs = std::filesystem;
using namespace miniswift;

// A simulated pool of `workers` identical slots with negligible dispatch cost.
inline engine::Site sim_site(const std::string& id, int workers, exec::SimExecution ex = {},
                             double rate = 1e6, double queue_wait = 0) {
  exec::SimBatchModel m;
  m.nodes = workers;
  m.dispatch_rate = rate;
  m.queue_wait_base = queue_wait;
  engine::Site s;
  s.record.site_id = id;
  s.provider = std::make_shared<exec::SimBatchProvider>(id, m, std::move(ex));
  return s;
}

inline engine::RunConfig sim_config(const fs::path& run_dir, int workers = 8) {
  engine::RunConfig cfg;
  cfg.run_dir = run_dir;
  cfg.sites.push_back(sim_site("sim", workers));
  cfg.durations = engine::DurationModel::constant(1.0);
  return cfg;
}

inline engine::RunResult run_script(const fs::path& script, engine::RunConfig cfg) {
  auto c = frontend::compile_file(script);
  return engine::evaluate(c.plan, std::move(cfg), script.parent_path());
}

inline engine::RunResult run_source(const std::string& src, const fs::path& dir, engine::RunConfig cfg) {
  auto c = frontend::compile_source(src, dir);
  return engine::evaluate(c.plan, std::move(cfg), dir);
}

inline void copy_tree(const fs::path& from, const fs::path& to) {
  fs::create_directories(to);
  fs::copy(from, to, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
}

}  // namespace testutil
