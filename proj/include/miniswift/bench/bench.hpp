#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "miniswift/bench/workloads.hpp"
#include "miniswift/engine/engine.hpp"
#include "miniswift/exec/simbatch.hpp"
#include "miniswift/falkon/client.hpp"
#include "miniswift/falkon/sim.hpp"
#include "miniswift/frontend/loader.hpp"

namespace miniswift::bench {

using json = nlohmann::json;

// Measured speedup over ideal speedup.
inline double efficiency(double speedup_measured, double speedup_ideal) {
  if (!(speedup_measured > 0) || !(speedup_ideal > 0)) throw std::invalid_argument("speedups must be positive");
  return speedup_measured / speedup_ideal;
}

struct ModelPoint {
  double makespan = 0;
  double ideal = 0;
  double efficiency = 0;
};

// N tasks of length t on P processors behind a dispatcher sending r tasks/s.
inline ModelPoint efficiency_model(double P, double r, double N, double t) {
  if (!(P > 0) || !(r > 0) || !(N > 0) || !(t > 0)) throw std::invalid_argument("model parameters must be positive");
  ModelPoint m;
  m.ideal = N * t / P;
  m.makespan = r * t <= P ? N / r + t : N * t / P + P / (2 * r);
  m.efficiency = m.ideal / m.makespan;
  return m;
}

// The same point measured on a simulate_batch trace with every task released
// at time zero and no queueing delay.
inline ModelPoint simulated_efficiency(int P, double r, std::size_t N, double t) {
  exec::SimBatchModel m;
  m.nodes = P;
  m.dispatch_rate = r;
  m.queue_wait_base = 0;
  std::vector<exec::BatchJob> jobs(N, exec::BatchJob{0, t});
  auto tr = exec::simulate_batch(jobs, m);
  ModelPoint p;
  p.ideal = static_cast<double>(N) * t / P;
  p.makespan = tr.makespan;
  p.efficiency = p.ideal / p.makespan;
  return p;
}

// Smallest task length reaching `target` efficiency under efficiency_model.
inline double length_for_efficiency(double P, double r, double N, double target = 0.9) {
  double lo = 1e-9, hi = 1.0;
  while (efficiency_model(P, r, N, hi).efficiency < target) {
    hi *= 2;
    if (hi > 1e15) throw std::runtime_error("efficiency target unreachable");
  }
  for (int i = 0; i < 200; ++i) {
    double mid = std::sqrt(lo * hi);
    (efficiency_model(P, r, N, mid).efficiency < target ? lo : hi) = mid;
  }
  return hi;
}

struct Report {
  std::string name;
  json data;
  std::string text;
};

inline void write_report(const fs::path& run_dir, const Report& r) {
  fs::path dir = run_dir / "reports";
  fs::create_directories(dir);
  std::ofstream(dir / (r.name + ".json")) << r.data.dump(2) << "\n";
  std::ofstream(dir / (r.name + ".txt")) << r.text;
}

inline std::string fixed(double v, int prec = 3) {
  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(prec);
  o << v;
  return o.str();
}

// ---- efficiency --------------------------------------------------------

struct GridPoint {
  int P = 0;
  double r = 0;
  std::size_t N = 0;
  double t = 0;
  double model = 0;
  double simulated = 0;
  double rel_error() const { return std::abs(model - simulated) / simulated; }
};

// 50 points spanning both regimes: five machine sizes, ten task lengths
// expressed as multiples of P/r, 100 tasks per processor.
inline std::vector<GridPoint> efficiency_grid() {
  const int sizes[] = {64, 100, 256, 512, 1000};
  const double rates[] = {1, 11, 100, 500, 2};
  const double factors[] = {0.05, 0.1, 0.25, 0.5, 0.9, 1.1, 1.5, 2, 5, 20};
  std::vector<GridPoint> out;
  for (std::size_t i = 0; i < 5; ++i) {
    for (double f : factors) {
      GridPoint g;
      g.P = sizes[i];
      g.r = rates[i];
      g.N = static_cast<std::size_t>(100 * g.P);
      g.t = f * g.P / g.r;
      g.model = efficiency_model(g.P, g.r, static_cast<double>(g.N), g.t).efficiency;
      g.simulated = simulated_efficiency(g.P, g.r, g.N, g.t).efficiency;
      out.push_back(g);
    }
  }
  return out;
}

struct Threshold {
  double P = 0;
  double r = 0;
  double claimed = 0;  // published task length for 90% efficiency
  double model = 0;
  double rel_diff() const { return std::abs(model - claimed) / claimed; }
};

inline std::vector<Threshold> efficiency_thresholds(double N = 1e6) {
  std::vector<Threshold> out = {{100, 1, 100},    {1000, 1, 900},   {1e4, 1, 1e4},
                                {100, 500, 0.2},  {1000, 500, 1.9}, {1e4, 500, 20}};
  for (auto& th : out) th.model = length_for_efficiency(th.P, th.r, N);
  return out;
}

inline Report bench_efficiency() {
  Report rep{"efficiency", json::object(), ""};
  std::ostringstream txt;
  txt << "condor derivation (P=64, r=11/s, N=64)\n  t(s)   efficiency\n";
  json condor = json::array();
  for (double t : {50.0, 100.0, 1000.0}) {
    double e = simulated_efficiency(64, 11, 64, t).efficiency;
    condor.push_back({{"t", t}, {"efficiency", e}});
    txt << "  " << t << "  " << fixed(e) << "\n";
  }
  rep.data["condor"] = condor;

  auto grid = efficiency_grid();
  double worst = 0;
  json g = json::array();
  for (const auto& p : grid) {
    worst = std::max(worst, p.rel_error());
    g.push_back({{"P", p.P}, {"r", p.r}, {"N", p.N}, {"t", p.t}, {"model", p.model}, {"simulated", p.simulated}});
  }
  rep.data["grid"] = g;
  rep.data["grid_max_rel_error"] = worst;
  txt << "model vs simulation over " << grid.size() << " points: max relative error " << fixed(100 * worst, 2)
      << "%\n";

  json th = json::array();
  txt << "task length for 90% efficiency (N=1e6)\n  P      r    claimed   model\n";
  for (const auto& t : efficiency_thresholds()) {
    th.push_back({{"P", t.P}, {"r", t.r}, {"claimed", t.claimed}, {"model", t.model}});
    txt << "  " << t.P << "  " << t.r << "  " << t.claimed << "  " << fixed(t.model, 2) << "\n";
  }
  rep.data["thresholds"] = th;
  rep.text = txt.str();
  return rep;
}

// ---- engine-driven benchmarks -----------------------------------------

inline engine::Site simbatch_site(const std::string& id, const exec::SimBatchModel& m, exec::SimExecution ex = {}) {
  engine::Site s;
  s.record.site_id = id;
  s.provider = std::make_shared<exec::SimBatchProvider>(id, m, std::move(ex));
  return s;
}

// A pool of identical workers with negligible dispatch cost.
inline exec::SimBatchModel worker_pool(int workers) {
  exec::SimBatchModel m;
  m.nodes = workers;
  m.dispatch_rate = 1e6;
  m.queue_wait_base = 0;
  return m;
}

// Batch overheads used for the clustering comparison: 2 jobs/s through the
// dispatcher and a 10 s queueing delay per job.
inline exec::SimBatchModel batch_like(int nodes = 62) {
  exec::SimBatchModel m;
  m.nodes = nodes;
  m.dispatch_rate = 2.0;
  m.queue_wait_base = 10.0;
  return m;
}

// Virtual-time run without restart log or provenance; outputs are written
// only when digests are wanted.
inline engine::RunConfig quiet_config(const fs::path& run_dir, bool materialize = false) {
  engine::RunConfig cfg;
  cfg.run_dir = run_dir;
  cfg.materialize_outputs = materialize;
  cfg.restart_log = false;
  cfg.provenance = false;
  cfg.keep_trace = false;
  return cfg;
}

inline engine::RunResult run_workload(const Workload& w, engine::RunConfig cfg) {
  auto c = frontend::compile_file(w.script);
  return engine::evaluate(c.plan, std::move(cfg), w.dir);
}

inline std::map<std::string, std::string> digests(const engine::RunResult& r) {
  std::map<std::string, std::string> out;
  for (const auto& [k, d] : r.produced) out[k] = d.digest;
  return out;
}

inline void require_ok(const engine::RunResult& r, const std::string& what) {
  if (!r.ok()) {
    std::string msg = what + ": run " + r.status_text();
    if (!r.errors.empty()) msg += ": " + r.errors.front();
    throw std::runtime_error(msg);
  }
}

struct PipelineParams {
  std::size_t volumes = 120;
  int workers = 8;
  double dmin = 3, dmax = 9;
  std::uint64_t seed = 1;
  std::size_t instances = 200;  // randomized dominance checks
};

struct PipelineResult {
  double pipelined = 0;
  double barrier = 0;
  double reduction = 0;
  std::size_t dominance_checked = 0;
  std::size_t dominance_violations = 0;
};

inline std::pair<double, double> pipeline_pair(const Workload& w, const fs::path& run_dir, int workers,
                                               const engine::DurationModel& d, std::uint64_t seed) {
  double out[2] = {0, 0};
  for (int barrier = 0; barrier < 2; ++barrier) {
    auto cfg = quiet_config(run_dir / (barrier ? "barrier" : "piped"));
    cfg.sites.push_back(simbatch_site("pool", worker_pool(workers)));
    cfg.durations = d;
    cfg.seed = seed;
    cfg.pipelining = barrier == 0;
    auto r = run_workload(w, std::move(cfg));
    require_ok(r, "pipeline");
    out[barrier] = r.makespan;
  }
  return {out[0], out[1]};
}

inline PipelineResult bench_pipeline(const fs::path& work_dir, const PipelineParams& p = {}) {
  PipelineResult res;
  auto w = fmri_like(work_dir / "fmri", p.volumes);
  auto [piped, barrier] = pipeline_pair(w, work_dir / "run", p.workers,
                                        engine::DurationModel::uniform(p.dmin, p.dmax, p.seed), p.seed);
  res.pipelined = piped;
  res.barrier = barrier;
  res.reduction = barrier > 0 ? 1 - piped / barrier : 0;

  std::mt19937_64 rng(p.seed);
  std::map<std::size_t, Workload> sized;
  const std::size_t volume_choices[] = {1, 2, 3, 5, 8, 13, 21};
  for (std::size_t i = 0; i < p.instances; ++i) {
    std::size_t v = volume_choices[rng() % 7];
    if (!sized.count(v)) sized.emplace(v, fmri_like(work_dir / ("dominance_" + std::to_string(v)), v));
    int workers = 1 + static_cast<int>(rng() % 16);
    double a = std::uniform_real_distribution<double>(0.1, 10)(rng);
    double b = a + std::uniform_real_distribution<double>(0, 20)(rng);
    std::uint64_t seed = rng();
    auto [pp, bb] = pipeline_pair(sized.at(v), work_dir / "dominance_run", workers,
                                  engine::DurationModel::uniform(a, b, seed), seed);
    ++res.dominance_checked;
    if (pp > bb + 1e-9) ++res.dominance_violations;
  }
  return res;
}

inline Report pipeline_report(const PipelineParams& p, const PipelineResult& r) {
  Report rep{"pipeline", json::object(), ""};
  rep.data = {{"volumes", p.volumes},
              {"workers", p.workers},
              {"durations", {p.dmin, p.dmax}},
              {"seed", p.seed},
              {"makespan_pipelined", r.pipelined},
              {"makespan_barrier", r.barrier},
              {"reduction", r.reduction},
              {"dominance_checked", r.dominance_checked},
              {"dominance_violations", r.dominance_violations}};
  std::ostringstream t;
  t << "fmri-like(" << p.volumes << ") on " << p.workers << " workers, uniform(" << p.dmin << "," << p.dmax << ")s\n"
    << "  pipelined  " << fixed(r.pipelined, 1) << " s\n"
    << "  barrier    " << fixed(r.barrier, 1) << " s\n"
    << "  reduction  " << fixed(100 * r.reduction, 1) << "%\n"
    << "  dominance  " << r.dominance_checked - r.dominance_violations << "/" << r.dominance_checked << " instances\n";
  rep.text = t.str();
  return rep;
}

struct ClusterParams {
  std::size_t volumes = 120;
  int nodes = 62;
  int cluster_cap = 60;
  double window_s = 0.5;
  double dmin = 3, dmax = 9;
  std::uint64_t seed = 1;
  int falkon_workers = 8;
  double falkon_dispatch_rate = 487;
};

struct ClusterResult {
  double unclustered = 0;
  double clustered = 0;
  std::size_t unclustered_jobs = 0;
  std::size_t clustered_jobs = 0;
  bool digests_equal = false;
  double falkon = 0;
  std::size_t falkon_tasks = 0;
  double speedup() const { return clustered > 0 ? unclustered / clustered : 0; }
  double falkon_reduction() const { return clustered > 0 ? 1 - falkon / clustered : 0; }
};

inline ClusterResult bench_cluster(const fs::path& work_dir, const ClusterParams& p = {}) {
  ClusterResult res;
  auto w = fmri_like(work_dir / "fmri", p.volumes);
  auto durations = engine::DurationModel::uniform(p.dmin, p.dmax, p.seed);
  exec::SimBatchModel model = batch_like(p.nodes);
  std::map<std::string, std::string> dg[2];
  for (int clustered = 0; clustered < 2; ++clustered) {
    auto cfg = quiet_config(work_dir / (clustered ? "clustered" : "unclustered"), true);
    cfg.sites.push_back(simbatch_site("batch", model));
    cfg.durations = durations;
    cfg.seed = p.seed;
    cfg.policy.cluster_cap = clustered ? p.cluster_cap : 1;
    cfg.policy.cluster_window_s = p.window_s;
    auto r = run_workload(w, std::move(cfg));
    require_ok(r, "cluster");
    (clustered ? res.clustered : res.unclustered) = r.makespan;
    (clustered ? res.clustered_jobs : res.unclustered_jobs) = r.jobs;
    dg[clustered] = digests(r);
  }
  res.digests_equal = !dg[0].empty() && dg[0] == dg[1];

  // The dispatcher's workers arrive after the same queueing delay plus one
  // dispatch interval that a batch job would see.
  falkon::FalkonSimParams fp;
  fp.workers = p.falkon_workers;
  fp.dispatch_rate = p.falkon_dispatch_rate;
  fp.allocation_latency = model.queue_wait_base + model.overhead();
  fp.seed = p.seed;
  auto cfg = quiet_config(work_dir / "falkon");
  engine::Site s;
  s.record.site_id = "falkon";
  s.provider = std::make_shared<falkon::FalkonSimProvider>(fp);
  cfg.sites.push_back(s);
  cfg.durations = durations;
  cfg.seed = p.seed;
  auto r = run_workload(w, std::move(cfg));
  require_ok(r, "falkon");
  res.falkon = r.makespan;
  res.falkon_tasks = r.executed;
  return res;
}

inline Report cluster_report(const ClusterParams& p, const ClusterResult& r) {
  Report rep{"cluster", json::object(), ""};
  rep.data = {{"volumes", p.volumes},
              {"nodes", p.nodes},
              {"dispatch_rate", 2.0},
              {"queue_wait_base", 10.0},
              {"cluster_cap", p.cluster_cap},
              {"makespan_unclustered", r.unclustered},
              {"makespan_clustered", r.clustered},
              {"jobs_unclustered", r.unclustered_jobs},
              {"jobs_clustered", r.clustered_jobs},
              {"speedup", r.speedup()},
              {"digests_equal", r.digests_equal},
              {"falkon_workers", p.falkon_workers},
              {"makespan_falkon", r.falkon},
              {"falkon_reduction_vs_clustered", r.falkon_reduction()}};
  std::ostringstream t;
  t << "fmri-like(" << p.volumes << ") on simbatch, " << p.nodes << " nodes, r=2/s, queue wait 10 s\n"
    << "  unclustered  " << fixed(r.unclustered, 1) << " s in " << r.unclustered_jobs << " jobs\n"
    << "  clustered    " << fixed(r.clustered, 1) << " s in " << r.clustered_jobs << " jobs (cap " << p.cluster_cap
    << ")\n"
    << "  speedup      " << fixed(r.speedup(), 2) << "x, digests " << (r.digests_equal ? "equal" : "differ") << "\n"
    << "  falkon       " << fixed(r.falkon, 1) << " s on " << p.falkon_workers << " workers, "
    << fixed(100 * r.falkon_reduction(), 1) << "% below clustered\n";
  rep.text = t.str();
  return rep;
}

// ---- throughput --------------------------------------------------------

struct ThroughputParams {
  std::size_t tasks = 10000;         // dispatcher-only no-ops
  std::size_t engine_tasks = 1000;   // engine-inclusive flat plan
  int workers = 4;
  std::string stub;                  // executable for the flat plan's app
  double modeled_rate = 2.0;         // simbatch dispatch rate for the ratio
};

struct ThroughputResult {
  std::size_t dispatched = 0;
  double dispatcher_seconds = 0;
  double dispatcher_rate = 0;
  std::size_t engine_completed = 0;
  double engine_seconds = 0;
  double engine_rate = 0;
  double ratio_to_model = 0;
};

// Submits n ":" tasks straight to a local service and waits for every
// notification. Returns completed tasks per second of wall time.
inline double dispatcher_throughput(std::size_t n, int workers, double* seconds = nullptr) {
  if (n == 0) {
    if (seconds) *seconds = 0;
    return 0;
  }
  falkon::LocalDeployment::Options opt;
  opt.workers = workers;
  falkon::LocalDeployment dep(opt);
  std::mutex mu;
  std::condition_variable cv;
  std::size_t done = 0;
  falkon::Client client("127.0.0.1", dep.port(), [&](std::int64_t, const falkon::TaskResult&) {
    std::lock_guard<std::mutex> lock(mu);
    if (++done == n) cv.notify_all();
  });
  exec::JobSpec job;
  job.executable = ":";
  auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < n; ++i) {
    job.key = "noop" + std::to_string(i);
    client.submit(static_cast<std::int64_t>(i), job);
  }
  {
    std::unique_lock<std::mutex> lock(mu);
    cv.wait(lock, [&] { return done == n; });
  }
  double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  client.close();
  dep.shutdown();
  if (seconds) *seconds = s;
  return static_cast<double>(n) / s;
}

inline ThroughputResult bench_throughput(const fs::path& work_dir, const ThroughputParams& p = {}) {
  ThroughputResult res;
  res.dispatched = p.tasks;
  res.dispatcher_rate = dispatcher_throughput(p.tasks, p.workers, &res.dispatcher_seconds);
  res.ratio_to_model = res.dispatcher_rate / p.modeled_rate;
  if (p.engine_tasks > 0) {
    auto w = flat(work_dir / "flat", p.engine_tasks);
    falkon::LocalDeployment::Options opt;
    opt.workers = p.workers;
    opt.local.stub = p.stub;
    auto cfg = quiet_config(work_dir / "run", true);
    cfg.clock = ClockMode::wall;
    cfg.restart_log = true;
    cfg.provenance = true;
    engine::Site s;
    s.record.site_id = "falkon";
    s.provider = std::make_shared<falkon::FalkonProvider>(opt);
    cfg.sites.push_back(s);
    auto t0 = std::chrono::steady_clock::now();
    auto r = run_workload(w, std::move(cfg));
    res.engine_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    s.provider->shutdown();
    require_ok(r, "throughput");
    res.engine_completed = r.executed;
    res.engine_rate = static_cast<double>(r.executed) / res.engine_seconds;
  }
  return res;
}

inline Report throughput_report(const ThroughputParams& p, const ThroughputResult& r) {
  Report rep{"throughput", json::object(), ""};
  rep.data = {{"dispatcher_tasks", r.dispatched},
              {"dispatcher_seconds", r.dispatcher_seconds},
              {"dispatcher_tasks_per_s", r.dispatcher_rate},
              {"engine_tasks", r.engine_completed},
              {"engine_seconds", r.engine_seconds},
              {"engine_tasks_per_s", r.engine_rate},
              {"simbatch_modeled_rate", p.modeled_rate},
              {"ratio_to_model", r.ratio_to_model},
              {"workers", p.workers}};
  std::ostringstream t;
  t << "dispatcher-only  " << r.dispatched << " no-ops in " << fixed(r.dispatcher_seconds, 2) << " s = "
    << fixed(r.dispatcher_rate, 0) << " tasks/s (" << fixed(r.ratio_to_model, 0) << "x the " << p.modeled_rate
    << "/s batch model)\n"
    << "engine-inclusive " << r.engine_completed << " tasks in " << fixed(r.engine_seconds, 2) << " s = "
    << fixed(r.engine_rate, 0) << " tasks/s\n";
  rep.text = t.str();
  return rep;
}

// ---- load balancing ----------------------------------------------------

struct LoadBalanceParams {
  std::size_t volumes = 120;
  double score_a = 2.18, score_b = 2.62;
  std::size_t seeds = 20;
  std::uint64_t first_seed = 1;
};

struct LoadBalanceRun {
  std::uint64_t seed = 0;
  std::size_t a = 0, b = 0;
  bool within = false;
};

struct LoadBalanceResult {
  double p_a = 0;
  double expected_a = 0;
  double sigma = 0;
  std::vector<LoadBalanceRun> runs;
  bool all_within() const {
    return !runs.empty() && std::all_of(runs.begin(), runs.end(), [](const auto& r) { return r.within; });
  }
};

// Two sites with scores held at the converged ratio: updates multiply by 1.
inline LoadBalanceResult bench_loadbalance(const fs::path& work_dir, const LoadBalanceParams& p = {}) {
  LoadBalanceResult res;
  auto w = fmri_like(work_dir / "fmri", p.volumes);
  double total = static_cast<double>(fmri_tasks(p.volumes));
  res.p_a = p.score_a / (p.score_a + p.score_b);
  res.expected_a = total * res.p_a;
  res.sigma = std::sqrt(total * res.p_a * (1 - res.p_a));
  for (std::size_t i = 0; i < p.seeds; ++i) {
    std::uint64_t seed = p.first_seed + i;
    auto cfg = quiet_config(work_dir / "run");
    auto a = simbatch_site("ANL_TG", worker_pool(64));
    auto b = simbatch_site("UC_TP", worker_pool(64));
    a.record.score = p.score_a;
    b.record.score = p.score_b;
    cfg.sites = {a, b};
    cfg.policy.score_up = 1;
    cfg.policy.score_down = 1;
    cfg.durations = engine::DurationModel::uniform(3, 9, seed);
    cfg.seed = seed;
    auto r = run_workload(w, std::move(cfg));
    require_ok(r, "loadbalance");
    LoadBalanceRun run;
    run.seed = seed;
    run.a = r.site_tasks.count("ANL_TG") ? r.site_tasks.at("ANL_TG") : 0;
    run.b = r.site_tasks.count("UC_TP") ? r.site_tasks.at("UC_TP") : 0;
    run.within = std::abs(static_cast<double>(run.a) - res.expected_a) <= 3 * res.sigma &&
                 static_cast<double>(run.a + run.b) == total;
    res.runs.push_back(run);
  }
  return res;
}

inline Report loadbalance_report(const LoadBalanceParams& p, const LoadBalanceResult& r) {
  Report rep{"loadbalance", json::object(), ""};
  json runs = json::array();
  std::ostringstream t;
  t << "scores " << p.score_a << " : " << p.score_b << ", expected " << fixed(r.expected_a, 1) << " +- "
    << fixed(3 * r.sigma, 1) << " jobs on ANL_TG\n  seed  ANL_TG  UC_TP\n";
  for (const auto& run : r.runs) {
    runs.push_back({{"seed", run.seed}, {"ANL_TG", run.a}, {"UC_TP", run.b}, {"within_3sigma", run.within}});
    t << "  " << run.seed << "  " << run.a << "  " << run.b << (run.within ? "" : "  outside") << "\n";
  }
  rep.data = {{"score_a", p.score_a}, {"score_b", p.score_b}, {"expected_a", r.expected_a},
              {"sigma", r.sigma},     {"runs", runs},         {"all_within", r.all_within()}};
  rep.text = t.str();
  return rep;
}

// ---- scale -------------------------------------------------------------

struct ScaleParams {
  std::size_t tasks = 160000;
  int workers = 1000;
};

struct ScaleResult {
  std::size_t tasks = 0;
  std::size_t done = 0;
  std::size_t nodes = 0;
  double bytes_per_task = 0;
  double heap_bytes_per_task = 0;
  double makespan = 0;
  double wall_seconds = 0;
  bool ok = false;
};

inline ScaleResult bench_scale(const fs::path& work_dir, const ScaleParams& p = {}) {
  ScaleResult res;
  auto w = flat(work_dir / "flat", p.tasks);
  auto cfg = quiet_config(work_dir / "run");
  cfg.sites.push_back(simbatch_site("pool", worker_pool(p.workers), exec::SimExecution{false}));
  cfg.durations = engine::DurationModel::constant(0);
  auto t0 = std::chrono::steady_clock::now();
  auto r = run_workload(w, std::move(cfg));
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res.ok = r.ok();
  res.tasks = r.tasks;
  res.done = r.done;
  res.nodes = r.nodes;
  res.bytes_per_task = r.bytes_per_task;
  res.heap_bytes_per_task = r.heap_bytes_per_task;
  res.makespan = r.makespan;
  return res;
}

inline Report scale_report(const ScaleResult& r) {
  Report rep{"scale", json::object(), ""};
  rep.data = {{"tasks", r.tasks},
              {"done", r.done},
              {"nodes", r.nodes},
              {"bytes_per_task", r.bytes_per_task},
              {"heap_bytes_per_task", r.heap_bytes_per_task},
              {"makespan", r.makespan},
              {"wall_seconds", r.wall_seconds},
              {"ok", r.ok}};
  std::ostringstream t;
  t << "flat(" << r.tasks << ") " << (r.ok ? "completed" : "failed") << ": " << r.done << " tasks, " << r.nodes
    << " dataset nodes, " << fixed(r.bytes_per_task, 0) << " B bookkeeping per task (" << fixed(r.heap_bytes_per_task, 0)
    << " B heap), " << fixed(r.wall_seconds, 2) << " s wall\n";
  rep.text = t.str();
  return rep;
}

}  // namespace miniswift::bench
