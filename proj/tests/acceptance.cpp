// One line per acceptance criterion; exit status 1 if any fails.
#include <chrono>
#include <condition_variable>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>

#include "miniswift/bench/bench.hpp"
#include "miniswift/falkon/client.hpp"
#include "miniswift/frontend/loader.hpp"
#include "test_util.hpp"

using namespace miniswift;
using namespace miniswift::bench;

namespace {

const fs::path kFixtures = MINISWIFT_FIXTURES;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int prec = 3) { return fixed(v, prec); }

const frontend::MapperBinding* find_binding(const frontend::Ast& ast, const std::string& var) {
  for (const auto& s : ast.stmts)
    if (auto* d = std::get_if<frontend::VarDecl>(&s.node); d && d->name == var && d->mapping) return &*d->mapping;
  return nullptr;
}

Outcome c1_frontend() {
  auto sample = frontend::parse_source(frontend::read_text(kFixtures / "fmri_sample.sws"));
  auto fmri = frontend::compile_file(kFixtures / "fmri.sws");
  auto montage = frontend::compile_file(kFixtures / "montage_excerpt.sws");
  const auto& s1 = fmri.plan.stats;
  const auto& s3 = montage.plan.stats;
  auto montage_ast = frontend::parse_source(frontend::read_text(kFixtures / "montage_excerpt.sws"));
  const auto* csv = find_binding(montage_ast, "diffs");
  std::set<std::string> keys;
  if (csv)
    for (const auto& p : csv->params) keys.insert(p.key);
  bool ok = sample.types.size() == 6 && sample.procs.size() == 3 && sample.stmts.size() == 3 && fmri.program.ok() &&
            s1.top_statements == 3 && s1.top_mapped_slots == 2 && s1.top_calls == 1 && montage.program.ok() &&
            s3.top_statements == 4 && s3.top_mapped_slots == 2 && csv && csv->mapper == "csv_mapper" &&
            keys == std::set<std::string>{"file", "skip", "header", "hdelim"};
  std::ostringstream d;
  d << "fmri sample: " << sample.types.size() << " types, " << sample.procs.size() << " procs, " << sample.stmts.size()
    << " statements; plan " << s1.top_statements << " top statements, " << s1.top_mapped_slots << " mapped slots, "
    << s1.top_calls << " call; montage excerpt: plan " << s3.top_statements << " top statements, " << s3.top_mapped_slots
    << " mapped slots, csv params " << keys.size();
  return {ok, d.str()};
}

Outcome c2_condor() {
  double e50 = simulated_efficiency(64, 11, 64, 50).efficiency;
  double e100 = simulated_efficiency(64, 11, 64, 100).efficiency;
  double e1000 = simulated_efficiency(64, 11, 64, 1000).efficiency;
  bool ok = std::abs(e50 - 0.90) <= 0.02 && std::abs(e100 - 0.945) <= 0.02 && std::abs(e1000 - 0.994) <= 0.01;
  return {ok, "P=64 r=11 N=64: t=50 " + num(e50) + ", t=100 " + num(e100) + ", t=1000 " + num(e1000)};
}

Outcome c3_efficiency() {
  auto grid = efficiency_grid();
  double worst = 0;
  for (const auto& g : grid) worst = std::max(worst, g.rel_error());
  auto th = efficiency_thresholds();
  double worst_th = 0;
  std::ostringstream d;
  d << "grid " << grid.size() << " points, max model/simulation gap " << num(100 * worst, 2) << "%; 90% lengths";
  for (const auto& t : th) {
    worst_th = std::max(worst_th, t.rel_diff());
    d << " " << num(t.model, t.model < 10 ? 2 : 0) << "/" << t.claimed;
  }
  d << " (max deviation " << num(100 * worst_th, 1) << "%)";
  return {grid.size() == 50 && worst <= 0.02 && worst_th <= 0.15, d.str()};
}

Outcome c4_pipeline() {
  testutil::TempDir tmp;
  PipelineParams p;
  auto r = bench_pipeline(tmp.path(), p);
  bool ok = r.reduction >= 0.15 && r.reduction <= 0.30 && r.dominance_violations == 0 && r.dominance_checked == 200;
  return {ok, "fmri-like(120), 8 workers, uniform(3,9): pipelined " + num(r.pipelined, 1) + " s, barrier " +
                  num(r.barrier, 1) + " s, reduction " + num(100 * r.reduction, 1) + "% (band 15-30%); dominance " +
                  std::to_string(r.dominance_checked - r.dominance_violations) + "/" +
                  std::to_string(r.dominance_checked)};
}

Outcome c5_cluster() {
  testutil::TempDir tmp;
  ClusterParams p;
  auto r = bench_cluster(tmp.path(), p);
  bool ok = r.speedup() >= 2.0 && r.digests_equal;
  return {ok, "unclustered " + num(r.unclustered, 1) + " s / " + std::to_string(r.unclustered_jobs) + " jobs, cap 60 " +
                  num(r.clustered, 1) + " s / " + std::to_string(r.clustered_jobs) + " jobs, speedup " +
                  num(r.speedup(), 2) + "x (need >= 2); digests " + (r.digests_equal ? "equal" : "differ")};
}

Outcome c6_falkon() {
  testutil::TempDir tmp;
  ClusterParams p;
  auto r = bench_cluster(tmp.path(), p);
  double rate = dispatcher_throughput(10000, 4);
  double ratio = rate / batch_like().dispatch_rate;
  double red = r.falkon_reduction();
  bool ok = red >= 0.40 && red <= 0.70 && ratio >= 10;
  return {ok, "falkon 8 workers " + num(r.falkon, 1) + " s vs clustered " + num(r.clustered, 1) + " s: " +
                  num(100 * red, 1) + "% faster (band 40-70%); dispatcher-only " + num(rate, 0) +
                  " tasks/s = " + num(ratio, 0) + "x the 2/s batch model"};
}

Outcome c7_scale() {
  testutil::TempDir tmp;
  auto r = bench_scale(tmp.path());
  bool ok = r.ok && r.done == 160000 && r.bytes_per_task <= 4096;
  return {ok, "flat(160000) " + std::string(r.ok ? "completed" : "failed") + ", " + std::to_string(r.done) +
                  " done, " + num(r.bytes_per_task, 0) + " B bookkeeping per task (limit 4096), heap " +
                  num(r.heap_bytes_per_task, 0) + " B"};
}

engine::RunConfig restart_config(const fs::path& run_dir) {
  engine::RunConfig cfg;
  cfg.run_dir = run_dir;
  cfg.sites.push_back(simbatch_site("pool", worker_pool(8)));
  cfg.durations = engine::DurationModel::uniform(3, 9, 5);
  cfg.provenance = false;
  return cfg;
}

Outcome c8_restart() {
  testutil::TempDir tmp;
  const std::size_t V = 120;
  auto ref_w = fmri_like(tmp / "ref", V);
  auto ref = run_workload(ref_w, restart_config(tmp / "ref_run"));
  auto reference = digests(ref);

  auto w = fmri_like(tmp / "w", V);
  auto cfg = restart_config(tmp / "run");
  cfg.pipelining = false;  // the first 240 completions are exactly stages 1 and 2
  cfg.interrupt_after_completions = 2 * V;
  auto first = run_workload(w, cfg);
  std::set<std::string> logged;
  for (const auto& t : first.trace)
    if (t.state == engine::TaskState::done) logged.insert(t.key);

  cfg.pipelining = true;
  cfg.interrupt_after_completions.reset();
  cfg.resume = true;
  auto second = run_workload(w, cfg);
  std::size_t rerun = 0;
  for (const auto& t : second.trace)
    if (!t.restored && t.submit >= 0 && logged.count(t.key)) ++rerun;
  bool same = digests(second) == reference && !reference.empty();

  auto g = fmri_like(tmp / "g", V);
  auto gcfg = restart_config(tmp / "grun");
  gcfg.pipelining = false;
  gcfg.interrupt_after_completions = 2 * V;
  run_workload(g, gcfg);
  add_fmri_volume(g.dir, V);
  gcfg.pipelining = true;
  gcfg.interrupt_after_completions.reset();
  gcfg.resume = true;
  auto grown = run_workload(g, gcfg);

  bool ok = ref.ok() && first.status == engine::RunResult::Status::interrupted && first.executed == 2 * V &&
            second.ok() && second.executed == 2 * V && second.restored == 2 * V && rerun == 0 && same &&
            grown.ok() && grown.executed == 2 * V + 4;
  return {ok, "interrupted after " + std::to_string(first.executed) + "; resume executed " +
                  std::to_string(second.executed) + ", restored " + std::to_string(second.restored) +
                  ", re-executed logged " + std::to_string(rerun) + ", digests " + (same ? "equal" : "differ") +
                  "; with one added volume resume executed " + std::to_string(grown.executed) + " (240 + " +
                  std::to_string(static_cast<long>(grown.executed) - 240) + ")"};
}

Outcome c9_loadbalance() {
  testutil::TempDir tmp;
  LoadBalanceParams p;
  auto r = bench_loadbalance(tmp.path(), p);
  std::size_t lo = 480, hi = 0, within = 0;
  for (const auto& run : r.runs) {
    lo = std::min(lo, run.a);
    hi = std::max(hi, run.a);
    within += run.within;
  }
  return {r.all_within() && r.runs.size() == 20,
          "ANL_TG expected " + num(r.expected_a, 1) + " +- " + num(3 * r.sigma, 1) + ", observed " +
              std::to_string(lo) + ".." + std::to_string(hi) + ", " + std::to_string(within) + "/" +
              std::to_string(r.runs.size()) + " seeds within 3 sigma"};
}

std::size_t plan_tasks(const Workload& w, const fs::path& run_dir) {
  auto cfg = quiet_config(run_dir);
  cfg.sites.push_back(simbatch_site("pool", worker_pool(1024), exec::SimExecution{false}));
  cfg.durations = engine::DurationModel::constant(1);
  auto r = run_workload(w, std::move(cfg));
  return r.ok() ? r.tasks : 0;
}

Outcome c10_workloads() {
  testutil::TempDir tmp;
  std::size_t m244 = plan_tasks(moldyn_like(tmp / "m244", 244), tmp / "r1");
  std::size_t m1 = plan_tasks(moldyn_like(tmp / "m1", 1), tmp / "r2");
  std::size_t f120 = plan_tasks(fmri_like(tmp / "f120", 120), tmp / "r3");
  bool ok = m244 == 20497 && m1 == 85 && f120 == 480;
  return {ok, "moldyn-like(244) " + std::to_string(m244) + ", moldyn-like(1) " + std::to_string(m1) +
                  ", fmri-like(120) " + std::to_string(f120) + " tasks"};
}

struct NoopRun {
  std::size_t ok = 0, failed = 0;
};

NoopRun run_noops(int port, std::size_t n) {
  std::mutex mu;
  std::condition_variable cv;
  NoopRun out;
  falkon::Client client("127.0.0.1", port, [&](std::int64_t, const falkon::TaskResult& r) {
    std::lock_guard<std::mutex> lock(mu);
    (r.succeeded() ? out.ok : out.failed)++;
    cv.notify_all();
  });
  exec::JobSpec job;
  job.executable = ":";
  for (std::size_t i = 0; i < n; ++i) {
    job.key = "t" + std::to_string(i);
    client.submit(static_cast<std::int64_t>(i), job);
  }
  std::unique_lock<std::mutex> lock(mu);
  cv.wait_for(lock, std::chrono::seconds(50), [&] { return out.ok + out.failed == n; });
  return out;
}

Outcome c11_protocol() {
  falkon::LocalDeployment::Options o;
  o.workers = 8;
  o.slots = 2;
  o.crash_rate = 0.10;
  o.seed = 42;
  falkon::LocalDeployment dep(o);
  auto res = run_noops(dep.port(), 1000);
  auto counts = dep.service().success_counts();
  bool once = counts.size() == 1000 && res.ok == 1000;
  for (const auto& [t, c] : counts) once = once && c == 1;
  auto s = dep.service().stats();
  dep.shutdown();
  int crashes = 0;
  for (const auto& r : dep.reports()) crashes += r.crashes;

  falkon::LocalDeployment::Options clean;
  clean.workers = 2;
  falkon::LocalDeployment dep2(clean);
  auto res2 = run_noops(dep2.port(), 100);
  auto s2 = dep2.service().stats();
  dep2.shutdown();
  long app_msgs = s2["task_messages"].get<long>() + s2["result_messages"].get<long>();

  falkon::ProvisionerPolicy p;
  p.slots_per_node = 2;
  p.max_workers = 32;
  int more = falkon::provision(68, 2, 1, p);

  bool ok = once && crashes > 0 && res2.ok == 100 && app_msgs == 200 && more == 31;
  return {ok, "1000 tasks under " + std::to_string(crashes) + " injected crashes (" +
                  std::to_string(s["requeues"].get<long>()) + " requeues): " +
                  (once ? "each succeeded exactly once" : "exactly-once violated") + "; crash-free: " +
                  std::to_string(app_msgs) + " application messages for 100 dispatches; provision(68, 2 slots, 1 node, cap 32) = " +
                  std::to_string(more)};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    std::string name;
    double budget_s;
    std::function<Outcome()> run;
  };
  std::vector<Criterion> all = {
      {1, "parser/typechecker golden counts", 1, c1_frontend},
      {2, "condor-derived efficiency", 1, c2_condor},
      {3, "efficiency model vs simulation and 90% lengths", 1, c3_efficiency},
      {4, "pipelining reduction and dominance", 10, c4_pipeline},
      {5, "clustering speedup on batch overheads", 10, c5_cluster},
      {6, "falkon vs clustered batch, dispatcher throughput", 60, c6_falkon},
      {7, "scalability bookkeeping at 160k tasks", 120, c7_scale},
      {8, "restart from the log", 30, c8_restart},
      {9, "score-proportional load balancing", 10, c9_loadbalance},
      {10, "workload generator task counts", 10, c10_workloads},
      {11, "falkon protocol properties", 60, c11_protocol},
  };
  int failed = 0;
  for (const auto& c : all) {
    Outcome o;
    auto t0 = std::chrono::steady_clock::now();
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool in_time = secs <= c.budget_s;
    bool pass = o.pass && in_time;
    if (!pass) ++failed;
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << c.id << " " << c.name << ": " << o.detail << " ["
              << num(secs, 2) << " s" << (in_time ? "" : ", over the " + num(c.budget_s, 0) + " s budget") << "]"
              << std::endl;
  }
  std::cout << (all.size() - static_cast<std::size_t>(failed)) << "/" << all.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
