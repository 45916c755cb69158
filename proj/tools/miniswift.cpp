#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <csignal>
#include <iostream>
#include <mutex>
#include <thread>

#include "CLI11.hpp"
#include "miniswift/bench/bench.hpp"
#include "miniswift/cli/config.hpp"
#include "miniswift/engine/engine.hpp"
#include "miniswift/falkon/service.hpp"
#include "miniswift/falkon/worker.hpp"
#include "miniswift/frontend/loader.hpp"
#include "miniswift/plan/lower.hpp"
#include "miniswift/provenance/provenance.hpp"

extern char** environ;

namespace {

using namespace miniswift;
namespace fs = std::filesystem;
using json = nlohmann::json;

constexpr int kOk = 0;
constexpr int kRunFailed = 1;
constexpr int kUsage = 2;

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

void install_signals() {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
}

std::string default_stub() {
  if (const char* s = std::getenv("MINISWIFT_STUB"); s && *s) return s;
#ifdef MINISWIFT_DEFAULT_STUB
  if (fs::exists(MINISWIFT_DEFAULT_STUB)) return MINISWIFT_DEFAULT_STUB;
#endif
  return {};
}

// ---- run / resume ------------------------------------------------------

struct RunOptions {
  std::string script;
  std::string config;
  std::string sites;
  std::string provider;
  std::string run_dir;
  std::string clock;
  std::string durations;
  std::string stub;
  std::int64_t seed = -1;
  int cluster_cap = 0;
  bool barrier = false;
  std::size_t interrupt_after = 0;
};

void print_summary(const engine::RunResult& r) {
  std::cout << r.run_id << " " << r.status_text() << ": " << r.tasks << " tasks, " << r.executed << " executed, "
            << r.restored << " restored, " << r.failed << " failed, makespan " << bench::fixed(r.makespan, 2)
            << " s\n";
  for (const auto& [site, n] : r.site_tasks) std::cout << "  " << site << " " << n << " tasks\n";
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  for (const auto& e : r.errors) std::cerr << "error: " << e << "\n";
}

int execute(const fs::path& script, const cli::RunFile& rf, const std::string& stub, bool resume,
            std::size_t interrupt_after) {
  cli::SiteDefaults d;
  d.local.stub = stub;
  auto cfg = cli::build_config(rf, d);
  cfg.resume = resume;
  if (interrupt_after > 0) cfg.interrupt_after_completions = interrupt_after;
  auto compiled = frontend::compile_file(script);
  fs::create_directories(cfg.run_dir);
  json inv = {{"script", fs::absolute(script).string()}, {"config", rf.to_json()}, {"stub", stub}};
  std::ofstream(cfg.run_dir / "invocation.json") << inv.dump(2) << "\n";
  auto sites = cfg.sites;
  auto result = engine::evaluate(compiled.plan, std::move(cfg), fs::absolute(script).parent_path());
  for (auto& s : sites) s.provider->shutdown();
  print_summary(result);
  return result.ok() ? kOk : kRunFailed;
}

int cmd_run(const RunOptions& o) {
  cli::RunFile rf;
  if (!o.config.empty()) rf = cli::RunFile::load(o.config);
  if (!o.sites.empty()) rf.sites_file = fs::absolute(o.sites);
  if (!o.provider.empty()) rf.provider = o.provider;
  if (!o.run_dir.empty()) rf.run_dir = fs::absolute(o.run_dir);
  if (rf.run_dir.empty()) rf.run_dir = fs::absolute("run");
  if (!o.clock.empty()) rf.clock = o.clock;
  if (!o.durations.empty()) rf.durations = o.durations;
  if (o.seed >= 0) rf.seed = static_cast<std::uint64_t>(o.seed);
  if (o.cluster_cap > 0) {
    rf.clustering = o.cluster_cap > 1;
    rf.scheduler["cluster_cap"] = o.cluster_cap;
  }
  if (o.barrier) rf.pipelining = false;
  return execute(o.script, rf, o.stub.empty() ? default_stub() : o.stub, false, o.interrupt_after);
}

int cmd_resume(const std::string& run_dir) {
  fs::path inv_file = fs::path(run_dir) / "invocation.json";
  json inv = cli::read_json(inv_file);
  auto rf = cli::RunFile::from_json(inv.at("config"), fs::path(run_dir));
  rf.run_dir = fs::absolute(run_dir);
  std::string stub = inv.value("stub", std::string{});
  if (stub.empty() || !fs::exists(stub)) stub = default_stub();
  return execute(inv.at("script").get<std::string>(), rf, stub, true, 0);
}

// ---- graph -------------------------------------------------------------

int cmd_graph(const std::string& script, const std::string& format, bool all) {
  auto c = frontend::compile_file(script);
  if (format == "dot") {
    std::cout << plan::to_dot(c.plan, all);
    return kOk;
  }
  const auto& s = c.plan.stats;
  std::cout << "procedures " << s.procs << ", top-level statements " << s.top_statements << ", statements "
            << s.statements << ", mapped slots " << s.top_mapped_slots << "\n";
  for (const auto& p : c.plan.procs) {
    if (p.imported && !all) continue;
    std::cout << (p.atomic ? "atomic   " : "compound ") << p.name << " (" << p.n_outputs << " out, " << p.n_inputs
              << " in)";
    if (p.atomic) std::cout << " -> " << p.executable;
    std::cout << "\n";
  }
  return kOk;
}

// ---- provenance --------------------------------------------------------

int cmd_provenance(const std::string& run_dir, const std::string& logical, bool as_json) {
  provenance::Derivation d;
  try {
    d = provenance::derivation_of(fs::path(run_dir), logical);
  } catch (const provenance::UnknownDataset& e) {
    std::cerr << e.what() << "\n";
    return kRunFailed;
  }
  if (as_json) {
    json steps = json::array();
    for (const auto& s : d.steps)
      steps.push_back({{"task_id", s.task_id}, {"proc", s.proc}, {"depth", s.depth}, {"inputs", s.inputs},
                       {"outputs", s.outputs}});
    std::cout << json{{"dataset", d.dataset}, {"depth", d.depth}, {"steps", steps}}.dump(2) << "\n";
    return kOk;
  }
  std::cout << d.dataset << " (chain depth " << d.depth << ")\n";
  for (const auto& s : d.steps) {
    std::cout << std::string(static_cast<std::size_t>(2 * s.depth), ' ') << "task " << s.task_id << " " << s.proc;
    if (!s.inputs.empty()) {
      std::cout << " <-";
      for (const auto& in : s.inputs)
        if (!in.empty()) std::cout << " " << in;
    }
    std::cout << "\n";
  }
  return kOk;
}

// ---- falkon ------------------------------------------------------------

struct ServeOptions {
  std::string bind = "127.0.0.1";
  int port = 50100;
  std::string policy;
  bool drp = false;
  std::size_t max_queue = falkon::kDefaultQueueBound;
  std::string stub;
};

// Dynamic provisioning on one machine: each requested node is a worker
// process started from this binary.
class ProcessAllocator {
 public:
  ProcessAllocator(std::string connect, int slots, std::string stub)
      : connect_(std::move(connect)), slots_(slots), stub_(std::move(stub)) {}
  ~ProcessAllocator() { stop(); }

  void allocate(int n) {
    std::lock_guard<std::mutex> lock(mu_);
    for (int i = 0; i < n; ++i) {
      std::vector<std::string> args = {"/proc/self/exe", "falkon", "worker", "--connect", connect_,
                                       "--slots",        std::to_string(slots_)};
      if (!stub_.empty()) {
        args.push_back("--stub");
        args.push_back(stub_);
      }
      std::vector<char*> argv;
      for (auto& a : args) argv.push_back(a.data());
      argv.push_back(nullptr);
      pid_t pid = 0;
      if (::posix_spawn(&pid, "/proc/self/exe", nullptr, nullptr, argv.data(), environ) == 0) {
        pids_.push_back(pid);
        std::cerr << "allocated worker process " << pid << "\n";
      }
    }
  }

  void stop() {
    std::lock_guard<std::mutex> lock(mu_);
    for (pid_t p : pids_) ::kill(p, SIGTERM);
    for (pid_t p : pids_) ::waitpid(p, nullptr, 0);
    pids_.clear();
  }

 private:
  std::string connect_;
  int slots_;
  std::string stub_;
  std::mutex mu_;
  std::vector<pid_t> pids_;
};

int cmd_serve(const ServeOptions& o) {
  falkon::ServiceConfig cfg;
  cfg.bind = o.bind;
  cfg.port = o.port;
  cfg.drp = o.drp;
  cfg.max_queue = o.max_queue;
  if (!o.policy.empty()) cfg.policy = cli::falkon_policy(cli::read_json(o.policy));
  std::unique_ptr<ProcessAllocator> alloc;
  std::atomic<int> port{0};
  if (o.drp) {
    cfg.allocate = [&](int n) {
      if (!alloc) return;
      alloc->allocate(n);
    };
  }
  falkon::Service service(cfg);
  port = service.port();
  if (o.drp) alloc = std::make_unique<ProcessAllocator>("127.0.0.1:" + std::to_string(port.load()),
                                                        cfg.policy.slots_per_node, o.stub);
  std::cout << "falkon service listening on " << o.bind << ":" << service.port() << std::endl;
  install_signals();
  std::thread loop([&] { service.run(); });
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  service.stop();
  loop.join();
  if (alloc) alloc->stop();
  std::cout << service.stats().dump() << std::endl;
  return kOk;
}

struct WorkerCliOptions {
  std::string connect;
  int slots = 1;
  std::string id;
  std::string stub;
  std::vector<std::string> app_dirs;
  double give_up_s = 30;
};

int cmd_worker(const WorkerCliOptions& o) {
  falkon::WorkerOptions w;
  auto [host, port] = net::split_endpoint(o.connect);
  w.host = host;
  w.port = port;
  w.slots = o.slots;
  w.id = o.id;
  w.local.stub = o.stub.empty() ? default_stub() : o.stub;
  w.local.app_dirs = o.app_dirs;
  w.give_up_after_s = o.give_up_s;
  w.stop = &g_stop;
  install_signals();
  auto rep = falkon::run_worker(w);
  std::cout << json{{"registrations", rep.registrations}, {"tasks_run", rep.tasks_run},
                    {"results_sent", rep.results_sent}, {"released", rep.released}}
                   .dump()
            << std::endl;
  return rep.registrations > 0 ? kOk : kRunFailed;
}

// ---- bench -------------------------------------------------------------

struct BenchOptions {
  std::string kind;
  std::string run_dir = "bench-run";
  std::int64_t seed = -1;
  std::size_t volumes = 120;
  int workers = 0;
  std::size_t tasks = 0;
  std::size_t engine_tasks = 1000;
  std::size_t instances = 200;
  std::size_t seeds = 20;
  int cluster_cap = 60;
  std::string stub;
};

int cmd_bench(const BenchOptions& o) {
  fs::path run_dir = fs::absolute(o.run_dir);
  fs::path work = run_dir / "work";
  std::error_code ec;
  fs::remove_all(work, ec);
  std::uint64_t seed = cli::env_seed(o.seed >= 0 ? static_cast<std::uint64_t>(o.seed) : 1);
  bench::Report rep;
  if (o.kind == "efficiency") {
    rep = bench::bench_efficiency();
  } else if (o.kind == "pipeline") {
    bench::PipelineParams p;
    p.volumes = o.volumes;
    if (o.workers > 0) p.workers = o.workers;
    p.seed = seed;
    p.instances = o.instances;
    rep = bench::pipeline_report(p, bench::bench_pipeline(work, p));
  } else if (o.kind == "cluster") {
    bench::ClusterParams p;
    p.volumes = o.volumes;
    p.cluster_cap = o.cluster_cap;
    p.seed = seed;
    if (o.workers > 0) p.falkon_workers = o.workers;
    rep = bench::cluster_report(p, bench::bench_cluster(work, p));
  } else if (o.kind == "throughput") {
    bench::ThroughputParams p;
    if (o.tasks > 0) p.tasks = o.tasks;
    if (o.workers > 0) p.workers = o.workers;
    p.engine_tasks = o.engine_tasks;
    p.stub = o.stub.empty() ? default_stub() : o.stub;
    rep = bench::throughput_report(p, bench::bench_throughput(work, p));
  } else if (o.kind == "loadbalance") {
    bench::LoadBalanceParams p;
    p.volumes = o.volumes;
    p.seeds = o.seeds;
    p.first_seed = seed;
    rep = bench::loadbalance_report(p, bench::bench_loadbalance(work, p));
  } else if (o.kind == "scale") {
    bench::ScaleParams p;
    if (o.tasks > 0) p.tasks = o.tasks;
    if (o.workers > 0) p.workers = o.workers;
    rep = bench::scale_report(bench::bench_scale(work, p));
  }
  rep.data["seed"] = seed;
  bench::write_report(run_dir, rep);
  fs::remove_all(work, ec);
  std::cout << rep.text;
  std::cout << "report: " << (run_dir / "reports" / (rep.name + ".json")).string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"miniswift: typed dataflow workflows over local, simulated batch and Falkon providers"};
  app.require_subcommand(1);

  RunOptions run;
  auto* c_run = app.add_subcommand("run", "Evaluate a script");
  c_run->add_option("script", run.script, "Script file (.sws)")->required()->check(CLI::ExistingFile);
  c_run->add_option("--config", run.config, "run.json")->check(CLI::ExistingFile);
  c_run->add_option("--sites", run.sites, "sites.json")->check(CLI::ExistingFile);
  c_run->add_option("--provider", run.provider, "Provider for every site")
      ->check(CLI::IsMember({"local", "simbatch", "falkon"}));
  c_run->add_option("--run-dir", run.run_dir, "Run directory (default ./run)");
  c_run->add_option("--clock", run.clock, "virtual or wall")->check(CLI::IsMember({"virtual", "wall"}));
  c_run->add_option("--durations", run.durations, "constant:<t> or uniform:<a>,<b> for simulated tasks");
  c_run->add_option("--seed", run.seed, "RNG seed (MINISWIFT_SEED overrides)");
  c_run->add_option("--cluster-cap", run.cluster_cap, "Bundle up to this many ready tasks");
  c_run->add_flag("--barrier", run.barrier, "Disable pipelining: stage barriers");
  c_run->add_option("--interrupt-after", run.interrupt_after, "Stop after this many completions");
  c_run->add_option("--stub", run.stub, "Executable standing in for missing applications");

  std::string resume_dir;
  auto* c_resume = app.add_subcommand("resume", "Continue an interrupted run from its restart log");
  c_resume->add_option("run-dir", resume_dir, "Run directory")->required()->check(CLI::ExistingDirectory);

  std::string graph_script, graph_format = "dot";
  bool graph_all = false;
  auto* c_graph = app.add_subcommand("graph", "Print the static plan");
  c_graph->add_option("script", graph_script, "Script file")->required()->check(CLI::ExistingFile);
  c_graph->add_option("--format", graph_format, "dot or text")->check(CLI::IsMember({"dot", "text"}));
  c_graph->add_flag("--all", graph_all, "Include imported procedures");

  auto* c_falkon = app.add_subcommand("falkon", "Falkon dispatch service and workers");
  c_falkon->require_subcommand(1);
  ServeOptions serve;
  auto* c_serve = c_falkon->add_subcommand("serve", "Run the dispatch service");
  c_serve->add_option("--bind", serve.bind, "Listen address");
  c_serve->add_option("--port", serve.port, "Listen port (0 picks one)");
  c_serve->add_option("--policy", serve.policy, "Provisioner policy.json")->check(CLI::ExistingFile);
  c_serve->add_flag("--drp", serve.drp, "Start and release local worker processes with the queue");
  c_serve->add_option("--max-queue", serve.max_queue, "Queue bound");
  c_serve->add_option("--stub", serve.stub, "Stub passed to started workers");
  WorkerCliOptions worker;
  auto* c_worker = c_falkon->add_subcommand("worker", "Run a worker");
  c_worker->add_option("--connect", worker.connect, "host:port of the service")->required();
  c_worker->add_option("--slots", worker.slots, "Concurrent tasks")->check(CLI::PositiveNumber);
  c_worker->add_option("--id", worker.id, "Worker id (default host-pid)");
  c_worker->add_option("--stub", worker.stub, "Executable standing in for missing applications");
  c_worker->add_option("--app-dir", worker.app_dirs, "Directory searched for applications");
  c_worker->add_option("--give-up", worker.give_up_s, "Seconds of failed connection attempts before exiting");

  BenchOptions bo;
  auto* c_bench = app.add_subcommand("bench", "Run a benchmark and write reports");
  c_bench->add_option("kind", bo.kind, "throughput|efficiency|pipeline|cluster|loadbalance|scale")
      ->required()
      ->check(CLI::IsMember({"throughput", "efficiency", "pipeline", "cluster", "loadbalance", "scale"}));
  c_bench->add_option("--run-dir", bo.run_dir, "Reports go to <run-dir>/reports");
  c_bench->add_option("--seed", bo.seed, "RNG seed (MINISWIFT_SEED overrides)");
  c_bench->add_option("--volumes", bo.volumes, "fmri-like input volumes");
  c_bench->add_option("--workers", bo.workers, "Workers");
  c_bench->add_option("--tasks", bo.tasks, "Tasks (throughput, scale)");
  c_bench->add_option("--engine-tasks", bo.engine_tasks, "Engine-inclusive tasks (throughput)");
  c_bench->add_option("--instances", bo.instances, "Randomized dominance instances (pipeline)");
  c_bench->add_option("--seeds", bo.seeds, "Seeds (loadbalance)");
  c_bench->add_option("--cluster-cap", bo.cluster_cap, "Bundle size (cluster)");
  c_bench->add_option("--stub", bo.stub, "Application stub (throughput)");

  std::string prov_dir, prov_path;
  bool prov_json = false;
  auto* c_prov = app.add_subcommand("provenance", "Print how a dataset was derived");
  c_prov->add_option("run-dir", prov_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
  c_prov->add_option("logical-path", prov_path, "Dataset, e.g. sbold.v[0].img")->required();
  c_prov->add_flag("--json", prov_json, "JSON output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kUsage;
  }

  try {
    if (*c_run) return cmd_run(run);
    if (*c_resume) return cmd_resume(resume_dir);
    if (*c_graph) return cmd_graph(graph_script, graph_format, graph_all);
    if (*c_serve) return cmd_serve(serve);
    if (*c_worker) return cmd_worker(worker);
    if (*c_bench) return cmd_bench(bo);
    if (*c_prov) return cmd_provenance(prov_dir, prov_path, prov_json);
  } catch (const cli::ConfigError& e) {
    std::cerr << "config: " << e.what() << "\n";
    return kUsage;
  } catch (const frontend::CompileError& e) {
    std::cerr << e.what() << "\n";
    for (const auto& d : e.diagnostics()) std::cerr << d << "\n";
    return kRunFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRunFailed;
  }
  return kUsage;
}
