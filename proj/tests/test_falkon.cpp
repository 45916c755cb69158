#include <gtest/gtest.h>

#include <thread>

#include "engine_support.hpp"
#include "miniswift/falkon/client.hpp"
#include "miniswift/falkon/core.hpp"
#include "miniswift/falkon/sim.hpp"
#include "test_util.hpp"

using namespace miniswift;
using namespace miniswift::falkon;

namespace {

exec::JobSpec noop(const std::string& key = "") {
  exec::JobSpec j;
  j.executable = ":";
  j.key = key;
  return j;
}

TaskResult ok_result(const std::string& host = "h") {
  TaskResult r;
  r.host = host;
  return r;
}

// Submits `n` no-ops and blocks until each has a result.
std::vector<TaskResult> run_noops(int port, int n) {
  std::mutex mu;
  std::condition_variable cv;
  std::vector<TaskResult> results(static_cast<std::size_t>(n));
  int done = 0;
  Client client("127.0.0.1", port, [&](std::int64_t tag, const TaskResult& r) {
    std::lock_guard<std::mutex> lock(mu);
    results[static_cast<std::size_t>(tag)] = r;
    ++done;
    cv.notify_all();
  });
  for (int i = 0; i < n; ++i) client.submit(i, noop("t" + std::to_string(i)));
  std::unique_lock<std::mutex> lock(mu);
  cv.wait_for(lock, std::chrono::seconds(50), [&] { return done == n; });
  EXPECT_EQ(done, n);
  return results;
}

}  // namespace

TEST(Provision, PaperAllocationStep) {
  ProvisionerPolicy p;
  p.slots_per_node = 2;
  p.max_workers = 32;
  EXPECT_EQ(provision(68, 2, 1, p), 31);
  EXPECT_EQ(provision(68, 0, 1, p), 31);
}

TEST(Provision, NothingWhenQueueFits) {
  ProvisionerPolicy p;
  EXPECT_EQ(provision(0, 0, 0, p), 0);
  EXPECT_EQ(provision(10, 10, 3, p), 0);
  p.slots_per_node = 4;
  EXPECT_EQ(provision(9, 0, 0, p), 3);
  EXPECT_EQ(provision(100, 0, 32, p), 0);
}

TEST(Provision, PolicyValidation) {
  ProvisionerPolicy p;
  p.min_workers = 5;
  p.max_workers = 2;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p.max_workers = 5;
  p.idle_timeout = 0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(Dispatcher, QueueLengthFollowsDispatch) {
  Dispatcher d;
  d.enqueue(noop());
  EXPECT_EQ(d.stats().queue_length, 1u);
  d.register_worker("w", 1, 0);
  auto a = d.assign(0);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(d.stats().queue_length, 0u);
  EXPECT_TRUE(d.complete("w", a[0].task, ok_result(), 1).recorded);
  EXPECT_EQ(d.task(a[0].task).state, TaskState::done);
}

TEST(Dispatcher, QueueBound) {
  Dispatcher d(2);
  d.enqueue(noop());
  d.enqueue(noop());
  EXPECT_THROW(d.enqueue(noop()), QueueFull);
  EXPECT_GE(Dispatcher().max_queue(), 1'500'000u);
}

TEST(Dispatcher, FifoUnderSingleWorker) {
  Dispatcher d;
  for (int i = 0; i < 5; ++i) d.enqueue(noop());
  d.register_worker("w", 1, 0);
  std::vector<TaskId> order;
  for (int i = 0; i < 5; ++i) {
    auto a = d.assign(i);
    ASSERT_EQ(a.size(), 1u);
    order.push_back(a[0].task);
    d.complete("w", a[0].task, ok_result(), i + 0.5);
  }
  EXPECT_EQ(order, (std::vector<TaskId>{1, 2, 3, 4, 5}));
}

TEST(Dispatcher, RespectsSlots) {
  Dispatcher d;
  for (int i = 0; i < 10; ++i) d.enqueue(noop());
  d.register_worker("a", 2, 0);
  d.register_worker("b", 3, 0);
  EXPECT_EQ(d.assign(0).size(), 5u);
  EXPECT_EQ(d.free_slots(), 0u);
  EXPECT_EQ(d.queue_length(), 5u);
}

TEST(Dispatcher, LostWorkerRequeuesAtHead) {
  Dispatcher d;
  for (int i = 0; i < 3; ++i) d.enqueue(noop());
  d.register_worker("a", 1, 0);
  auto a = d.assign(0);
  ASSERT_EQ(a[0].task, 1);
  d.worker_lost("a");
  EXPECT_EQ(d.queue_length(), 3u);
  d.register_worker("b", 1, 1);
  auto b = d.assign(1);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(b[0].task, 1);
  EXPECT_TRUE(d.complete("b", 1, ok_result(), 2).recorded);
  // the first worker's late result does not count again
  EXPECT_FALSE(d.complete("a", 1, ok_result(), 3).recorded);
  EXPECT_EQ(d.task(1).successes, 1);
  EXPECT_EQ(d.stats().duplicate_results, 1u);
  EXPECT_EQ(d.task(1).dispatches, 2);
}

TEST(Dispatcher, HeartbeatLiveness) {
  Dispatcher d;
  d.enqueue(noop());
  d.enqueue(noop());
  d.register_worker("w", 1, 0);
  d.assign(0);
  d.check_liveness(9.0);
  EXPECT_EQ(d.worker("w")->state, WorkerState::busy);
  d.check_liveness(10.0);
  EXPECT_EQ(d.worker("w")->state, WorkerState::suspect);
  EXPECT_FALSE(d.worker("w")->accepts());
  d.heartbeat("w", 11.0);
  EXPECT_EQ(d.worker("w")->state, WorkerState::busy);
  auto requeued = d.check_liveness(26.0);
  EXPECT_EQ(requeued, (std::vector<TaskId>{1}));
  EXPECT_EQ(d.worker("w")->state, WorkerState::deregistered);
  EXPECT_EQ(d.queue_length(), 2u);
}

TEST(Dispatcher, DeregisterIdleAboveMinimum) {
  ProvisionerPolicy p;
  p.min_workers = 1;
  p.idle_timeout = 30;
  Dispatcher d;
  for (const char* w : {"a", "b", "c", "d"}) d.register_worker(w, 1, 0);
  EXPECT_TRUE(d.deregister_idle(10, p).empty());
  EXPECT_EQ(d.deregister_idle(40, p).size(), 3u);
  EXPECT_EQ(d.live_workers(), 1);
}

TEST(Dispatcher, BusyWorkerNeverReleased) {
  ProvisionerPolicy p;
  p.idle_timeout = 1;
  Dispatcher d;
  d.enqueue(noop());
  d.register_worker("a", 1, 0);
  d.assign(0);
  EXPECT_TRUE(d.deregister_idle(100, p).empty());
}

TEST(Dispatcher, RecordAccountingCoversPaperQueue) {
  exec::JobSpec typical = noop("fmri/roRun.v[17]");
  typical.args = {"-o", "out.img"};
  std::size_t per = Dispatcher::record_bytes(typical);
  std::cout << "queued-task record: " << per << " B; 1.5M queued = " << per * 1'500'000 / (1 << 20) << " MiB\n";
  EXPECT_LT(per, 1024u);
}

TEST(Protocol, RoundTripsTasksAndResults) {
  exec::JobSpec j;
  j.executable = "reorient";
  j.args = {"a", "b c"};
  j.sandbox_dir = "/tmp/x";
  j.stage_in = {{"/data/in.img", "in.img"}};
  j.stage_out = {{"out.img", "/data/out.img"}};
  j.key = "k";
  j.declared_duration = 3.5;
  auto m = wire::parse(wire::task(7, j));
  EXPECT_EQ(wire::type_of(m), "TASK");
  EXPECT_EQ(m["task_id"], 7);
  auto back = wire::job_from(m);
  EXPECT_EQ(back.executable, j.executable);
  EXPECT_EQ(back.args, j.args);
  EXPECT_EQ(back.stage_in[0].rel, "in.img");
  EXPECT_EQ(back.stage_out[0].dest, "/data/out.img");
  EXPECT_EQ(*back.declared_duration, 3.5);
  TaskResult r;
  r.exit_code = 2;
  r.signal = 9;
  r.host = "n1";
  auto rr = wire::result_from(wire::parse(wire::result(7, r)));
  EXPECT_EQ(rr.exit_code, 2);
  EXPECT_EQ(*rr.signal, 9);
  EXPECT_EQ(rr.host, "n1");
  EXPECT_THROW(wire::parse("{\"no_type\":1}"), wire::ProtocolError);
  EXPECT_THROW(wire::parse("not json"), wire::ProtocolError);
}

TEST(Service, OneWorkerThreeTasksSixMessages) {
  LocalDeployment::Options o;
  o.workers = 1;
  LocalDeployment dep(o);
  auto results = run_noops(dep.port(), 3);
  for (const auto& r : results) EXPECT_TRUE(r.succeeded());
  auto s = dep.service().stats();
  EXPECT_EQ(s["task_messages"].get<int>() + s["result_messages"].get<int>(), 6);
  EXPECT_EQ(s["registration_messages"], 2);
}

TEST(Service, TenThousandNoopsExactlyOnce) {
  LocalDeployment::Options o;
  o.workers = 4;
  o.slots = 2;
  LocalDeployment dep(o);
  auto t0 = std::chrono::steady_clock::now();
  auto results = run_noops(dep.port(), 10000);
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "10000 no-ops in " << secs << " s (" << 10000 / secs << " tasks/s)\n";
  auto counts = dep.service().success_counts();
  ASSERT_EQ(counts.size(), 10000u);
  for (const auto& [t, c] : counts) ASSERT_EQ(c, 1) << t;
  auto s = dep.service().stats();
  EXPECT_EQ(s["task_messages"], 10000);
  EXPECT_EQ(s["result_messages"], 10000);
  EXPECT_EQ(s["queue_length"], 0);
}

TEST(Service, ExactlyOnceUnderWorkerCrashes) {
  LocalDeployment::Options o;
  o.workers = 8;
  o.slots = 2;
  o.crash_rate = 0.10;
  o.seed = 42;
  LocalDeployment dep(o);
  auto results = run_noops(dep.port(), 1000);
  for (const auto& r : results) EXPECT_TRUE(r.succeeded());
  auto counts = dep.service().success_counts();
  ASSERT_EQ(counts.size(), 1000u);
  for (const auto& [t, c] : counts) ASSERT_EQ(c, 1) << t;
  auto s = dep.service().stats();
  EXPECT_GT(s["requeues"].get<int>(), 0);
  dep.shutdown();
  int crashes = 0;
  for (const auto& r : dep.reports()) crashes += r.crashes;
  EXPECT_GT(crashes, 50);
}

TEST(Service, QueueFullIsReportedToClient) {
  ServiceConfig sc;
  sc.max_queue = 2;
  Service svc(sc);
  std::thread th([&] { svc.run(); });
  std::mutex mu;
  std::vector<TaskResult> got;
  {
    Client c("127.0.0.1", svc.port(), [&](std::int64_t, const TaskResult& r) {
      std::lock_guard<std::mutex> lock(mu);
      got.push_back(r);
    });
    for (int i = 0; i < 3; ++i) c.submit(i, noop());
    for (int i = 0; i < 100; ++i) {
      if (c.errors() > 0) break;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    EXPECT_EQ(c.errors(), 1u);
  }
  svc.stop();
  th.join();
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0].reason, "falkon: queue-full");
}

TEST(Service, WorkerReregistersAfterServiceRestart) {
  int port = 0;
  std::atomic<bool> stop{false};
  WorkerReport rep;
  std::thread worker;
  {
    ServiceConfig sc;
    Service first(sc);
    port = first.port();
    std::thread th([&] { first.run(); });
    WorkerOptions w;
    w.port = port;
    w.id = "w";
    w.backoff_initial_s = 0.01;
    w.backoff_max_s = 0.1;
    w.stop = &stop;
    worker = std::thread([&, w] { rep = run_worker(w); });
    for (int i = 0; i < 200 && first.stats()["workers"] == 0; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(5));
    EXPECT_EQ(first.stats()["workers"], 1);
    first.stop();
    th.join();
  }
  // The stopped service released the worker; a restarted service on the same
  // port sees no registration from it.
  worker.join();
  EXPECT_TRUE(rep.released);

  // A dropped connection (no BYE) leads to re-registration.
  ServiceConfig sc;
  sc.port = 0;
  Service second(sc);
  std::thread th([&] { second.run(); });
  WorkerOptions w;
  w.port = second.port();
  w.id = "w";
  w.backoff_initial_s = 0.01;
  w.stop = &stop;
  w.crash_rate = 1.0;  // drops the connection on every task
  std::thread crashing([&, w] { rep = run_worker(w); });
  for (int i = 0; i < 200 && second.stats()["workers"] == 0; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(5));
  {
    std::atomic<int> n{0};
    Client c("127.0.0.1", second.port(), [&](std::int64_t, const TaskResult&) { ++n; });
    c.submit(0, noop());
    for (int i = 0; i < 100 && second.stats()["registration_messages"].get<int>() < 4; ++i)
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    EXPECT_GE(second.stats()["registration_messages"].get<int>(), 4);
    EXPECT_EQ(n.load(), 0);
  }
  stop = true;
  crashing.join();
  second.stop();
  th.join();
  EXPECT_GE(rep.registrations, 2);
}

TEST(Service, ProvisionerRequestsNodesForBacklog) {
  ServiceConfig sc;
  sc.drp = true;
  sc.tick_s = 0.02;
  sc.policy.slots_per_node = 2;
  sc.policy.max_workers = 32;
  std::atomic<int> asked{0};
  sc.allocate = [&](int n) { asked += n; };
  Service svc(sc);
  std::thread th([&] { svc.run(); });
  {
    Client c("127.0.0.1", svc.port(), [](std::int64_t, const TaskResult&) {});
    for (int i = 0; i < 68; ++i) c.submit(i, noop());
    for (int i = 0; i < 200 && asked == 0; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  svc.stop();
  th.join();
  EXPECT_EQ(asked.load(), 32);  // ceil(68 / 2) capped at 32 with no nodes yet
}

TEST(FalkonEngine, EmbeddedServiceRunsWorkflow) {
  testutil::TempDir tmp;
  auto w = bench::fmri_like(tmp / "w", 3);
  auto sim = testutil::run_script(w.script, testutil::sim_config(tmp / "sim"));
  ASSERT_TRUE(sim.ok());

  engine::RunConfig cfg;
  cfg.run_dir = tmp / "falkon";
  cfg.clock = ClockMode::wall;
  LocalDeployment::Options o;
  o.workers = 2;
  o.slots = 2;
  o.local.stub = MINISWIFT_STUB;
  engine::Site s;
  s.record.site_id = "falkon";
  s.provider = std::make_shared<FalkonProvider>(o);
  cfg.sites.push_back(s);
  auto r = testutil::run_script(w.script, cfg);
  ASSERT_TRUE(r.ok()) << (r.errors.empty() ? "" : r.errors[0]);
  EXPECT_EQ(r.done, 12u);
  for (const auto& [k, v] : sim.produced) EXPECT_EQ(r.produced.at(k).digest, v.digest) << k;
}

TEST(FalkonSim, RunsWorkflowOnVirtualTime) {
  testutil::TempDir tmp;
  auto w = bench::fmri_like(tmp / "w", 8);
  engine::RunConfig cfg = testutil::sim_config(tmp / "run");
  FalkonSimParams p;
  p.workers = 8;
  p.allocation_latency = 10;
  cfg.sites[0].provider = std::make_shared<FalkonSimProvider>(p);
  auto r = testutil::run_script(w.script, cfg);
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(r.done, 32u);
  // four unit stages of eight tasks on eight workers after the allocation
  EXPECT_NEAR(r.makespan, 10 + 4 * (1 + 1.0 / 487), 0.05);
}

TEST(FalkonSim, CrashesAreRequeuedNotLost) {
  testutil::TempDir tmp;
  auto w = bench::fmri_like(tmp / "w", 25);
  engine::RunConfig cfg = testutil::sim_config(tmp / "run");
  FalkonSimParams p;
  p.workers = 4;
  p.allocation_latency = 0;
  p.crash_rate = 0.1;
  p.seed = 3;
  auto prov = std::make_shared<FalkonSimProvider>(p);
  cfg.sites[0].provider = prov;
  auto r = testutil::run_script(w.script, cfg);
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(r.attempts, 100u);  // crashes never surface as task failures
  EXPECT_GT(prov->dispatcher().stats().requeues, 0u);
  EXPECT_EQ(prov->dispatcher().stats().successes, 100u);
}

TEST(FalkonSim, ProvisionerGrowsPoolWithinOnePeriod) {
  EventLoop loop(ClockMode::virtual_time);
  FalkonSimParams p;
  p.workers = 1;
  p.allocation_latency = 5;
  p.drp = true;
  p.policy.slots_per_node = 2;
  p.policy.max_workers = 32;
  p.policy.provision_period = 1;
  p.policy.idle_timeout = 30;
  FalkonSimProvider prov(p);
  int done = 0;
  prov.attach(loop, [&](exec::JobId, const exec::JobStatus&) { ++done; });
  for (int i = 0; i < 68; ++i) {
    auto j = noop("t" + std::to_string(i));
    j.declared_duration = 20;
    prov.submit(j);
  }
  loop.schedule_at(1.0 + 1e-9, [&] { EXPECT_EQ(prov.nodes_requested(), 1 + 31); });
  loop.run([] { return false; });
  EXPECT_EQ(done, 68);
  EXPECT_EQ(prov.dispatcher().live_workers(), p.policy.min_workers);
}
