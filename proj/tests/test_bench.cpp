#include <gtest/gtest.h>

#include "miniswift/bench/bench.hpp"
#include "test_util.hpp"

using namespace miniswift;
using namespace miniswift::bench;

TEST(Efficiency, RatioOfSpeedups) {
  EXPECT_NEAR(efficiency(206.9, 207.26), 0.998, 5e-4);
  EXPECT_DOUBLE_EQ(efficiency(64, 64), 1.0);
  EXPECT_NEAR(efficiency(25.3, 200), 0.1265, 1e-9);
  EXPECT_THROW(efficiency(0, 1), std::invalid_argument);
}

TEST(EfficiencyModel, ClosedFormExamples) {
  EXPECT_NEAR(efficiency_model(1000, 1, 1e6, 900).efficiency, 0.90, 0.005);
  EXPECT_NEAR(efficiency_model(100, 500, 1e6, 0.18).efficiency, 0.90, 0.005);
  EXPECT_NEAR(efficiency_model(64, 1e12, 6400, 10).efficiency, 1.0, 1e-6);
  auto m = efficiency_model(10, 1, 100, 5);
  EXPECT_DOUBLE_EQ(m.ideal, 50);
  EXPECT_DOUBLE_EQ(m.makespan, 105);
}

TEST(EfficiencyModel, CondorDerivationFromTrace) {
  EXPECT_NEAR(simulated_efficiency(64, 11, 64, 50).efficiency, 0.90, 0.02);
  EXPECT_NEAR(simulated_efficiency(64, 11, 64, 100).efficiency, 0.945, 0.02);
  EXPECT_NEAR(simulated_efficiency(64, 11, 64, 1000).efficiency, 0.994, 0.01);
}

TEST(EfficiencyModel, AgreesWithSimulationOnGrid) {
  auto grid = efficiency_grid();
  ASSERT_EQ(grid.size(), 50u);
  for (const auto& g : grid) EXPECT_LT(g.rel_error(), 0.02) << "P=" << g.P << " r=" << g.r << " t=" << g.t;
}

TEST(EfficiencyModel, NinetyPercentLengths) {
  EXPECT_NEAR(length_for_efficiency(1000, 1, 1e6), 900, 5);
  EXPECT_NEAR(length_for_efficiency(100, 500, 1e6), 0.18, 0.005);
  for (const auto& t : efficiency_thresholds()) EXPECT_LE(t.rel_diff(), 0.15) << "P=" << t.P << " r=" << t.r;
  double t = length_for_efficiency(64, 11, 64);
  EXPECT_NEAR(efficiency_model(64, 11, 64, t).efficiency, 0.9, 1e-9);
}

TEST(BenchPipeline, ConstantDurationsWithEnoughWorkersGainNothing) {
  testutil::TempDir tmp;
  auto w = fmri_like(tmp / "w", 6);
  auto [piped, barrier] = pipeline_pair(w, tmp / "run", 6, engine::DurationModel::constant(5), 1);
  EXPECT_NEAR(1 - piped / barrier, 0, 1e-4);
  EXPECT_NEAR(piped, 20, 1e-3);
}

TEST(BenchPipeline, DominanceAndDeterminism) {
  testutil::TempDir tmp;
  PipelineParams p;
  p.volumes = 24;
  p.instances = 25;
  auto a = bench_pipeline(tmp / "a", p);
  auto b = bench_pipeline(tmp / "b", p);
  EXPECT_EQ(a.dominance_checked, 25u);
  EXPECT_EQ(a.dominance_violations, 0u);
  EXPECT_LE(a.pipelined, a.barrier);
  EXPECT_EQ(pipeline_report(p, a).data.dump(), pipeline_report(p, b).data.dump());
}

TEST(BenchCluster, BundlesPreserveDigests) {
  testutil::TempDir tmp;
  ClusterParams p;
  p.volumes = 20;
  p.cluster_cap = 10;
  auto r = bench_cluster(tmp.path(), p);
  EXPECT_EQ(r.unclustered_jobs, 80u);
  EXPECT_EQ(r.clustered_jobs, 8u);
  EXPECT_TRUE(r.digests_equal);
  EXPECT_EQ(r.falkon_tasks, 80u);
  EXPECT_GT(r.falkon, 0);
}

TEST(BenchThroughput, EmptyRunReportsZero) {
  testutil::TempDir tmp;
  ThroughputParams p;
  p.tasks = 0;
  p.engine_tasks = 0;
  auto r = bench_throughput(tmp.path(), p);
  EXPECT_EQ(r.dispatcher_rate, 0);
  EXPECT_EQ(r.engine_completed, 0u);
}

TEST(BenchThroughput, DispatcherOutrunsEngine) {
  testutil::TempDir tmp;
  ThroughputParams p;
  p.tasks = 500;
  p.engine_tasks = 50;
  p.stub = MINISWIFT_STUB;
  auto r = bench_throughput(tmp.path(), p);
  EXPECT_EQ(r.engine_completed, 50u);
  EXPECT_GT(r.dispatcher_rate, 20);
  EXPECT_LT(r.engine_rate, r.dispatcher_rate);
}

TEST(BenchLoadBalance, FrozenScoresSplitProportionally) {
  testutil::TempDir tmp;
  LoadBalanceParams p;
  p.seeds = 2;
  auto r = bench_loadbalance(tmp.path(), p);
  EXPECT_NEAR(r.expected_a, 218, 1e-9);
  ASSERT_EQ(r.runs.size(), 2u);
  for (const auto& run : r.runs) {
    EXPECT_EQ(run.a + run.b, 480u);
    EXPECT_TRUE(run.within);
  }
}

TEST(BenchScale, AccountingPerTask) {
  testutil::TempDir tmp;
  ScaleParams p;
  p.tasks = 3000;
  auto r = bench_scale(tmp.path(), p);
  EXPECT_TRUE(r.ok);
  EXPECT_EQ(r.done, 3000u);
  EXPECT_LE(r.bytes_per_task, 4096);
}

TEST(Reports, WrittenAsJsonAndText) {
  testutil::TempDir tmp;
  Report r{"demo", {{"x", 1}}, "x 1\n"};
  write_report(tmp.path(), r);
  EXPECT_EQ(json::parse(testutil::slurp(tmp / "reports/demo.json")).at("x"), 1);
  EXPECT_EQ(testutil::slurp(tmp / "reports/demo.txt"), "x 1\n");
}
