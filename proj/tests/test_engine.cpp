#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>

#include "engine_support.hpp"
#include "miniswift/exec/local.hpp"
#include "test_util.hpp"

using namespace miniswift;
using testutil::run_script;
using testutil::run_source;
using testutil::sim_config;
namespace fs = std::filesystem;

namespace {

fs::path fmri_fixture(const testutil::TempDir& tmp) {
  for (const char* f : {"fmri.sws", "fmri_lib.sws"}) fs::copy_file(fs::path(MINISWIFT_FIXTURES) / f, tmp / f);
  testutil::copy_tree(fs::path(MINISWIFT_FIXTURES) / "fmriddc", tmp / "fmriddc");
  return tmp / "fmri.sws";
}

std::map<std::string, std::string> digests(const engine::RunResult& r) {
  std::map<std::string, std::string> out;
  for (const auto& [k, v] : r.produced) out[k] = v.digest;
  return out;
}

std::size_t count_proc(const engine::RunResult& r, const std::string& proc) {
  return static_cast<std::size_t>(std::count_if(r.trace.begin(), r.trace.end(), [&](const auto& t) { return t.proc == proc; }));
}

}  // namespace

TEST(Engine, SampleFmriOnTwoVolumes) {
  testutil::TempDir tmp;
  auto script = fmri_fixture(tmp);
  auto r = run_script(script, sim_config(tmp / "run"));
  ASSERT_TRUE(r.ok()) << (r.errors.empty() ? "" : r.errors[0]);
  EXPECT_EQ(r.tasks, 8u);
  EXPECT_EQ(r.done, 8u);
  EXPECT_EQ(count_proc(r, "reorient"), 4u);
  EXPECT_EQ(count_proc(r, "alignlinear"), 2u);
  EXPECT_EQ(count_proc(r, "reslice"), 2u);
  for (const char* f : {"sbold1_0000.img", "sbold1_0000.hdr", "sbold1_0001.img", "sbold1_0001.hdr"})
    EXPECT_TRUE(fs::exists(tmp / "fmriddc/functional_data" / f)) << f;
  EXPECT_EQ(testutil::slurp(tmp / "fmriddc/functional_data/sbold1_0000.hdr").rfind("stub:reslice\n", 0), 0u);
}

TEST(Engine, EmptyPlan) {
  testutil::TempDir tmp;
  auto r = run_source("", tmp.path(), sim_config(tmp / "run"));
  EXPECT_TRUE(r.ok());
  EXPECT_EQ(r.tasks, 0u);
}

TEST(Engine, MontageExpandsPerRow) {
  testutil::TempDir tmp;
  fs::copy_file(fs::path(MINISWIFT_FIXTURES) / "montage.sws", tmp / "montage.sws");
  testutil::copy_tree(fs::path(MINISWIFT_FIXTURES) / "montage", tmp / "montage");
  auto r = run_script(tmp / "montage.sws", sim_config(tmp / "run"));
  ASSERT_TRUE(r.ok()) << (r.errors.empty() ? "" : r.errors[0]);
  EXPECT_EQ(r.tasks, 11u);
  EXPECT_TRUE(fs::exists(tmp / "out/montage/diff_0010.fits"));
}

TEST(Engine, NestedForeachExpandsEveryPair) {
  testutil::TempDir tmp;
  for (int i = 0; i < 3; ++i) tmp.write("a/a_" + std::to_string(i) + ".dat", "a");
  for (int i = 0; i < 4; ++i) tmp.write("b/b_" + std::to_string(i) + ".dat", "b");
  const char* src = R"(type File {}
type Grid { File c[]; }
(File o) pair (File x, File y) { app { pair @filename(x) @filename(y) @filename(o); } }
File as[]<fs_mapper; location="a/", prefix="a", suffix=".dat">;
File bs[]<fs_mapper; location="b/", prefix="b", suffix=".dat">;
Grid g[];
foreach x, i in as {
  foreach y, j in bs {
    g[i].c[j] = pair(x, y);
  }
}
)";
  auto r = run_source(src, tmp.path(), sim_config(tmp / "run"));
  ASSERT_TRUE(r.ok()) << (r.errors.empty() ? "" : r.errors[0]);
  EXPECT_EQ(r.tasks, 12u);
  std::set<std::string> keys;
  for (const auto& t : r.trace) keys.insert(t.key);
  EXPECT_EQ(keys.size(), 12u);
  EXPECT_TRUE(keys.count("g[2].c[3]"));
}

TEST(Engine, EmptyArrayClosesImmediately) {
  testutil::TempDir tmp;
  fs::create_directories(tmp / "a");
  const char* src = R"(type File {}
(File o) f (File x) { app { f @filename(x) @filename(o); } }
(File o) all (File xs[]) { app { all @filename(o); } }
File as[]<fs_mapper; location="a/", prefix="a">;
File bs[];
foreach x, i in as { bs[i] = f(x); }
File z = all(bs);
)";
  auto r = run_source(src, tmp.path(), sim_config(tmp / "run"));
  ASSERT_TRUE(r.ok()) << (r.errors.empty() ? "" : r.errors[0]);
  EXPECT_EQ(r.tasks, 1u);
}

TEST(Engine, ElementWisePipelining) {
  testutil::TempDir tmp;
  for (int i = 0; i < 6; ++i) tmp.write("a/a_" + std::to_string(i) + ".dat", "a");
  const char* src = R"(type File {}
(File o) s1 (File x) { app { s1 @filename(x) @filename(o); } }
(File o) s2 (File x) { app { s2 @filename(x) @filename(o); } }
(File o) all (File xs[]) { app { all @filename(o); } }
File as[]<fs_mapper; location="a/", prefix="a", suffix=".dat">;
File bs[];
File cs[];
foreach x, i in as { bs[i] = s1(x); }
foreach y, i in bs { cs[i] = s2(y); }
File z = all(cs);
)";
  auto cfg = sim_config(tmp / "run");
  cfg.durations = engine::DurationModel::uniform(1, 10, 5);
  auto r = run_source(src, tmp.path(), cfg);
  ASSERT_TRUE(r.ok());
  std::map<std::string, const engine::TaskTrace*> by_key;
  for (const auto& t : r.trace) by_key[t.key] = &t;
  double last_s1 = 0;
  for (int i = 0; i < 6; ++i) last_s1 = std::max(last_s1, by_key.at("bs[" + std::to_string(i) + "]")->end);
  int early = 0;
  for (int i = 0; i < 6; ++i) {
    auto* a = by_key.at("bs[" + std::to_string(i) + "]");
    auto* b = by_key.at("cs[" + std::to_string(i) + "]");
    EXPECT_DOUBLE_EQ(b->ready, a->end);
    if (b->start < last_s1) ++early;
  }
  EXPECT_GT(early, 0);
  // a whole-array consumer waits for every element
  double last_s2 = 0;
  for (int i = 0; i < 6; ++i) last_s2 = std::max(last_s2, by_key.at("cs[" + std::to_string(i) + "]")->end);
  EXPECT_DOUBLE_EQ(by_key.at("z")->ready, last_s2);
}

TEST(Engine, BarrierModeWaitsForWholeStage) {
  testutil::TempDir tmp;
  auto w = bench::fmri_like(tmp / "w", 6);
  auto cfg = sim_config(tmp / "run", 3);
  cfg.durations = engine::DurationModel::uniform(3, 9, 11);
  cfg.pipelining = false;
  auto barrier = run_script(w.script, cfg);
  ASSERT_TRUE(barrier.ok());
  std::map<std::string, double> stage_end, stage_start;
  for (const auto& t : barrier.trace) {
    stage_end[t.proc + t.stage] = std::max(stage_end[t.proc + t.stage], t.end);
    if (!stage_start.count(t.proc + t.stage)) stage_start[t.proc + t.stage] = t.start;
    stage_start[t.proc + t.stage] = std::min(stage_start[t.proc + t.stage], t.start);
  }
  std::vector<std::pair<double, double>> spans;
  for (const auto& [k, e] : stage_end) spans.emplace_back(stage_start[k], e);
  std::sort(spans.begin(), spans.end());
  ASSERT_EQ(spans.size(), 4u);
  for (std::size_t i = 1; i < spans.size(); ++i) EXPECT_GE(spans[i].first, spans[i - 1].second);

  cfg.pipelining = true;
  cfg.run_dir = tmp / "run2";
  auto piped = run_script(w.script, cfg);
  ASSERT_TRUE(piped.ok());
  EXPECT_LE(piped.makespan, barrier.makespan + 1e-9);
  EXPECT_EQ(digests(piped), digests(barrier));
}

TEST(Engine, UpstreamFailurePropagates) {
  testutil::TempDir tmp;
  for (int i = 0; i < 3; ++i) tmp.write("a/a_" + std::to_string(i) + ".dat", "a");
  const char* src = R"(type File {}
(File o) s1 (File x) { app { s1 @filename(x) @filename(o); } }
(File o) s2 (File x) { app { s2 @filename(x) @filename(o); } }
File as[]<fs_mapper; location="a/", prefix="a", suffix=".dat">;
File bs[];
File cs[];
foreach x, i in as { bs[i] = s1(x); }
foreach y, i in bs { cs[i] = s2(y); }
)";
  auto cfg = sim_config(tmp / "run");
  exec::SimExecution ex;
  for (int a = 0; a < 10; ++a) ex.forced_exit["bs[1]#" + std::to_string(a)] = 3;
  cfg.sites[0] = testutil::sim_site("sim", 8, ex);
  auto r = run_source(src, tmp.path(), cfg);
  EXPECT_EQ(r.status, engine::RunResult::Status::failed);
  EXPECT_EQ(r.tasks, 6u);
  EXPECT_EQ(r.done, 4u);
  EXPECT_EQ(r.failed, 2u);
  EXPECT_EQ(r.upstream_failed, 1u);
  for (const auto& t : r.trace) {
    if (t.key == "bs[1]") EXPECT_EQ(t.attempts, cfg.policy.max_retries + 1);
    if (t.key == "cs[1]") {
      EXPECT_EQ(t.state, engine::TaskState::failed);
      EXPECT_LT(t.submit, 0);  // never submitted
    }
  }
  auto records = provenance::load_records(tmp / "run");
  EXPECT_EQ(records.size(), r.attempts);
}

TEST(Engine, TransientFailuresRetryWithinBound) {
  testutil::TempDir tmp;
  auto w = bench::fmri_like(tmp / "w", 10);
  auto cfg = sim_config(tmp / "run");
  exec::SimExecution ex;
  ex.failure_rate = 0.3;
  ex.seed = 9;
  cfg.sites[0] = testutil::sim_site("sim", 8, ex);
  auto r = run_script(w.script, cfg);
  EXPECT_EQ(r.tasks, 40u);
  EXPECT_EQ(r.done + r.failed, r.tasks);
  EXPECT_GT(r.attempts, r.done);
  for (const auto& t : r.trace) EXPECT_LE(t.attempts, cfg.policy.max_retries + 1);
  EXPECT_EQ(provenance::load_records(tmp / "run").size(), r.attempts);
}

TEST(Engine, MissingOutputIsAFailure) {
  testutil::TempDir tmp;
  tmp.write("a/a_0.dat", "a");
  const char* src = R"(type File {}
(File o) s1 (File x) { app { s1 @filename(x) @filename(o); } }
File as[]<fs_mapper; location="a/", prefix="a", suffix=".dat">;
File bs[];
foreach x, i in as { bs[i] = s1(x); }
)";
  auto cfg = sim_config(tmp / "run");
  exec::SimExecution ex;
  ex.materialize = false;
  cfg.sites[0] = testutil::sim_site("sim", 2, ex);
  auto r = run_source(src, tmp.path(), cfg);
  EXPECT_EQ(r.status, engine::RunResult::Status::failed);
  ASSERT_FALSE(r.errors.empty());
  EXPECT_NE(r.errors[0].find("missing output"), std::string::npos);
}

TEST(Engine, MappingErrorsCarryLocation) {
  testutil::TempDir tmp;
  const char* src = "type File {}\ntype Row { int a; }\nRow rows[]<csv_mapper; file=\"nope.csv\">;\n";
  auto r = run_source(src, tmp.path(), sim_config(tmp / "run"));
  EXPECT_EQ(r.status, engine::RunResult::Status::failed);
  ASSERT_EQ(r.errors.size(), 1u);
  EXPECT_EQ(r.errors[0].rfind("3:", 0), 0u) << r.errors[0];
}

TEST(Engine, RestartResumesFromLog) {
  testutil::TempDir tmp;
  const std::size_t V = 12;
  auto w = bench::fmri_like(tmp / "w", V);
  auto full = run_script(w.script, sim_config(tmp / "full"));
  ASSERT_TRUE(full.ok());
  auto reference = digests(full);

  auto w2 = bench::fmri_like(tmp / "w2", V);
  auto cfg = sim_config(tmp / "run");
  cfg.interrupt_after_completions = 2 * V;
  auto first = run_script(w2.script, cfg);
  EXPECT_EQ(first.status, engine::RunResult::Status::interrupted);
  EXPECT_EQ(first.executed, 2 * V);
  std::set<std::string> before;
  for (const auto& t : first.trace)
    if (t.state == engine::TaskState::done) before.insert(t.key);

  cfg.interrupt_after_completions.reset();
  cfg.resume = true;
  auto second = run_script(w2.script, cfg);
  ASSERT_TRUE(second.ok());
  EXPECT_EQ(second.executed, 2 * V);
  EXPECT_EQ(second.restored, 2 * V);
  for (const auto& t : second.trace)
    if (!t.restored && t.submit >= 0) EXPECT_FALSE(before.count(t.key)) << t.key;
  std::map<std::string, std::string> got;
  for (const auto& [k, v] : second.produced) got[k] = v.digest;
  EXPECT_EQ(got, reference);

  auto again = run_script(w2.script, cfg);
  EXPECT_TRUE(again.ok());
  EXPECT_EQ(again.executed, 0u);

  bench::add_fmri_volume(w2.dir, V);
  auto grown = run_script(w2.script, cfg);
  ASSERT_TRUE(grown.ok());
  EXPECT_EQ(grown.executed, 4u);
  EXPECT_EQ(grown.tasks, 4 * (V + 1));
}

TEST(Engine, RestartRejectsChangedProducers) {
  testutil::TempDir tmp;
  auto w = bench::fmri_like(tmp / "w", 2);
  auto cfg = sim_config(tmp / "run");
  ASSERT_TRUE(run_script(w.script, cfg).ok());
  std::string text = testutil::slurp(w.script);
  text.replace(text.find("\"81 3 3\""), 8, "\"81 3 4\"");
  bench::write_file(w.script, text);
  cfg.resume = true;
  EXPECT_THROW(run_script(w.script, cfg), engine::PlanDigestMismatch);
}

TEST(Engine, DigestsIndependentOfProviderAndOrder) {
  testutil::TempDir tmp;
  auto w = bench::fmri_like(tmp / "w", 5);
  std::vector<std::map<std::string, std::string>> results;
  for (int workers : {1, 3, 16}) {
    auto cfg = sim_config(tmp / ("sim" + std::to_string(workers)), workers);
    cfg.durations = engine::DurationModel::uniform(1, 5, static_cast<std::uint64_t>(workers));
    auto r = run_script(w.script, cfg);
    ASSERT_TRUE(r.ok());
    results.push_back(digests(r));
  }
  engine::RunConfig local;
  local.run_dir = tmp / "local";
  local.clock = ClockMode::wall;
  exec::LocalParams lp;
  lp.max_parallel = 4;
  lp.stub = MINISWIFT_STUB;
  engine::Site s;
  s.record.site_id = "local";
  s.provider = std::make_shared<exec::LocalProvider>(lp);
  local.sites.push_back(s);
  auto r = run_script(w.script, local);
  ASSERT_TRUE(r.ok()) << (r.errors.empty() ? "" : r.errors[0]);
  results.push_back(digests(r));
  ASSERT_EQ(results[0].size(), 35u);  // seven files per volume
  for (const auto& d : results) EXPECT_EQ(d, results[0]);
  for (const auto& [k, v] : results[0]) EXPECT_FALSE(v.empty()) << k;
}

TEST(Engine, ClusteringPreservesResults) {
  testutil::TempDir tmp;
  auto w = bench::fmri_like(tmp / "w", 8);
  auto cfg = sim_config(tmp / "a");
  auto plain = run_script(w.script, cfg);
  cfg.run_dir = tmp / "b";
  cfg.policy.cluster_cap = 5;
  cfg.policy.cluster_window_s = 0.5;
  auto clustered = run_script(w.script, cfg);
  ASSERT_TRUE(clustered.ok());
  EXPECT_LT(clustered.jobs, plain.jobs);
  EXPECT_EQ(digests(clustered), digests(plain));
}

TEST(Engine, LoadSpreadsAcrossSites) {
  testutil::TempDir tmp;
  auto w = bench::fmri_like(tmp / "w", 20);
  auto cfg = sim_config(tmp / "run");
  cfg.sites.push_back(testutil::sim_site("other", 8));
  cfg.sites[1].record.apps = {"reorient"};
  auto r = run_script(w.script, cfg);
  ASSERT_TRUE(r.ok());
  for (const auto& t : r.trace)
    if (t.site == "other") EXPECT_EQ(t.proc, "reorient");
  EXPECT_GT(r.site_tasks["other"], 0u);
}

TEST(Engine, NoSiteForApplicationFails) {
  testutil::TempDir tmp;
  auto w = bench::fmri_like(tmp / "w", 2);
  auto cfg = sim_config(tmp / "run");
  cfg.sites[0].record.apps = {"reorient"};
  auto r = run_script(w.script, cfg);
  EXPECT_EQ(r.status, engine::RunResult::Status::failed);
  EXPECT_EQ(r.done + r.failed, r.tasks);
}

TEST(Engine, AccountingStaysSmallPerTask) {
  testutil::TempDir tmp;
  auto w = bench::flat(tmp / "w", 5000);
  auto cfg = sim_config(tmp / "run", 64);
  cfg.materialize_outputs = false;
  cfg.provenance = false;
  cfg.restart_log = false;
  cfg.keep_trace = false;
  exec::SimExecution ex;
  ex.materialize = false;
  cfg.sites[0] = testutil::sim_site("sim", 64, ex);
  auto r = run_script(w.script, cfg);
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(r.done, 5000u);
  EXPECT_LE(r.bytes_per_task, 4096.0);
}

TEST(Engine, ExpressionsAndConditionals) {
  testutil::TempDir tmp;
  const char* src = R"(type File {}
(File o) mk (int n, string s) { app { mk n s @filename(o); } }
int k = 2 + 3 * 4;
string name = "v" + "x";
File a;
File b;
if (k > 10) {
  a = mk(k, name);
} else {
  b = mk(0, name);
}
)";
  auto r = run_source(src, tmp.path(), sim_config(tmp / "run"));
  EXPECT_EQ(r.tasks, 1u);
  ASSERT_EQ(r.trace.size(), 1u);
  EXPECT_EQ(r.trace[0].key, "a");
  EXPECT_EQ(r.status, engine::RunResult::Status::failed);  // b has no producer
}
