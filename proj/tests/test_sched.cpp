#include <gtest/gtest.h>

#include <cmath>

#include "miniswift/sched/scheduler.hpp"

using namespace miniswift::sched;

namespace {

Scheduler two_sites(double a, double b, std::uint64_t seed = 1) {
  Scheduler s(Policy{}, seed);
  SiteRecord sa;
  sa.site_id = "A";
  sa.score = a;
  SiteRecord sb;
  sb.site_id = "B";
  sb.score = b;
  s.add_site(sa);
  s.add_site(sb);
  return s;
}

}  // namespace

TEST(SelectSite, ProportionalToScore) {
  auto s = two_sites(2, 3, 42);
  int n = 10000, a = 0;
  for (int i = 0; i < n; ++i) a += *s.select_site("app") == "A";
  double p = 0.4, sigma = std::sqrt(p * (1 - p) / n);
  EXPECT_NEAR(static_cast<double>(a) / n, p, 3 * sigma);
}

TEST(SelectSite, SingleValidSiteAlwaysChosen) {
  auto s = two_sites(5, 5);
  s.site("B").apps = {"other"};
  for (int i = 0; i < 100; ++i) EXPECT_EQ(*s.select_site("app"), "A");
  s.site("A").throttle = 0;
  EXPECT_FALSE(s.select_site("app").has_value());
  EXPECT_EQ(*s.select_site("other"), "B");
}

TEST(SelectSite, ThrottleLimitsInFlight) {
  auto s = two_sites(1, 1);
  s.site("A").throttle = 2;
  s.site("B").throttle = 2;
  for (int i = 0; i < 4; ++i) s.on_dispatch(*s.select_site("x"));
  EXPECT_FALSE(s.select_site("x").has_value());
  EXPECT_EQ(s.site("A").in_flight, 2);
  s.on_job_done("A");
  EXPECT_EQ(*s.select_site("x"), "A");
}

TEST(SelectSite, CalloutOverrides) {
  auto s = two_sites(1, 100);
  s.set_callout([](const std::string&, const std::vector<SiteRecord>&) { return std::optional<std::string>("A"); });
  EXPECT_EQ(*s.select_site("x"), "A");
}

TEST(Score, UpdateRule) {
  auto s = two_sites(1, 1);
  s.update_score("A", true);
  EXPECT_DOUBLE_EQ(s.site("A").score, 1.05);
  for (int i = 0; i < 3; ++i) s.update_score("B", false);
  EXPECT_NEAR(s.site("B").score, 0.512, 1e-12);
  s.site("A").score = 10;
  s.update_score("A", true);
  EXPECT_DOUBLE_EQ(s.site("A").score, 10);
  for (int i = 0; i < 100; ++i) s.update_score("B", false);
  EXPECT_DOUBLE_EQ(s.site("B").score, 0.1);
}

TEST(Score, Monotonicity) {
  auto s = two_sites(1, 1);
  for (int i = 0; i < 50; ++i) {
    s.update_score("A", true);
    s.update_score("B", false);
    EXPECT_GE(s.site("A").score, s.site("B").score);
  }
}

TEST(Cluster, AllReadyAtOnce) {
  std::vector<double> ready(480, 0.0);
  auto b = cluster(ready, 0.5, 60);
  EXPECT_EQ(b.size(), 8u);
  for (const auto& x : b) EXPECT_EQ(x.members.size(), 60u);
}

TEST(Cluster, CapOneIsIdentity) {
  std::vector<double> ready = {0, 0, 0.1, 3};
  auto b = cluster(ready, 0.5, 1);
  ASSERT_EQ(b.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(b[i].members, std::vector<std::size_t>{i});
}

TEST(Cluster, WindowsByArrival) {
  std::vector<double> ready = {0, 0.1, 0.2, 0.3, 0.6, 0.7, 0.8, 0.9, 1.2, 1.3};
  auto b = cluster(ready, 0.5, 100);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[0].members.size(), 4u);
  EXPECT_EQ(b[1].members.size(), 4u);
  EXPECT_EQ(b[2].members.size(), 2u);
}

TEST(Cluster, PartitionsInput) {
  std::mt19937 rng(3);
  std::vector<double> ready(500);
  for (auto& r : ready) r = std::uniform_real_distribution<double>(0, 20)(rng);
  auto b = cluster(ready, 0.7, 13);
  std::vector<int> seen(ready.size(), 0);
  for (const auto& x : b) {
    EXPECT_GE(x.members.size(), 1u);
    EXPECT_LE(x.members.size(), 13u);
    for (auto m : x.members) ++seen[m];
  }
  for (int c : seen) EXPECT_EQ(c, 1);
}

TEST(Failure, TransientRetriesSameSite) {
  auto s = two_sites(1, 1);
  FailedAttempt f{"app", 0, "A", "A-n0", 1, ErrorClass::transient};
  auto d = s.handle_failure(f, 0);
  EXPECT_EQ(d.action, FailureAction::retry_same_site);
  EXPECT_EQ(d.site, "A");
}

TEST(Failure, RepeatedHostErrorsMoveToOtherSite) {
  auto s = two_sites(1, 1);
  std::vector<FailureAction> trace;
  for (int attempt = 0; attempt < 3; ++attempt) {
    FailedAttempt f{"app", attempt, "A", "A-n0", attempt + 1, ErrorClass::host};
    trace.push_back(s.handle_failure(f, 10.0 * attempt).action);
  }
  EXPECT_EQ(trace[0], FailureAction::suspend_host_and_requeue);
  EXPECT_EQ(trace[1], FailureAction::suspend_host_and_requeue);
  EXPECT_EQ(trace[2], FailureAction::reschedule_other_site);
  EXPECT_TRUE(s.site("A").host_suspended("A-n0", 50));
  EXPECT_FALSE(s.site("A").host_suspended("A-n0", 10 + s.policy().suspend_seconds));
}

TEST(Failure, RescheduleNeedsAnotherSite) {
  Scheduler s;
  SiteRecord a;
  a.site_id = "A";
  s.add_site(a);
  FailedAttempt f{"app", 2, "A", "", 3, ErrorClass::transient};
  EXPECT_EQ(s.handle_failure(f, 0).action, FailureAction::retry_same_site);
}

TEST(Failure, MaxRetriesIsPermanent) {
  auto s = two_sites(1, 1);
  FailedAttempt f{"app", 3, "A", "", 1, ErrorClass::transient};
  EXPECT_EQ(s.handle_failure(f, 0).action, FailureAction::fail_permanent);
  f.attempt = 0;
  f.error = ErrorClass::permanent;
  EXPECT_EQ(s.handle_failure(f, 0).action, FailureAction::fail_permanent);
}

TEST(Failure, Classification) {
  Scheduler s;
  miniswift::exec::JobStatus st;
  st.stderr_text = "cp: Stale NFS handle\n";
  EXPECT_EQ(s.classify(st), ErrorClass::host);
  st.stderr_text = "segfault";
  EXPECT_EQ(s.classify(st), ErrorClass::transient);
  st.reason = "stage-in-missing: /x";
  EXPECT_EQ(s.classify(st), ErrorClass::permanent);
}
