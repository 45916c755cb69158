#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "miniswift/exec/provider.hpp"
#include "miniswift/sched/scheduler.hpp"
#include "miniswift/util/digest.hpp"
#include "miniswift/util/event_loop.hpp"

namespace miniswift::engine {

// Declared task durations handed to simulated providers.
struct DurationModel {
  enum class Kind { constant, uniform };
  Kind kind = Kind::constant;
  double a = 0;
  double b = 0;
  std::uint64_t seed = 0;

  static DurationModel constant(double t) { return {Kind::constant, t, t, 0}; }
  static DurationModel uniform(double lo, double hi, std::uint64_t seed) { return {Kind::uniform, lo, hi, seed}; }

  double sample(std::string_view key) const {
    if (kind == Kind::constant) return a;
    return a + (b - a) * keyed_uniform(seed, key);
  }

  // "constant:<t>" or "uniform:<a>,<b>".
  static DurationModel parse(const std::string& text, std::uint64_t seed) {
    auto colon = text.find(':');
    std::string kind = text.substr(0, colon);
    std::string rest = colon == std::string::npos ? "" : text.substr(colon + 1);
    if (kind == "constant") return constant(rest.empty() ? 0.0 : std::stod(rest));
    if (kind == "uniform") {
      auto comma = rest.find(',');
      if (comma == std::string::npos) throw std::invalid_argument("uniform duration needs a,b");
      return uniform(std::stod(rest.substr(0, comma)), std::stod(rest.substr(comma + 1)), seed);
    }
    throw std::invalid_argument("unknown duration model '" + text + "'");
  }
};

// A configured execution site: scheduling record plus the provider behind it.
struct Site {
  sched::SiteRecord record;
  std::shared_ptr<exec::Provider> provider;
};

struct RunConfig {
  std::filesystem::path run_dir = "run";
  std::vector<Site> sites;
  sched::Policy policy;
  bool pipelining = true;  // false: stage barriers
  std::uint64_t seed = 0;
  ClockMode clock = ClockMode::virtual_time;
  DurationModel durations;
  bool materialize_outputs = true;  // outputs must exist on completion; digests are recorded
  bool restart_log = true;
  bool provenance = true;
  bool full_env = false;
  std::vector<std::string> env_allowlist;
  bool resume = false;
  std::optional<std::size_t> interrupt_after_completions;
  bool keep_trace = true;
};

}  // namespace miniswift::engine
