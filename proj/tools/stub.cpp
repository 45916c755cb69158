// miniswift-stub <app> [args...]
//
// Reads the staged inputs named in MINISWIFT_STAGE_IN and writes every file
// named in MINISWIFT_STAGE_OUT (newline-separated, relative to the working
// directory). MINISWIFT_STUB_EXIT forces an exit status without producing
// outputs, MINISWIFT_STUB_STDERR is echoed to stderr first and
// MINISWIFT_STUB_SLEEP_MS delays the run.
#include <chrono>
#include <cstdlib>
#include <iostream>
#include <thread>

#include "miniswift/exec/stub.hpp"

namespace {

std::string env_or(const char* name, const char* fallback = "") {
  const char* v = std::getenv(name);
  return v ? v : fallback;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: miniswift-stub <app> [args...]\n";
    return 2;
  }
  std::string app = argv[1];
  if (auto msg = env_or("MINISWIFT_STUB_STDERR"); !msg.empty()) std::cerr << msg << "\n";
  if (auto ms = env_or("MINISWIFT_STUB_SLEEP_MS"); !ms.empty())
    std::this_thread::sleep_for(std::chrono::milliseconds(std::atol(ms.c_str())));
  if (auto code = env_or("MINISWIFT_STUB_EXIT"); !code.empty()) return std::atoi(code.c_str());

  std::vector<std::filesystem::path> ins, outs;
  for (const auto& s : miniswift::exec::split_lines(env_or(miniswift::exec::kStageInEnv))) ins.emplace_back(s);
  for (const auto& s : miniswift::exec::split_lines(env_or(miniswift::exec::kStageOutEnv))) outs.emplace_back(s);
  if (!miniswift::exec::write_stub_outputs(app, ins, outs)) {
    std::cerr << "miniswift-stub: cannot write outputs\n";
    return 1;
  }
  return 0;
}
