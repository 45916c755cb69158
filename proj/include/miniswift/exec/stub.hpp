#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "miniswift/util/digest.hpp"

// Deterministic stand-in for application binaries. The standalone stub
// executable and the simulated providers both use these functions, so a
// workflow produces byte-identical outputs whichever provider runs it.
namespace miniswift::exec {

inline constexpr const char* kStageInEnv = "MINISWIFT_STAGE_IN";
inline constexpr const char* kStageOutEnv = "MINISWIFT_STAGE_OUT";

inline std::string stub_content(const std::string& app, const std::vector<std::uint64_t>& input_digests,
                                std::size_t ordinal) {
  std::string s = "stub:" + app + "\n";
  for (auto d : input_digests) s += "in:" + to_hex(d) + "\n";
  s += "out:" + std::to_string(ordinal) + "\n";
  return s;
}

// Digests of the given inputs; unreadable inputs contribute digest 0.
inline std::vector<std::uint64_t> input_digests(const std::vector<std::filesystem::path>& inputs) {
  std::vector<std::uint64_t> out;
  out.reserve(inputs.size());
  for (const auto& p : inputs) out.push_back(file_digest(p).value_or(0));
  return out;
}

// Writes every output; returns false if any could not be written.
inline bool write_stub_outputs(const std::string& app, const std::vector<std::filesystem::path>& inputs,
                               const std::vector<std::filesystem::path>& outputs) {
  auto digests = input_digests(inputs);
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    std::error_code ec;
    if (outputs[i].has_parent_path()) std::filesystem::create_directories(outputs[i].parent_path(), ec);
    std::ofstream out(outputs[i], std::ios::binary | std::ios::trunc);
    if (!out) return false;
    out << stub_content(app, digests, i);
    if (!out) return false;
  }
  return true;
}

inline std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto nl = s.find('\n', start);
    if (nl == std::string::npos) nl = s.size();
    if (nl > start) out.push_back(s.substr(start, nl - start));
    start = nl + 1;
  }
  return out;
}

inline std::string join_lines(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += '\n';
    s += v[i];
  }
  return s;
}

}  // namespace miniswift::exec
