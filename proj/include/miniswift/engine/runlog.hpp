#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace miniswift::engine {

struct ProducedRecord {
  std::string logical_path;
  std::string physical_path;
  std::string digest;
  double timestamp = 0;
  std::string producer_sig;
};

// Contents of a restart log: the last run-started digest, every produced
// dataset (latest record wins), and the last finish status.
struct RunLogState {
  std::string plan_digest;
  std::map<std::string, ProducedRecord> produced;
  std::string finished_status;
  int runs = 0;
  int bad_lines = 0;
};

// Append-only, line-delimited JSON restart log.
class RunLog {
 public:
  RunLog() = default;
  explicit RunLog(const std::filesystem::path& path) { open(path); }
  ~RunLog() { close(); }
  RunLog(const RunLog&) = delete;
  RunLog& operator=(const RunLog&) = delete;

  void open(const std::filesystem::path& path) {
    close();
    std::filesystem::create_directories(path.parent_path());
    f_ = std::fopen(path.c_str(), "a");
    if (!f_) throw std::runtime_error("cannot open restart log " + path.string());
  }
  void close() {
    if (f_) std::fclose(f_);
    f_ = nullptr;
  }
  bool is_open() const { return f_ != nullptr; }

  void run_started(const std::string& plan_digest, double t) {
    write({{"kind", "run-started"}, {"plan_digest", plan_digest}, {"timestamp", t}});
  }
  void produced(const ProducedRecord& r) {
    write({{"kind", "dataset-produced"},
           {"logical_path", r.logical_path},
           {"physical_path", r.physical_path},
           {"digest", r.digest},
           {"timestamp", r.timestamp},
           {"producer_sig", r.producer_sig}});
  }
  void run_finished(const std::string& status, double t) {
    write({{"kind", "run-finished"}, {"status", status}, {"timestamp", t}});
  }

  static RunLogState load(const std::filesystem::path& path) {
    RunLogState st;
    std::ifstream in(path);
    for (std::string line; std::getline(in, line);) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object() || !j.contains("kind")) {
        ++st.bad_lines;  // a torn final line from a crash
        continue;
      }
      std::string kind = j["kind"];
      if (kind == "run-started") {
        st.plan_digest = j.value("plan_digest", "");
        ++st.runs;
      } else if (kind == "dataset-produced") {
        ProducedRecord r{j.value("logical_path", ""), j.value("physical_path", ""), j.value("digest", ""),
                         j.value("timestamp", 0.0), j.value("producer_sig", "")};
        st.produced[r.logical_path] = r;
      } else if (kind == "run-finished") {
        st.finished_status = j.value("status", "");
      }
    }
    return st;
  }

 private:
  void write(const nlohmann::json& j) {
    if (!f_) return;
    std::string s = j.dump();
    s += '\n';
    std::fwrite(s.data(), 1, s.size(), f_);
    std::fflush(f_);
  }

  std::FILE* f_ = nullptr;
};

}  // namespace miniswift::engine
