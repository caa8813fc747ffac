#pragma once

// `report`: one summary line per metrics file (CSV or JSONL by extension).

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dvplab/harness/metrics.hpp"
#include "dvplab/harness/sweep.hpp"

namespace dvp::harness {

inline std::vector<MetricsRow> read_metrics_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("report: cannot open " + path);
  const std::string ext = std::filesystem::path(path).extension().string();
  return parse(in, ext == ".jsonl" ? "jsonl" : "csv");
}

/// Files are taken in the given order; a directory contributes its .csv and
/// .jsonl files in lexicographic order.
inline std::vector<std::string> expand_inputs(const std::vector<std::string>& inputs) {
  std::vector<std::string> out;
  for (const std::string& in : inputs) {
    if (!std::filesystem::is_directory(in)) {
      out.push_back(in);
      continue;
    }
    std::vector<std::string> found;
    for (const auto& e : std::filesystem::directory_iterator(in)) {
      const std::string ext = e.path().extension().string();
      if (e.is_regular_file() && (ext == ".csv" || ext == ".jsonl")) found.push_back(e.path().string());
    }
    std::sort(found.begin(), found.end());
    out.insert(out.end(), found.begin(), found.end());
  }
  return out;
}

inline std::vector<RunSummary> report(const std::vector<std::string>& inputs) {
  std::vector<RunSummary> out;
  for (const std::string& path : expand_inputs(inputs)) {
    if (std::filesystem::path(path).filename() == "summary.csv") continue;
    out.push_back(summarize_run(path, read_metrics_file(path)));
  }
  return out;
}

}  // namespace dvp::harness
