#pragma once

// `sweep`: the cartesian grid over rho x clip x sigma from the config's
// "sweep" block, one training run per point. Points run in parallel; each
// gets its own seed derived from the master seed and its index.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dvplab/harness/config.hpp"
#include "dvplab/harness/metrics.hpp"
#include "dvplab/harness/train.hpp"
#include "dvplab/parallel.hpp"
#include "dvplab/rng.hpp"

namespace dvp::harness {

inline constexpr std::uint64_t kSweepStream = 3;

struct SweepGrid {
  std::vector<double> rho;
  std::vector<double> clip;
  std::vector<double> sigma;
};

struct SweepPoint {
  std::size_t index = 0;
  ExperimentConfig config;
};

struct RunSummary {
  std::string label;
  std::size_t iterations = 0;
  double final_j = 0.0;
  double final_j_mp = 0.0;
  double max_is_ratio = 0.0;
  double median_ppl_gap = 0.0;
  double mean_zero_weight = 0.0;
  /// Spearman correlation of J_mp with the iteration index.
  double j_mp_trend = 0.0;
  bool aborted = false;
};

/// Empty axes keep the base config's value.
inline SweepGrid sweep_grid(const nlohmann::json& j) {
  SweepGrid g;
  if (!j.contains("sweep")) return g;
  const auto& s = j.at("sweep");
  detail::only_keys(s, "sweep", {"rho", "clip", "sigma"});
  try {
    detail::read(s, "rho", g.rho);
    detail::read(s, "clip", g.clip);
    detail::read(s, "sigma", g.sigma);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(e.what());
  }
  return g;
}

inline std::vector<SweepPoint> sweep_points(const ExperimentConfig& base, const SweepGrid& g) {
  auto axis = [](const std::vector<double>& v) {
    return v.empty() ? std::vector<std::optional<double>>{std::nullopt}
                     : std::vector<std::optional<double>>(v.begin(), v.end());
  };
  std::vector<SweepPoint> out;
  const RngStream seeds(base.seed, kSweepStream);
  for (const auto& rho : axis(g.rho)) {
    for (const auto& clip : axis(g.clip)) {
      for (const auto& sigma : axis(g.sigma)) {
        SweepPoint p;
        p.index = out.size();
        p.config = base;
        ExperimentConfig& c = p.config;
        if (rho) c.rho = *rho;
        if (c.estimator.kind == EstimatorKind::dvp) c.estimator.rho = c.rho;
        if (clip && c.estimator.clip) c.estimator.clip = *clip;
        if (sigma) {
          c.perturbation = c.perturbation.kind == PerturbationKind::gaussian
                               ? PerturbationModel::gaussian(*sigma)
                               : PerturbationModel::bounded_uniform(*sigma);
        }
        c.seed = seeds.derive(p.index).next_u64();
        c.workers = 1;
        try {
          c.validate();
        } catch (const std::invalid_argument& e) {
          throw ConfigError(e.what());
        }
        out.push_back(std::move(p));
      }
    }
  }
  return out;
}

inline RunSummary summarize_run(const std::string& label, const std::vector<MetricsRow>& rows) {
  RunSummary s;
  s.label = label;
  s.iterations = rows.size();
  if (rows.empty()) return s;
  s.final_j = rows.back().j;
  s.final_j_mp = rows.back().j_mp;
  std::vector<double> gaps, j_mp;
  double zw = 0.0;
  for (const MetricsRow& r : rows) {
    j_mp.push_back(r.j_mp);
    s.max_is_ratio = std::max(s.max_is_ratio, r.max_is_ratio);
    gaps.push_back(r.ppl_gap);
    zw += r.zero_weight_fraction;
    s.aborted = s.aborted || r.status == "abort";
  }
  std::sort(gaps.begin(), gaps.end());
  const std::size_t n = gaps.size();
  s.median_ppl_gap = n % 2 ? gaps[n / 2] : 0.5 * (gaps[n / 2 - 1] + gaps[n / 2]);
  s.mean_zero_weight = zw / static_cast<double>(n);
  s.j_mp_trend = spearman_trend(j_mp);
  return s;
}

inline void write_summary_csv(std::ostream& out, const std::vector<RunSummary>& runs,
                              const std::vector<std::string>& extra_header = {},
                              const std::vector<std::vector<std::string>>& extra = {}) {
  out << "run";
  for (const auto& h : extra_header) out << ',' << h;
  out << ",iterations,final_j,final_j_mp,max_is_ratio,median_ppl_gap,mean_zero_weight_fraction,j_mp_trend,aborted\r\n";
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const RunSummary& s = runs[i];
    out << detail::csv_field(s.label);
    if (i < extra.size()) {
      for (const auto& cell : extra[i]) out << ',' << cell;
    }
    out << ',' << s.iterations << ',' << detail::format_real(s.final_j) << ','
        << detail::format_real(s.final_j_mp) << ',' << detail::format_real(s.max_is_ratio) << ','
        << detail::format_real(s.median_ppl_gap) << ',' << detail::format_real(s.mean_zero_weight) << ','
        << detail::format_real(s.j_mp_trend) << ',' << (s.aborted ? "true" : "false") << "\r\n";
  }
}

/// Runs every point on up to `workers` threads, writes one metrics file per
/// point into `out_dir` and returns the summaries in point order.
inline std::vector<RunSummary> run_sweep(const std::vector<SweepPoint>& points, const std::string& out_dir,
                                         unsigned workers) {
  std::filesystem::create_directories(out_dir);
  std::vector<RunSummary> out(points.size());
  parallel_for(points.size(), workers, [&](std::size_t i) {
    const SweepPoint& p = points[i];
    const std::string name = "point_" + std::to_string(p.index) + "." + p.config.format;
    const TrainResult r = train(p.config);
    std::ofstream f(std::filesystem::path(out_dir) / name, std::ios::binary);
    emit(f, r.rows, p.config.format);
    if (!f) throw std::runtime_error("sweep: cannot write " + name);
    out[i] = summarize_run(name, r.rows);
  });
  return out;
}

inline std::vector<std::vector<std::string>> sweep_axes(const std::vector<SweepPoint>& points) {
  std::vector<std::vector<std::string>> cells;
  for (const SweepPoint& p : points) {
    const auto& c = p.config;
    cells.push_back({detail::format_real(c.rho),
                     c.estimator.clip ? detail::format_real(*c.estimator.clip) : "",
                     detail::format_real(c.perturbation.scale()), std::to_string(c.seed)});
  }
  return cells;
}

}  // namespace dvp::harness
