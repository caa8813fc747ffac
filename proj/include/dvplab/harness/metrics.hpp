#pragma once

// Per-iteration metrics rows, the PPL-gap statistic, and CSV / JSONL
// emit and parse. Field order is fixed by kMetricsFields.
//
// Reals are written with 17 significant digits so that parse(emit(m)) == m
// bit for bit. A value that is not available (exact gradient error above the
// enumeration cap) is NaN in memory, an empty CSV cell, and JSON null.
// Infinities are "inf" / "-inf" in both formats.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dvplab/trajectory.hpp"

namespace dvp::harness {

struct MetricsRow {
  std::size_t iteration = 0;
  double j = 0.0;
  double j_mp = 0.0;
  double ppl_gap = 1.0;
  double mean_delta = 0.0;
  double mean_abs_delta = 0.0;
  double max_is_ratio = 1.0;
  double grad_error = std::numeric_limits<double>::quiet_NaN();
  double zero_weight_fraction = 0.0;
  double wall_ms = 0.0;
  /// "ok", or "abort" on the row where a non-finite parameter appeared.
  std::string status = "ok";

  friend bool operator==(const MetricsRow& a, const MetricsRow& b) {
    auto same = [](double x, double y) { return (std::isnan(x) && std::isnan(y)) || x == y; };
    return a.iteration == b.iteration && same(a.j, b.j) && same(a.j_mp, b.j_mp) &&
           same(a.ppl_gap, b.ppl_gap) && same(a.mean_delta, b.mean_delta) &&
           same(a.mean_abs_delta, b.mean_abs_delta) && same(a.max_is_ratio, b.max_is_ratio) &&
           same(a.grad_error, b.grad_error) && same(a.zero_weight_fraction, b.zero_weight_fraction) &&
           same(a.wall_ms, b.wall_ms) && a.status == b.status;
  }
};

inline constexpr std::array<const char*, 11> kMetricsFields = {
    "iteration",    "j",          "j_mp",                 "ppl_gap", "mean_delta", "mean_abs_delta",
    "max_is_ratio", "grad_error", "zero_weight_fraction", "wall_ms", "status"};

/// exp(mean over all tokens of (logp_infer - logp_train)); 1 means no gap.
inline double ppl_gap(std::span<const Trajectory> batch) {
  double acc = 0.0;
  std::size_t n = 0;
  for (const Trajectory& t : batch) {
    for (const StepRecord& s : t.steps) {
      acc += s.logp_infer - s.logp_train;
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("ppl_gap: batch has no tokens");
  return std::exp(acc / static_cast<double>(n));
}

/// Spearman rank correlation of y against its index, ties given their mean
/// rank. 0 when y is constant.
inline double spearman_trend(std::span<const double> y) {
  const std::size_t n = y.size();
  if (n < 2) return 0.0;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return y[a] < y[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && y[order[j + 1]] == y[order[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = 0.5 * static_cast<double>(i + j);
    i = j + 1;
  }
  const double mean = 0.5 * static_cast<double>(n - 1);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = static_cast<double>(i) - mean, dy = rank[i] - mean;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  return syy == 0.0 ? 0.0 : sxy / std::sqrt(sxx * syy);
}

namespace detail {

inline std::string format_real(double x) {
  if (std::isnan(x)) return "";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline double parse_real(const std::string& s) {
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("metrics: bad number '" + s + "'");
  return v;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

/// Splits one CSV record; quoted fields may contain commas and doubled quotes.
inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  if (quoted) throw std::invalid_argument("metrics: unterminated quote");
  return out;
}

inline std::vector<std::string> row_cells(const MetricsRow& r) {
  return {std::to_string(r.iteration), format_real(r.j),           format_real(r.j_mp),
          format_real(r.ppl_gap),      format_real(r.mean_delta),  format_real(r.mean_abs_delta),
          format_real(r.max_is_ratio), format_real(r.grad_error),  format_real(r.zero_weight_fraction),
          format_real(r.wall_ms),      r.status};
}

inline MetricsRow row_from_cells(const std::vector<std::string>& c) {
  if (c.size() != kMetricsFields.size()) throw std::invalid_argument("metrics: wrong field count");
  MetricsRow r;
  r.iteration = std::stoull(c[0]);
  r.j = parse_real(c[1]);
  r.j_mp = parse_real(c[2]);
  r.ppl_gap = parse_real(c[3]);
  r.mean_delta = parse_real(c[4]);
  r.mean_abs_delta = parse_real(c[5]);
  r.max_is_ratio = parse_real(c[6]);
  r.grad_error = parse_real(c[7]);
  r.zero_weight_fraction = parse_real(c[8]);
  r.wall_ms = parse_real(c[9]);
  r.status = c[10];
  return r;
}

}  // namespace detail

inline void write_csv_header(std::ostream& out) {
  for (std::size_t i = 0; i < kMetricsFields.size(); ++i) out << (i ? "," : "") << kMetricsFields[i];
  out << "\r\n";
}

inline void write_csv_row(std::ostream& out, const MetricsRow& r) {
  const auto cells = detail::row_cells(r);
  for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << detail::csv_field(cells[i]);
  out << "\r\n";
}

inline nlohmann::ordered_json to_json(const MetricsRow& r) {
  nlohmann::ordered_json j;
  const auto cells = detail::row_cells(r);
  j["iteration"] = r.iteration;
  for (std::size_t i = 1; i + 1 < cells.size(); ++i) {
    const double v = detail::parse_real(cells[i]);
    if (std::isnan(v)) {
      j[kMetricsFields[i]] = nullptr;
    } else if (std::isinf(v)) {
      j[kMetricsFields[i]] = cells[i];  // JSON has no infinity literal
    } else {
      j[kMetricsFields[i]] = v;
    }
  }
  j["status"] = r.status;
  return j;
}

inline void write_jsonl_row(std::ostream& out, const MetricsRow& r) {
  out << to_json(r).dump() << '\n';
}

inline void emit(std::ostream& out, std::span<const MetricsRow> rows, const std::string& format) {
  if (format == "csv") {
    write_csv_header(out);
    for (const MetricsRow& r : rows) write_csv_row(out, r);
  } else if (format == "jsonl") {
    for (const MetricsRow& r : rows) write_jsonl_row(out, r);
  } else {
    throw std::invalid_argument("metrics: unknown format " + format);
  }
}

inline std::vector<MetricsRow> parse_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("metrics: missing CSV header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_csv(line);
  if (header.size() != kMetricsFields.size()) throw std::invalid_argument("metrics: bad CSV header");
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] != kMetricsFields[i]) throw std::invalid_argument("metrics: bad CSV header");
  }
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    rows.push_back(detail::row_from_cells(detail::split_csv(line)));
  }
  return rows;
}

inline std::vector<MetricsRow> parse_jsonl(std::istream& in) {
  std::vector<MetricsRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    std::vector<std::string> cells;
    cells.push_back(std::to_string(j.at("iteration").get<std::size_t>()));
    for (std::size_t i = 1; i + 1 < kMetricsFields.size(); ++i) {
      const auto& v = j.at(kMetricsFields[i]);
      if (v.is_null()) {
        cells.emplace_back();
      } else if (v.is_string()) {
        cells.push_back(v.get<std::string>());
      } else {
        cells.push_back(detail::format_real(v.get<double>()));
      }
    }
    cells.push_back(j.at("status").get<std::string>());
    rows.push_back(detail::row_from_cells(cells));
  }
  return rows;
}

inline std::vector<MetricsRow> parse(std::istream& in, const std::string& format) {
  if (format == "csv") return parse_csv(in);
  if (format == "jsonl") return parse_jsonl(in);
  throw std::invalid_argument("metrics: unknown format " + format);
}

}  // namespace dvp::harness
