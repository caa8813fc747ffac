// dvplab: verification suites and synthetic training runs.
//
//   dvplab verify [--config c.json] [--seed N] [--out report.csv]
//   dvplab train  [--config c.json] [--seed N] [--out metrics.csv] [--workers W]
//   dvplab sweep  [--config c.json] [--seed N] [--out dir] [--workers W]
//   dvplab report FILE_OR_DIR... [--out summary.csv]
//   dvplab defaults
//
// Exit codes: 0 ok, 1 verification failure, 2 config error, 3 numeric abort.

#include <CLI11.hpp>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dvplab/harness/config.hpp"
#include "dvplab/harness/metrics.hpp"
#include "dvplab/harness/report.hpp"
#include "dvplab/harness/sweep.hpp"
#include "dvplab/harness/train.hpp"
#include "dvplab/harness/verify.hpp"

namespace {

namespace h = dvp::harness;

constexpr int kOk = 0;
constexpr int kVerifyFailed = 1;
constexpr int kConfigError = 2;
constexpr int kNumericAbort = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<unsigned> workers;
};

nlohmann::json load_tree(const Common& o) {
  return o.config.empty() ? nlohmann::json::object() : h::read_json_file(o.config);
}

h::ExperimentConfig effective_config(const Common& o, const nlohmann::json& tree) {
  h::ExperimentConfig c = h::config_from_json(tree);
  if (o.seed) c.seed = *o.seed;
  if (o.workers) c.workers = *o.workers;
  if (!o.out.empty()) c.output_path = o.out;
  c.validate();
  return c;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw std::runtime_error("cannot write " + path);
}

int run_verify(const Common& o, bool inject_fault) {
  h::VerifyOptions opt;
  opt.seed = o.seed ? *o.seed : (o.config.empty() ? 0 : effective_config(o, load_tree(o)).seed);
  opt.inject_fault = inject_fault;
  const h::VerificationReport r = h::verify(opt);
  const std::string text = r.text();
  std::cout << text;
  if (!o.out.empty()) write_text(o.out, text);
  return r.passed() ? kOk : kVerifyFailed;
}

int run_train(const Common& o) {
  const h::ExperimentConfig c = effective_config(o, load_tree(o));
  std::cout << h::to_json(c).dump(2) << "\n";
  std::ofstream out(c.output_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + c.output_path);
  if (c.format == "csv") h::write_csv_header(out);
  const h::TrainResult r = h::train(c, [&](const h::MetricsRow& row) {
    if (c.format == "csv") h::write_csv_row(out, row);
    else h::write_jsonl_row(out, row);
    out.flush();
    return true;
  });
  write_text(c.output_path + ".checkpoint.json", h::checkpoint_json(c, r).dump(2) + "\n");
  if (r.aborted) {
    std::cerr << "dvplab: numeric abort: " << r.abort_reason << "\n";
    return kNumericAbort;
  }
  const h::RunSummary s = h::summarize_run(c.output_path, r.rows);
  std::cout << "iterations " << s.iterations << ", final J " << h::detail::format_real(s.final_j)
            << ", final J_mp " << h::detail::format_real(s.final_j_mp) << ", max IS ratio "
            << h::detail::format_real(s.max_is_ratio) << "\n";
  return kOk;
}

int run_sweep(const Common& o) {
  const nlohmann::json tree = load_tree(o);
  Common base_opts = o;
  base_opts.out.clear();
  const h::ExperimentConfig base = effective_config(base_opts, tree);
  const auto points = h::sweep_points(base, h::sweep_grid(tree));
  const std::string dir = o.out.empty() ? "sweep" : o.out;
  std::cout << h::to_json(base).dump(2) << "\n" << points.size() << " sweep points -> " << dir << "\n";
  const auto runs = h::run_sweep(points, dir, base.workers);
  std::ofstream f(std::filesystem::path(dir) / "summary.csv", std::ios::binary);
  h::write_summary_csv(f, runs, {"rho", "clip", "sigma", "seed"}, h::sweep_axes(points));
  h::write_summary_csv(std::cout, runs, {"rho", "clip", "sigma", "seed"}, h::sweep_axes(points));
  for (const auto& r : runs) {
    if (r.aborted) return kNumericAbort;
  }
  return kOk;
}

int run_report(const std::vector<std::string>& inputs, const std::string& out) {
  const auto runs = h::report(inputs);
  h::write_summary_csv(std::cout, runs);
  if (!out.empty()) {
    std::ofstream f(out, std::ios::binary);
    h::write_summary_csv(f, runs);
    if (!f) throw std::runtime_error("cannot write " + out);
  }
  return kOk;
}

void add_common(CLI::App* cmd, Common& o, bool with_config, bool with_workers) {
  if (with_config) cmd->add_option("--config", o.config, "JSON config file (merged over defaults)");
  cmd->add_option("--seed", o.seed, "master seed (overrides the config)");
  cmd->add_option("--out", o.out, "output path");
  if (with_workers) cmd->add_option("--workers", o.workers, "worker threads")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dvplab: dynamic vocabulary pruning testbed"};
  app.require_subcommand(1);
  Common o;
  bool inject_fault = false;
  std::vector<std::string> inputs;

  auto* verify = app.add_subcommand("verify", "run every invariant suite");
  add_common(verify, o, true, false);
  verify->add_flag("--inject-fault", inject_fault, "test only: flip a sign in the bias formula")
      ->group("");
  auto* train = app.add_subcommand("train", "run the training loop and write metrics");
  add_common(train, o, true, true);
  auto* sweep = app.add_subcommand("sweep", "grid over rho / clip / sigma");
  add_common(sweep, o, true, true);
  auto* report = app.add_subcommand("report", "summarize metrics files");
  report->add_option("inputs", inputs, "metrics files or directories")->required();
  report->add_option("--out", o.out, "summary CSV path");
  app.add_subcommand("defaults", "print the built-in default config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*verify) return run_verify(o, inject_fault);
    if (*train) return run_train(o);
    if (*sweep) return run_sweep(o);
    if (*report) return run_report(inputs, o.out);
    std::cout << h::to_json(h::default_config()).dump(2) << "\n";
    return kOk;
  } catch (const h::ConfigError& e) {
    std::cerr << "dvplab: config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "dvplab: " << e.what() << "\n";
    return kConfigError;
  }
}
