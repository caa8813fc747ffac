#pragma once

// Synthetic training loop: sample -> estimate -> plain gradient ascent.
//
// Random streams (all keyed by the master seed):
//   stream 0  initial logit table (or policy.init_seed)
//   stream 1  per-iteration noise table, derive(iteration)
//   stream 2  rollouts, derive(iteration).derive(trajectory index)
// so the run does not depend on the worker count.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "dvplab/estimators.hpp"
#include "dvplab/generation.hpp"
#include "dvplab/harness/config.hpp"
#include "dvplab/harness/metrics.hpp"
#include "dvplab/parallel.hpp"
#include "dvplab/rng.hpp"

namespace dvp::harness {

inline constexpr std::uint64_t kInitStream = 0;
inline constexpr std::uint64_t kNoiseStream = 1;
inline constexpr std::uint64_t kRolloutStream = 2;

struct TrainResult {
  std::vector<MetricsRow> rows;
  std::vector<double> theta;
  bool aborted = false;
  std::string abort_reason;
};

/// Initial policy: theta ~ N(0, scale^2), plus `peak` on one random token
/// per row, plus `fork` on a second random token in a fork_rate fraction of
/// rows.
inline TabularPolicy initial_policy(const ExperimentConfig& cfg) {
  const ContextMap map = cfg.task.context_map();
  RngStream rng(cfg.init_seed(), kInitStream);
  TabularPolicy pol = TabularPolicy::random(map, cfg.policy.scale, rng.derive(0));
  const PolicyInit& init = cfg.policy;
  if (init.peak == 0.0 && init.fork_rate == 0.0) return pol;
  RngStream pick = rng.derive(1);
  RngStream fork = rng.derive(2);
  auto theta = pol.theta_mut();
  const std::size_t V = map.vocab_size();
  for (std::size_t r = 0; r < map.num_rows(); ++r) {
    const std::size_t head = pick.below(V);
    theta[r * V + head] += init.peak;
    if (init.fork_rate > 0.0 && fork.uniform() < init.fork_rate) {
      const std::size_t other = (head + 1 + fork.below(V - 1)) % V;
      theta[r * V + other] += init.fork;
    }
  }
  return pol;
}

inline Sampler sampler_for(const ExperimentConfig& cfg) {
  return cfg.estimator.kind == EstimatorKind::dvp ? Sampler::minp(cfg.rho) : Sampler::raw(cfg.rho);
}

inline std::size_t batch_size(const ExperimentConfig& cfg) {
  return cfg.task.num_prompts * cfg.groups_per_prompt * cfg.estimator.group_size;
}

/// Batch for one iteration, prompt-major, groups of group_size consecutive.
inline std::vector<Trajectory> sample_batch(const ExperimentConfig& cfg, const PolicyPair& pair,
                                            std::size_t iteration) {
  const std::size_t n = batch_size(cfg);
  const std::size_t per_prompt = cfg.groups_per_prompt * cfg.estimator.group_size;
  const RngStream base = RngStream(cfg.seed, kRolloutStream).derive(iteration);
  const Sampler sampler = sampler_for(cfg);
  std::vector<Trajectory> batch(n);
  parallel_for(n, cfg.workers, [&](std::size_t i) {
    RngStream rng = base.derive(i);
    batch[i] = rollout(pair, cfg.task, i / per_prompt, sampler, rng);
  });
  return batch;
}

/// The exact gradient the estimator targets: of J for naive / tis / mis and
/// of J_mp for dvp.
inline std::vector<double> exact_target(const ExperimentConfig& cfg, const PolicyPair& pair) {
  const PolicyView v = cfg.estimator.kind == EstimatorKind::dvp ? PolicyView::train_mp : PolicyView::train;
  return exact_gradient(pair, cfg.task, v, cfg.rho);
}

/// Runs the loop. `on_row` sees each row as soon as it is complete and may
/// return false to stop early.
inline TrainResult train(const ExperimentConfig& cfg,
                         const std::function<bool(const MetricsRow&)>& on_row = {}) {
  cfg.validate();
  TrainResult out;
  PolicyPair pair(initial_policy(cfg), cfg.perturbation, cfg.realization);
  const bool enumerable = sequence_count(cfg.task) <= kEnumerationCap;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const auto t0 = std::chrono::steady_clock::now();
    if (cfg.realization == NoiseRealization::fixed_per_row) {
      RngStream noise = RngStream(cfg.seed, kNoiseStream).derive(it);
      pair.realize(noise);
    }
    const std::vector<Trajectory> batch = sample_batch(cfg, pair, it);
    const GradientEstimate est = estimate(cfg.estimator, batch, pair, cfg.seed, cfg.workers);

    MetricsRow row;
    row.iteration = it;
    row.j = forward_objective(pair, cfg.task, PolicyView::train, cfg.rho);
    row.j_mp = forward_objective(pair, cfg.task, PolicyView::train_mp, cfg.rho);
    row.ppl_gap = ppl_gap(batch);
    double delta = 0.0;
    for (const Trajectory& t : batch) delta += t.delta_y;
    row.mean_delta = delta / static_cast<double>(batch.size());
    row.mean_abs_delta = est.diagnostics.mean_abs_delta;
    row.max_is_ratio = est.diagnostics.max_is_ratio;
    row.zero_weight_fraction = est.diagnostics.zero_weight_fraction;
    if (enumerable) {
      const std::vector<double> exact = exact_target(cfg, pair);
      double err = 0.0;
      for (std::size_t i = 0; i < exact.size(); ++i) err = std::max(err, std::abs(est.vector[i] - exact[i]));
      row.grad_error = err;
    }

    auto theta = pair.base.theta_mut();
    bool finite = true;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      theta[i] += cfg.learning_rate * est.vector[i];
      finite = finite && std::isfinite(theta[i]);
    }
    if (cfg.record_timing) {
      row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
    if (!finite) {
      row.status = "abort";
      out.aborted = true;
      out.abort_reason = "non-finite parameter after iteration " + std::to_string(it);
    }
    out.rows.push_back(row);
    const bool more = on_row ? on_row(row) : true;
    if (!finite || !more) break;
  }
  const auto theta = pair.base.theta();
  out.theta.assign(theta.begin(), theta.end());
  return out;
}

/// Final-policy checkpoint: the config it came from and the logit table.
inline nlohmann::json checkpoint_json(const ExperimentConfig& cfg, const TrainResult& r) {
  nlohmann::json j;
  j["config"] = to_json(cfg);
  j["rows"] = cfg.task.context_map().num_rows();
  j["vocab_size"] = cfg.task.vocab_size;
  j["iterations_completed"] = r.rows.size();
  j["aborted"] = r.aborted;
  j["theta"] = r.theta;
  return j;
}

}  // namespace dvp::harness
