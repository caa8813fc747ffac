#pragma once

// Invariant suites shared by `dvplab verify` and the acceptance binary.
// Each suite is deterministic given its seed and returns the worst residual
// it measured next to the tolerance it was judged against.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "dvplab/estimators.hpp"
#include "dvplab/generation.hpp"
#include "dvplab/instances.hpp"
#include "dvplab/perturbation.hpp"
#include "dvplab/pruning.hpp"
#include "dvplab/rng.hpp"
#include "dvplab/simplex.hpp"

namespace dvp::harness {

struct CheckResult {
  std::string name;
  double residual = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string detail;
};

namespace suites {

inline LogitVector normal_logits(RngStream& rng, std::size_t V, double scale) {
  std::vector<double> z(V);
  for (double& x : z) x = scale * rng.normal();
  return LogitVector(std::move(z));
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

/// ||bias_direct - bias_formula||_inf over random instances (V <= 4, T <= 3).
/// `sign` = -1 evaluates the formula with a flipped exponent.
inline CheckResult bias_identity(std::size_t instances, std::uint64_t seed, double sign = 1.0) {
  RngStream rng(seed, 101);
  double worst = 0.0;
  for (std::size_t i = 0; i < instances; ++i) {
    const Instance inst = random_instance(rng);
    worst = std::max(worst, max_abs_diff(bias_direct(inst.pair, inst.task),
                                         dvp::detail::bias_formula_impl(inst.pair, inst.task, sign)));
  }
  return {"bias_identity", worst, 1e-10, worst <= 1e-10, std::to_string(instances) + " instances"};
}

struct SegmentBoundResult {
  CheckResult bound;
  CheckResult monotone;
};

/// |delta_a| against the segment bound on random (z, eps) with eps_max
/// cycling through {1e-4, 1e-3, 1e-2}, and the per-p_a-bin maximum of
/// |delta_a| / eps_max over ten equal-width bins.
inline SegmentBoundResult segment_bound(std::size_t draws, std::uint64_t seed) {
  RngStream rng(seed, 102);
  const double eps_levels[3] = {1e-4, 1e-3, 1e-2};
  constexpr int kBins = 10;
  std::vector<double> bin_max(kBins, -1.0);
  double worst = -INFINITY;
  std::size_t tokens = 0;
  for (std::size_t d = 0; d < draws; ++d) {
    const std::size_t V = 2 + rng.below(63);
    const LogitVector z = normal_logits(rng, V, 3.0);
    const double eps_max = eps_levels[d % 3];
    std::vector<double> eps(V), zi(V);
    for (std::size_t k = 0; k < V; ++k) {
      eps[k] = rng.uniform(-eps_max, eps_max);
      zi[k] = z[k] + eps[k];
    }
    const auto bounds = segment_sup_bounds(z, eps);
    const auto lt = log_softmax(z);
    const auto li = log_softmax(LogitVector(zi));
    for (std::size_t a = 0; a < V; ++a) {
      const double delta = std::abs(lt[a] - li[a]);
      worst = std::max(worst, delta - bounds[a]);
      const int bin = std::min(kBins - 1, static_cast<int>(std::exp(lt[a]) * kBins));
      bin_max[bin] = std::max(bin_max[bin], delta / eps_max);
      ++tokens;
    }
  }
  double rise = 0.0;
  double prev = INFINITY;
  for (double m : bin_max) {
    if (m < 0.0) continue;  // empty bin
    rise = std::max(rise, m - prev);
    prev = m;
  }
  SegmentBoundResult r;
  r.bound = {"segment_bound", std::max(worst, 0.0), 1e-12, worst <= 1e-12,
             std::to_string(draws) + " draws, " + std::to_string(tokens) + " tokens"};
  r.monotone = {"bin_max_nonincreasing", rise, 0.0, rise <= 0.0, "10 bins of p_a"};
  return r;
}

/// MAP perturbation on random rows, sigma in [0.01, 0.5]: converged and
/// stationary (posterior-gradient inf-norm).
inline CheckResult map_stationarity(std::size_t rows, std::uint64_t seed) {
  RngStream rng(seed, 103);
  double worst = 0.0;
  std::size_t failures = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t V = 2 + rng.below(63);
    const LogitVector z = normal_logits(rng, V, 3.0);
    const std::size_t a = rng.below(V);
    const double sigma = rng.uniform(0.01, 0.5);
    try {
      const auto eps = map_perturbation(z, a, sigma);
      for (double g : perturbation_log_posterior_gradient(z, a, sigma, eps)) {
        worst = std::max(worst, std::abs(g));
      }
    } catch (const ConvergenceError&) {
      ++failures;
    }
  }
  const bool ok = failures == 0 && worst < 1e-8;
  return {"map_stationarity", worst, 1e-8, ok,
          std::to_string(rows) + " rows, " + std::to_string(failures) + " not converged"};
}

/// Relative error between delta'_a at the MAP point and mode_mismatch with
/// the converged p'. Small sigma (1e-4 to 3e-4) keeps the second-order
/// remainder, O(sigma^4), far below 1e-6 of the O(sigma^2) value.
inline CheckResult mode_consistency(std::size_t rows, std::uint64_t seed) {
  RngStream rng(seed, 104);
  double worst = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t V = 2 + rng.below(31);
    const LogitVector z = normal_logits(rng, V, 1.0);
    const std::size_t a = rng.below(V);
    const double sigma = rng.uniform(1e-4, 3e-4);
    const auto eps = map_perturbation(z, a, sigma);
    std::vector<double> zp(V);
    for (std::size_t k = 0; k < V; ++k) zp[k] = z[k] + eps[k];
    const LogitVector zi(std::move(zp));
    // log p'_a - log p_a = eps_a - log sum_k p_k exp(eps_k), in a form that
    // keeps full relative precision at eps ~ 1e-8.
    const ProbVector p = softmax(z);
    double shift = 0.0;
    for (std::size_t k = 0; k < V; ++k) shift += p[k] * std::expm1(eps[k]);
    const double delta_prime = eps[a] - std::log1p(shift);
    const double mode = mode_mismatch(p, softmax(zi), sigma, a);
    worst = std::max(worst, std::abs(delta_prime - mode) / std::abs(mode));
  }
  return {"mode_consistency", worst, 1e-6, worst <= 1e-6, std::to_string(rows) + " rows"};
}

/// Median of delta'_a = log p'_a - log p_a over sampled tokens with
/// p_a < 0.01, where a ~ softmax(z + eps) and eps ~ N(0, sigma^2).
inline CheckResult tail_median(std::size_t events, std::uint64_t seed, double sigma = 0.1) {
  RngStream rng(seed, 105);
  std::vector<double> deltas;
  deltas.reserve(events);
  while (deltas.size() < events) {
    const std::size_t V = 16 + rng.below(49);
    const LogitVector z = normal_logits(rng, V, 3.0);
    std::vector<double> zi(V);
    for (std::size_t k = 0; k < V; ++k) zi[k] = z[k] + sigma * rng.normal();
    const ProbVector p_infer = softmax(LogitVector(zi));
    const std::size_t a = sample_categorical(p_infer, rng);
    const double lp = log_softmax_at(z.values(), a);
    if (lp >= std::log(0.01)) continue;
    deltas.push_back(log_softmax_at(zi, a) - lp);
  }
  auto mid = deltas.begin() + static_cast<std::ptrdiff_t>(deltas.size() / 2);
  std::nth_element(deltas.begin(), mid, deltas.end());
  const double median = *mid;
  // Residual is -median: the check passes when it is negative.
  return {"tail_median_positive", -median, 0.0, median > 0.0,
          std::to_string(events) + " events, median " + fmt("%.6e", median)};
}

/// ||softmax(mask_logits(z)) - constrained_policy(z)||_inf on random rows with
/// logits uniform in [-20, 20].
inline CheckResult masked_logits(std::size_t rows, std::uint64_t seed) {
  RngStream rng(seed, 106);
  double worst = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t V = 2 + rng.below(63);
    std::vector<double> zv(V);
    for (double& x : zv) x = rng.uniform(-20.0, 20.0);
    const LogitVector z(std::move(zv));
    const double rho = (i % 2 == 0) ? kDefaultRho : std::exp(-rng.uniform(0.0, 15.0));
    const SafeSet s = minp_safe_set(z, rho);
    const ProbVector masked = softmax(mask_logits(z, s));
    const ProbVector exact = constrained_policy(z, rho);
    for (std::size_t k = 0; k < V; ++k) worst = std::max(worst, std::abs(masked[k] - exact[k]));
  }
  return {"masked_logit_correctness", worst, 1e-12, worst <= 1e-12, std::to_string(rows) + " rows"};
}

/// contrastive_gradient against central differences of the masked
/// log-softmax with the safe set held fixed.
inline CheckResult contrastive_fd(std::size_t rows, std::uint64_t seed) {
  RngStream rng(seed, 107);
  double worst = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t V = 2 + rng.below(31);
    std::vector<double> zv(V);
    for (double& x : zv) x = rng.uniform(-8.0, 8.0);
    const LogitVector z(std::move(zv));
    const double rho = std::exp(-rng.uniform(1.0, 13.0));
    const SafeSet s = minp_safe_set(z, rho);
    const std::size_t a = s.members[rng.below(s.members.size())];
    const auto analytic = contrastive_gradient(z, a, rho);
    const auto numeric = finite_diff_gradient(
        [&](std::span<const double> x) {
          return log_softmax(mask_logits(LogitVector(std::vector<double>(x.begin(), x.end())), s))[a];
        },
        z.values());
    worst = std::max(worst, max_abs_diff(analytic, numeric));
  }
  return {"contrastive_gradient_fd", worst, 1e-6, worst <= 1e-6, std::to_string(rows) + " rows"};
}

/// max(|J_mp - J| - T (1 - Z_min)) over random enumerable instances.
inline CheckResult bias_bound(std::size_t instances, std::uint64_t seed) {
  RngStream rng(seed, 108);
  double worst = -INFINITY;
  for (std::size_t i = 0; i < instances; ++i) {
    InstanceOptions opt;
    opt.logit_scale = 3.0;
    const Instance inst = random_instance(rng, opt);
    const double rho = std::exp(-rng.uniform(0.1, 5.0));
    const double gap = std::abs(exact_objective(inst.pair, inst.task, PolicyView::train_mp, rho) -
                                exact_objective(inst.pair, inst.task, PolicyView::train, rho));
    worst = std::max(worst, gap - objective_bias_bound(inst.pair, inst.task, rho));
  }
  return {"objective_bias_bound", worst, 1e-12, worst <= 1e-12,
          std::to_string(instances) + " instances; residual is max(gap - bound)"};
}

/// |tv(constrained, softmax) - (1 - Z)| on random rows.
inline CheckResult tv_lost_mass(std::size_t rows, std::uint64_t seed) {
  RngStream rng(seed, 109);
  double worst = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t V = 2 + rng.below(63);
    const LogitVector z = normal_logits(rng, V, 5.0);
    const double rho = std::exp(-rng.uniform(0.0, 20.0));
    const SafeSet s = minp_safe_set(z, rho);
    const double tv = tv_distance(constrained_policy(z, rho), softmax(z));
    worst = std::max(worst, std::abs(tv - (1.0 - s.retained_mass)));
  }
  return {"tv_equals_lost_mass", worst, 1e-12, worst <= 1e-12, std::to_string(rows) + " rows"};
}

/// Chain rule: sequence_logprob(train) against the log enumeration probability.
inline CheckResult chain_rule(std::size_t instances, std::uint64_t seed) {
  RngStream rng(seed, 110);
  double worst = 0.0;
  for (std::size_t i = 0; i < instances; ++i) {
    InstanceOptions opt;
    opt.min_vocab = opt.max_vocab = 3;
    opt.min_horizon = opt.max_horizon = 3;
    const Instance inst = random_instance(rng, opt);
    for (const auto& w : enumerate_trajectories(inst.pair, inst.task, 0, PolicyView::train)) {
      worst = std::max(worst, std::abs(sequence_logprob(PolicyView::train, inst.pair, w.trajectory) -
                                       std::log(w.probability)));
    }
  }
  return {"chain_rule", worst, 1e-10, worst <= 1e-10, std::to_string(instances) + " instances, V=3, T=3"};
}

/// Monte Carlo mean of the pruned-vocabulary estimator (no baseline,
/// min-p sampling from the inference policy) against the enumerated
/// constrained gradient restricted to jointly supported sequences.
/// Residual: largest |mean - exact| / SE over all coordinates; passes at 3.
inline CheckResult dvp_unbiased(std::size_t instances, std::size_t samples, std::uint64_t seed) {
  RngStream rng(seed, 111);
  double worst = 0.0;
  std::size_t coords = 0;
  bool ok = true;
  for (std::size_t i = 0; i < instances; ++i) {
    InstanceOptions opt;
    opt.max_prompts = 1;
    opt.logit_scale = 3.0;
    opt.model = PerturbationModel::gaussian(0.5);
    const Instance inst = random_instance(rng, opt);
    const double rho = std::exp(-rng.uniform(1.0, 4.0));
    const std::size_t V = inst.task.vocab_size, P = inst.pair.base.num_params();
    EstimatorConfig cfg = EstimatorConfig::dvp(rho);
    cfg.baseline = Baseline::none;
    RngStream sampler_rng = rng.derive(i);
    std::vector<double> sum(P, 0.0), sq(P, 0.0), g(P);
    for (std::size_t n = 0; n < samples; ++n) {
      const Trajectory t = rollout(inst.pair, inst.task, 0, Sampler::minp(rho), sampler_rng);
      const auto c = dvp::detail::contribution(t, inst.pair, cfg, t.reward);
      std::fill(g.begin(), g.end(), 0.0);
      for (std::size_t s = 0; s < c.rows.size(); ++s) {
        for (std::size_t k = 0; k < V; ++k) g[c.rows[s] * V + k] += c.values[s * V + k];
      }
      for (std::size_t k = 0; k < P; ++k) {
        sum[k] += g[k];
        sq[k] += g[k] * g[k];
      }
    }
    const auto exact = exact_dvp_target(inst.pair, inst.task, rho);
    const double N = static_cast<double>(samples);
    for (std::size_t k = 0; k < P; ++k) {
      const double mean = sum[k] / N;
      const double var = std::max(0.0, (sq[k] - N * mean * mean) / (N - 1));
      const double se = std::sqrt(var / N);
      const double err = std::abs(mean - exact[k]);
      if (err > 3 * se + 1e-12) ok = false;
      if (se > 0) worst = std::max(worst, err / se);
      ++coords;
    }
  }
  return {"dvp_unbiased", worst, 3.0, ok,
          std::to_string(instances) + " instances, " + std::to_string(samples) + " samples, " +
              std::to_string(coords) + " coordinates; residual is max |error| / SE"};
}

}  // namespace suites
}  // namespace dvp::harness
