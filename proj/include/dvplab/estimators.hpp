#pragma once

// Exact objectives and gradients by enumeration, the mismatch-bias identity,
// and the four batch gradient estimators (naive RLOO, token-level TIS,
// token-level MIS, and the pruned-vocabulary estimator).
//
// Gradients are taken with respect to the full logit table theta[C x V] and
// returned flattened row-major. Objectives and gradients average uniformly
// over prompts.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dvplab/generation.hpp"
#include "dvplab/parallel.hpp"
#include "dvplab/pruning.hpp"
#include "dvplab/simplex.hpp"
#include "dvplab/trajectory.hpp"

namespace dvp {

// ---------------------------------------------------------------------------
// Exact quantities
// ---------------------------------------------------------------------------

namespace detail {

/// Expected terminal reward below the state (prompt, history) under `view`.
/// When `grad` is set, adds P(s) pi(a|s) (Q(s,a) - V(s)) to the logit of a at
/// the state's row, which sums to P_view(y) R(y) d log P_view(y) over all
/// sequences (membership of the safe sets held fixed).
inline double tree_value(const PolicyPair& pair, const TaskSpec& task, std::size_t prompt,
                         PolicyView view, const RowTables& tables, std::vector<std::size_t>& history,
                         double reach, std::vector<double>* grad) {
  const std::size_t V = task.vocab_size;
  const std::size_t row = pair.base.context_map().row(prompt, history);
  const auto pi = tables.probs(view, row);
  double q_buf[64];
  std::vector<double> q_heap;
  double* q = q_buf;
  if (V > 64) {
    q_heap.resize(V);
    q = q_heap.data();
  }
  double value = 0.0;
  for (std::size_t a = 0; a < V; ++a) {
    q[a] = 0.0;
    if (pi[a] == 0.0) continue;
    history.push_back(a);
    if (episode_over(task, history.size(), a)) {
      q[a] = reward(task, prompt, history);
    } else {
      q[a] = tree_value(pair, task, prompt, view, tables, history, reach * pi[a], grad);
    }
    history.pop_back();
    value += pi[a] * q[a];
  }
  if (grad != nullptr) {
    double* g = grad->data() + row * V;
    for (std::size_t a = 0; a < V; ++a) g[a] += reach * pi[a] * (q[a] - value);
  }
  return value;
}

/// Adds weight * sum_t d log pi_view(y_t|s_t) / d theta for a trajectory,
/// for view train or train_mp (the latter with membership held fixed).
inline void add_score(std::vector<double>& grad, const Trajectory& traj, const RowTables& tables,
                      PolicyView view, double weight) {
  if (weight == 0.0) return;
  const std::size_t V = tables.vocab_size();
  for (const StepRecord& s : traj.steps) {
    const auto pi = tables.probs(view, s.row);
    double* g = grad.data() + s.row * V;
    for (std::size_t k = 0; k < V; ++k) g[k] -= weight * pi[k];
    g[s.token] += weight;
  }
}

inline void scale(std::vector<double>& v, double c) {
  for (double& x : v) x *= c;
}

}  // namespace detail

/// J under `view`: expected reward by exhaustive enumeration, averaged over prompts.
inline double exact_objective(const PolicyPair& pair, const TaskSpec& task,
                              PolicyView view = PolicyView::train, double rho = kDefaultRho) {
  require_enumerable(task);
  const RowTables tables(pair, rho);
  double total = 0.0;
  std::vector<std::size_t> history;
  for (std::size_t p = 0; p < task.num_prompts; ++p) {
    total += detail::tree_value(pair, task, p, view, tables, history, 1.0, nullptr);
  }
  return total / static_cast<double>(task.num_prompts);
}

/// J under `view` by forward dynamic programming over (context row, reward
/// state) instead of listing sequences. Exact like exact_objective, but its
/// cost is linear in the horizon, so it also covers tasks above the
/// enumeration cap. The reward state is the running parity, or whether the
/// prefix still matches the target.
inline double forward_objective(const PolicyPair& pair, const TaskSpec& task,
                                PolicyView view = PolicyView::train, double rho = kDefaultRho) {
  const RowTables tables(pair, rho);
  const ContextMap& map = pair.base.context_map();
  const std::size_t V = task.vocab_size, R = map.rows_per_prompt();

  // Local successor row of every (local row, token), by decoding the context.
  std::vector<std::size_t> next(R * V);
  {
    std::vector<std::size_t> ctx;
    std::function<void(std::size_t)> fill = [&](std::size_t len) {
      const std::size_t r = map.row(0, ctx);
      for (std::size_t a = 0; a < V; ++a) {
        ctx.push_back(a);
        next[r * V + a] = map.row(0, ctx);
        ctx.pop_back();
      }
      if (len == map.order()) return;
      for (std::size_t a = 0; a < V; ++a) {
        ctx.push_back(a);
        fill(len + 1);
        ctx.pop_back();
      }
    };
    fill(0);
  }

  double total = 0.0;
  std::vector<double> mass(R * 2), step(R * 2);
  for (std::size_t p = 0; p < task.num_prompts; ++p) {
    const std::size_t base = p * R;
    const bool parity = task.reward_kind == RewardKind::parity;
    std::fill(mass.begin(), mass.end(), 0.0);
    // Parity starts even; target matching starts "still matching".
    mass[parity ? 0 : 1] = 1.0;
    auto pays = [&](std::size_t state, std::size_t len) {
      if (parity) return static_cast<int>(state) == task.parity_bits[p];
      return state == 1 && len == task.targets[p].size();
    };
    for (std::size_t t = 0; t < task.horizon; ++t) {
      std::fill(step.begin(), step.end(), 0.0);
      for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t st = 0; st < 2; ++st) {
          const double m = mass[r * 2 + st];
          if (m == 0.0) continue;
          const auto pi = tables.probs(view, base + r);
          for (std::size_t a = 0; a < V; ++a) {
            if (pi[a] == 0.0) continue;
            std::size_t ns;
            if (parity) {
              ns = st ^ (a & 1);
            } else {
              const auto& tgt = task.targets[p];
              ns = (st == 1 && t < tgt.size() && tgt[t] == a) ? 1 : 0;
            }
            const bool ends = t + 1 == task.horizon ||
                              (task.terminal_token && a == *task.terminal_token);
            if (ends) {
              if (pays(ns, t + 1)) total += m * pi[a];
            } else {
              step[next[r * V + a] * 2 + ns] += m * pi[a];
            }
          }
        }
      }
      std::swap(mass, step);
    }
  }
  return total / static_cast<double>(task.num_prompts);
}

/// Gradient of exact_objective with respect to theta (analytic softmax
/// score functions; for the constrained views this is the contrastive form
/// e_a - pi_mp with safe sets held fixed).
inline std::vector<double> exact_gradient(const PolicyPair& pair, const TaskSpec& task,
                                          PolicyView view = PolicyView::train,
                                          double rho = kDefaultRho) {
  require_enumerable(task);
  const RowTables tables(pair, rho);
  std::vector<double> grad(pair.base.num_params(), 0.0);
  std::vector<std::size_t> history;
  for (std::size_t p = 0; p < task.num_prompts; ++p) {
    detail::tree_value(pair, task, p, view, tables, history, 1.0, &grad);
  }
  detail::scale(grad, 1.0 / static_cast<double>(task.num_prompts));
  return grad;
}

/// The practical gradient E_{y~infer}[d log pi_train(y) R(y)] by enumeration.
inline std::vector<double> practical_gradient(const PolicyPair& pair, const TaskSpec& task) {
  const RowTables tables(pair, kDefaultRho);
  std::vector<double> grad(pair.base.num_params(), 0.0);
  for (std::size_t p = 0; p < task.num_prompts; ++p) {
    for_each_trajectory(pair, task, p, PolicyView::infer, tables, false,
                        [&](const Trajectory& y, double prob) {
                          detail::add_score(grad, y, tables, PolicyView::train, prob * y.reward);
                        });
  }
  detail::scale(grad, 1.0 / static_cast<double>(task.num_prompts));
  return grad;
}

/// The ideal gradient E_{y~train}[d log pi_train(y) R(y)], enumerated path by path.
inline std::vector<double> ideal_gradient(const PolicyPair& pair, const TaskSpec& task) {
  const RowTables tables(pair, kDefaultRho);
  std::vector<double> grad(pair.base.num_params(), 0.0);
  for (std::size_t p = 0; p < task.num_prompts; ++p) {
    for_each_trajectory(pair, task, p, PolicyView::train, tables, false,
                        [&](const Trajectory& y, double prob) {
                          detail::add_score(grad, y, tables, PolicyView::train, prob * y.reward);
                        });
  }
  detail::scale(grad, 1.0 / static_cast<double>(task.num_prompts));
  return grad;
}

/// g' - g with both expectations enumerated under their own sampling policy.
inline std::vector<double> bias_direct(const PolicyPair& pair, const TaskSpec& task) {
  std::vector<double> b = practical_gradient(pair, task);
  const std::vector<double> g = ideal_gradient(pair, task);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] -= g[i];
  return b;
}

namespace detail {

inline std::vector<double> bias_formula_impl(const PolicyPair& pair, const TaskSpec& task,
                                             double sign) {
  const RowTables tables(pair, kDefaultRho);
  std::vector<double> b(pair.base.num_params(), 0.0);
  for (std::size_t p = 0; p < task.num_prompts; ++p) {
    for_each_trajectory(pair, task, p, PolicyView::train, tables, false,
                        [&](const Trajectory& y, double prob) {
                          const double w = std::expm1(sign * -y.delta_y);
                          add_score(b, y, tables, PolicyView::train, prob * w * y.reward);
                        });
  }
  scale(b, 1.0 / static_cast<double>(task.num_prompts));
  return b;
}

}  // namespace detail

/// E_{y~train}[(exp(-delta_y) - 1) d log pi_train(y) R(y)].
inline std::vector<double> bias_formula(const PolicyPair& pair, const TaskSpec& task) {
  return detail::bias_formula_impl(pair, task, 1.0);
}

/// Constrained gradient restricted to sequences that min-p sampling from the
/// inference policy can produce (every token inside both safe sets): the
/// exact expectation of the pruned-vocabulary estimator without baseline.
inline std::vector<double> exact_dvp_target(const PolicyPair& pair, const TaskSpec& task,
                                            double rho = kDefaultRho) {
  const RowTables tables(pair, rho);
  std::vector<double> grad(pair.base.num_params(), 0.0);
  for (std::size_t p = 0; p < task.num_prompts; ++p) {
    for_each_trajectory(pair, task, p, PolicyView::train_mp, tables, false,
                        [&](const Trajectory& y, double prob) {
                          for (const StepRecord& s : y.steps) {
                            if (!s.safe_infer) return;
                          }
                          detail::add_score(grad, y, tables, PolicyView::train_mp, prob * y.reward);
                        });
  }
  detail::scale(grad, 1.0 / static_cast<double>(task.num_prompts));
  return grad;
}

/// Smallest retained training mass Z(s) over every state reachable within
/// the horizon (the training policy has full support, so all of them).
inline double min_retained_mass(const PolicyPair& pair, const TaskSpec& task, double rho) {
  require_enumerable(task);
  const RowTables tables(pair, rho);
  const ContextMap& map = pair.base.context_map();
  double z_min = 1.0;
  std::vector<std::size_t> history;
  std::function<void(std::size_t)> visit = [&](std::size_t prompt) {
    z_min = std::min(z_min, tables.retained_mass(map.row(prompt, history)));
    if (history.size() + 1 >= task.horizon) return;
    for (std::size_t a = 0; a < task.vocab_size; ++a) {
      if (task.terminal_token && a == *task.terminal_token) continue;
      history.push_back(a);
      visit(prompt);
      history.pop_back();
    }
  };
  for (std::size_t p = 0; p < task.num_prompts; ++p) visit(p);
  return z_min;
}

/// R_max * T * (1 - Z_min) with R_max = 1.
inline double objective_bias_bound(const PolicyPair& pair, const TaskSpec& task,
                                   double rho = kDefaultRho) {
  return static_cast<double>(task.horizon) * (1.0 - min_retained_mass(pair, task, rho));
}

/// d log pi_mp(a) / dz = e_a - pi_mp, safe set held fixed.
inline std::vector<double> contrastive_gradient(const LogitVector& z, std::size_t a,
                                                double rho = kDefaultRho) {
  if (a >= z.size()) throw std::out_of_range("contrastive_gradient: token index out of range");
  const SafeSet s = minp_safe_set(z, rho);
  if (!s.contains(a)) throw std::invalid_argument("contrastive_gradient: token not in safe set");
  std::vector<double> g = constrained_probs(z.values(), s);
  for (double& x : g) x = -x;
  g[a] += 1.0;
  return g;
}

// ---------------------------------------------------------------------------
// Batch estimators
// ---------------------------------------------------------------------------

/// A_i = R_i - mean_{j != i} R_j.
inline std::vector<double> rloo_advantages(std::span<const double> rewards) {
  const std::size_t G = rewards.size();
  if (G < 2) throw std::invalid_argument("rloo_advantages: group size must be >= 2");
  double sum = 0.0;
  for (double r : rewards) sum += r;
  std::vector<double> adv(G);
  for (std::size_t i = 0; i < G; ++i) {
    adv[i] = rewards[i] - (sum - rewards[i]) / static_cast<double>(G - 1);
  }
  return adv;
}

enum class EstimatorKind { naive, tis, mis, dvp };

inline std::string_view to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::naive: return "naive";
    case EstimatorKind::tis: return "tis";
    case EstimatorKind::mis: return "mis";
    case EstimatorKind::dvp: return "dvp";
  }
  return "?";
}

inline EstimatorKind parse_estimator_kind(std::string_view s) {
  if (s == "naive") return EstimatorKind::naive;
  if (s == "tis") return EstimatorKind::tis;
  if (s == "mis") return EstimatorKind::mis;
  if (s == "dvp") return EstimatorKind::dvp;
  throw std::invalid_argument("unknown estimator kind: " + std::string(s));
}

enum class Baseline { rloo, none };

inline constexpr double kDefaultTisClip = 2.0;
inline constexpr double kDefaultMisClip = 5.0;

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::naive;
  /// tis / mis only.
  std::optional<double> clip;
  /// dvp only.
  std::optional<double> rho;
  std::size_t group_size = 16;
  Baseline baseline = Baseline::rloo;

  static EstimatorConfig naive(std::size_t g = 16) { return {EstimatorKind::naive, {}, {}, g}; }
  static EstimatorConfig tis(double c = kDefaultTisClip, std::size_t g = 16) {
    return {EstimatorKind::tis, c, {}, g};
  }
  static EstimatorConfig mis(double c = kDefaultMisClip, std::size_t g = 16) {
    return {EstimatorKind::mis, c, {}, g};
  }
  static EstimatorConfig dvp(double r = kDefaultRho, std::size_t g = 16) {
    return {EstimatorKind::dvp, {}, r, g};
  }

  void validate() const {
    const bool wants_clip = kind == EstimatorKind::tis || kind == EstimatorKind::mis;
    if (wants_clip != clip.has_value()) {
      throw std::invalid_argument("estimator: clip must be set exactly for tis/mis");
    }
    if (clip && !(*clip > 1.0)) throw std::invalid_argument("estimator: clip must exceed 1");
    if ((kind == EstimatorKind::dvp) != rho.has_value()) {
      throw std::invalid_argument("estimator: rho must be set exactly for dvp");
    }
    if (rho) require_rho(*rho);
    if (group_size < 2) throw std::invalid_argument("estimator: group size must be >= 2");
  }
};

struct EstimateDiagnostics {
  /// Mean over the batch of |delta_y| (unconstrained policies).
  double mean_abs_delta = 0.0;
  /// Largest importance ratio the estimator is exposed to. naive: the
  /// uncorrected sequence ratio, max_y exp(|delta_y|); tis/mis: the largest
  /// per-token weight actually applied; dvp: max exp(|log w_y|) over
  /// trajectories of nonzero weight.
  double max_is_ratio = 1.0;
  /// Fraction of trajectories with a token outside the training safe set.
  double zero_weight_fraction = 0.0;
  /// mis: fraction of tokens whose ratio fell outside [1/C, C].
  double dropped_token_fraction = 0.0;
};

struct GradientEstimate {
  std::vector<double> vector;
  EstimatorKind estimator = EstimatorKind::naive;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
  EstimateDiagnostics diagnostics;
};

namespace detail {

/// One trajectory's contribution, kept sparse: per step a row and V values.
struct Contribution {
  std::vector<std::size_t> rows;
  std::vector<double> values;
  double is_ratio = 1.0;
  std::size_t dropped = 0;
  bool zero_weight = false;
};

inline std::vector<double> advantages_for(std::span<const Trajectory> batch, std::size_t group_size,
                                          Baseline baseline) {
  std::vector<double> adv(batch.size());
  if (baseline == Baseline::none) {
    for (std::size_t i = 0; i < batch.size(); ++i) adv[i] = batch[i].reward;
    return adv;
  }
  if (group_size < 2 || batch.size() % group_size != 0) {
    throw std::invalid_argument("estimator: batch size must be a multiple of the group size");
  }
  std::vector<double> r(group_size);
  for (std::size_t g0 = 0; g0 < batch.size(); g0 += group_size) {
    for (std::size_t j = 0; j < group_size; ++j) r[j] = batch[g0 + j].reward;
    const std::vector<double> a = rloo_advantages(r);
    std::copy(a.begin(), a.end(), adv.begin() + static_cast<std::ptrdiff_t>(g0));
  }
  return adv;
}

inline void softmax_into(std::span<const double> z, std::vector<double>& out) {
  out.resize(z.size());
  const double m = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) total += (out[k] = std::exp(z[k] - m));
  for (double& x : out) x /= total;
}

inline Contribution contribution(const Trajectory& traj, const PolicyPair& pair,
                                 const EstimatorConfig& cfg, double advantage) {
  const std::size_t V = pair.base.vocab_size();
  Contribution c;
  const bool zero_weight = support_classify(traj) == SupportClass::zero_weight;
  c.zero_weight = zero_weight;

  double seq_weight = 1.0;
  if (cfg.kind == EstimatorKind::naive) {
    c.is_ratio = std::exp(std::abs(traj.delta_y));
  } else if (cfg.kind == EstimatorKind::dvp) {
    if (zero_weight) return c;
    double log_w = 0.0;
    for (const StepRecord& s : traj.steps) {
      if (!s.safe_infer) {
        throw std::invalid_argument(
            "dvp_estimate: token outside the inference safe set; batch must be min-p sampled");
      }
      log_w += s.logp_train_mp - s.logp_infer_mp;
    }
    seq_weight = std::exp(log_w);
    c.is_ratio = std::exp(std::abs(log_w));
  } else {
    c.is_ratio = 0.0;
  }

  std::vector<double> probs;
  for (const StepRecord& s : traj.steps) {
    double w = seq_weight * advantage;
    if (cfg.kind == EstimatorKind::tis || cfg.kind == EstimatorKind::mis) {
      const double ratio = std::exp(s.logp_train - s.logp_infer);
      double tw = ratio;
      if (cfg.kind == EstimatorKind::tis) {
        tw = std::min(*cfg.clip, ratio);
        c.is_ratio = std::max(c.is_ratio, tw);
      } else if (ratio < 1.0 / *cfg.clip || ratio > *cfg.clip) {
        tw = 0.0;
        ++c.dropped;
      } else {
        c.is_ratio = std::max(c.is_ratio, tw);
      }
      w *= tw;
    }
    const auto z = pair.base.row_logits(s.row);
    if (cfg.kind == EstimatorKind::dvp) {
      probs = constrained_probs(z, minp_safe_set(z, *cfg.rho));
    } else {
      softmax_into(z, probs);
    }
    c.rows.push_back(s.row);
    for (std::size_t k = 0; k < V; ++k) {
      c.values.push_back(w * (((k == s.token) ? 1.0 : 0.0) - probs[k]));
    }
  }
  return c;
}

}  // namespace detail

/// Batch estimate. Trajectories are grouped in consecutive runs of
/// cfg.group_size for the RLOO baseline. Contributions are computed on up to
/// `workers` threads and reduced in batch order, so the result does not
/// depend on the worker count.
inline GradientEstimate estimate(const EstimatorConfig& cfg, std::span<const Trajectory> batch,
                                 const PolicyPair& pair, std::uint64_t seed = 0,
                                 unsigned workers = 1) {
  cfg.validate();
  if (batch.empty()) throw std::invalid_argument("estimate: empty batch");
  const std::vector<double> adv = detail::advantages_for(batch, cfg.group_size, cfg.baseline);

  std::vector<detail::Contribution> parts(batch.size());
  parallel_for(batch.size(), workers, [&](std::size_t i) {
    parts[i] = detail::contribution(batch[i], pair, cfg, adv[i]);
  });

  const std::size_t V = pair.base.vocab_size();
  GradientEstimate out;
  out.estimator = cfg.kind;
  out.n_samples = batch.size();
  out.seed = seed;
  out.vector.assign(pair.base.num_params(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double abs_delta = 0.0, max_ratio = 0.0;
  std::size_t zero_weight = 0, dropped = 0, tokens = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const detail::Contribution& c = parts[i];
    for (std::size_t s = 0; s < c.rows.size(); ++s) {
      double* g = out.vector.data() + c.rows[s] * V;
      for (std::size_t k = 0; k < V; ++k) g[k] += inv_n * c.values[s * V + k];
    }
    abs_delta += std::abs(batch[i].delta_y);
    if (!(cfg.kind == EstimatorKind::dvp && c.zero_weight)) max_ratio = std::max(max_ratio, c.is_ratio);
    zero_weight += c.zero_weight ? 1 : 0;
    dropped += c.dropped;
    tokens += batch[i].steps.size();
  }
  out.diagnostics.mean_abs_delta = abs_delta * inv_n;
  out.diagnostics.max_is_ratio = max_ratio;
  out.diagnostics.zero_weight_fraction = static_cast<double>(zero_weight) * inv_n;
  out.diagnostics.dropped_token_fraction =
      tokens == 0 ? 0.0 : static_cast<double>(dropped) / static_cast<double>(tokens);
  return out;
}

/// (1/N) sum_i A_i d log pi_train(y_i); no importance correction.
inline GradientEstimate naive_estimate(std::span<const Trajectory> batch, const PolicyPair& pair,
                                       std::size_t group_size, Baseline baseline = Baseline::rloo) {
  EstimatorConfig cfg = EstimatorConfig::naive(group_size);
  cfg.baseline = baseline;
  return estimate(cfg, batch, pair);
}

/// Per-token weights min(C, pi_train / pi_infer) on each score term.
inline GradientEstimate tis_estimate(std::span<const Trajectory> batch, const PolicyPair& pair,
                                     double clip, std::size_t group_size,
                                     Baseline baseline = Baseline::rloo) {
  EstimatorConfig cfg = EstimatorConfig::tis(clip, group_size);
  cfg.baseline = baseline;
  return estimate(cfg, batch, pair);
}

/// Per-token ratio kept when inside [1/C, C], otherwise the term is dropped.
inline GradientEstimate mis_estimate(std::span<const Trajectory> batch, const PolicyPair& pair,
                                     double clip, std::size_t group_size,
                                     Baseline baseline = Baseline::rloo) {
  EstimatorConfig cfg = EstimatorConfig::mis(clip, group_size);
  cfg.baseline = baseline;
  return estimate(cfg, batch, pair);
}

/// Sequence ratio of the constrained policies times the constrained score
/// times the advantage; zero for trajectories with a token outside the
/// training safe set.
inline GradientEstimate dvp_estimate(std::span<const Trajectory> batch, const PolicyPair& pair,
                                     double rho, std::size_t group_size,
                                     Baseline baseline = Baseline::rloo) {
  EstimatorConfig cfg = EstimatorConfig::dvp(rho, group_size);
  cfg.baseline = baseline;
  return estimate(cfg, batch, pair);
}

}  // namespace dvp
