#pragma once

// Toy autoregressive generation MDP with a tabular softmax policy.
//
// A state is (prompt, tokens so far). The policy reads one row of a logit
// table chosen by the prompt and the last k tokens (fewer at the start of an
// episode). The row index is a bijection over (prompt, history length,
// base-V history), so distinct contexts never share a row.

#include <algorithm>
#include <array>
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

#include "dvplab/errors.hpp"
#include "dvplab/perturbation.hpp"
#include "dvplab/pruning.hpp"
#include "dvplab/rng.hpp"
#include "dvplab/simplex.hpp"
#include "dvplab/trajectory.hpp"

namespace dvp {

class ContextMap {
 public:
  ContextMap() = default;
  ContextMap(std::size_t num_prompts, std::size_t vocab_size, std::size_t order)
      : num_prompts_(num_prompts), vocab_size_(vocab_size), order_(order) {
    if (num_prompts == 0) throw std::invalid_argument("ContextMap: need at least one prompt");
    if (vocab_size < 2) throw std::invalid_argument("ContextMap: vocab size must be >= 2");
    std::size_t pow = 1;
    offsets_.push_back(0);
    for (std::size_t len = 0; len <= order; ++len) {
      offsets_.push_back(offsets_.back() + pow);
      pow *= vocab_size;
      if (offsets_.back() > (std::size_t{1} << 24)) {
        throw std::invalid_argument("ContextMap: context table too large");
      }
    }
    rows_per_prompt_ = offsets_.back();
  }

  std::size_t num_prompts() const { return num_prompts_; }
  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t order() const { return order_; }
  std::size_t rows_per_prompt() const { return rows_per_prompt_; }
  std::size_t num_rows() const { return num_prompts_ * rows_per_prompt_; }

  /// Row for a state whose generated prefix is `history`.
  std::size_t row(std::size_t prompt, std::span<const std::size_t> history) const {
    if (prompt >= num_prompts_) {
      throw std::out_of_range("unmapped state: prompt " + std::to_string(prompt));
    }
    const std::size_t len = std::min(order_, history.size());
    std::size_t code = 0;
    for (std::size_t i = history.size() - len; i < history.size(); ++i) {
      if (history[i] >= vocab_size_) {
        throw std::out_of_range("unmapped state: token " + std::to_string(history[i]));
      }
      code = code * vocab_size_ + history[i];
    }
    return prompt * rows_per_prompt_ + offsets_[len] + code;
  }

 private:
  std::size_t num_prompts_ = 0;
  std::size_t vocab_size_ = 0;
  std::size_t order_ = 0;
  std::size_t rows_per_prompt_ = 0;
  std::vector<std::size_t> offsets_;
};

/// Logit table theta[C x V] read through a ContextMap.
class TabularPolicy {
 public:
  TabularPolicy() = default;
  TabularPolicy(ContextMap map, std::vector<double> theta)
      : map_(std::move(map)), theta_(std::move(theta)) {
    if (theta_.size() != map_.num_rows() * map_.vocab_size()) {
      throw std::invalid_argument("TabularPolicy: theta has wrong size");
    }
  }

  /// theta ~ N(0, scale^2) iid.
  static TabularPolicy random(const ContextMap& map, double scale, RngStream rng) {
    std::vector<double> theta(map.num_rows() * map.vocab_size());
    for (double& x : theta) x = scale * rng.normal();
    return TabularPolicy(map, std::move(theta));
  }

  static TabularPolicy uniform(const ContextMap& map) {
    return TabularPolicy(map, std::vector<double>(map.num_rows() * map.vocab_size(), 0.0));
  }

  const ContextMap& context_map() const { return map_; }
  std::size_t vocab_size() const { return map_.vocab_size(); }
  std::size_t num_rows() const { return map_.num_rows(); }
  std::size_t num_params() const { return theta_.size(); }

  std::span<const double> theta() const { return theta_; }
  std::span<double> theta_mut() { return theta_; }

  std::span<const double> row_logits(std::size_t row) const {
    return std::span<const double>(theta_).subspan(row * vocab_size(), vocab_size());
  }

  LogitVector next_logits(std::size_t prompt, std::span<const std::size_t> history) const {
    const auto r = row_logits(map_.row(prompt, history));
    return LogitVector(std::vector<double>(r.begin(), r.end()));
  }

 private:
  ContextMap map_;
  std::vector<double> theta_;
};

enum class RewardKind { target_match, parity };

inline std::string_view to_string(RewardKind k) {
  return k == RewardKind::target_match ? "target_match" : "parity";
}

inline RewardKind parse_reward_kind(std::string_view s) {
  if (s == "target_match") return RewardKind::target_match;
  if (s == "parity") return RewardKind::parity;
  throw std::invalid_argument("unknown reward kind: " + std::string(s));
}

struct TaskSpec {
  RewardKind reward_kind = RewardKind::parity;
  std::size_t vocab_size = 2;
  std::size_t horizon = 1;
  std::size_t num_prompts = 1;
  std::size_t context_order = 1;
  /// target_match: one target sequence per prompt.
  std::vector<std::vector<std::size_t>> targets;
  /// parity: required parity of the token sum, one bit per prompt.
  std::vector<int> parity_bits;
  /// Sampling this token ends the episode early.
  std::optional<std::size_t> terminal_token;

  void validate() const {
    if (vocab_size < 2) throw std::invalid_argument("task: vocab_size must be >= 2");
    if (horizon == 0) throw std::invalid_argument("task: horizon must be positive");
    if (num_prompts == 0) throw std::invalid_argument("task: need at least one prompt");
    if (terminal_token && *terminal_token >= vocab_size) {
      throw std::invalid_argument("task: terminal token out of range");
    }
    if (reward_kind == RewardKind::target_match) {
      if (targets.size() != num_prompts) throw std::invalid_argument("task: one target per prompt");
      for (const auto& t : targets) {
        if (t.empty() || t.size() > horizon) throw std::invalid_argument("task: bad target length");
        for (std::size_t tok : t) {
          if (tok >= vocab_size) throw std::invalid_argument("task: target token out of range");
        }
      }
    } else {
      if (parity_bits.size() != num_prompts) {
        throw std::invalid_argument("task: one parity bit per prompt");
      }
      for (int b : parity_bits) {
        if (b != 0 && b != 1) throw std::invalid_argument("task: parity bits must be 0 or 1");
      }
    }
  }

  ContextMap context_map() const { return ContextMap(num_prompts, vocab_size, context_order); }
};

inline int reward(const TaskSpec& task, std::size_t prompt, std::span<const std::size_t> y) {
  if (prompt >= task.num_prompts) throw std::out_of_range("reward: prompt out of range");
  if (task.reward_kind == RewardKind::target_match) {
    const auto& t = task.targets[prompt];
    return std::equal(y.begin(), y.end(), t.begin(), t.end()) ? 1 : 0;
  }
  std::size_t sum = 0;
  for (std::size_t tok : y) sum += tok;
  return static_cast<int>(sum % 2) == task.parity_bits[prompt] ? 1 : 0;
}

enum class NoiseRealization { fixed_per_row, resample_each_state };

inline std::string_view to_string(NoiseRealization r) {
  return r == NoiseRealization::fixed_per_row ? "fixed_per_row" : "resample_each_state";
}

inline NoiseRealization parse_noise_realization(std::string_view s) {
  if (s == "fixed_per_row") return NoiseRealization::fixed_per_row;
  if (s == "resample_each_state") return NoiseRealization::resample_each_state;
  throw std::invalid_argument("unknown noise realization: " + std::string(s));
}

/// Training and inference policies sharing one logit table. The inference
/// logits are base + noise, where `noise` is the currently realized
/// perturbation table (one row per context). In resample_each_state mode
/// rollouts draw fresh noise per visited state instead; exact enumeration
/// always uses the realized table.
struct PolicyPair {
  TabularPolicy base;
  PerturbationModel model;
  NoiseRealization realization = NoiseRealization::fixed_per_row;
  std::vector<double> noise;

  PolicyPair() = default;
  PolicyPair(TabularPolicy b, PerturbationModel m,
             NoiseRealization r = NoiseRealization::fixed_per_row)
      : base(std::move(b)), model(m), realization(r), noise(base.num_params(), 0.0) {}

  /// Draws a fresh perturbation for every row of the table.
  void realize(RngStream& rng) { noise = draw_noise(model, base.num_params(), rng); }

  void set_noise(std::vector<double> n) {
    if (n.size() != base.num_params()) throw std::invalid_argument("PolicyPair: noise size");
    noise = std::move(n);
  }

  std::span<const double> row_noise(std::size_t row) const {
    return std::span<const double>(noise).subspan(row * base.vocab_size(), base.vocab_size());
  }

  std::vector<double> infer_row_logits(std::size_t row) const {
    const auto z = base.row_logits(row);
    const auto e = row_noise(row);
    std::vector<double> out(z.size());
    for (std::size_t k = 0; k < z.size(); ++k) out[k] = z[k] + e[k];
    return out;
  }
};

enum class PolicyView { train, infer, train_mp, infer_mp };

inline std::string_view to_string(PolicyView v) {
  switch (v) {
    case PolicyView::train: return "train";
    case PolicyView::infer: return "infer";
    case PolicyView::train_mp: return "train_mp";
    case PolicyView::infer_mp: return "infer_mp";
  }
  return "?";
}

struct Sampler {
  enum class Kind { raw, minp } kind = Kind::raw;
  /// Pruning threshold for minp; also the threshold the safe-set flags of
  /// raw rollouts are recorded against.
  double rho = kDefaultRho;

  static Sampler raw(double rho = kDefaultRho) { return {Kind::raw, rho}; }
  static Sampler minp(double rho) { return {Kind::minp, rho}; }
};

namespace detail {

inline StepRecord make_step(std::span<const double> z_train, std::span<const double> z_infer,
                            std::size_t row, std::size_t token, double rho) {
  StepRecord s;
  s.row = row;
  s.token = token;
  s.logp_train = dvp::log_softmax_at(z_train, token);
  s.logp_infer = dvp::log_softmax_at(z_infer, token);
  const SafeSet st = minp_safe_set(z_train, rho);
  const SafeSet si = minp_safe_set(z_infer, rho);
  s.safe_train = st.contains(token);
  s.safe_infer = si.contains(token);
  s.logp_train_mp = constrained_log_prob(z_train, st, token);
  s.logp_infer_mp = constrained_log_prob(z_infer, si, token);
  return s;
}

inline bool episode_over(const TaskSpec& task, std::size_t t, std::size_t last_token) {
  return t >= task.horizon || (task.terminal_token && last_token == *task.terminal_token);
}

}  // namespace detail

/// Recomputes reward and delta_y from the tokens and step records.
inline void finalize(Trajectory& traj, const TaskSpec& task) {
  traj.reward = reward(task, traj.prompt, traj.tokens);
  double d = 0.0;
  for (const StepRecord& s : traj.steps) d += s.delta();
  traj.delta_y = d;
}

/// Samples one episode for `prompt` from the inference policy (pruned to its
/// safe set when the sampler is minp). Log-probabilities under all four
/// views and safe-set flags are recorded for every step.
inline Trajectory rollout(const PolicyPair& pair, const TaskSpec& task, std::size_t prompt,
                          const Sampler& sampler, RngStream& rng) {
  const std::size_t V = pair.base.vocab_size();
  Trajectory traj;
  traj.prompt = prompt;
  std::vector<double> z_infer(V), probs(V);
  for (std::size_t t = 0;; ) {
    const std::size_t row = pair.base.context_map().row(prompt, traj.tokens);
    const auto z_train = pair.base.row_logits(row);
    if (pair.realization == NoiseRealization::fixed_per_row) {
      const auto e = pair.row_noise(row);
      for (std::size_t k = 0; k < V; ++k) z_infer[k] = z_train[k] + e[k];
    } else {
      const std::vector<double> e = draw_noise(pair.model, V, rng);
      for (std::size_t k = 0; k < V; ++k) z_infer[k] = z_train[k] + e[k];
    }
    std::size_t token;
    if (sampler.kind == Sampler::Kind::minp) {
      const SafeSet s = minp_safe_set(z_infer, sampler.rho);
      if (s.members.empty()) throw EmptySupportError();
      probs = constrained_probs(z_infer, s);
      token = sample_categorical(probs, rng);
    } else {
      const double m = *std::max_element(z_infer.begin(), z_infer.end());
      double total = 0.0;
      for (std::size_t k = 0; k < V; ++k) total += (probs[k] = std::exp(z_infer[k] - m));
      for (double& p : probs) p /= total;
      token = sample_categorical(probs, rng);
    }
    traj.steps.push_back(detail::make_step(z_train, z_infer, row, token, sampler.rho));
    traj.tokens.push_back(token);
    ++t;
    if (detail::episode_over(task, t, token)) break;
  }
  finalize(traj, task);
  return traj;
}

/// Per-token log-probability of `token` at `row` under a view. Inference
/// views use the pair's realized noise table.
inline double view_log_prob(const PolicyPair& pair, PolicyView view, double rho, std::size_t row,
                            std::size_t token) {
  const bool infer = view == PolicyView::infer || view == PolicyView::infer_mp;
  std::vector<double> z;
  if (infer) {
    z = pair.infer_row_logits(row);
  } else {
    const auto r = pair.base.row_logits(row);
    z.assign(r.begin(), r.end());
  }
  if (view == PolicyView::train || view == PolicyView::infer) {
    return log_softmax_at(z, token);
  }
  return constrained_log_prob(z, minp_safe_set(z, rho), token);
}

/// Chain-rule log-probability of the trajectory's tokens under `view`.
/// -inf when some token lies outside the view's support.
inline double sequence_logprob(PolicyView view, const PolicyPair& pair, const Trajectory& traj,
                               double rho = kDefaultRho) {
  double acc = 0.0;
  std::vector<std::size_t> prefix;
  prefix.reserve(traj.tokens.size());
  for (std::size_t tok : traj.tokens) {
    const std::size_t row = pair.base.context_map().row(traj.prompt, prefix);
    const double lp = view_log_prob(pair, view, rho, row, tok);
    if (lp == -std::numeric_limits<double>::infinity()) return lp;
    acc += lp;
    prefix.push_back(tok);
  }
  return acc;
}

inline constexpr std::size_t kEnumerationCap = 1'000'000;

/// Number of complete sequences for one prompt (V^T), or a value above the
/// cap if that would overflow.
inline std::size_t sequence_count(const TaskSpec& task) {
  std::size_t n = 1;
  for (std::size_t t = 0; t < task.horizon; ++t) {
    if (n > kEnumerationCap) return kEnumerationCap + 1;
    n *= task.vocab_size;
  }
  return n;
}

inline void require_enumerable(const TaskSpec& task) {
  const std::size_t n = sequence_count(task);
  if (n > kEnumerationCap) throw EnumerationCapError(n, kEnumerationCap);
}

/// Per-row step tables for one (pair, rho): log-probabilities under every
/// view, safe-set flags, and the view distributions. Enumeration reads
/// these instead of recomputing softmaxes at every tree node.
class RowTables {
 public:
  RowTables(const PolicyPair& pair, double rho) : V_(pair.base.vocab_size()), rho_(rho) {
    require_rho(rho);
    const std::size_t C = pair.base.num_rows();
    for (auto& t : logp_) t.resize(C * V_);
    for (auto& t : prob_) t.resize(C * V_);
    safe_train_.resize(C * V_);
    safe_infer_.resize(C * V_);
    retained_.resize(C);
    for (std::size_t c = 0; c < C; ++c) {
      const auto zt = pair.base.row_logits(c);
      const std::vector<double> zi = pair.infer_row_logits(c);
      const SafeSet st = minp_safe_set(zt, rho);
      const SafeSet si = minp_safe_set(zi, rho);
      retained_[c] = st.retained_mass;
      const std::vector<double> pt_mp = constrained_probs(zt, st);
      const std::vector<double> pi_mp = constrained_probs(zi, si);
      const LogProbVector lt = log_softmax(LogitVector(std::vector<double>(zt.begin(), zt.end())));
      const LogProbVector li = log_softmax(LogitVector(zi));
      const std::vector<double> lt_mp = constrained_log_probs(zt, st);
      const std::vector<double> li_mp = constrained_log_probs(zi, si);
      for (std::size_t a = 0; a < V_; ++a) {
        const std::size_t i = c * V_ + a;
        logp_[0][i] = lt[a];
        logp_[1][i] = li[a];
        logp_[2][i] = lt_mp[a];
        logp_[3][i] = li_mp[a];
        prob_[0][i] = std::exp(logp_[0][i]);
        prob_[1][i] = std::exp(logp_[1][i]);
        prob_[2][i] = pt_mp[a];
        prob_[3][i] = pi_mp[a];
        safe_train_[i] = st.contains(a);
        safe_infer_[i] = si.contains(a);
      }
    }
  }

  double rho() const { return rho_; }
  std::size_t vocab_size() const { return V_; }

  double log_prob(PolicyView v, std::size_t row, std::size_t a) const {
    return logp_[static_cast<int>(v)][row * V_ + a];
  }
  double prob(PolicyView v, std::size_t row, std::size_t a) const {
    return prob_[static_cast<int>(v)][row * V_ + a];
  }
  std::span<const double> probs(PolicyView v, std::size_t row) const {
    return std::span<const double>(prob_[static_cast<int>(v)]).subspan(row * V_, V_);
  }
  /// Retained training mass Z(s) of a row.
  double retained_mass(std::size_t row) const { return retained_[row]; }

  StepRecord step(std::size_t row, std::size_t a) const {
    const std::size_t i = row * V_ + a;
    StepRecord s;
    s.row = row;
    s.token = a;
    s.logp_train = logp_[0][i];
    s.logp_infer = logp_[1][i];
    s.logp_train_mp = logp_[2][i];
    s.logp_infer_mp = logp_[3][i];
    s.safe_train = safe_train_[i] != 0;
    s.safe_infer = safe_infer_[i] != 0;
    return s;
  }

 private:
  std::size_t V_;
  double rho_;
  std::array<std::vector<double>, 4> logp_;
  std::array<std::vector<double>, 4> prob_;
  std::vector<char> safe_train_;
  std::vector<char> safe_infer_;
  std::vector<double> retained_;
};

/// Depth-first walk over every complete sequence of one prompt. The visitor
/// receives the trajectory (with step records and reward) and its
/// probability under `view`. Branches of probability zero are skipped
/// unless `include_zero` is set. Visit order is lexicographic in the tokens.
inline void for_each_trajectory(const PolicyPair& pair, const TaskSpec& task, std::size_t prompt,
                                PolicyView view, const RowTables& tables, bool include_zero,
                                const std::function<void(const Trajectory&, double)>& visit) {
  require_enumerable(task);
  const std::size_t V = task.vocab_size;
  Trajectory traj;
  traj.prompt = prompt;
  traj.tokens.reserve(task.horizon);
  traj.steps.reserve(task.horizon);
  const ContextMap& map = pair.base.context_map();

  std::function<void(double)> descend = [&](double prob) {
    const std::size_t row = map.row(prompt, traj.tokens);
    for (std::size_t a = 0; a < V; ++a) {
      const double p = prob * tables.prob(view, row, a);
      if (p == 0.0 && !include_zero) continue;
      traj.tokens.push_back(a);
      traj.steps.push_back(tables.step(row, a));
      if (detail::episode_over(task, traj.tokens.size(), a)) {
        finalize(traj, task);
        visit(traj, p);
      } else {
        descend(p);
      }
      traj.tokens.pop_back();
      traj.steps.pop_back();
    }
  };
  descend(1.0);
}

struct WeightedTrajectory {
  Trajectory trajectory;
  double probability = 0.0;
};

/// Every complete sequence of `prompt` with its exact probability under
/// `view`, including probability-zero sequences of the constrained views.
inline std::vector<WeightedTrajectory> enumerate_trajectories(const PolicyPair& pair,
                                                              const TaskSpec& task,
                                                              std::size_t prompt, PolicyView view,
                                                              double rho = kDefaultRho) {
  const RowTables tables(pair, rho);
  std::vector<WeightedTrajectory> out;
  for_each_trajectory(pair, task, prompt, view, tables, true,
                      [&](const Trajectory& t, double p) { out.push_back({t, p}); });
  return out;
}

}  // namespace dvp
