#pragma once

// Min-p safe sets and the policies constrained to them.
//
// Membership is decided in logit space, z_a >= max_k z_k + log(rho), which
// is the same test as p_a >= rho * max_k p_k without forming tiny
// probabilities. Ties at the threshold are members.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "dvplab/simplex.hpp"
#include "dvplab/trajectory.hpp"

namespace dvp {

/// exp(-13): prunes only the extreme tail.
inline const double kDefaultRho = std::exp(-13.0);

struct SafeSet {
  std::vector<std::size_t> members;
  std::vector<char> is_member;
  double retained_mass = 1.0;
  double rho = 1.0;

  bool contains(std::size_t a) const { return a < is_member.size() && is_member[a] != 0; }
  std::size_t size() const { return members.size(); }
};

inline void require_rho(double rho) {
  if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("rho must lie in (0, 1]");
}

inline SafeSet minp_safe_set(std::span<const double> z, double rho) {
  require_rho(rho);
  const double zmax = *std::max_element(z.begin(), z.end());
  const double threshold = zmax + std::log(rho);
  SafeSet s;
  s.rho = rho;
  s.is_member.assign(z.size(), 0);
  double kept = 0.0, total = 0.0;
  for (std::size_t a = 0; a < z.size(); ++a) {
    const double w = std::exp(z[a] - zmax);
    total += w;
    if (z[a] >= threshold) {
      s.members.push_back(a);
      s.is_member[a] = 1;
      kept += w;
    }
  }
  s.retained_mass = kept / total;
  return s;
}

inline SafeSet minp_safe_set(const LogitVector& z, double rho) {
  return minp_safe_set(z.values(), rho);
}

/// Members keep their logit; everything else is set to `mask_value`.
inline LogitVector mask_logits(const LogitVector& z, const SafeSet& s,
                               double mask_value = kMaskValue) {
  if (s.is_member.size() != z.size()) throw std::invalid_argument("mask_logits: size mismatch");
  std::vector<double> out(z.begin(), z.end());
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (!s.contains(k)) out[k] = mask_value;
  }
  return LogitVector(std::move(out));
}

/// softmax(z)_a / Z on members, exactly 0 elsewhere. Normalized over the
/// members directly rather than through the masked-logit surrogate.
inline std::vector<double> constrained_probs(std::span<const double> z, const SafeSet& s) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t a : s.members) m = std::max(m, z[a]);
  double total = 0.0;
  std::vector<double> p(z.size(), 0.0);
  for (std::size_t a : s.members) total += (p[a] = std::exp(z[a] - m));
  for (std::size_t a : s.members) p[a] /= total;
  return p;
}

inline ProbVector constrained_policy(const LogitVector& z, double rho) {
  return ProbVector(constrained_probs(z.values(), minp_safe_set(z, rho)));
}

/// log of the constrained probability of `a`; -inf outside the safe set.
inline double constrained_log_prob(std::span<const double> z, const SafeSet& s, std::size_t a) {
  if (!s.contains(a)) return -std::numeric_limits<double>::infinity();
  std::size_t top = s.members.front();
  for (std::size_t k : s.members) top = z[k] > z[top] ? k : top;
  double rest = 0.0;
  for (std::size_t k : s.members) rest += k == top ? 0.0 : std::exp(z[k] - z[top]);
  return (z[a] - z[top]) - std::log1p(rest);
}

/// constrained_log_prob for every token at once.
inline std::vector<double> constrained_log_probs(std::span<const double> z, const SafeSet& s) {
  std::vector<double> out(z.size(), -std::numeric_limits<double>::infinity());
  if (s.members.empty()) return out;
  std::size_t top = s.members.front();
  for (std::size_t k : s.members) top = z[k] > z[top] ? k : top;
  double rest = 0.0;
  for (std::size_t k : s.members) rest += k == top ? 0.0 : std::exp(z[k] - z[top]);
  const double shifted = std::log1p(rest);
  for (std::size_t k : s.members) out[k] = (z[k] - z[top]) - shifted;
  return out;
}

enum class SupportClass { in_support, zero_weight, bias_leak };

inline std::string_view to_string(SupportClass c) {
  switch (c) {
    case SupportClass::in_support: return "in_support";
    case SupportClass::zero_weight: return "zero_weight";
    case SupportClass::bias_leak: return "bias_leak";
  }
  return "?";
}

/// Classifies a trajectory by its per-step safe-set flags:
///  - zero_weight: some token lies outside the training safe set, so the
///    constrained training probability (and the estimator weight) is 0;
///  - bias_leak: every token is training-safe but some token lies outside
///    the inference safe set, an event min-p sampling never produces;
///  - in_support otherwise.
/// `rho` is accepted for interface symmetry; the flags were computed with
/// the rho the trajectory was generated under.
inline SupportClass support_classify(const Trajectory& traj, double rho = kDefaultRho) {
  require_rho(rho);
  bool leak = false;
  for (const StepRecord& s : traj.steps) {
    if (!s.safe_train) return SupportClass::zero_weight;
    if (!s.safe_infer) leak = true;
  }
  return leak ? SupportClass::bias_leak : SupportClass::in_support;
}

}  // namespace dvp
