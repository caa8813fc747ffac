#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace dvp {

/// Per-step bookkeeping for one generated token. Log-probabilities of the
/// constrained views are -inf when the token is outside that view's safe set.
struct StepRecord {
  std::size_t row = 0;
  std::size_t token = 0;
  double logp_train = 0.0;
  double logp_infer = 0.0;
  double logp_train_mp = 0.0;
  double logp_infer_mp = 0.0;
  bool safe_train = true;
  bool safe_infer = true;

  double delta() const { return logp_train - logp_infer; }
};

struct Trajectory {
  std::size_t prompt = 0;
  std::vector<std::size_t> tokens;
  std::vector<StepRecord> steps;
  int reward = 0;
  /// Sequence mismatch: sum of per-step (logp_train - logp_infer).
  double delta_y = 0.0;

  std::size_t length() const { return tokens.size(); }
};

}  // namespace dvp
