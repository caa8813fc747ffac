#pragma once

// Random small problem instances for certification runs.

#include <cstddef>
#include <cstdint>

#include "dvplab/generation.hpp"
#include "dvplab/perturbation.hpp"
#include "dvplab/rng.hpp"

namespace dvp {

struct Instance {
  TaskSpec task;
  PolicyPair pair;
};

struct InstanceOptions {
  std::size_t min_vocab = 2;
  std::size_t max_vocab = 4;
  std::size_t min_horizon = 1;
  std::size_t max_horizon = 3;
  std::size_t max_prompts = 2;
  std::size_t max_order = 2;
  double logit_scale = 1.5;
  PerturbationModel model = PerturbationModel::gaussian(0.3);
};

inline std::size_t uniform_int(RngStream& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

/// Random task, logit table, and one realized (fixed_per_row) noise table.
inline Instance random_instance(RngStream& rng, const InstanceOptions& opt = {}) {
  Instance inst;
  TaskSpec& task = inst.task;
  task.vocab_size = uniform_int(rng, opt.min_vocab, opt.max_vocab);
  task.horizon = uniform_int(rng, opt.min_horizon, opt.max_horizon);
  task.num_prompts = uniform_int(rng, 1, opt.max_prompts);
  task.context_order = uniform_int(rng, 0, opt.max_order);
  task.reward_kind = rng.below(2) == 0 ? RewardKind::parity : RewardKind::target_match;
  for (std::size_t p = 0; p < task.num_prompts; ++p) {
    task.parity_bits.push_back(static_cast<int>(rng.below(2)));
    std::vector<std::size_t> target(task.horizon);
    for (auto& t : target) t = static_cast<std::size_t>(rng.below(task.vocab_size));
    task.targets.push_back(std::move(target));
  }
  if (task.reward_kind == RewardKind::parity) {
    task.targets.clear();
  } else {
    task.parity_bits.clear();
  }
  task.validate();
  inst.pair = PolicyPair(TabularPolicy::random(task.context_map(), opt.logit_scale, rng.derive(1)),
                         opt.model);
  RngStream noise_rng = rng.derive(2);
  inst.pair.realize(noise_rng);
  rng = rng.derive(3);
  return inst;
}

}  // namespace dvp
