#pragma once

// Experiment configuration: a JSON key tree merged over built-in defaults.
// Unknown keys are rejected so that typos do not silently fall back to a
// default.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <nlohmann/json.hpp>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dvplab/estimators.hpp"
#include "dvplab/generation.hpp"
#include "dvplab/perturbation.hpp"

namespace dvp::harness {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PolicyInit {
  /// Stream for the initial logit table; defaults to the master seed.
  std::optional<std::uint64_t> seed;
  double scale = 1.0;
  /// Added to one uniformly chosen token per row.
  double peak = 0.0;
  /// Added to a second, distinct token in a fork_rate fraction of rows.
  double fork = 0.0;
  double fork_rate = 0.0;
};

struct ExperimentConfig {
  TaskSpec task;
  PolicyInit policy;
  PerturbationModel perturbation = PerturbationModel::gaussian(0.1);
  NoiseRealization realization = NoiseRealization::fixed_per_row;
  EstimatorConfig estimator = EstimatorConfig::dvp();
  /// Min-p threshold: the dvp estimator's rho, and the threshold for J_mp
  /// and the recorded safe-set flags under every estimator.
  double rho = kDefaultRho;
  double learning_rate = 0.5;
  std::size_t iterations = 100;
  /// Groups of estimator.group_size trajectories sampled per prompt per iteration.
  std::size_t groups_per_prompt = 1;
  /// Wall-clock column is 0 unless set, so that metrics files are reproducible.
  bool record_timing = false;
  std::string output_path = "metrics.csv";
  std::string format = "csv";
  std::uint64_t seed = 0;
  unsigned workers = 1;

  std::uint64_t init_seed() const { return policy.seed.value_or(seed); }

  void validate() const {
    try {
      require_rho(rho);
      task.validate();
      perturbation.validate();
      estimator.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (!std::isfinite(learning_rate) || learning_rate < 0.0) {
      throw ConfigError("train.learning_rate must be finite and >= 0");
    }
    if (groups_per_prompt == 0) throw ConfigError("train.groups_per_prompt must be positive");
    if (!std::isfinite(policy.scale) || policy.scale < 0.0 || !std::isfinite(policy.peak) ||
        !std::isfinite(policy.fork)) {
      throw ConfigError("policy.init_scale / init_peak / init_fork must be finite, scale >= 0");
    }
    if (!(policy.fork_rate >= 0.0 && policy.fork_rate <= 1.0)) {
      throw ConfigError("policy.init_fork_rate must lie in [0, 1]");
    }
    if (policy.fork_rate > 0.0 && task.vocab_size < 2) {
      throw ConfigError("policy.init_fork_rate needs vocab_size >= 2");
    }
    if (format != "csv" && format != "jsonl") throw ConfigError("output.format must be csv or jsonl");
    if (workers == 0) throw ConfigError("workers must be positive");
  }
};

inline ExperimentConfig default_config() {
  ExperimentConfig c;
  c.task.reward_kind = RewardKind::parity;
  c.task.vocab_size = 8;
  c.task.horizon = 4;
  c.task.num_prompts = 2;
  c.task.context_order = 1;
  c.task.parity_bits = {0, 1};
  return c;
}

namespace detail {

using nlohmann::json;

inline void only_keys(const json& j, const char* where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) throw ConfigError("unknown key " + std::string(where) + "." + it.key());
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for ") + key + ": " + e.what());
  }
}

inline double read_real(const json& j, const char* key) {
  double v = 0.0;
  read(j, key, v);
  return v;
}

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  json task = {{"reward", std::string(to_string(c.task.reward_kind))},
               {"vocab_size", c.task.vocab_size},
               {"horizon", c.task.horizon},
               {"num_prompts", c.task.num_prompts},
               {"context_order", c.task.context_order},
               {"parity_bits", c.task.parity_bits},
               {"targets", c.task.targets},
               {"terminal_token", c.task.terminal_token ? json(*c.task.terminal_token) : json(nullptr)}};
  json policy = {{"init_seed", c.policy.seed ? json(*c.policy.seed) : json(nullptr)},
                 {"init_scale", c.policy.scale},
                 {"init_peak", c.policy.peak},
                 {"init_fork", c.policy.fork},
                 {"init_fork_rate", c.policy.fork_rate}};
  json pert = {{"kind", std::string(to_string(c.perturbation.kind))},
               {"realization", std::string(to_string(c.realization))}};
  if (c.perturbation.kind == PerturbationKind::gaussian) {
    pert["sigma"] = c.perturbation.sigma;
  } else {
    pert["eps_max"] = c.perturbation.eps_max;
  }
  json est = {{"kind", std::string(to_string(c.estimator.kind))},
              {"group_size", c.estimator.group_size},
              {"baseline", c.estimator.baseline == Baseline::rloo ? "rloo" : "none"},
              {"clip", c.estimator.clip ? json(*c.estimator.clip) : json(nullptr)},
              {"rho", c.rho}};
  json train = {{"learning_rate", c.learning_rate},
                {"iterations", c.iterations},
                {"groups_per_prompt", c.groups_per_prompt},
                {"record_timing", c.record_timing}};
  json output = {{"path", c.output_path}, {"format", c.format}};
  return json{{"task", task},     {"policy", policy}, {"perturbation", pert},
              {"estimator", est}, {"train", train},   {"output", output},
              {"seed", c.seed},   {"workers", c.workers}};
}

/// Reads `j` over `base` (default_config() unless given). Missing keys keep
/// their base values. A clip given for naive or dvp is ignored; tis and mis
/// fall back to their default clips.
inline ExperimentConfig config_from_json(const nlohmann::json& j,
                                         ExperimentConfig base = default_config()) {
  using detail::read;
  ExperimentConfig c = std::move(base);
  detail::only_keys(j, "config",
                    {"task", "policy", "perturbation", "estimator", "train", "output", "seed", "workers",
                     "sweep"});
  try {
    if (j.contains("task")) {
      const auto& t = j.at("task");
      detail::only_keys(t, "task",
                        {"reward", "vocab_size", "horizon", "num_prompts", "context_order", "parity_bits",
                         "targets", "terminal_token"});
      if (t.contains("reward")) c.task.reward_kind = parse_reward_kind(t.at("reward").get<std::string>());
      read(t, "vocab_size", c.task.vocab_size);
      read(t, "horizon", c.task.horizon);
      read(t, "num_prompts", c.task.num_prompts);
      read(t, "context_order", c.task.context_order);
      read(t, "parity_bits", c.task.parity_bits);
      read(t, "targets", c.task.targets);
      if (t.contains("terminal_token")) {
        c.task.terminal_token.reset();
        if (!t.at("terminal_token").is_null()) c.task.terminal_token = t.at("terminal_token").get<std::size_t>();
      }
      if (c.task.reward_kind == RewardKind::parity) c.task.targets.clear();
      else c.task.parity_bits.clear();
    }
    if (j.contains("policy")) {
      const auto& p = j.at("policy");
      detail::only_keys(p, "policy", {"init_seed", "init_scale", "init_peak", "init_fork", "init_fork_rate"});
      if (p.contains("init_seed")) {
        c.policy.seed.reset();
        if (!p.at("init_seed").is_null()) c.policy.seed = p.at("init_seed").get<std::uint64_t>();
      }
      read(p, "init_scale", c.policy.scale);
      read(p, "init_peak", c.policy.peak);
      read(p, "init_fork", c.policy.fork);
      read(p, "init_fork_rate", c.policy.fork_rate);
    }
    if (j.contains("perturbation")) {
      const auto& p = j.at("perturbation");
      detail::only_keys(p, "perturbation", {"kind", "sigma", "eps_max", "realization"});
      PerturbationKind kind = c.perturbation.kind;
      if (p.contains("kind")) kind = parse_perturbation_kind(p.at("kind").get<std::string>());
      if (kind == PerturbationKind::gaussian) {
        if (p.contains("eps_max") && !p.at("eps_max").is_null()) {
          throw ConfigError("perturbation.eps_max given for a gaussian model");
        }
        const double sigma = p.contains("sigma") ? detail::read_real(p, "sigma") : c.perturbation.scale();
        c.perturbation = PerturbationModel::gaussian(sigma);
      } else {
        if (p.contains("sigma") && !p.at("sigma").is_null()) {
          throw ConfigError("perturbation.sigma given for a bounded_uniform model");
        }
        const double e = p.contains("eps_max") ? detail::read_real(p, "eps_max") : c.perturbation.scale();
        c.perturbation = PerturbationModel::bounded_uniform(e);
      }
      if (p.contains("realization")) {
        c.realization = parse_noise_realization(p.at("realization").get<std::string>());
      }
    }
    if (j.contains("estimator")) {
      const auto& e = j.at("estimator");
      detail::only_keys(e, "estimator", {"kind", "clip", "rho", "group_size", "baseline"});
      EstimatorConfig& est = c.estimator;
      if (e.contains("kind")) est.kind = parse_estimator_kind(e.at("kind").get<std::string>());
      std::optional<double> clip;
      if (e.contains("clip") && !e.at("clip").is_null()) clip = e.at("clip").get<double>();
      const bool tis = est.kind == EstimatorKind::tis, mis = est.kind == EstimatorKind::mis;
      if ((tis || mis) && !clip) clip = est.clip.value_or(tis ? kDefaultTisClip : kDefaultMisClip);
      est.clip = (tis || mis) ? clip : std::nullopt;
      read(e, "rho", c.rho);
      read(e, "group_size", est.group_size);
      if (e.contains("baseline")) {
        const std::string b = e.at("baseline").get<std::string>();
        if (b == "rloo") est.baseline = Baseline::rloo;
        else if (b == "none") est.baseline = Baseline::none;
        else throw ConfigError("estimator.baseline must be rloo or none");
      }
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      detail::only_keys(t, "train", {"learning_rate", "iterations", "groups_per_prompt", "record_timing"});
      read(t, "learning_rate", c.learning_rate);
      read(t, "iterations", c.iterations);
      read(t, "groups_per_prompt", c.groups_per_prompt);
      read(t, "record_timing", c.record_timing);
    }
    c.estimator.rho = c.estimator.kind == EstimatorKind::dvp ? std::optional<double>(c.rho) : std::nullopt;
    if (j.contains("output")) {
      const auto& o = j.at("output");
      detail::only_keys(o, "output", {"path", "format"});
      read(o, "path", c.output_path);
      read(o, "format", c.format);
    }
    read(j, "seed", c.seed);
    read(j, "workers", c.workers);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  return config_from_json(read_json_file(path));
}

}  // namespace dvp::harness
