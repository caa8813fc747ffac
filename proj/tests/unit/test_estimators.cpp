#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "dvplab/estimators.hpp"
#include "dvplab/instances.hpp"

namespace {

using namespace dvp;

TaskSpec parity_task(std::size_t V, std::size_t T, std::size_t order, int bit = 0) {
  TaskSpec t;
  t.reward_kind = RewardKind::parity;
  t.vocab_size = V;
  t.horizon = T;
  t.context_order = order;
  t.parity_bits = {bit};
  t.validate();
  return t;
}

PolicyPair make_pair(const TaskSpec& task, double scale, double sigma, std::uint64_t seed) {
  PolicyPair pair(TabularPolicy::random(task.context_map(), scale, RngStream(seed, 0)),
                  PerturbationModel::gaussian(sigma));
  RngStream noise(seed, 1);
  pair.realize(noise);
  return pair;
}

std::vector<Trajectory> sample(const PolicyPair& pair, const TaskSpec& task, std::size_t n,
                               const Sampler& sampler, std::uint64_t seed) {
  RngStream rng(seed, 7);
  std::vector<Trajectory> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(rollout(pair, task, i % task.num_prompts, sampler, rng));
  return out;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_abs(const std::vector<double>& a) {
  double m = 0.0;
  for (double x : a) m = std::max(m, std::abs(x));
  return m;
}

// Dense per-trajectory contribution, used for standard errors.
std::vector<double> dense(const detail::Contribution& c, std::size_t V, std::size_t P) {
  std::vector<double> g(P, 0.0);
  for (std::size_t s = 0; s < c.rows.size(); ++s) {
    for (std::size_t k = 0; k < V; ++k) g[c.rows[s] * V + k] += c.values[s * V + k];
  }
  return g;
}

struct MeanAndError {
  std::vector<double> mean, se;
};

// Mean and standard error over independent units (trajectories or groups).
MeanAndError summarize(const std::vector<std::vector<double>>& units) {
  const std::size_t P = units.front().size();
  const double n = static_cast<double>(units.size());
  MeanAndError r{std::vector<double>(P, 0.0), std::vector<double>(P, 0.0)};
  for (const auto& u : units) {
    for (std::size_t i = 0; i < P; ++i) r.mean[i] += u[i] / n;
  }
  for (const auto& u : units) {
    for (std::size_t i = 0; i < P; ++i) r.se[i] += (u[i] - r.mean[i]) * (u[i] - r.mean[i]);
  }
  for (double& s : r.se) s = std::sqrt(s / (n - 1) / n);
  return r;
}

void expect_within_three_se(const MeanAndError& mc, const std::vector<double>& exact) {
  for (std::size_t i = 0; i < exact.size(); ++i) {
    EXPECT_LE(std::abs(mc.mean[i] - exact[i]), 3 * mc.se[i] + 1e-12)
        << "coordinate " << i << " exact " << exact[i] << " mean " << mc.mean[i] << " se " << mc.se[i];
  }
}

TEST(ExactObjective, Examples) {
  TaskSpec tm;
  tm.reward_kind = RewardKind::target_match;
  tm.vocab_size = 2;
  tm.horizon = 2;
  tm.targets = {{1, 0}};
  tm.validate();
  const PolicyPair uni(TabularPolicy::uniform(tm.context_map()), PerturbationModel::gaussian(0.0));
  EXPECT_NEAR(exact_objective(uni, tm), 0.25, 1e-16);

  // Complementary parity tasks: their rewards sum to 1 on every sequence.
  const TaskSpec even = parity_task(3, 3, 1, 0), odd = parity_task(3, 3, 1, 1);
  const PolicyPair pair = make_pair(even, 1.5, 0.2, 3);
  for (PolicyView v : {PolicyView::train, PolicyView::train_mp}) {
    const double rho = 0.05;
    EXPECT_NEAR(exact_objective(pair, even, v, rho) + exact_objective(pair, odd, v, rho), 1.0, 1e-14);
    const auto ge = exact_gradient(pair, even, v, rho);
    const auto go = exact_gradient(pair, odd, v, rho);
    for (std::size_t i = 0; i < ge.size(); ++i) EXPECT_NEAR(ge[i] + go[i], 0.0, 1e-14);
  }
}

TEST(ExactObjective, CapExceeded) {
  const TaskSpec big = parity_task(4, 11, 0);
  const PolicyPair pair(TabularPolicy::uniform(big.context_map()), PerturbationModel::gaussian(0.0));
  EXPECT_THROW(exact_objective(pair, big), EnumerationCapError);
  EXPECT_THROW(exact_gradient(pair, big), EnumerationCapError);
}

TEST(ForwardObjective, MatchesEnumeration) {
  RngStream rng(39, 0);
  for (int trial = 0; trial < 100; ++trial) {
    Instance inst = random_instance(rng);
    if (trial % 3 == 0) {
      inst.task.terminal_token = rng.below(inst.task.vocab_size);
      if (inst.task.reward_kind == RewardKind::target_match) {
        for (auto& t : inst.task.targets) t.resize(1 + rng.below(t.size()));
      }
    }
    const double rho = std::exp(-rng.uniform(0.5, 4.0));
    for (PolicyView v : {PolicyView::train, PolicyView::infer, PolicyView::train_mp, PolicyView::infer_mp}) {
      ASSERT_NEAR(forward_objective(inst.pair, inst.task, v, rho),
                  exact_objective(inst.pair, inst.task, v, rho), 1e-13);
    }
  }
}

TEST(ForwardObjective, CoversLongHorizons) {
  const TaskSpec task = parity_task(4, 200, 2, 1);
  const PolicyPair uni(TabularPolicy::uniform(task.context_map()), PerturbationModel::gaussian(0.0));
  EXPECT_NEAR(forward_objective(uni, task), 0.5, 1e-14);
}

TEST(ExactGradient, MatchesFiniteDifferences) {
  RngStream rng(40, 0);
  for (int trial = 0; trial < 20; ++trial) {
    Instance inst = random_instance(rng);
    const double rho = 0.02;
    for (PolicyView v : {PolicyView::train, PolicyView::train_mp}) {
      const auto analytic = exact_gradient(inst.pair, inst.task, v, rho);
      const std::vector<double> theta(inst.pair.base.theta().begin(), inst.pair.base.theta().end());
      PolicyPair probe = inst.pair;
      const auto numeric = finite_diff_gradient(
          [&](std::span<const double> x) {
            std::copy(x.begin(), x.end(), probe.base.theta_mut().begin());
            return exact_objective(probe, inst.task, v, rho);
          },
          theta);
      // Constrained view: skip if a step of h would move a safe-set boundary.
      bool stable = true;
      if (v == PolicyView::train_mp) {
        for (std::size_t c = 0; c < inst.pair.base.num_rows() && stable; ++c) {
          const auto z = inst.pair.base.row_logits(c);
          const double thr = *std::max_element(z.begin(), z.end()) + std::log(rho);
          for (double x : z) stable = stable && std::abs(x - thr) > 1e-3;
        }
      }
      if (!stable) continue;
      for (std::size_t i = 0; i < theta.size(); ++i) ASSERT_NEAR(analytic[i], numeric[i], 1e-6);
    }
  }
}

TEST(ExactGradient, TreeRecursionMatchesPathSum) {
  RngStream rng(41, 0);
  for (int trial = 0; trial < 30; ++trial) {
    Instance inst = random_instance(rng);
    const auto tree = exact_gradient(inst.pair, inst.task, PolicyView::train);
    const auto paths = ideal_gradient(inst.pair, inst.task);
    ASSERT_LE(max_abs_diff(tree, paths), 1e-13);
  }
}

TEST(ExactGradient, SaturatedGreedyPathHasVanishingGradient) {
  const std::size_t V = 3, T = 3;
  TaskSpec task;
  task.reward_kind = RewardKind::target_match;
  task.vocab_size = V;
  task.horizon = T;
  task.context_order = 1;
  std::vector<double> theta(task.context_map().num_rows() * V, 0.0);
  for (std::size_t r = 0; r < task.context_map().num_rows(); ++r) theta[r * V + r % V] = 40.0;
  const PolicyPair pair(TabularPolicy(task.context_map(), theta), PerturbationModel::gaussian(0.0));
  std::vector<std::size_t> greedy;
  for (std::size_t t = 0; t < T; ++t) greedy.push_back(task.context_map().row(0, greedy) % V);
  task.targets = {greedy};
  task.validate();
  EXPECT_NEAR(exact_objective(pair, task), 1.0, 1e-15);
  EXPECT_LT(max_abs(exact_gradient(pair, task)), 1e-15);
}

TEST(BiasIdentity, DirectMatchesFormulaOnRandomInstances) {
  RngStream rng(42, 0);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    Instance inst = random_instance(rng);
    worst = std::max(worst, max_abs_diff(bias_direct(inst.pair, inst.task),
                                         bias_formula(inst.pair, inst.task)));
  }
  EXPECT_LE(worst, 1e-10);
}

TEST(BiasIdentity, FlippedSignIsDetected) {
  RngStream rng(43, 0);
  InstanceOptions opt;
  opt.min_horizon = 2;
  Instance inst = random_instance(rng, opt);
  const auto wrong = detail::bias_formula_impl(inst.pair, inst.task, -1.0);
  EXPECT_GT(max_abs_diff(bias_direct(inst.pair, inst.task), wrong), 1e-6);
}

TEST(BiasIdentity, ZeroCases) {
  RngStream rng(44, 0);
  InstanceOptions opt;
  opt.model = PerturbationModel::gaussian(0.0);
  Instance inst = random_instance(rng, opt);
  EXPECT_EQ(max_abs(bias_direct(inst.pair, inst.task)), 0.0);
  EXPECT_EQ(max_abs(bias_formula(inst.pair, inst.task)), 0.0);
}

TEST(BiasIdentity, NegatedPerturbationDoesNotCancel) {
  const TaskSpec task = parity_task(3, 2, 1);
  PolicyPair pair = make_pair(task, 1.0, 0.3, 45);
  const auto b_plus = bias_direct(pair, task);
  std::vector<double> neg = pair.noise;
  for (double& e : neg) e = -e;
  pair.set_noise(neg);
  const auto b_minus = bias_direct(pair, task);
  EXPECT_GT(max_abs(b_minus), 1e-4);
  std::vector<double> sum(b_plus.size());
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = b_plus[i] + b_minus[i];
  EXPECT_GT(max_abs(sum), 1e-6);
}

TEST(Rloo, Examples) {
  const std::vector<double> same{1, 1, 1, 1};
  for (double a : rloo_advantages(same)) EXPECT_EQ(a, 0.0);
  const std::vector<double> two{1, 0};
  EXPECT_EQ(rloo_advantages(two), (std::vector<double>{1.0, -1.0}));
  const std::vector<double> r{1, 0, 0, 1, 1};
  double s = 0.0;
  for (double a : rloo_advantages(r)) s += a;
  EXPECT_NEAR(s, 0.0, 1e-15);
  const std::vector<double> one{1};
  EXPECT_THROW(rloo_advantages(one), std::invalid_argument);
}

TEST(EstimatorConfig, ParametersPresentIffRequired) {
  EXPECT_NO_THROW(EstimatorConfig::naive().validate());
  EXPECT_NO_THROW(EstimatorConfig::dvp().validate());
  EstimatorConfig c = EstimatorConfig::tis();
  c.rho = 0.1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = EstimatorConfig::mis(1.0);
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = EstimatorConfig::naive(1);
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_EQ(parse_estimator_kind("mis"), EstimatorKind::mis);
  EXPECT_THROW(parse_estimator_kind("ppo"), std::invalid_argument);
}

TEST(NaiveEstimate, ZeroRewardsAndSingleRewardedTrajectory) {
  const TaskSpec task = parity_task(3, 2, 1);
  const PolicyPair pair = make_pair(task, 1.0, 0.2, 50);
  std::vector<Trajectory> batch = sample(pair, task, 8, Sampler::raw(), 51);
  for (auto& t : batch) t.reward = 0;
  EXPECT_EQ(max_abs(naive_estimate(batch, pair, 8).vector), 0.0);

  batch[3].reward = 1;
  const auto g = naive_estimate(batch, pair, 8, Baseline::none).vector;
  const RowTables tables(pair, kDefaultRho);
  std::vector<double> score(g.size(), 0.0);
  detail::add_score(score, batch[3], tables, PolicyView::train, 1.0 / 8.0);
  EXPECT_LE(max_abs_diff(g, score), 1e-15);
}

TEST(TisEstimate, Contracts) {
  const TaskSpec task = parity_task(4, 3, 1);
  const PolicyPair exact_pair = make_pair(task, 1.0, 0.0, 52);
  const auto clean = sample(exact_pair, task, 32, Sampler::raw(), 53);
  EXPECT_EQ(tis_estimate(clean, exact_pair, 2.0, 16).vector, naive_estimate(clean, exact_pair, 16).vector);

  const PolicyPair noisy = make_pair(task, 1.0, 1.0, 54);
  const auto batch = sample(noisy, task, 64, Sampler::raw(), 55);
  const GradientEstimate e = tis_estimate(batch, noisy, 1.5, 16);
  EXPECT_LE(e.diagnostics.max_is_ratio, 1.5);

  // With every ratio >= 1 and C just above 1, each weight is C.
  std::vector<Trajectory> up = batch;
  for (auto& t : up) {
    for (auto& s : t.steps) s.logp_infer = s.logp_train - std::abs(s.delta());
  }
  const double c = 1.0 + 1e-12;
  EXPECT_LE(max_abs_diff(tis_estimate(up, noisy, c, 16).vector, naive_estimate(up, noisy, 16).vector),
            1e-12);
}

TEST(MisEstimate, Contracts) {
  const TaskSpec task = parity_task(4, 3, 1);
  const PolicyPair exact_pair = make_pair(task, 1.0, 0.0, 56);
  const auto clean = sample(exact_pair, task, 32, Sampler::raw(), 57);
  EXPECT_EQ(mis_estimate(clean, exact_pair, 5.0, 16).vector, naive_estimate(clean, exact_pair, 16).vector);

  const PolicyPair noisy = make_pair(task, 1.0, 1.0, 58);
  auto batch = sample(noisy, task, 64, Sampler::raw(), 59);
  const GradientEstimate e = mis_estimate(batch, noisy, 1.2, 16);
  std::size_t out_of_band = 0, tokens = 0;
  for (const auto& t : batch) {
    for (const auto& s : t.steps) {
      const double r = std::exp(s.delta());
      out_of_band += (r < 1 / 1.2 || r > 1.2) ? 1 : 0;
      ++tokens;
    }
  }
  EXPECT_GT(out_of_band, 0u);
  EXPECT_DOUBLE_EQ(e.diagnostics.dropped_token_fraction,
                   static_cast<double>(out_of_band) / static_cast<double>(tokens));

  for (auto& t : batch) {
    for (auto& s : t.steps) s.logp_infer = s.logp_train - 3.0;
  }
  const GradientEstimate dropped = mis_estimate(batch, noisy, 5.0, 16);
  EXPECT_EQ(max_abs(dropped.vector), 0.0);
  EXPECT_EQ(dropped.diagnostics.dropped_token_fraction, 1.0);
}

TEST(DvpEstimate, ZeroWeightTrajectoryContributesNothing) {
  const TaskSpec task = parity_task(3, 1, 0);
  const double rho = kDefaultRho, thr = std::log(rho);
  std::vector<double> theta{0.0, thr - 1e-4, -40.0};
  PolicyPair pair(TabularPolicy(task.context_map(), theta), PerturbationModel::gaussian(0.1));
  pair.set_noise({0.0, 2e-4, 0.0});
  Trajectory t;
  t.tokens = {1};
  t.steps = {detail::make_step(pair.base.row_logits(0), pair.infer_row_logits(0), 0, 1, rho)};
  finalize(t, task);
  ASSERT_EQ(support_classify(t, rho), SupportClass::zero_weight);
  const auto c = detail::contribution(t, pair, EstimatorConfig::dvp(rho), 1.0);
  EXPECT_TRUE(c.rows.empty());
  EXPECT_TRUE(c.zero_weight);

  const std::vector<Trajectory> batch{t, t};
  const GradientEstimate e = dvp_estimate(batch, pair, rho, 2, Baseline::none);
  EXPECT_EQ(max_abs(e.vector), 0.0);
  EXPECT_EQ(e.diagnostics.zero_weight_fraction, 1.0);
}

TEST(DvpEstimate, RejectsRawSampledTailTokens) {
  const TaskSpec task = parity_task(3, 1, 0);
  PolicyPair pair(TabularPolicy(task.context_map(), {0.0, -1.0, -40.0}), PerturbationModel::gaussian(0.1));
  Trajectory t;
  t.tokens = {2};
  t.steps = {detail::make_step(pair.base.row_logits(0), pair.infer_row_logits(0), 0, 2, 0.5)};
  t.steps[0].safe_train = true;  // inconsistent record: only the inference flag is off
  finalize(t, task);
  EXPECT_THROW(detail::contribution(t, pair, EstimatorConfig::dvp(0.5), 1.0), std::invalid_argument);
}

TEST(Estimators, DegenerateToNaiveWithoutPerturbationOrPruning) {
  RngStream rng(60, 0);
  const double rho = std::exp(-700.0);
  for (int trial = 0; trial < 10; ++trial) {
    InstanceOptions opt;
    opt.model = PerturbationModel::gaussian(0.0);
    Instance inst = random_instance(rng, opt);
    const auto batch = sample(inst.pair, inst.task, 64, Sampler::raw(rho), 61 + trial);
    const auto naive = naive_estimate(batch, inst.pair, 16).vector;
    EXPECT_LE(max_abs_diff(naive, tis_estimate(batch, inst.pair, 2.0, 16).vector), 1e-12);
    EXPECT_LE(max_abs_diff(naive, mis_estimate(batch, inst.pair, 5.0, 16).vector), 1e-12);
    EXPECT_LE(max_abs_diff(naive, dvp_estimate(batch, inst.pair, rho, 16).vector), 1e-12);
  }
}

TEST(Estimators, ResultIndependentOfWorkerCount) {
  const TaskSpec task = parity_task(4, 4, 1);
  const PolicyPair pair = make_pair(task, 1.0, 0.3, 62);
  const auto batch = sample(pair, task, 256, Sampler::minp(0.01), 63);
  for (EstimatorConfig cfg : {EstimatorConfig::naive(), EstimatorConfig::tis(), EstimatorConfig::mis(),
                              EstimatorConfig::dvp(0.01)}) {
    const auto one = estimate(cfg, batch, pair, 0, 1);
    const auto four = estimate(cfg, batch, pair, 0, 4);
    EXPECT_EQ(one.vector, four.vector);
    EXPECT_EQ(one.diagnostics.max_is_ratio, four.diagnostics.max_is_ratio);
  }
}

TEST(Estimators, DiagnosticsMatchBatch) {
  const TaskSpec task = parity_task(4, 3, 1);
  const PolicyPair pair = make_pair(task, 1.0, 0.3, 64);
  const auto batch = sample(pair, task, 32, Sampler::raw(0.05), 65);
  double abs_delta = 0.0, max_ratio = 0.0;
  std::size_t zero_weight = 0;
  for (const auto& t : batch) {
    abs_delta += std::abs(t.delta_y);
    max_ratio = std::max(max_ratio, std::exp(std::abs(t.delta_y)));
    zero_weight += support_classify(t) == SupportClass::zero_weight;
  }
  const GradientEstimate e = naive_estimate(batch, pair, 16);
  EXPECT_EQ(e.n_samples, 32u);
  EXPECT_NEAR(e.diagnostics.mean_abs_delta, abs_delta / 32, 1e-15);
  EXPECT_NEAR(e.diagnostics.max_is_ratio, max_ratio, 1e-15);
  EXPECT_EQ(e.diagnostics.zero_weight_fraction, static_cast<double>(zero_weight) / 32);
  for (double x : e.vector) EXPECT_TRUE(std::isfinite(x));
}

TEST(NaiveEstimate, ConvergesToExactGradientWithoutPerturbation) {
  const TaskSpec task = parity_task(2, 3, 1);
  const PolicyPair pair = make_pair(task, 1.0, 0.0, 70);
  const std::size_t G = 16, N = 10000 - 10000 % G;
  const auto batch = sample(pair, task, N, Sampler::raw(), 71);
  const EstimatorConfig cfg = EstimatorConfig::naive(G);
  const auto adv = detail::advantages_for(batch, G, Baseline::rloo);
  // RLOO couples trajectories within a group; groups are independent.
  std::vector<std::vector<double>> groups;
  for (std::size_t g0 = 0; g0 < N; g0 += G) {
    std::vector<double> acc(pair.base.num_params(), 0.0);
    for (std::size_t i = g0; i < g0 + G; ++i) {
      const auto d = dense(detail::contribution(batch[i], pair, cfg, adv[i]), 2, acc.size());
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += d[k] / static_cast<double>(G);
    }
    groups.push_back(acc);
  }
  const MeanAndError mc = summarize(groups);
  EXPECT_LE(max_abs_diff(mc.mean, estimate(cfg, batch, pair).vector), 1e-12);
  expect_within_three_se(mc, exact_gradient(pair, task));
}

TEST(Estimators, ScoreFunctionHasZeroMean) {
  // Complementary parity rewards sum to 1, so the summed estimate is a pure
  // score-function average.
  const TaskSpec even = parity_task(3, 2, 1, 0), odd = parity_task(3, 2, 1, 1);
  const PolicyPair pair = make_pair(even, 1.0, 0.0, 72);
  const auto batch = sample(pair, even, 10000, Sampler::raw(), 73);
  std::vector<std::vector<double>> units;
  for (const Trajectory& t : batch) {
    Trajectory flipped = t;
    finalize(flipped, odd);
    ASSERT_EQ(t.reward + flipped.reward, 1);
    units.push_back(dense(detail::contribution(t, pair, EstimatorConfig::naive(), 1.0), 3,
                          pair.base.num_params()));
  }
  expect_within_three_se(summarize(units), std::vector<double>(pair.base.num_params(), 0.0));
}

TEST(DvpEstimate, UnbiasedForConstrainedGradient) {
  RngStream rng(74, 0);
  for (int trial = 0; trial < 3; ++trial) {
    InstanceOptions opt;
    opt.max_prompts = 1;
    opt.logit_scale = 3.0;
    opt.model = PerturbationModel::gaussian(0.5);
    Instance inst = random_instance(rng, opt);
    const double rho = 0.05;
    const auto batch = sample(inst.pair, inst.task, 10000, Sampler::minp(rho), 75 + trial);
    EstimatorConfig cfg = EstimatorConfig::dvp(rho);
    cfg.baseline = Baseline::none;
    std::vector<std::vector<double>> units;
    for (const Trajectory& t : batch) {
      units.push_back(dense(detail::contribution(t, inst.pair, cfg, t.reward),
                            inst.task.vocab_size, inst.pair.base.num_params()));
    }
    expect_within_three_se(summarize(units), exact_dvp_target(inst.pair, inst.task, rho));
  }
}

TEST(BiasBound, CertifiedOnRandomInstances) {
  RngStream rng(80, 0);
  for (int trial = 0; trial < 100; ++trial) {
    InstanceOptions opt;
    opt.logit_scale = 3.0;
    Instance inst = random_instance(rng, opt);
    const double rho = std::exp(-rng.uniform(0.1, 5.0));
    const double gap = std::abs(exact_objective(inst.pair, inst.task, PolicyView::train_mp, rho) -
                                exact_objective(inst.pair, inst.task, PolicyView::train, rho));
    ASSERT_LE(gap, objective_bias_bound(inst.pair, inst.task, rho) + 1e-12);
  }
}

TEST(BiasBound, FullRetentionGivesZero) {
  const TaskSpec task = parity_task(3, 3, 1);
  const PolicyPair pair = make_pair(task, 1.0, 0.0, 81);
  const double rho = std::exp(-60.0);
  EXPECT_EQ(objective_bias_bound(pair, task, rho), 0.0);
  EXPECT_NEAR(exact_objective(pair, task, PolicyView::train_mp, rho),
              exact_objective(pair, task, PolicyView::train, rho), 1e-15);
}

TEST(ContrastiveGradient, Examples) {
  const LogitVector z({0.4, -1.0, 2.0, 0.1});
  const auto full = contrastive_gradient(z, 1, 1e-9);
  const auto ref = log_softmax_gradient(z, 1);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(full[k], ref[k], 1e-15);
  for (double x : contrastive_gradient(z, 2, 1.0)) EXPECT_EQ(x, 0.0);
  EXPECT_THROW(contrastive_gradient(z, 1, 1.0), std::invalid_argument);
  EXPECT_THROW(contrastive_gradient(z, 9, 1.0), std::out_of_range);
}

}  // namespace
