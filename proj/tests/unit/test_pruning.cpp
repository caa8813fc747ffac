#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "dvplab/estimators.hpp"
#include "dvplab/pruning.hpp"

namespace {

using dvp::LogitVector;
using dvp::ProbVector;
using dvp::RngStream;
using dvp::SafeSet;

std::vector<std::size_t> members(const SafeSet& s) { return s.members; }

LogitVector random_logits(RngStream& rng, std::size_t V, double lo, double hi) {
  std::vector<double> z(V);
  for (double& x : z) x = rng.uniform(lo, hi);
  return LogitVector(z);
}

TEST(MinpSafeSet, RhoOneKeepsAllMaximalEntries) {
  const SafeSet s = dvp::minp_safe_set(LogitVector({1.0, 3.0, 3.0, -2.0}), 1.0);
  EXPECT_EQ(members(s), (std::vector<std::size_t>{1, 2}));
}

TEST(MinpSafeSet, UniformLogitsKeepEverything) {
  for (double rho : {1e-9, dvp::kDefaultRho, 0.5, 1.0}) {
    const SafeSet s = dvp::minp_safe_set(LogitVector({0.7, 0.7, 0.7}), rho);
    EXPECT_EQ(s.size(), 3u);
    EXPECT_DOUBLE_EQ(s.retained_mass, 1.0);
  }
}

TEST(MinpSafeSet, ThresholdArithmetic) {
  const SafeSet s = dvp::minp_safe_set(LogitVector({0.0, -5.0, -20.0}), std::exp(-13.0));
  EXPECT_EQ(members(s), (std::vector<std::size_t>{0, 1}));
  const double p0 = 1.0, p1 = std::exp(-5.0), p2 = std::exp(-20.0);
  EXPECT_NEAR(s.retained_mass, (p0 + p1) / (p0 + p1 + p2), 1e-15);
}

TEST(MinpSafeSet, TieAtThresholdIsIncluded) {
  const double rho = 0.5;
  const SafeSet s = dvp::minp_safe_set(LogitVector({0.0, std::log(rho), -1.0}), rho);
  EXPECT_TRUE(s.contains(1));
  EXPECT_FALSE(s.contains(2));
}

TEST(MinpSafeSet, RejectsBadRho) {
  const LogitVector z({0.0, 1.0});
  EXPECT_THROW(dvp::minp_safe_set(z, 0.0), std::invalid_argument);
  EXPECT_THROW(dvp::minp_safe_set(z, 1.5), std::invalid_argument);
}

TEST(MaskLogits, FullSafeSetIsIdentity) {
  const LogitVector z({0.1, 0.2, 0.3});
  EXPECT_EQ(dvp::mask_logits(z, dvp::minp_safe_set(z, 1e-3)), z);
}

TEST(MaskLogits, MaskedEntriesTakeTheMaskValue) {
  const LogitVector z({0.0, -1.0, -30.0});
  const LogitVector m = dvp::mask_logits(z, dvp::minp_safe_set(z, std::exp(-13.0)));
  EXPECT_EQ(m[0], 0.0);
  EXPECT_EQ(m[1], -1.0);
  EXPECT_EQ(m[2], dvp::kMaskValue);
  const ProbVector p = dvp::softmax(m);
  // Each masked probability is below e^{mask - z_max} = e^{-50}.
  EXPECT_LT(p[2], std::exp(-50.0));
  const ProbVector exact = dvp::constrained_policy(z, std::exp(-13.0));
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(p[k], exact[k], 3 * std::exp(-50.0));
}

TEST(ConstrainedPolicy, Examples) {
  const LogitVector z({0.2, -0.4, 1.1, 0.0});
  const ProbVector full = dvp::constrained_policy(z, 1e-12);
  const ProbVector sm = dvp::softmax(z);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(full[k], sm[k], 1e-15);

  const ProbVector hot = dvp::constrained_policy(z, 1.0);
  EXPECT_EQ(hot.vector(), (std::vector<double>{0.0, 0.0, 1.0, 0.0}));

  const ProbVector p = dvp::constrained_policy(LogitVector({0.0, -1.0, -30.0}), std::exp(-13.0));
  const double denom = 1.0 + std::exp(-1.0);
  EXPECT_NEAR(p[0], 1.0 / denom, 1e-16);
  EXPECT_NEAR(p[1], std::exp(-1.0) / denom, 1e-16);
  EXPECT_EQ(p[2], 0.0);
}

TEST(ConstrainedPolicy, TvToBasePolicyIsLostMass) {
  RngStream rng(31, 0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t V = 2 + rng.below(40);
    const LogitVector z = random_logits(rng, V, -15.0, 15.0);
    const double rho = std::exp(-rng.uniform(0.0, 20.0));
    const SafeSet s = dvp::minp_safe_set(z, rho);
    const double tv = dvp::tv_distance(dvp::constrained_policy(z, rho), dvp::softmax(z));
    ASSERT_NEAR(tv, 1.0 - s.retained_mass, 1e-12);
  }
}

TEST(PruningProperties, RenormalizationArgmaxAndMaskedCorrectness) {
  RngStream rng(32, 0);
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t V = 2 + rng.below(63);
    const LogitVector z = random_logits(rng, V, -20.0, 20.0);
    const double rho = rng.uniform(0.0, 1.0) < 0.5 ? dvp::kDefaultRho : std::exp(-rng.uniform(0.0, 15.0));
    const SafeSet s = dvp::minp_safe_set(z, rho);
    const auto argmax = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
    ASSERT_TRUE(s.contains(argmax));

    double z_sum = 0.0;
    const ProbVector base = dvp::softmax(z);
    for (std::size_t a : s.members) z_sum += base[a];
    ASSERT_NEAR(s.retained_mass, z_sum, 1e-12);

    const ProbVector exact = dvp::constrained_policy(z, rho);
    double total = 0.0;
    for (double x : exact) total += x;
    ASSERT_NEAR(total, 1.0, 1e-12);

    const ProbVector masked = dvp::softmax(dvp::mask_logits(z, s));
    for (std::size_t k = 0; k < V; ++k) ASSERT_NEAR(masked[k], exact[k], 1e-12);
  }
}

TEST(ConstrainedLogProbs, MatchesLogOfConstrainedPolicy) {
  RngStream rng(33, 0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t V = 2 + rng.below(31);
    const LogitVector z = random_logits(rng, V, -20.0, 20.0);
    const double rho = std::exp(-rng.uniform(0.0, 15.0));
    const SafeSet s = dvp::minp_safe_set(z, rho);
    const std::vector<double> lp = dvp::constrained_log_probs(z.values(), s);
    const ProbVector exact = dvp::constrained_policy(z, rho);
    for (std::size_t k = 0; k < V; ++k) {
      if (s.contains(k)) {
        ASSERT_NEAR(lp[k], std::log(exact[k]), 1e-12);
      } else {
        ASSERT_TRUE(std::isinf(lp[k]) && lp[k] < 0.0);
      }
    }
  }
}

TEST(PruningProperties, GradientOfMaskedLogSoftmaxWithFixedMembership) {
  RngStream rng(33, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t V = 2 + rng.below(20);
    const LogitVector z = random_logits(rng, V, -8.0, 8.0);
    const double rho = std::exp(-rng.uniform(1.0, 10.0));
    const SafeSet s = dvp::minp_safe_set(z, rho);
    const std::size_t a = s.members[rng.below(s.members.size())];
    const auto analytic = dvp::contrastive_gradient(z, a, rho);
    // Safe set frozen at z, as during backpropagation.
    const auto numeric = dvp::finite_diff_gradient(
        [&](std::span<const double> x) {
          const LogitVector zx(std::vector<double>(x.begin(), x.end()));
          return dvp::log_softmax(dvp::mask_logits(zx, s))[a];
        },
        z.values());
    for (std::size_t k = 0; k < V; ++k) ASSERT_NEAR(analytic[k], numeric[k], 1e-6);
  }
}

TEST(PruningProperties, SafeSetsDifferOnlyNearTheThreshold) {
  RngStream rng(34, 0);
  const double rho = dvp::kDefaultRho;
  int differing = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t V = 2 + rng.below(63);
    std::vector<double> zv(V);
    for (double& x : zv) x = 4.0 * rng.normal();
    const double eps_max = std::pow(10.0, -rng.uniform(3.0, 5.0));
    // Plant one token right at the threshold so the band is exercised.
    const double zmax = *std::max_element(zv.begin(), zv.end());
    if (V > 2) zv[0] = zmax + std::log(rho) + rng.uniform(-2 * eps_max, 2 * eps_max);
    const LogitVector z(zv);
    std::vector<double> zi(V);
    for (std::size_t k = 0; k < V; ++k) zi[k] = zv[k] + rng.uniform(-eps_max, eps_max);
    const SafeSet st = dvp::minp_safe_set(z, rho);
    const SafeSet si = dvp::minp_safe_set(zi, rho);
    const auto lp = dvp::log_softmax(z);
    const double lp_max = *std::max_element(lp.begin(), lp.end());
    for (std::size_t t = 0; t < V; ++t) {
      if (st.contains(t) == si.contains(t)) continue;
      ++differing;
      ASSERT_LE(std::abs(lp[t] - (lp_max + std::log(rho))), 2 * eps_max + 1e-12);
    }
  }
  EXPECT_GT(differing, 0);
}

dvp::Trajectory make_traj(std::vector<std::pair<bool, bool>> flags) {
  dvp::Trajectory t;
  for (auto [train, infer] : flags) {
    dvp::StepRecord s;
    s.safe_train = train;
    s.safe_infer = infer;
    t.steps.push_back(s);
    t.tokens.push_back(0);
  }
  return t;
}

TEST(SupportClassify, Cases) {
  EXPECT_EQ(dvp::support_classify(make_traj({{true, true}, {true, true}})),
            dvp::SupportClass::in_support);
  // In the inference safe set only: the constrained training weight is 0.
  EXPECT_EQ(dvp::support_classify(make_traj({{true, true}, {false, true}})),
            dvp::SupportClass::zero_weight);
  // Tail token outside both sets (raw sampling) is also weight 0.
  EXPECT_EQ(dvp::support_classify(make_traj({{false, false}})), dvp::SupportClass::zero_weight);
  EXPECT_EQ(dvp::support_classify(make_traj({{true, false}, {true, true}})),
            dvp::SupportClass::bias_leak);
}

TEST(SupportClassify, BoundaryTokenFromLogits) {
  // Token 1 sits just below the training threshold and just above the
  // inference threshold.
  const double rho = dvp::kDefaultRho;
  const double thr = std::log(rho);
  const std::vector<double> zt{0.0, thr - 1e-4, -40.0};
  const std::vector<double> zi{0.0, thr + 1e-4, -40.0};
  const auto step = dvp::detail::make_step(zt, zi, 0, 1, rho);
  EXPECT_FALSE(step.safe_train);
  EXPECT_TRUE(step.safe_infer);
  dvp::Trajectory t;
  t.steps.push_back(step);
  t.tokens.push_back(1);
  EXPECT_EQ(dvp::support_classify(t, rho), dvp::SupportClass::zero_weight);
}

}  // namespace
