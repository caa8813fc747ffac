#pragma once

// `verify`: every invariant suite at certification scale, one line per check.

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "dvplab/harness/suites.hpp"

namespace dvp::harness {

struct VerifyOptions {
  std::uint64_t seed = 0;
  /// Test-only: evaluate the bias formula with a flipped exponent sign.
  bool inject_fault = false;
};

struct VerificationReport {
  std::vector<CheckResult> checks;

  bool passed() const {
    for (const CheckResult& c : checks) {
      if (!c.passed) return false;
    }
    return true;
  }

  /// Deterministic text: fixed column order and %.6e residuals, no timings.
  std::string text() const {
    std::string out = "check,status,residual,tolerance,detail\n";
    char buf[96];
    for (const CheckResult& c : checks) {
      std::snprintf(buf, sizeof buf, "%s,%.6e,%.1e,", c.passed ? "PASS" : "FAIL", c.residual, c.tolerance);
      out += c.name + "," + buf + c.detail + "\n";
    }
    std::size_t failed = 0;
    for (const CheckResult& c : checks) failed += c.passed ? 0 : 1;
    out += failed == 0 ? "all " + std::to_string(checks.size()) + " checks passed\n"
                       : std::to_string(failed) + " of " + std::to_string(checks.size()) + " checks failed\n";
    return out;
  }
};

inline VerificationReport verify(const VerifyOptions& opt = {}) {
  namespace s = suites;
  const std::uint64_t seed = opt.seed;
  VerificationReport r;
  r.checks.push_back(s::bias_identity(50, seed, opt.inject_fault ? -1.0 : 1.0));
  const auto seg = s::segment_bound(10'000, seed);
  r.checks.push_back(seg.bound);
  r.checks.push_back(seg.monotone);
  r.checks.push_back(s::map_stationarity(1'000, seed));
  r.checks.push_back(s::mode_consistency(1'000, seed));
  r.checks.push_back(s::tail_median(100'000, seed));
  r.checks.push_back(s::masked_logits(10'000, seed));
  r.checks.push_back(s::contrastive_fd(100, seed));
  r.checks.push_back(s::bias_bound(100, seed));
  r.checks.push_back(s::tv_lost_mass(10'000, seed));
  r.checks.push_back(s::chain_rule(20, seed));
  r.checks.push_back(s::dvp_unbiased(10, 10'000, seed));
  return r;
}

}  // namespace dvp::harness
