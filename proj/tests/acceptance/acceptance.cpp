// Acceptance gates. One line per criterion:
//   AC<n> PASS|FAIL <seconds>s  <details>
// Exit status is nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "dvplab/harness/config.hpp"
#include "dvplab/harness/metrics.hpp"
#include "dvplab/harness/suites.hpp"
#include "dvplab/harness/train.hpp"
#include "dvplab/harness/verify.hpp"

namespace {

namespace h = dvp::harness;
namespace s = dvp::harness::suites;

constexpr std::uint64_t kSeed = 20240611;

struct Outcome {
  bool passed = true;
  std::string detail;
};

void add(Outcome& o, const h::CheckResult& c) {
  o.passed = o.passed && c.passed;
  if (!o.detail.empty()) o.detail += "; ";
  o.detail += c.name + " " + s::fmt("%.3e", c.residual) + (c.passed ? " <= " : " > ") +
              s::fmt("%.0e", c.tolerance);
}

bool run(int id, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o = body();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs >= limit_s) {
    o.passed = false;
    o.detail += "; runtime over " + s::fmt("%.0f", limit_s) + "s";
  }
  std::printf("AC%d %s %.1fs  %s\n", id, o.passed ? "PASS" : "FAIL", secs, o.detail.c_str());
  std::fflush(stdout);
  return o.passed;
}

std::string preset(const char* name) { return std::string(DVPLAB_CONFIG_DIR) + "/" + name; }

Outcome ac7() {
  const h::ExperimentConfig base = h::load_config(preset("collapse.json"));
  constexpr int kSeeds = 20;
  int collapsed = 0;
  int dvp_ok = 0;
  double dvp_worst = 0.0;
  std::vector<double> trends;
  for (int seed = 0; seed < kSeeds; ++seed) {
    h::ExperimentConfig naive = base;
    naive.seed = static_cast<std::uint64_t>(seed);
    naive.estimator = dvp::EstimatorConfig::naive(base.estimator.group_size);
    naive.estimator.baseline = base.estimator.baseline;
    double naive_max = 0.0;
    const auto rn = h::train(naive, [&](const h::MetricsRow& r) {
      naive_max = std::max(naive_max, r.max_is_ratio);
      return naive_max <= 1e3;
    });
    if (rn.aborted || naive_max > 1e3) ++collapsed;

    h::ExperimentConfig pruned = naive;
    pruned.estimator = dvp::EstimatorConfig::dvp(base.rho, base.estimator.group_size);
    pruned.estimator.baseline = base.estimator.baseline;
    const auto rd = h::train(pruned);
    double dmax = 0.0;
    std::vector<double> j_mp;
    for (const auto& r : rd.rows) {
      dmax = std::max(dmax, r.max_is_ratio);
      j_mp.push_back(r.j_mp);
    }
    dvp_worst = std::max(dvp_worst, dmax);
    if (!rd.aborted && rd.rows.size() == pruned.iterations && dmax < 10.0) ++dvp_ok;
    trends.push_back(h::spearman_trend(j_mp));
  }
  std::sort(trends.begin(), trends.end());
  const double median = 0.5 * (trends[(kSeeds - 1) / 2] + trends[kSeeds / 2]);
  Outcome o;
  o.passed = collapsed * 5 >= kSeeds * 4 && dvp_ok == kSeeds && median > 0.8;
  std::ostringstream d;
  d << "naive collapsed " << collapsed << "/" << kSeeds << "; dvp clean " << dvp_ok << "/" << kSeeds
    << ", worst max_is_ratio " << s::fmt("%.3g", dvp_worst) << "; median J_mp Spearman "
    << s::fmt("%.3f", median);
  o.detail = d.str();
  return o;
}

std::string train_bytes(h::ExperimentConfig c, unsigned workers) {
  c.workers = workers;
  const h::TrainResult r = h::train(c);
  std::ostringstream out;
  h::emit(out, r.rows, c.format);
  return out.str() + h::checkpoint_json(c, r).dump();
}

Outcome ac8() {
  Outcome o;
  h::VerifyOptions opt;
  opt.seed = kSeed;
  const bool verify_same = h::verify(opt).text() == h::verify(opt).text();
  const h::ExperimentConfig parity = h::load_config(preset("parity.json"));
  const bool w1 = train_bytes(parity, 1) == train_bytes(parity, 1);
  const bool w2 = train_bytes(parity, 2) == train_bytes(parity, 2);
  o.passed = verify_same && w1 && w2;
  o.detail = std::string("verify ") + (verify_same ? "identical" : "differs") + "; train workers=1 " +
             (w1 ? "identical" : "differs") + "; train workers=2 " + (w2 ? "identical" : "differs");
  return o;
}

}  // namespace

int main() {
  bool ok = true;
  ok &= run(1, 10, [] {
    Outcome o;
    add(o, s::bias_identity(50, kSeed));
    return o;
  });
  ok &= run(2, 30, [] {
    Outcome o;
    const auto seg = s::segment_bound(10'000, kSeed);
    add(o, seg.bound);
    add(o, seg.monotone);
    return o;
  });
  ok &= run(3, 120, [] {
    Outcome o;
    add(o, s::map_stationarity(1'000, kSeed));
    add(o, s::mode_consistency(1'000, kSeed));
    add(o, s::tail_median(100'000, kSeed));
    return o;
  });
  ok &= run(4, 600, [] {
    Outcome o;
    add(o, s::masked_logits(10'000, kSeed));
    add(o, s::contrastive_fd(100, kSeed));
    return o;
  });
  ok &= run(5, 600, [] {
    Outcome o;
    add(o, s::bias_bound(100, kSeed));
    add(o, s::tv_lost_mass(10'000, kSeed));
    return o;
  });
  ok &= run(6, 600, [] {
    Outcome o;
    add(o, s::dvp_unbiased(10, 10'000, kSeed));
    return o;
  });
  ok &= run(7, 600, ac7);
  ok &= run(8, 600, ac8);
  std::printf("%s\n", ok ? "all criteria passed" : "some criteria failed");
  return ok ? 0 : 1;
}
