#pragma once

// Inference-engine mismatch modeled as an additive logit perturbation:
// z_infer = z_train + eps, with eps either bounded-uniform or gaussian iid.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dvplab/errors.hpp"
#include "dvplab/rng.hpp"
#include "dvplab/simplex.hpp"

namespace dvp {

enum class PerturbationKind { bounded_uniform, gaussian };

inline std::string_view to_string(PerturbationKind k) {
  return k == PerturbationKind::bounded_uniform ? "bounded_uniform" : "gaussian";
}

inline PerturbationKind parse_perturbation_kind(std::string_view s) {
  if (s == "bounded_uniform") return PerturbationKind::bounded_uniform;
  if (s == "gaussian") return PerturbationKind::gaussian;
  throw std::invalid_argument("unknown perturbation kind: " + std::string(s));
}

/// Exactly one of eps_max / sigma is meaningful, selected by `kind`; the
/// other stays zero.
struct PerturbationModel {
  PerturbationKind kind = PerturbationKind::bounded_uniform;
  double eps_max = 0.0;
  double sigma = 0.0;

  static PerturbationModel bounded_uniform(double eps_max) {
    PerturbationModel m{PerturbationKind::bounded_uniform, eps_max, 0.0};
    m.validate();
    return m;
  }
  static PerturbationModel gaussian(double sigma) {
    PerturbationModel m{PerturbationKind::gaussian, 0.0, sigma};
    m.validate();
    return m;
  }

  /// The scale parameter that the kind selects.
  double scale() const { return kind == PerturbationKind::bounded_uniform ? eps_max : sigma; }

  void validate() const {
    if (!std::isfinite(eps_max) || !std::isfinite(sigma) || eps_max < 0.0 || sigma < 0.0) {
      throw std::invalid_argument("PerturbationModel: parameters must be finite and >= 0");
    }
    if (kind == PerturbationKind::bounded_uniform && sigma != 0.0) {
      throw std::invalid_argument("PerturbationModel: sigma set on a bounded_uniform model");
    }
    if (kind == PerturbationKind::gaussian && eps_max != 0.0) {
      throw std::invalid_argument("PerturbationModel: eps_max set on a gaussian model");
    }
  }

  friend bool operator==(const PerturbationModel&, const PerturbationModel&) = default;
};

/// One iid noise vector of length `n`.
inline std::vector<double> draw_noise(const PerturbationModel& m, std::size_t n, RngStream& rng) {
  std::vector<double> eps(n, 0.0);
  if (m.scale() == 0.0) return eps;
  for (double& e : eps) {
    e = m.kind == PerturbationKind::bounded_uniform ? rng.uniform(-m.eps_max, m.eps_max)
                                                    : m.sigma * rng.normal();
  }
  return eps;
}

inline LogitVector perturb(const LogitVector& z, const PerturbationModel& m, RngStream& rng) {
  if (m.scale() == 0.0) return z;
  const std::vector<double> eps = draw_noise(m, z.size(), rng);
  std::vector<double> out(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) out[k] = z[k] + eps[k];
  return LogitVector(std::move(out));
}

/// Token-level mismatch; delta = log p_train - log p_infer.
struct MismatchRecord {
  std::size_t token = 0;
  double delta = 0.0;
  double p_train = 0.0;
  double p_infer = 0.0;
};

inline MismatchRecord token_mismatch(const LogitVector& z_train, const LogitVector& z_infer,
                                     std::size_t a) {
  if (z_train.size() != z_infer.size()) {
    throw std::invalid_argument("token_mismatch: vocabulary size mismatch");
  }
  if (a >= z_train.size()) throw std::out_of_range("token_mismatch: token index out of range");
  const double lt = log_softmax_at(z_train.values(), a);
  const double li = log_softmax_at(z_infer.values(), a);
  return {a, lt - li, std::exp(lt), std::exp(li)};
}

/// Worst-case |delta_a| for a token of training probability p_a: 2 eps_max (1 - p_a).
inline double vulnerability_bound(double p_a, double eps_max) {
  if (!(p_a >= 0.0 && p_a <= 1.0)) throw std::invalid_argument("vulnerability_bound: p_a outside [0,1]");
  return 2.0 * eps_max * (1.0 - p_a);
}

inline constexpr int kDefaultSegmentGrid = 64;

/// For every token a: max over t in {0, 1/n, ..., 1} of
/// 2 ||eps||_inf (1 - softmax(z + t eps)_a). The mean-value point of the
/// log-softmax difference lies somewhere on that segment, so this is the
/// checkable form of the vulnerability bound.
inline std::vector<double> segment_sup_bounds(const LogitVector& z, std::span<const double> eps,
                                              int grid_n = kDefaultSegmentGrid) {
  if (grid_n < 2) throw std::invalid_argument("segment_sup_bound: grid_n must be >= 2");
  if (eps.size() != z.size()) throw std::invalid_argument("segment_sup_bound: size mismatch");
  double eps_max = 0.0;
  for (double e : eps) eps_max = std::max(eps_max, std::abs(e));

  const std::size_t V = z.size();
  std::vector<double> min_p(V, 1.0);
  std::vector<double> zt(V), p(V);
  for (int i = 0; i <= grid_n; ++i) {
    const double t = static_cast<double>(i) / grid_n;
    for (std::size_t k = 0; k < V; ++k) zt[k] = z[k] + t * eps[k];
    const double m = *std::max_element(zt.begin(), zt.end());
    double total = 0.0;
    for (std::size_t k = 0; k < V; ++k) total += (p[k] = std::exp(zt[k] - m));
    for (std::size_t k = 0; k < V; ++k) min_p[k] = std::min(min_p[k], p[k] / total);
  }
  std::vector<double> bound(V);
  for (std::size_t k = 0; k < V; ++k) bound[k] = 2.0 * eps_max * (1.0 - min_p[k]);
  return bound;
}

inline double segment_sup_bound(const LogitVector& z, std::span<const double> eps, std::size_t a,
                                int grid_n = kDefaultSegmentGrid) {
  if (a >= z.size()) throw std::out_of_range("segment_sup_bound: token index out of range");
  return segment_sup_bounds(z, eps, grid_n)[a];
}

/// Log posterior of the perturbation given that token a was sampled from
/// softmax(z + eps), under an iid N(0, sigma^2) prior, up to a constant.
inline double perturbation_log_posterior(const LogitVector& z, std::size_t a, double sigma,
                                         std::span<const double> eps) {
  std::vector<double> zp(z.size());
  double sq = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    zp[k] = z[k] + eps[k];
    sq += eps[k] * eps[k];
  }
  return zp[a] - log_sum_exp(zp) - sq / (2.0 * sigma * sigma);
}

/// Gradient of perturbation_log_posterior: (e_a - softmax(z + eps)) - eps / sigma^2.
inline std::vector<double> perturbation_log_posterior_gradient(const LogitVector& z, std::size_t a,
                                                               double sigma,
                                                               std::span<const double> eps) {
  std::vector<double> zp(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) zp[k] = z[k] + eps[k];
  const ProbVector p = softmax(LogitVector(std::move(zp)));
  std::vector<double> g(z.size());
  const double inv_var = 1.0 / (sigma * sigma);
  for (std::size_t k = 0; k < z.size(); ++k) {
    g[k] = ((k == a) ? 1.0 : 0.0) - p[k] - eps[k] * inv_var;
  }
  return g;
}

inline constexpr int kDefaultMapMaxIter = 1000;
inline constexpr double kDefaultMapTol = 1e-12;

/// MAP perturbation given that token a was sampled: the self-consistent
/// solution of eps_k = sigma^2 (delta_ak - softmax(z + eps)_k).
/// The map is a contraction whenever sigma^2 < 2.
inline std::vector<double> map_perturbation(const LogitVector& z, std::size_t a, double sigma,
                                            int max_iter = kDefaultMapMaxIter,
                                            double tol = kDefaultMapTol) {
  if (!(sigma > 0.0)) throw std::invalid_argument("map_perturbation: sigma must be positive");
  if (a >= z.size()) throw std::out_of_range("map_perturbation: token index out of range");
  const std::size_t V = z.size();
  const double var = sigma * sigma;
  std::vector<double> eps(V, 0.0), next(V), zp(V);
  double residual = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    for (std::size_t k = 0; k < V; ++k) zp[k] = z[k] + eps[k];
    const double m = *std::max_element(zp.begin(), zp.end());
    double total = 0.0;
    for (std::size_t k = 0; k < V; ++k) total += (zp[k] = std::exp(zp[k] - m));
    residual = 0.0;
    for (std::size_t k = 0; k < V; ++k) {
      next[k] = var * (((k == a) ? 1.0 : 0.0) - zp[k] / total);
      residual = std::max(residual, std::abs(next[k] - eps[k]));
    }
    eps.swap(next);
    if (residual < tol) return eps;
    if (!std::isfinite(residual)) break;
  }
  throw ConvergenceError("map_perturbation: no convergence within " + std::to_string(max_iter) +
                             " iterations",
                         eps, residual);
}

/// sigma^2 [(1 - p_a)(1 - p'_a) + sum_{k != a} p_k p'_k]: the approximate
/// mode of delta' = log p'_a - log p_a given that a was sampled.
inline double mode_mismatch(const ProbVector& p, const ProbVector& p_prime, double sigma,
                            std::size_t a) {
  if (p.size() != p_prime.size()) throw std::invalid_argument("mode_mismatch: size mismatch");
  if (a >= p.size()) throw std::out_of_range("mode_mismatch: token index out of range");
  double cross = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (k != a) cross += p[k] * p_prime[k];
  }
  return sigma * sigma * ((1.0 - p[a]) * (1.0 - p_prime[a]) + cross);
}

}  // namespace dvp
