#pragma once

// Probability-simplex primitives over small vocabularies.
//
// Everything here is 64-bit and allocation-light. Masked logits use the
// finite sentinel kMaskValue rather than -inf so that softmax never sees a
// non-finite input.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dvplab/errors.hpp"
#include "dvplab/rng.hpp"

namespace dvp {

inline constexpr double kMaskValue = -50.0;

namespace detail {

template <class Tag>
class RealVector {
 public:
  RealVector() = default;

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const { return values_; }
  const std::vector<double>& vector() const { return values_; }
  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }

  friend bool operator==(const RealVector&, const RealVector&) = default;

 protected:
  explicit RealVector(std::vector<double> v) : values_(std::move(v)) {}
  std::vector<double> values_;
};

struct LogitTag {};
struct ProbTag {};
struct LogProbTag {};

}  // namespace detail

/// Raw scores over a vocabulary of size >= 2; every entry finite.
class LogitVector : public detail::RealVector<detail::LogitTag> {
 public:
  LogitVector() = default;
  explicit LogitVector(std::vector<double> v) : RealVector(std::move(v)) {
    if (values_.size() < 2) throw std::invalid_argument("LogitVector: vocab size must be >= 2");
    for (double x : values_) {
      if (!std::isfinite(x)) throw std::invalid_argument("LogitVector: non-finite logit");
    }
  }
  LogitVector(std::initializer_list<double> v) : LogitVector(std::vector<double>(v)) {}
};

/// Normalized distribution; entries >= 0 summing to 1 within 1e-12.
class ProbVector : public detail::RealVector<detail::ProbTag> {
 public:
  static constexpr double kSumTolerance = 1e-12;

  ProbVector() = default;
  explicit ProbVector(std::vector<double> v) : RealVector(std::move(v)) {
    if (values_.empty()) throw std::invalid_argument("ProbVector: empty");
    double sum = 0.0;
    for (double x : values_) {
      if (!(x >= 0.0) || x > 1.0 + kSumTolerance) throw std::invalid_argument("ProbVector: entry outside [0,1]");
      sum += x;
    }
    if (std::abs(sum - 1.0) > kSumTolerance) {
      throw std::invalid_argument("ProbVector: entries sum to " + std::to_string(sum));
    }
  }
  ProbVector(std::initializer_list<double> v) : ProbVector(std::vector<double>(v)) {}
};

/// Normalized log-probabilities; exp of the entries sums to 1.
class LogProbVector : public detail::RealVector<detail::LogProbTag> {
 public:
  LogProbVector() = default;
  explicit LogProbVector(std::vector<double> v) : RealVector(std::move(v)) {
    if (values_.empty()) throw std::invalid_argument("LogProbVector: empty");
    double sum = 0.0;
    for (double x : values_) {
      if (x > 1e-12) throw std::invalid_argument("LogProbVector: positive log-probability");
      sum += std::exp(x);
    }
    if (std::abs(sum - 1.0) > ProbVector::kSumTolerance) {
      throw std::invalid_argument("LogProbVector: exp(entries) sums to " + std::to_string(sum));
    }
  }
};

namespace detail {

inline void require_support(std::span<const double> z) {
  if (std::all_of(z.begin(), z.end(), [](double x) { return x == kMaskValue; })) {
    throw EmptySupportError();
  }
}

}  // namespace detail

/// log(sum_j exp(z_j)) with max-subtraction.
namespace detail {

/// log sum_k exp(z_k - max z), via log1p so that a dominant entry keeps
/// full relative precision in the remainder.
inline double log_sum_exp_shifted(std::span<const double> z, double m) {
  const auto top = std::max_element(z.begin(), z.end());
  double rest = 0.0;
  for (auto it = z.begin(); it != z.end(); ++it) {
    if (it != top) rest += std::exp(*it - m);
  }
  return std::log1p(rest);
}

}  // namespace detail

inline double log_sum_exp(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  return m + detail::log_sum_exp_shifted(z, m);
}

/// log softmax(z)_a for one entry.
inline double log_softmax_at(std::span<const double> z, std::size_t a) {
  const double m = *std::max_element(z.begin(), z.end());
  return (z[a] - m) - detail::log_sum_exp_shifted(z, m);
}

inline ProbVector softmax(const LogitVector& z) {
  detail::require_support(z.values());
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - m);
    total += p[i];
  }
  for (double& x : p) x /= total;
  return ProbVector(std::move(p));
}

inline LogProbVector log_softmax(const LogitVector& z) {
  detail::require_support(z.values());
  const double m = *std::max_element(z.begin(), z.end());
  const double shifted = detail::log_sum_exp_shifted(z.values(), m);
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = (z[i] - m) - shifted;
  return LogProbVector(std::move(out));
}

/// d log softmax(z)_a / dz = e_a - softmax(z).
inline std::vector<double> log_softmax_gradient(const LogitVector& z, std::size_t a) {
  if (a >= z.size()) throw std::out_of_range("log_softmax_gradient: token index out of range");
  const ProbVector p = softmax(z);
  std::vector<double> g(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) g[k] = (k == a ? 1.0 : 0.0) - p[k];
  return g;
}

/// Inverse-CDF draw from `p`. Consumes exactly one uniform from `rng`.
inline std::size_t sample_categorical(std::span<const double> p, RngStream& rng) {
  const double u = rng.uniform();
  double cum = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    cum += p[i];
    last_positive = i;
    if (u < cum) return i;
  }
  // Rounding left cum slightly below 1.
  return last_positive;
}

inline std::size_t sample_categorical(const ProbVector& p, RngStream& rng) {
  return sample_categorical(p.values(), rng);
}

inline double tv_distance(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("tv_distance: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
  return 0.5 * acc;
}

inline double tv_distance(const ProbVector& p, const ProbVector& q) {
  return tv_distance(p.values(), q.values());
}

inline constexpr double kDefaultFiniteDiffStep = 1e-5;

/// Tolerance paired with the default step: 1e-5 * (1 + ||g||_inf).
inline double finite_diff_tolerance(std::span<const double> g) {
  double m = 0.0;
  for (double x : g) m = std::max(m, std::abs(x));
  return 1e-5 * (1.0 + m);
}

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
inline std::vector<double> finite_diff_gradient(
    const std::function<double(std::span<const double>)>& f, std::span<const double> theta,
    double h = kDefaultFiniteDiffStep) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_gradient: step must be positive");
  std::vector<double> x(theta.begin(), theta.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double fp = f(x);
    x[i] = saved - h;
    const double fm = f(x);
    x[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::domain_error("finite_diff_gradient: non-finite function value at coordinate " +
                              std::to_string(i));
    }
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace dvp
