#pragma once

// Split (inductive) conformal quantile shared by the segmentation and
// detection calibrators.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "confcal/error.hpp"

namespace confcal {

/// Miscoverage level alpha, strictly inside (0, 1).
class RiskLevel {
 public:
  explicit RiskLevel(double alpha) : alpha_(alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
      throw Error(ErrorCode::InvalidRisk, "alpha must lie in (0, 1), got " + std::to_string(alpha));
    }
  }

  double value() const noexcept { return alpha_; }

  friend bool operator==(const RiskLevel&, const RiskLevel&) = default;

 private:
  double alpha_;
};

/// Multiset of finite nonconformity scores. Insertion order carries no meaning.
class ScoreSet {
 public:
  ScoreSet() = default;
  ScoreSet(std::initializer_list<double> scores) {
    reserve(scores.size());
    for (double s : scores) add(s);
  }
  explicit ScoreSet(std::span<const double> scores) {
    reserve(scores.size());
    for (double s : scores) add(s);
  }

  void add(double score) {
    if (!std::isfinite(score)) {
      throw Error(ErrorCode::InvariantViolation, "nonconformity scores must be finite");
    }
    scores_.push_back(score);
  }

  void append(const ScoreSet& other) {
    scores_.insert(scores_.end(), other.scores_.begin(), other.scores_.end());
  }

  void reserve(std::size_t n) { scores_.reserve(n); }
  std::size_t size() const noexcept { return scores_.size(); }
  bool empty() const noexcept { return scores_.empty(); }
  std::span<const double> values() const noexcept { return scores_; }

 private:
  std::vector<double> scores_;
};

/// Fitted conformal threshold. `value` is a calibration score or +inf.
struct ConformalThreshold {
  double value;
  RiskLevel alpha;
  std::size_t n;

  bool is_finite() const noexcept { return std::isfinite(value); }
};

namespace detail {

// 1-based rank ceil((n+1)(1-alpha)). The product is evaluated in long double
// and snapped to the nearest integer when within a relative 1e-9 of it, so
// that decimal alphas such as 0.1 or 0.05 give the rank their decimal value
// implies rather than one polluted by binary rounding.
inline std::size_t conformal_rank(std::size_t n, double alpha) {
  const long double x = static_cast<long double>(n + 1) * (1.0L - static_cast<long double>(alpha));
  const long double nearest = std::nearbyint(x);
  const long double tol = 1e-9L * std::max<long double>(1.0L, x);
  long double r = std::fabs(x - nearest) <= tol ? nearest : std::ceil(x);
  if (r < 1.0L) r = 1.0L;
  return static_cast<std::size_t>(r);
}

}  // namespace detail

/// Returns the ceil((n+1)(1-alpha))-th smallest score, or +inf when that rank
/// exceeds n (the +inf augmentation of the calibration multiset).
inline ConformalThreshold conformal_quantile(const ScoreSet& scores, RiskLevel alpha) {
  const std::size_t n = scores.size();
  if (n == 0) {
    throw Error(ErrorCode::EmptyCalibrationSet, "conformal quantile needs at least one score");
  }
  const std::size_t rank = detail::conformal_rank(n, alpha.value());
  if (rank > n) {
    return {std::numeric_limits<double>::infinity(), alpha, n};
  }
  std::vector<double> work(scores.values().begin(), scores.values().end());
  auto nth = work.begin() + static_cast<std::ptrdiff_t>(rank - 1);
  std::nth_element(work.begin(), nth, work.end());
  return {*nth, alpha, n};
}

/// Conformity test used at prediction time (inclusive).
inline bool conforms(double score, const ConformalThreshold& threshold) noexcept {
  return score <= threshold.value;
}

}  // namespace confcal
