#pragma once

// Sequence-level uncertainty of a generated answer: mean top-p prediction-set
// size, and mean token entropy as a baseline.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "confcal/error.hpp"

namespace confcal {

inline constexpr double kDefaultNucleus = 0.9;
inline constexpr double kDistributionTolerance = 1e-6;

/// One generation step: listed token probabilities sorted non-increasing,
/// plus the mass of the tokens that were not exported.
struct TokenDistribution {
  std::vector<double> probs;
  std::size_t vocab_size = 0;
  double tail_mass = 0.0;

  void validate() const {
    if (vocab_size == 0) {
      throw Error(ErrorCode::InvariantViolation, "vocab_size must be positive");
    }
    if (probs.size() > vocab_size) {
      throw Error(ErrorCode::InvariantViolation, "more listed tokens than vocab_size");
    }
    if (!(tail_mass >= 0.0) || !std::isfinite(tail_mass)) {
      throw Error(ErrorCode::InvariantViolation, "tail_mass must be finite and >= 0");
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < probs.size(); ++j) {
      if (!(probs[j] >= 0.0) || !std::isfinite(probs[j])) {
        throw Error(ErrorCode::InvariantViolation, "token probabilities must be finite and >= 0");
      }
      if (j > 0 && probs[j] > probs[j - 1]) {
        throw Error(ErrorCode::InvariantViolation,
                    "token probabilities must arrive sorted non-increasing (step entry " +
                        std::to_string(j) + ")");
      }
      sum += probs[j];
    }
    if (std::fabs(sum + tail_mass - 1.0) > kDistributionTolerance) {
      throw Error(ErrorCode::InvariantViolation, "listed mass plus tail_mass must equal 1");
    }
    if (probs.size() == vocab_size && tail_mass > kDistributionTolerance) {
      throw Error(ErrorCode::InvariantViolation, "positive tail_mass with no unlisted tokens");
    }
  }
};

using TokenDistributionSequence = std::vector<TokenDistribution>;

class NucleusLevel {
 public:
  explicit NucleusLevel(double p) : p_(p) {
    if (!(p > 0.0 && p <= 1.0)) {
      throw Error(ErrorCode::InvalidNucleus, "p must lie in (0, 1], got " + std::to_string(p));
    }
  }
  double value() const noexcept { return p_; }

 private:
  double p_;
};

enum class UqMethod { TopP, Entropy };

constexpr std::string_view to_string(UqMethod m) noexcept {
  return m == UqMethod::TopP ? "top_p" : "entropy";
}

inline UqMethod parse_uq_method(std::string_view s) {
  if (s == "top_p") return UqMethod::TopP;
  if (s == "entropy") return UqMethod::Entropy;
  throw Error(ErrorCode::InvalidConfig, "unknown uncertainty method '" + std::string(s) + "'");
}

struct UncertaintyScore {
  double value = 0.0;
  std::vector<double> per_token;
  UqMethod method = UqMethod::TopP;
  // Steps whose listed mass never reached p (scored as vocab_size).
  std::vector<std::size_t> truncated_steps;
};

struct NucleusCount {
  std::size_t k = 0;
  bool truncated = false;
};

/// Smallest k with cumulative listed mass >= p. A cumulative sum may fall a
/// rounding error short of p = 1 on a complete distribution; when the
/// unlisted mass is within tolerance of zero, the full listed support counts.
/// Otherwise an unreachable p means the export was truncated, and the step
/// is scored at vocab_size.
inline NucleusCount top_p_set_size(const TokenDistribution& dist, NucleusLevel p) {
  double cumulative = 0.0;
  for (std::size_t j = 0; j < dist.probs.size(); ++j) {
    cumulative += dist.probs[j];
    if (cumulative >= p.value()) return {j + 1, false};
  }
  if (dist.tail_mass <= kDistributionTolerance &&
      cumulative >= p.value() - kDistributionTolerance) {
    std::size_t support = dist.probs.size();
    while (support > 1 && dist.probs[support - 1] == 0.0) --support;
    return {std::max<std::size_t>(support, 1), false};
  }
  return {dist.vocab_size, true};
}

namespace detail {

// Summing ascending-sorted terms makes the mean independent of step order.
inline double order_free_mean(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

inline void require_steps(std::span<const TokenDistribution> seq) {
  if (seq.empty()) throw Error(ErrorCode::EmptySequence, "token trace has no steps");
}

}  // namespace detail

inline UncertaintyScore uncertainty_top_p(std::span<const TokenDistribution> seq, NucleusLevel p) {
  detail::require_steps(seq);
  UncertaintyScore out;
  out.method = UqMethod::TopP;
  out.per_token.reserve(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    seq[i].validate();
    const auto count = top_p_set_size(seq[i], p);
    out.per_token.push_back(static_cast<double>(count.k));
    if (count.truncated) out.truncated_steps.push_back(i);
  }
  out.value = detail::order_free_mean(out.per_token);
  return out;
}

/// Natural-log entropy of one step. Unlisted mass is spread uniformly over
/// the vocab_size - listed tokens.
inline double token_entropy(const TokenDistribution& dist) {
  double h = 0.0;
  for (double p : dist.probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  const std::size_t unlisted = dist.vocab_size - dist.probs.size();
  if (dist.tail_mass > 0.0 && unlisted > 0) {
    h -= dist.tail_mass * std::log(dist.tail_mass / static_cast<double>(unlisted));
  }
  return h;
}

inline UncertaintyScore uncertainty_entropy(std::span<const TokenDistribution> seq) {
  detail::require_steps(seq);
  UncertaintyScore out;
  out.method = UqMethod::Entropy;
  out.per_token.reserve(seq.size());
  for (const auto& step : seq) {
    step.validate();
    out.per_token.push_back(token_entropy(step));
  }
  out.value = detail::order_free_mean(out.per_token);
  return out;
}

inline UncertaintyScore score_sequence(std::span<const TokenDistribution> seq, UqMethod method,
                                       NucleusLevel p) {
  return method == UqMethod::TopP ? uncertainty_top_p(seq, p) : uncertainty_entropy(seq);
}

}  // namespace confcal
