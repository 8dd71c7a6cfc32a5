#pragma once

// Box-wise conformal calibration: IoU matching, additive coordinate errors,
// Bonferroni-split per-coordinate quantiles, and test-time box expansion.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "confcal/cp_core.hpp"
#include "confcal/error.hpp"

namespace confcal {

inline constexpr double kDefaultTau = 0.5;

struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const noexcept { return x_max - x_min; }
  double height() const noexcept { return y_max - y_min; }
  double area() const noexcept { return width() * height(); }
  bool well_formed() const noexcept { return x_min < x_max && y_min < y_max; }

  bool contains(const Box& other) const noexcept {
    return x_min <= other.x_min && y_min <= other.y_min && other.x_max <= x_max &&
           other.y_max <= y_max;
  }

  void validate() const {
    if (!(std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
          std::isfinite(y_max)) ||
        !well_formed()) {
      throw Error(ErrorCode::InvariantViolation, "box requires x_min < x_max and y_min < y_max");
    }
  }

  friend bool operator==(const Box&, const Box&) = default;
};

struct Detection {
  int id = 0;
  std::optional<int> class_id;
  std::optional<double> confidence;
  Box box;
};

struct DetectionList {
  std::vector<Detection> items;

  std::size_t size() const noexcept { return items.size(); }
  bool empty() const noexcept { return items.empty(); }

  void validate() const {
    for (const auto& d : items) {
      d.box.validate();
      if (d.confidence && !(*d.confidence >= 0.0 && *d.confidence <= 1.0)) {
        throw Error(ErrorCode::InvariantViolation, "detection confidence outside [0, 1]");
      }
    }
  }
};

struct MatchedPair {
  std::size_t pred_index;
  std::size_t gt_index;
  Box pred;
  Box truth;
  double iou;
};

struct MatchSet {
  std::vector<MatchedPair> pairs;
  double tau = kDefaultTau;
};

using CoordinateScores = std::array<double, 4>;

struct DetThreshold {
  std::array<double, 4> q{};
  RiskLevel alpha;
  double tau = kDefaultTau;
  std::array<std::size_t, 4> counts{};

  bool is_finite() const noexcept {
    return std::all_of(q.begin(), q.end(), [](double v) { return std::isfinite(v); });
  }
};

/// Calibration image for detection: predicted and ground-truth boxes.
struct DetCalibrationImage {
  DetectionList predictions;
  DetectionList truth;
};

inline double iou(const Box& a, const Box& b) noexcept {
  const double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

inline void check_tau(double tau) {
  if (!(tau > 0.0 && tau < 1.0)) {
    throw Error(ErrorCode::InvalidTau, "tau must lie in (0, 1), got " + std::to_string(tau));
  }
}

/// Greedy one-to-one matching by descending IoU; ties broken by
/// (prediction index, ground-truth index). Only pairs with IoU >= tau survive.
inline MatchSet match_boxes(const DetectionList& preds, const DetectionList& gts, double tau) {
  check_tau(tau);
  struct Candidate {
    double iou;
    std::size_t p;
    std::size_t g;
  };
  std::vector<Candidate> candidates;
  for (std::size_t p = 0; p < preds.size(); ++p) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(preds.items[p].box, gts.items[g].box);
      if (v >= tau) candidates.push_back({v, p, g});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    return std::tie(a.p, a.g) < std::tie(b.p, b.g);
  });
  std::vector<bool> pred_used(preds.size(), false);
  std::vector<bool> gt_used(gts.size(), false);
  MatchSet out;
  out.tau = tau;
  for (const auto& c : candidates) {
    if (pred_used[c.p] || gt_used[c.g]) continue;
    pred_used[c.p] = true;
    gt_used[c.g] = true;
    out.pairs.push_back({c.p, c.g, preds.items[c.p].box, gts.items[c.g].box, c.iou});
  }
  return out;
}

/// Signed coordinate errors; a positive entry means the prediction falls
/// short of the ground truth on that side.
inline CoordinateScores box_scores(const Box& pred, const Box& truth) noexcept {
  return {pred.x_min - truth.x_min, pred.y_min - truth.y_min, truth.x_max - pred.x_max,
          truth.y_max - pred.y_max};
}

inline DetThreshold fit_det_from_pairs(std::span<const MatchedPair> pairs, RiskLevel alpha,
                                       double tau) {
  check_tau(tau);
  if (pairs.empty()) {
    throw Error(ErrorCode::NoMatches, "no prediction matched a ground-truth box at tau");
  }
  std::array<ScoreSet, 4> per_coord;
  for (auto& s : per_coord) s.reserve(pairs.size());
  for (const auto& pair : pairs) {
    const auto s = box_scores(pair.pred, pair.truth);
    for (std::size_t m = 0; m < 4; ++m) per_coord[m].add(s[m]);
  }
  const RiskLevel per_side(alpha.value() / 4.0);
  DetThreshold out{{}, alpha, tau, {}};
  for (std::size_t m = 0; m < 4; ++m) {
    out.q[m] = conformal_quantile(per_coord[m], per_side).value;
    out.counts[m] = per_coord[m].size();
  }
  return out;
}

inline DetThreshold fit_det(std::span<const DetCalibrationImage> calib, RiskLevel alpha,
                            double tau = kDefaultTau) {
  check_tau(tau);
  std::vector<MatchedPair> pooled;
  for (const auto& image : calib) {
    auto matches = match_boxes(image.predictions, image.truth, tau);
    pooled.insert(pooled.end(), matches.pairs.begin(), matches.pairs.end());
  }
  return fit_det_from_pairs(pooled, alpha, tau);
}

struct ConformalizedBox {
  Box box;
  // Set when shrinking or clipping left an axis empty and it was collapsed
  // to a unit-width extent.
  bool repaired = false;
};

namespace detail {

inline bool repair_axis(double& lo, double& hi, std::optional<std::pair<double, double>> limits) {
  if (lo < hi) return false;
  double mid = 0.5 * (lo + hi);
  if (limits && limits->second - limits->first >= 1.0) {
    mid = std::clamp(mid, limits->first + 0.5, limits->second - 0.5);
  }
  lo = mid - 0.5;
  hi = mid + 0.5;
  return true;
}

}  // namespace detail

/// Expands `box` by the fitted per-side margins, clips to `bounds` when given,
/// and repairs any axis left empty.
inline ConformalizedBox conformalize_box(const Box& box, const DetThreshold& t,
                                         const std::optional<Box>& bounds = std::nullopt) {
  if (!t.is_finite()) {
    throw Error(ErrorCode::InfiniteThreshold,
                "detection threshold has an infinite component; calibrate on more matched pairs");
  }
  Box out{box.x_min - t.q[0], box.y_min - t.q[1], box.x_max + t.q[2], box.y_max + t.q[3]};
  std::optional<std::pair<double, double>> xl, yl;
  if (bounds) {
    out.x_min = std::max(out.x_min, bounds->x_min);
    out.y_min = std::max(out.y_min, bounds->y_min);
    out.x_max = std::min(out.x_max, bounds->x_max);
    out.y_max = std::min(out.y_max, bounds->y_max);
    xl = std::pair{bounds->x_min, bounds->x_max};
    yl = std::pair{bounds->y_min, bounds->y_max};
  }
  bool repaired = detail::repair_axis(out.x_min, out.x_max, xl);
  repaired |= detail::repair_axis(out.y_min, out.y_max, yl);
  return {out, repaired};
}

}  // namespace confcal
