#pragma once

// Pixel-wise conformal calibration of segmentation outputs. Class 0 is
// background; a pixel whose prediction set admits background together with a
// foreground class is relabelled to the most probable foreground member.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "confcal/cp_core.hpp"
#include "confcal/error.hpp"

namespace confcal {

inline constexpr double kSimplexTolerance = 1e-6;

/// H x W grid of per-pixel probability vectors over `classes` = K+1 labels,
/// stored row-major with the class index fastest.
struct ProbabilityGrid {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t classes = 0;
  std::vector<float> probs;

  ProbabilityGrid() = default;
  ProbabilityGrid(std::uint32_t h, std::uint32_t w, std::uint32_t k1)
      : height(h), width(w), classes(k1), probs(std::size_t{h} * w * k1, 0.0f) {}

  std::size_t pixel_count() const noexcept { return std::size_t{height} * width; }

  std::span<const float> pixel(std::size_t row, std::size_t col) const {
    return {probs.data() + (row * width + col) * classes, classes};
  }
  std::span<float> pixel(std::size_t row, std::size_t col) {
    return {probs.data() + (row * width + col) * classes, classes};
  }
  std::span<const float> pixel(std::size_t index) const {
    return {probs.data() + index * classes, classes};
  }
  std::span<float> pixel(std::size_t index) { return {probs.data() + index * classes, classes}; }

  void validate() const {
    if (height < 1 || width < 1 || classes < 2) {
      throw Error(ErrorCode::InvariantViolation, "probability grid needs H, W >= 1 and K >= 1");
    }
    if (probs.size() != pixel_count() * classes) {
      throw Error(ErrorCode::InvariantViolation, "probability buffer size does not match H*W*(K+1)");
    }
    for (std::size_t i = 0; i < pixel_count(); ++i) {
      double sum = 0.0;
      for (float p : pixel(i)) {
        if (!(p >= 0.0f) || !std::isfinite(p)) {
          throw Error(ErrorCode::InvariantViolation,
                      "negative or non-finite probability at pixel " + std::to_string(i));
        }
        sum += p;
      }
      if (std::fabs(sum - 1.0) > kSimplexTolerance) {
        throw Error(ErrorCode::InvariantViolation,
                    "pixel " + std::to_string(i) + " is not a probability simplex (sum " +
                        std::to_string(sum) + ")");
      }
    }
  }
};

/// H x W grid of class labels in [0, classes).
struct LabelGrid {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t classes = 0;
  std::vector<std::uint16_t> labels;

  LabelGrid() = default;
  LabelGrid(std::uint32_t h, std::uint32_t w, std::uint32_t k1)
      : height(h), width(w), classes(k1), labels(std::size_t{h} * w, 0) {}

  std::size_t pixel_count() const noexcept { return std::size_t{height} * width; }
  std::uint16_t at(std::size_t row, std::size_t col) const { return labels[row * width + col]; }
  std::uint16_t& at(std::size_t row, std::size_t col) { return labels[row * width + col]; }

  void validate() const {
    if (height < 1 || width < 1) {
      throw Error(ErrorCode::InvariantViolation, "label grid needs H, W >= 1");
    }
    if (labels.size() != pixel_count()) {
      throw Error(ErrorCode::InvariantViolation, "label buffer size does not match H*W");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= classes) {
        throw Error(ErrorCode::InvariantViolation,
                    "label " + std::to_string(labels[i]) + " at pixel " + std::to_string(i) +
                        " outside [0, " + std::to_string(classes) + ")");
      }
    }
  }
};

struct SegCalibrationPair {
  ProbabilityGrid grid;
  LabelGrid truth;

  void validate() const {
    if (grid.height != truth.height || grid.width != truth.width) {
      throw Error(ErrorCode::DimensionMismatch,
                  "grid " + std::to_string(grid.height) + "x" + std::to_string(grid.width) +
                      " vs truth " + std::to_string(truth.height) + "x" +
                      std::to_string(truth.width));
    }
    if (truth.labels.size() != truth.pixel_count() ||
        grid.probs.size() != grid.pixel_count() * grid.classes) {
      throw Error(ErrorCode::DimensionMismatch, "buffer sizes disagree with declared shape");
    }
    for (std::uint16_t y : truth.labels) {
      if (y >= grid.classes) {
        throw Error(ErrorCode::InvariantViolation, "truth label outside the grid's class range");
      }
    }
  }
};

/// Conformal prediction set of one pixel: class ids in ascending order.
struct PixelPredictionSet {
  std::vector<std::uint16_t> members;

  bool contains(std::uint16_t k) const noexcept {
    for (auto m : members) {
      if (m == k) return true;
    }
    return false;
  }
  bool empty() const noexcept { return members.empty(); }
  std::size_t size() const noexcept { return members.size(); }
};

/// Pixel-wise nonconformity 1 - p_true for one pixel.
inline double pixel_score(std::span<const float> probs, std::uint16_t truth) {
  return 1.0 - static_cast<double>(probs[truth]);
}

/// One score per pixel, pooled over every pair. Pairs may differ in size.
inline ScoreSet collect_pixel_scores(std::span<const SegCalibrationPair> pairs) {
  std::size_t total = 0;
  for (const auto& pair : pairs) {
    pair.validate();
    total += pair.grid.pixel_count();
  }
  ScoreSet scores;
  scores.reserve(total);
  for (const auto& pair : pairs) {
    for (std::size_t i = 0; i < pair.grid.pixel_count(); ++i) {
      scores.add(pixel_score(pair.grid.pixel(i), pair.truth.labels[i]));
    }
  }
  return scores;
}

inline ConformalThreshold fit_seg(std::span<const SegCalibrationPair> pairs, RiskLevel alpha) {
  return conformal_quantile(collect_pixel_scores(pairs), alpha);
}

inline PixelPredictionSet pixel_prediction_set(std::span<const float> probs,
                                               const ConformalThreshold& threshold) {
  PixelPredictionSet set;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (conforms(1.0 - static_cast<double>(probs[k]), threshold)) {
      set.members.push_back(static_cast<std::uint16_t>(k));
    }
  }
  return set;
}

/// Calibrated label of one pixel. All three cases of the mapping reduce to
/// "most probable non-background member of the set, else background":
/// with 0 absent the argmax over the set is already non-background, with 0
/// present it is excluded, and an empty set (or the set {0}) yields 0.
/// Probability ties go to the smaller class id.
inline std::uint16_t calibrated_label(std::span<const float> probs,
                                      const ConformalThreshold& threshold) {
  std::uint16_t best = 0;
  float best_p = -1.0f;
  for (std::size_t k = 1; k < probs.size(); ++k) {
    if (!conforms(1.0 - static_cast<double>(probs[k]), threshold)) continue;
    if (probs[k] > best_p) {
      best_p = probs[k];
      best = static_cast<std::uint16_t>(k);
    }
  }
  return best;
}

inline LabelGrid calibrate_label_grid(const ProbabilityGrid& grid,
                                      const ConformalThreshold& threshold) {
  LabelGrid out(grid.height, grid.width, grid.classes);
  for (std::size_t i = 0; i < grid.pixel_count(); ++i) {
    out.labels[i] = calibrated_label(grid.pixel(i), threshold);
  }
  return out;
}

/// Uncalibrated argmax labelling (ties to the smaller id), for comparison.
inline LabelGrid argmax_label_grid(const ProbabilityGrid& grid) {
  LabelGrid out(grid.height, grid.width, grid.classes);
  for (std::size_t i = 0; i < grid.pixel_count(); ++i) {
    auto p = grid.pixel(i);
    std::uint16_t best = 0;
    for (std::size_t k = 1; k < p.size(); ++k) {
      if (p[k] > p[best]) best = static_cast<std::uint16_t>(k);
    }
    out.labels[i] = best;
  }
  return out;
}

}  // namespace confcal
