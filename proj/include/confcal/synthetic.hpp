#pragma once

// Seeded synthetic scenarios. Segmentation truth labels are drawn from each
// pixel's own probability vector, so calibration and test pixels are
// exchangeable by construction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "confcal/det_calib.hpp"
#include "confcal/seg_calib.hpp"
#include "confcal/seq_uq.hpp"

namespace confcal::synthetic {

struct SegScenario {
  std::uint32_t height = 32;
  std::uint32_t width = 32;
  std::uint32_t classes = 5;  // K + 1
  std::uint32_t objects_per_image = 3;
  double object_strength = 2.0;     // logit boost of an object's class
  double background_bias = 1.0;     // logit boost of class 0 everywhere
  double noise = 1.0;               // per-pixel logit noise (std dev)
};

namespace detail {

inline std::vector<double> softmax(const std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp(logits[k] - mx);
    sum += out[k];
  }
  for (double& v : out) v /= sum;
  return out;
}

template <typename Rng>
std::uint16_t sample_label(std::span<const float> probs, Rng& rng) {
  double total = 0.0;
  for (float p : probs) total += p;
  const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  double acc = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    acc += probs[k];
    if (u < acc) return static_cast<std::uint16_t>(k);
  }
  for (std::size_t k = probs.size(); k-- > 0;) {
    if (probs[k] > 0.0f) return static_cast<std::uint16_t>(k);
  }
  return 0;
}

}  // namespace detail

/// One probability grid with rectangular objects; background dominates
/// outside them and competes with the object class inside.
template <typename Rng>
ProbabilityGrid make_seg_grid(const SegScenario& sc, Rng& rng) {
  ProbabilityGrid grid(sc.height, sc.width, sc.classes);
  std::vector<std::uint16_t> base(grid.pixel_count(), 0);
  std::uniform_int_distribution<std::uint32_t> cls(1, sc.classes - 1);
  for (std::uint32_t o = 0; o < sc.objects_per_image; ++o) {
    const std::uint32_t w = std::uniform_int_distribution<std::uint32_t>(1, std::max(1u, sc.width / 2))(rng);
    const std::uint32_t h = std::uniform_int_distribution<std::uint32_t>(1, std::max(1u, sc.height / 2))(rng);
    const std::uint32_t x0 = std::uniform_int_distribution<std::uint32_t>(0, sc.width - w)(rng);
    const std::uint32_t y0 = std::uniform_int_distribution<std::uint32_t>(0, sc.height - h)(rng);
    const auto c = static_cast<std::uint16_t>(cls(rng));
    for (std::uint32_t y = y0; y < y0 + h; ++y) {
      for (std::uint32_t x = x0; x < x0 + w; ++x) base[std::size_t{y} * sc.width + x] = c;
    }
  }
  std::normal_distribution<double> noise(0.0, sc.noise);
  std::vector<double> logits(sc.classes);
  for (std::size_t i = 0; i < grid.pixel_count(); ++i) {
    for (std::uint32_t k = 0; k < sc.classes; ++k) {
      logits[k] = noise(rng) + (k == 0 ? sc.background_bias : 0.0) +
                  (k == base[i] && k != 0 ? sc.object_strength : 0.0);
    }
    const auto p = detail::softmax(logits);
    auto out = grid.pixel(i);
    for (std::uint32_t k = 0; k < sc.classes; ++k) out[k] = static_cast<float>(p[k]);
  }
  return grid;
}

template <typename Rng>
LabelGrid sample_truth(const ProbabilityGrid& grid, Rng& rng) {
  LabelGrid truth(grid.height, grid.width, grid.classes);
  for (std::size_t i = 0; i < grid.pixel_count(); ++i) {
    truth.labels[i] = detail::sample_label(grid.pixel(i), rng);
  }
  return truth;
}

template <typename Rng>
std::vector<SegCalibrationPair> make_seg_pairs(const SegScenario& sc, std::size_t count, Rng& rng) {
  std::vector<SegCalibrationPair> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SegCalibrationPair pair;
    pair.grid = make_seg_grid(sc, rng);
    pair.truth = sample_truth(pair.grid, rng);
    out.push_back(std::move(pair));
  }
  return out;
}

struct DetScenario {
  std::uint32_t boxes_per_image = 5;
  double min_size = 30.0;
  double max_size = 80.0;
  double noise = 4.0;  // half-width of the uniform per-coordinate noise
  double cell = 120.0; // boxes are placed in disjoint cells of this size
};

/// Ground-truth boxes in disjoint cells, predictions = truth + i.i.d.
/// uniform noise on each coordinate.
template <typename Rng>
DetCalibrationImage make_det_image(const DetScenario& sc, Rng& rng) {
  DetCalibrationImage image;
  std::uniform_real_distribution<double> size(sc.min_size, sc.max_size);
  std::uniform_real_distribution<double> jitter(-sc.noise, sc.noise);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::uint32_t b = 0; b < sc.boxes_per_image; ++b) {
    const double w = size(rng), h = size(rng);
    const double cx = b * sc.cell + sc.noise + unit(rng) * (sc.cell - w - 2 * sc.noise);
    const double cy = sc.noise + unit(rng) * (sc.cell - h - 2 * sc.noise);
    const Box truth{cx, cy, cx + w, cy + h};
    Box pred{truth.x_min + jitter(rng), truth.y_min + jitter(rng), truth.x_max + jitter(rng),
             truth.y_max + jitter(rng)};
    image.truth.items.push_back({static_cast<int>(b), 1, std::nullopt, truth});
    image.predictions.items.push_back({static_cast<int>(b), 1, 0.5 + 0.5 * unit(rng), pred});
  }
  return image;
}

template <typename Rng>
std::vector<DetCalibrationImage> make_det_images(const DetScenario& sc, std::size_t count,
                                                 Rng& rng) {
  std::vector<DetCalibrationImage> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(make_det_image(sc, rng));
  return out;
}

/// Full-vocabulary step: gamma-weighted probabilities, sorted descending.
/// Small `concentration` gives peaked distributions.
template <typename Rng>
TokenDistribution make_token_distribution(std::size_t vocab, double concentration, Rng& rng) {
  std::gamma_distribution<double> g(concentration, 1.0);
  TokenDistribution d;
  d.vocab_size = vocab;
  d.probs.resize(vocab);
  double sum = 0.0;
  for (auto& p : d.probs) {
    p = g(rng) + 1e-300;
    sum += p;
  }
  for (auto& p : d.probs) p /= sum;
  std::sort(d.probs.begin(), d.probs.end(), std::greater<>());
  return d;
}

template <typename Rng>
TokenDistributionSequence make_trace(std::size_t steps, std::size_t vocab, double concentration,
                                     Rng& rng) {
  TokenDistributionSequence seq;
  seq.reserve(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    seq.push_back(make_token_distribution(vocab, concentration, rng));
  }
  return seq;
}

}  // namespace confcal::synthetic
