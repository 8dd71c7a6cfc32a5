#pragma once

// Empirical checks of the calibrators: coverage, expected calibration error,
// confidence normalisation and parameter sweeps over synthetic scenarios.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "confcal/cp_core.hpp"
#include "confcal/det_calib.hpp"
#include "confcal/json_io.hpp"
#include "confcal/seg_calib.hpp"
#include "confcal/seq_uq.hpp"
#include "confcal/synthetic.hpp"

namespace confcal {

inline constexpr std::size_t kDefaultEceBins = 10;

struct CoverageReport {
  std::size_t trials = 0;
  std::size_t covered = 0;
  double rate = 0.0;
  double target = 0.0;  // 1 - alpha
};

inline CoverageReport make_coverage(std::size_t trials, std::size_t covered, double alpha) {
  return {trials, covered,
          trials == 0 ? 0.0 : static_cast<double>(covered) / static_cast<double>(trials),
          1.0 - alpha};
}

/// A test pixel is covered when its true label is in its prediction set.
inline CoverageReport coverage_seg(const ConformalThreshold& threshold,
                                   std::span<const SegCalibrationPair> test) {
  std::size_t trials = 0, covered = 0;
  for (const auto& pair : test) {
    pair.validate();
    for (std::size_t i = 0; i < pair.grid.pixel_count(); ++i) {
      ++trials;
      if (conforms(pixel_score(pair.grid.pixel(i), pair.truth.labels[i]), threshold)) ++covered;
    }
  }
  return make_coverage(trials, covered, threshold.alpha.value());
}

/// Mean prediction-set size over every test pixel.
inline double mean_set_size(const ConformalThreshold& threshold,
                            std::span<const SegCalibrationPair> test) {
  std::size_t pixels = 0, members = 0;
  for (const auto& pair : test) {
    for (std::size_t i = 0; i < pair.grid.pixel_count(); ++i) {
      ++pixels;
      members += pixel_prediction_set(pair.grid.pixel(i), threshold).size();
    }
  }
  return pixels == 0 ? 0.0 : static_cast<double>(members) / static_cast<double>(pixels);
}

/// A matched pair is covered when the truth box lies inside the
/// conformalized prediction.
inline CoverageReport coverage_det(const DetThreshold& threshold,
                                   std::span<const MatchedPair> pairs) {
  if (!threshold.is_finite()) {
    throw Error(ErrorCode::InfiniteThreshold, "detection threshold has an infinite component");
  }
  std::size_t covered = 0;
  for (const auto& pair : pairs) {
    if (conformalize_box(pair.pred, threshold).box.contains(pair.truth)) ++covered;
  }
  return make_coverage(pairs.size(), covered, threshold.alpha.value());
}

inline std::vector<MatchedPair> match_all(std::span<const DetCalibrationImage> images, double tau) {
  std::vector<MatchedPair> out;
  for (const auto& image : images) {
    auto m = match_boxes(image.predictions, image.truth, tau);
    out.insert(out.end(), m.pairs.begin(), m.pairs.end());
  }
  return out;
}

/// Min-max normalises uncertainty scores over the population and flips them
/// into confidences: the least uncertain answer gets 1, the most uncertain 0.
/// A population without two distinct values maps to all ones.
inline std::vector<double> normalize_confidence(std::span<const double> us_values) {
  std::vector<double> out(us_values.size(), 1.0);
  if (us_values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(us_values.begin(), us_values.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < us_values.size(); ++i) {
    out[i] = 1.0 - (us_values[i] - *lo) / range;
  }
  return out;
}

struct CalibrationRecord {
  double confidence = 0.0;
  bool correct = false;
};

struct EceBin {
  double lower = 0.0;
  double upper = 0.0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;
};

struct ECEReport {
  std::vector<EceBin> bins;
  double ece = 0.0;
  std::size_t total = 0;
};

/// Bin b covers (b/n, (b+1)/n]; confidence 0 falls in bin 0. The ceiling
/// estimate is corrected against the same b/n edges the report prints, since
/// c*n can round across an integer (0.3 * 10 > 3).
inline std::size_t ece_bin_index(double confidence, std::size_t nbins) {
  const double n = static_cast<double>(nbins);
  const double scaled = std::ceil(confidence * n);
  std::size_t b = scaled <= 1.0 ? 0 : std::min(nbins - 1, static_cast<std::size_t>(scaled) - 1);
  while (b > 0 && confidence <= static_cast<double>(b) / n) --b;
  while (b + 1 < nbins && confidence > static_cast<double>(b + 1) / n) ++b;
  return b;
}

inline ECEReport ece(std::span<const CalibrationRecord> records,
                     std::size_t nbins = kDefaultEceBins) {
  if (nbins < 1) throw Error(ErrorCode::InvalidBins, "ECE needs at least one bin");
  for (const auto& r : records) {
    if (!(r.confidence >= 0.0 && r.confidence <= 1.0)) {
      throw Error(ErrorCode::InvariantViolation, "confidence outside [0, 1]");
    }
  }
  // Accumulating in sorted order makes the result independent of record order.
  std::vector<CalibrationRecord> sorted(records.begin(), records.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return a.confidence != b.confidence ? a.confidence < b.confidence : a.correct < b.correct;
  });
  ECEReport report;
  report.total = sorted.size();
  report.bins.resize(nbins);
  std::vector<double> conf_sum(nbins, 0.0);
  std::vector<std::size_t> hits(nbins, 0);
  for (std::size_t b = 0; b < nbins; ++b) {
    report.bins[b].lower = static_cast<double>(b) / static_cast<double>(nbins);
    report.bins[b].upper = static_cast<double>(b + 1) / static_cast<double>(nbins);
  }
  for (const auto& r : sorted) {
    const std::size_t b = ece_bin_index(r.confidence, nbins);
    conf_sum[b] += r.confidence;
    hits[b] += r.correct ? 1 : 0;
    ++report.bins[b].count;
  }
  for (std::size_t b = 0; b < nbins; ++b) {
    auto& bin = report.bins[b];
    if (bin.count == 0) continue;
    const double n = static_cast<double>(bin.count);
    bin.mean_confidence = conf_sum[b] / n;
    bin.accuracy = static_cast<double>(hits[b]) / n;
    report.ece += (n / static_cast<double>(report.total)) *
                  std::fabs(bin.accuracy - bin.mean_confidence);
  }
  return report;
}

inline json to_json(const CoverageReport& r) {
  return {{"trials", r.trials}, {"covered", r.covered}, {"rate", r.rate}, {"target", r.target}};
}

inline json to_json(const ECEReport& r) {
  json bins = json::array();
  for (const auto& b : r.bins) {
    bins.push_back({{"lower", b.lower},
                    {"upper", b.upper},
                    {"mean_confidence", b.mean_confidence},
                    {"accuracy", b.accuracy},
                    {"count", b.count}});
  }
  return {{"ece", r.ece},
          {"total", r.total},
          {"bins", bins},
          {"binning", "equal-width, right-closed; bin count is a convention"}};
}

/// Reliability-diagram data: confidence_mid,accuracy,count per bin.
inline std::string reliability_csv(const ECEReport& r) {
  std::ostringstream out;
  out << "confidence_mid,accuracy,count\n" << std::setprecision(17);
  for (const auto& b : r.bins) {
    out << 0.5 * (b.lower + b.upper) << ',' << b.accuracy << ',' << b.count << '\n';
  }
  return out.str();
}

// --- sweeps ---------------------------------------------------------------

enum class SweepAxis { Alpha, P };

inline std::string_view to_string(SweepAxis a) noexcept { return a == SweepAxis::Alpha ? "alpha" : "p"; }

struct SweepCell {
  std::optional<double> value;
  std::string error;  // set instead of value when the cell failed
};

struct SweepRow {
  double parameter = 0.0;
  std::vector<SweepCell> cells;
};

struct SweepTable {
  SweepAxis axis = SweepAxis::Alpha;
  std::vector<std::string> columns;
  std::vector<SweepRow> rows;
};

/// Alpha sweep over a fixed synthetic segmentation calibration/test split.
struct SegSweepTask {
  synthetic::SegScenario scenario;
  std::size_t calib_images = 200;
  std::size_t test_images = 200;
  std::uint64_t seed = 0;
};

/// Alpha sweep over a fixed synthetic detection split.
struct DetSweepTask {
  synthetic::DetScenario scenario;
  std::size_t calib_images = 1000;
  std::size_t test_images = 1000;
  double tau = kDefaultTau;
  std::uint64_t seed = 0;
};

/// p sweep over a fixed corpus of answer traces; one column per answer.
struct TraceSweepTask {
  std::vector<std::string> names;
  std::vector<TokenDistributionSequence> traces;
};

using SweepTask = std::variant<SegSweepTask, DetSweepTask, TraceSweepTask>;

namespace detail {

template <typename F>
SweepCell guarded_cell(F&& f) {
  try {
    return {f(), {}};
  } catch (const Error& e) {
    return {std::nullopt, e.what()};
  }
}

template <typename F>
void fill_row(SweepTable& table, double param, std::size_t ncols, F&& compute) {
  SweepRow row{param, {}};
  try {
    row.cells = compute();
  } catch (const Error& e) {
    row.cells.assign(ncols, SweepCell{std::nullopt, e.what()});
  }
  table.rows.push_back(std::move(row));
}

}  // namespace detail

inline SweepTable sweep(SweepAxis axis, std::span<const double> values, const SweepTask& task) {
  SweepTable table;
  table.axis = axis;
  if (const auto* seg = std::get_if<SegSweepTask>(&task)) {
    if (axis != SweepAxis::Alpha) throw Error(ErrorCode::InvalidConfig, "segmentation sweeps run over alpha");
    table.columns = {"threshold", "coverage", "target", "mean_set_size"};
    if (values.empty()) return table;
    std::mt19937_64 rng(seg->seed);
    const auto calib = synthetic::make_seg_pairs(seg->scenario, seg->calib_images, rng);
    const auto test = synthetic::make_seg_pairs(seg->scenario, seg->test_images, rng);
    const ScoreSet scores = collect_pixel_scores(calib);
    for (double a : values) {
      detail::fill_row(table, a, table.columns.size(), [&] {
        const auto t = conformal_quantile(scores, RiskLevel(a));
        const auto cov = coverage_seg(t, test);
        return std::vector<SweepCell>{{t.value, {}}, {cov.rate, {}}, {cov.target, {}},
                                      {mean_set_size(t, test), {}}};
      });
    }
    return table;
  }
  if (const auto* det = std::get_if<DetSweepTask>(&task)) {
    if (axis != SweepAxis::Alpha) throw Error(ErrorCode::InvalidConfig, "detection sweeps run over alpha");
    table.columns = {"q1", "q2", "q3", "q4", "coverage", "target"};
    if (values.empty()) return table;
    std::mt19937_64 rng(det->seed);
    const auto calib = synthetic::make_det_images(det->scenario, det->calib_images, rng);
    const auto test = synthetic::make_det_images(det->scenario, det->test_images, rng);
    const auto calib_pairs = match_all(calib, det->tau);
    const auto test_pairs = match_all(test, det->tau);
    for (double a : values) {
      detail::fill_row(table, a, table.columns.size(), [&] {
        const auto t = fit_det_from_pairs(calib_pairs, RiskLevel(a), det->tau);
        std::vector<SweepCell> cells;
        for (double q : t.q) cells.push_back({q, {}});
        cells.push_back(detail::guarded_cell([&] { return coverage_det(t, test_pairs).rate; }));
        cells.push_back({1.0 - a, {}});
        return cells;
      });
    }
    return table;
  }
  const auto& traces = std::get<TraceSweepTask>(task);
  if (axis != SweepAxis::P) throw Error(ErrorCode::InvalidConfig, "trace sweeps run over p");
  table.columns = traces.names;
  for (double p : values) {
    detail::fill_row(table, p, table.columns.size(), [&] {
      const NucleusLevel level(p);
      std::vector<SweepCell> cells;
      for (const auto& trace : traces.traces) {
        cells.push_back(detail::guarded_cell([&] { return uncertainty_top_p(trace, level).value; }));
      }
      return cells;
    });
  }
  return table;
}

inline json to_json(const SweepTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows) {
    json cells = json::array();
    for (const auto& c : r.cells) {
      if (c.value) {
        cells.push_back(detail::extended_real(*c.value));
      } else {
        cells.push_back({{"error", c.error}});
      }
    }
    rows.push_back({{std::string(to_string(t.axis)), r.parameter}, {"cells", cells}});
  }
  return {{"axis", std::string(to_string(t.axis))}, {"columns", t.columns}, {"rows", rows}};
}

/// Aligned plain-text rendering.
inline std::string format_table(const SweepTable& t) {
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{std::string(to_string(t.axis))};
  header.insert(header.end(), t.columns.begin(), t.columns.end());
  grid.push_back(header);
  for (const auto& r : t.rows) {
    std::vector<std::string> line;
    std::ostringstream p;
    p << r.parameter;
    line.push_back(p.str());
    for (const auto& c : r.cells) {
      std::ostringstream v;
      if (c.value) {
        v << std::fixed << std::setprecision(4) << *c.value;
      } else {
        v << "ERR";
      }
      line.push_back(v.str());
    }
    grid.push_back(std::move(line));
  }
  std::vector<std::size_t> widths;
  for (const auto& line : grid) {
    widths.resize(std::max(widths.size(), line.size()), 0);
    for (std::size_t i = 0; i < line.size(); ++i) widths[i] = std::max(widths[i], line[i].size());
  }
  std::ostringstream out;
  for (const auto& line : grid) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      out << (i ? "  " : "") << std::setw(static_cast<int>(widths[i])) << line[i];
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace confcal
