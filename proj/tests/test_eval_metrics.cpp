#include <gtest/gtest.h>

#include <cmath>

#include "confcal/eval_metrics.hpp"
#include "confcal/synthetic.hpp"
#include "support.hpp"

using namespace confcal;

namespace {

// Direct definition: scan each bin's (lower, upper] interval.
double ece_oracle(const std::vector<CalibrationRecord>& recs, std::size_t nbins) {
  double total = 0.0;
  for (std::size_t b = 0; b < nbins; ++b) {
    const double lo = double(b) / double(nbins), hi = double(b + 1) / double(nbins);
    double conf = 0.0, acc = 0.0;
    std::size_t count = 0;
    for (const auto& r : recs) {
      const bool in = (r.confidence > lo && r.confidence <= hi) || (b == 0 && r.confidence == 0.0);
      if (!in) continue;
      ++count;
      conf += r.confidence;
      acc += r.correct;
    }
    if (count) total += count * std::fabs(acc / count - conf / count);
  }
  return total / recs.size();
}

}  // namespace

TEST(NormalizeConfidence, Examples) {
  const std::vector<double> us{1.0, 3.0};
  EXPECT_EQ(normalize_confidence(us), (std::vector<double>{1.0, 0.0}));
  const std::vector<double> same{2.0, 2.0, 2.0};
  EXPECT_EQ(normalize_confidence(same), (std::vector<double>{1.0, 1.0, 1.0}));
  const std::vector<double> three{1.0, 2.0, 5.0};
  EXPECT_EQ(normalize_confidence(three), (std::vector<double>{1.0, 0.75, 0.0}));
  EXPECT_TRUE(normalize_confidence(std::vector<double>{}).empty());
}

TEST(NormalizeConfidenceProperty, OrderReversingAndInUnitInterval) {
  testkit::Rng rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    auto us = testkit::random_multiset(rng);
    const auto c = normalize_confidence(us);
    for (std::size_t i = 0; i < us.size(); ++i) {
      ASSERT_GE(c[i], 0.0);
      ASSERT_LE(c[i], 1.0);
      for (std::size_t j = 0; j < us.size(); ++j) {
        if (us[i] < us[j]) {
          ASSERT_GE(c[i], c[j]);
        }
      }
    }
  }
}

TEST(Ece, SingleBinGap) {
  // Five records at 0.8 with three correct: |0.6 - 0.8| = 0.2.
  std::vector<CalibrationRecord> recs{{0.8, true}, {0.8, true}, {0.8, true}, {0.8, false}, {0.8, false}};
  EXPECT_NEAR(ece(recs).ece, 0.2, 1e-12);
}

TEST(Ece, PerfectlyCalibrated) {
  std::vector<CalibrationRecord> recs;
  for (int i = 0; i < 10; ++i) recs.push_back({0.7, i < 7});
  for (int i = 0; i < 4; ++i) recs.push_back({0.25, i < 1});
  for (int i = 0; i < 2; ++i) recs.push_back({1.0, true});
  EXPECT_LT(ece(recs).ece, 1e-12);
}

TEST(Ece, ErrorsAndEdges) {
  std::vector<CalibrationRecord> recs{{0.5, true}};
  EXPECT_CONFCAL_ERROR(ece(recs, 0), ErrorCode::InvalidBins);
  std::vector<CalibrationRecord> bad{{1.5, true}};
  EXPECT_CONFCAL_ERROR(ece(bad), ErrorCode::InvariantViolation);
  EXPECT_EQ(ece(std::vector<CalibrationRecord>{}).ece, 0.0);
}

TEST(EceBinIndex, RightClosedEdges) {
  EXPECT_EQ(ece_bin_index(0.0, 10), 0u);
  EXPECT_EQ(ece_bin_index(0.1, 10), 0u);
  EXPECT_EQ(ece_bin_index(0.3, 10), 2u);  // 0.3*10 rounds above 3
  EXPECT_EQ(ece_bin_index(0.30000000000000004, 10), 3u);
  EXPECT_EQ(ece_bin_index(1.0, 10), 9u);
  EXPECT_EQ(ece_bin_index(0.7, 1), 0u);
}

TEST(EceProperty, MatchesIntervalScanOracle) {
  testkit::Rng rng(8);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 60)(rng);
    const std::size_t bins = std::uniform_int_distribution<std::size_t>(1, 20)(rng);
    std::vector<CalibrationRecord> recs;
    for (std::size_t i = 0; i < n; ++i) {
      // Half the draws sit exactly on decimal bin edges.
      const double c = rng() % 2 ? std::uniform_int_distribution<int>(0, 20)(rng) / 20.0
                                 : std::uniform_real_distribution<double>(0, 1)(rng);
      recs.push_back({c, static_cast<bool>(rng() % 2)});
    }
    const auto r = ece(recs, bins);
    ASSERT_NEAR(r.ece, ece_oracle(recs, bins), 1e-12);
    ASSERT_GE(r.ece, 0.0);
    ASSERT_LE(r.ece, 1.0);
    std::size_t total = 0;
    for (const auto& b : r.bins) total += b.count;
    ASSERT_EQ(total, n);
    std::shuffle(recs.begin(), recs.end(), rng);
    ASSERT_EQ(ece(recs, bins).ece, r.ece);  // record order is irrelevant
  }
}

TEST(ReliabilityCsv, OneLinePerBin) {
  std::vector<CalibrationRecord> recs{{0.95, true}};
  const auto csv = reliability_csv(ece(recs, 4));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_EQ(csv.rfind("confidence_mid,accuracy,count\n", 0), 0u);
}

TEST(CoverageSeg, CountsPixels) {
  SegCalibrationPair p{ProbabilityGrid(1, 2, 2), LabelGrid(1, 2, 2)};
  p.grid.probs = {0.75f, 0.25f, 0.5f, 0.5f};
  p.truth.labels = {1, 0};
  const std::vector<SegCalibrationPair> test{p};
  const auto r = coverage_seg({0.5, RiskLevel(0.1), 10}, test);
  EXPECT_EQ(r.trials, 2u);
  EXPECT_EQ(r.covered, 1u);  // score 0.75 > 0.5, score 0.5 <= 0.5
  EXPECT_DOUBLE_EQ(r.target, 0.9);
  EXPECT_DOUBLE_EQ(mean_set_size({0.5, RiskLevel(0.1), 10}, test), 1.5);
}

TEST(CoverageSeg, SyntheticHoldsAtSeveralAlphas) {
  testkit::Rng rng(4);
  synthetic::SegScenario sc;
  sc.height = sc.width = 16;
  const auto calib = synthetic::make_seg_pairs(sc, 60, rng);
  const auto test = synthetic::make_seg_pairs(sc, 60, rng);
  for (double a : {0.05, 0.1, 0.2}) {
    const auto t = fit_seg(calib, RiskLevel(a));
    EXPECT_GE(coverage_seg(t, test).rate, 1.0 - a - 0.01) << a;
  }
}

TEST(CoverageDet, InfiniteThresholdRejected) {
  const DetThreshold t{{1, 1, 1, std::numeric_limits<double>::infinity()}, RiskLevel(0.1), 0.5, {}};
  EXPECT_CONFCAL_ERROR(coverage_det(t, std::vector<MatchedPair>{}), ErrorCode::InfiniteThreshold);
}

TEST(Sweep, TracePAxisIsMonotonePerAnswer) {
  testkit::Rng rng(12);
  TraceSweepTask task;
  for (int i = 0; i < 20; ++i) {
    task.names.push_back("a" + std::to_string(i));
    task.traces.push_back(synthetic::make_trace(8, 24, 0.2 + 0.05 * i, rng));
  }
  const std::vector<double> ps{0.8, 0.85, 0.9, 0.95};
  const auto table = sweep(SweepAxis::P, ps, task);
  ASSERT_EQ(table.rows.size(), 4u);
  for (std::size_t c = 0; c < task.names.size(); ++c) {
    for (std::size_t r = 1; r < table.rows.size(); ++r) {
      EXPECT_GE(*table.rows[r].cells[c].value, *table.rows[r - 1].cells[c].value);
    }
  }
}

TEST(Sweep, BadParameterAnnotatesRowInsteadOfAborting) {
  TraceSweepTask task{{"t"}, {{TokenDistribution{{1.0}, 2, 0.0}}}};
  const std::vector<double> ps{0.9, 1.5};
  const auto table = sweep(SweepAxis::P, ps, task);
  ASSERT_EQ(table.rows.size(), 2u);
  EXPECT_EQ(*table.rows[0].cells[0].value, 1.0);
  EXPECT_FALSE(table.rows[1].cells[0].value);
  EXPECT_NE(table.rows[1].cells[0].error.find("InvalidNucleus"), std::string::npos);
  const json j = to_json(table);
  EXPECT_TRUE(j["rows"][1]["cells"][0].contains("error"));
  EXPECT_NE(format_table(table).find("ERR"), std::string::npos);
}

TEST(Sweep, EmptyTraceCellIsAnnotated) {
  TraceSweepTask task{{"empty"}, {TokenDistributionSequence{}}};
  const std::vector<double> ps{0.9};
  const auto table = sweep(SweepAxis::P, ps, task);
  EXPECT_NE(table.rows[0].cells[0].error.find("EmptySequence"), std::string::npos);
}

TEST(Sweep, AxisMustMatchTask) {
  const std::vector<double> v{0.1};
  EXPECT_CONFCAL_ERROR(sweep(SweepAxis::P, v, SegSweepTask{}), ErrorCode::InvalidConfig);
  EXPECT_CONFCAL_ERROR(sweep(SweepAxis::Alpha, v, TraceSweepTask{}), ErrorCode::InvalidConfig);
}

TEST(Sweep, SegAlphaSweepCoverageAndShrinkingSets) {
  SegSweepTask task;
  task.calib_images = task.test_images = 30;
  task.seed = 3;
  const std::vector<double> alphas{0.05, 0.1, 0.2};
  const auto table = sweep(SweepAxis::Alpha, alphas, task);
  ASSERT_EQ(table.columns.size(), 4u);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_GE(*table.rows[r].cells[1].value, 1.0 - alphas[r] - 0.02);
    if (r) {
      EXPECT_LE(*table.rows[r].cells[3].value, *table.rows[r - 1].cells[3].value);
    }
  }
}

TEST(Sweep, DetTinyCalibrationReportsInfiniteThreshold) {
  DetSweepTask task;
  task.calib_images = 1;  // 5 pairs: every quantile is +inf
  task.test_images = 2;
  const std::vector<double> alphas{0.1};
  const auto table = sweep(SweepAxis::Alpha, alphas, task);
  EXPECT_TRUE(std::isinf(*table.rows[0].cells[0].value));
  EXPECT_NE(table.rows[0].cells[4].error.find("InfiniteThreshold"), std::string::npos);
  EXPECT_EQ(to_json(table)["rows"][0]["cells"][0], "inf");
}
