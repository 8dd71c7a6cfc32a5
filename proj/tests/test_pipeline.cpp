#include <gtest/gtest.h>

#include <cmath>

#include "confcal/pipeline.hpp"
#include "support.hpp"

using namespace confcal;

namespace {

/// Segmentation tool returning a fixed grid.
class FixedSegTool final : public SegmentationTool {
 public:
  explicit FixedSegTool(ProbabilityGrid g) : g_(std::move(g)) {}
  ProbabilityGrid segment(const Image&) const override { return g_; }

 private:
  ProbabilityGrid g_;
};

class FixedDetTool final : public DetectionTool {
 public:
  explicit FixedDetTool(DetectionList d) : d_(std::move(d)) {}
  DetectionList detect(const Image&) const override { return d_; }

 private:
  DetectionList d_;
};

class ThrowingSegTool final : public SegmentationTool {
 public:
  ProbabilityGrid segment(const Image&) const override {
    throw Error(ErrorCode::AdapterFailure, "tool crashed");
  }
};

Image test_image() {
  Image img(8, 6, 1);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i + 1);
  return img;
}

// 8x6 grid: class 1 on a 2x2 square at (1,1), class 2 on a 3x1 bar at (4,4).
ProbabilityGrid fixed_grid() {
  ProbabilityGrid g(6, 8, 3);
  for (std::uint32_t y = 0; y < 6; ++y) {
    for (std::uint32_t x = 0; x < 8; ++x) {
      auto p = g.pixel(y, x);
      const bool sq = x >= 1 && x <= 2 && y >= 1 && y <= 2;
      const bool bar = y == 4 && x >= 4 && x <= 6;
      p[0] = sq || bar ? 0.5f : 0.9f;
      p[1] = sq ? 0.375f : 0.05f;
      p[2] = bar ? 0.375f : 0.05f;
      if (sq) p[2] = 0.125f;
      if (bar) p[1] = 0.125f;
    }
  }
  return g;
}

PathwayConfig seg_pathway(std::string id = "seg") {
  PathwayConfig p;
  p.id = std::move(id);
  p.kind = ToolKind::Segmentation;
  p.seg_tool = std::make_shared<FixedSegTool>(fixed_grid());
  p.threshold = ConformalThreshold{0.7, RiskLevel(0.1), 100};
  return p;
}

PathwayConfig det_pathway(std::string id = "det") {
  DetectionList d;
  d.items.push_back({1, 1, 0.9, Box{1.2, 1.2, 3.5, 2.5}});
  d.items.push_back({2, 2, 0.8, Box{5, 3, 7, 5}});
  PathwayConfig p;
  p.id = std::move(id);
  p.kind = ToolKind::Detection;
  p.det_tool = std::make_shared<FixedDetTool>(d);
  p.threshold = DetThreshold{{0.5, 0.5, 0.5, 0.5}, RiskLevel(0.1), 0.5, {100, 100, 100, 100}};
  return p;
}

json step(std::vector<double> probs) { return {{"probs", probs}, {"vocab_size", probs.size()}}; }

json two_step_trace() { return json::array({step({0.5, 0.3, 0.2}), step({0.6, 0.35, 0.05})}); }
json one_hot_trace() { return json::array({step({1.0}), step({1.0})}); }

// Trace with per-step k values drawn from {1..4}: US is their mean.
json trace_with_ks(const std::vector<int>& ks) {
  json arr = json::array();
  for (int k : ks) arr.push_back(step(std::vector<double>(static_cast<std::size_t>(k), 1.0 / k)));
  return arr;
}

}  // namespace

TEST(ParseSelection, FirstIntegerListWins) {
  const auto r = make_det_report(det_pathway().det_tool->detect(Image{}));
  const auto s = parse_selection("Looking at [the car]... ids: [2, 1, 2] then [1]", r);
  EXPECT_EQ(s.selected_ids, (std::vector<int>{2, 1}));
  EXPECT_CONFCAL_ERROR(parse_selection("no list here", r), ErrorCode::SelectionParseError);
  EXPECT_CONFCAL_ERROR(parse_selection("[]", r), ErrorCode::SelectionParseError);
  EXPECT_CONFCAL_ERROR(parse_selection("[3]", r), ErrorCode::SelectionParseError);
}

TEST(Stage1, SegmentationReportFromCalibratedLabels) {
  ScriptedReasoner r(json::parse(R"({"*":{"roi":{"text":"[1]"}}})"));
  const auto s1 = run_stage1(test_image(), "q", seg_pathway(), r);
  ASSERT_TRUE(s1.labels);
  // Background 0.5 vs 0.375: argmax would be background, calibration keeps the object.
  EXPECT_EQ(s1.labels->at(1, 1), 1);
  EXPECT_EQ(s1.labels->at(4, 5), 2);
  EXPECT_EQ(s1.report.objects.size(), 2u);
  EXPECT_EQ(s1.selection.selected_ids, (std::vector<int>{1}));
}

TEST(Stage1, DetectionBoxesAreExpandedAndClipped) {
  ScriptedReasoner r(json::parse(R"({"*":{"roi":{"text":"[2]"}}})"));
  const auto s1 = run_stage1(test_image(), "q", det_pathway(), r);
  const auto& b = std::get<Box>(s1.report.find(2)->geometry);
  EXPECT_EQ(b, (Box{4.5, 2.5, 7.5, 5.5}));
  const auto& b1 = std::get<Box>(s1.report.find(1)->geometry);
  EXPECT_EQ(b1, (Box{0.7, 0.7, 4.0, 3.0}));
}

TEST(Stage1, GridShapeMismatch) {
  ScriptedReasoner r(json::parse(R"({"*":{"roi":{"text":"[1]"}}})"));
  EXPECT_CONFCAL_ERROR(run_stage1(Image(3, 3, 1), "q", seg_pathway(), r), ErrorCode::DimensionMismatch);
}

TEST(Stage1, MismatchedThresholdKindIsConfigError) {
  auto p = seg_pathway();
  p.threshold = det_pathway().threshold;
  ScriptedReasoner r(json::object());
  EXPECT_CONFCAL_ERROR(run_stage1(test_image(), "q", p, r), ErrorCode::InvalidConfig);
}

TEST(ExtractRoi, SegmentationMasksUnselectedPixels) {
  const Image img = test_image();
  LabelGrid labels(6, 8, 3);
  labels.at(1, 1) = labels.at(1, 2) = 1;
  labels.at(2, 2) = 2;  // separate component inside the box
  const auto roi = extract_roi_seg(img, labels, RoISelection{{1}, ""});
  EXPECT_EQ(roi.origin_x, 1u);
  EXPECT_EQ(roi.origin_y, 1u);
  EXPECT_EQ(roi.pixels.width, 2u);
  EXPECT_EQ(roi.pixels.height, 1u);
  EXPECT_EQ(*roi.pixels.at(0, 0), *img.at(1, 1));
  const auto both = extract_roi_seg(img, labels, RoISelection{{1, 2}, ""});
  EXPECT_EQ(both.pixels.height, 2u);
  EXPECT_EQ(*both.pixels.at(0, 1), 0);  // (1,2) is background, masked
  EXPECT_CONFCAL_ERROR(extract_roi_seg(img, labels, RoISelection{{9}, ""}), ErrorCode::EmptyRegion);
  EXPECT_CONFCAL_ERROR(extract_roi_seg(Image(2, 2, 1), labels, RoISelection{{1}, ""}),
                       ErrorCode::DimensionMismatch);
}

TEST(ExtractRoi, DetectionEnclosesAndClips) {
  const Image img = test_image();
  ToolReport r;
  r.kind = ToolKind::Detection;
  r.objects.push_back({1, 1, "a", std::nullopt, Box{0.5, 1.2, 2.1, 3.0}});
  r.objects.push_back({2, 1, "b", std::nullopt, Box{6.5, 4.5, 12, 12}});
  r.objects.push_back({3, 1, "c", std::nullopt, Box{20, 20, 30, 30}});
  const auto roi = extract_roi_det(img, r, RoISelection{{1, 2}, ""});
  EXPECT_EQ(roi.origin_x, 0u);
  EXPECT_EQ(roi.origin_y, 1u);
  EXPECT_EQ(roi.pixels.width, 8u);
  EXPECT_EQ(roi.pixels.height, 5u);
  EXPECT_CONFCAL_ERROR(extract_roi_det(img, r, RoISelection{{3}, ""}), ErrorCode::EmptyRegion);
  EXPECT_CONFCAL_ERROR(extract_roi_det(img, r, RoISelection{{}, ""}), ErrorCode::EmptyRegion);
}

TEST(Stage2, UncertaintyFromTrace) {
  const Image img = test_image();
  const RoIImage roi{crop(img, 0, 0, 2, 2), 0, 0};
  ScriptedReasoner two(json{{"*", {{"answer", {{"text", "two"}, {"trace", two_step_trace()}}}}}});
  EXPECT_EQ(run_stage2(img, "q", roi, seg_pathway(), two).us.value, 2.5);
  ScriptedReasoner one(json{{"*", {{"answer", {{"text", "one"}, {"trace", one_hot_trace()}}}}}});
  const auto a = run_stage2(img, "q", roi, seg_pathway(), one);
  EXPECT_EQ(a.us.value, 1.0);
  EXPECT_EQ(a.answer_text, "one");
  ScriptedReasoner none(json{{"*", {{"answer", {{"text", "no trace"}}}}}});
  EXPECT_CONFCAL_ERROR(run_stage2(img, "q", roi, seg_pathway(), none), ErrorCode::TraceMissing);
}

TEST(SelectAnswer, ArgminWithFirstRegisteredTieBreak) {
  auto make = [](std::string id, double us) {
    PathwayAnswer a;
    a.pathway_id = std::move(id);
    a.us.value = us;
    return a;
  };
  const std::vector<PathwayAnswer> v{make("seg", 2.5), make("det", 1.8)};
  EXPECT_EQ(select_answer(v).pathway_id, "det");
  const std::vector<PathwayAnswer> tie{make("seg", 2.0), make("det", 2.0)};
  EXPECT_EQ(select_answer(tie).pathway_id, "seg");
  const std::vector<PathwayAnswer> single{make("only", 9.0)};
  EXPECT_EQ(select_answer(single).pathway_id, "only");
  EXPECT_CONFCAL_ERROR(select_answer(std::vector<PathwayAnswer>{}), ErrorCode::NoViablePathway);
}

TEST(SelectAnswerProperty, InvariantUnderIncreasingTransforms) {
  testkit::Rng rng(10);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<PathwayAnswer> v(std::uniform_int_distribution<std::size_t>(1, 6)(rng));
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i].pathway_id = std::to_string(i);
      v[i].us.value = std::uniform_int_distribution<int>(1, 8)(rng) / 2.0;
    }
    const auto pick = select_answer(v).pathway_id;
    for (auto& a : v) a.us.value = std::exp(3.0 * a.us.value) + 7.0;
    ASSERT_EQ(select_answer(v).pathway_id, pick);
  }
}

TEST(Pipeline, LowerUncertaintyPathwayWinsInScriptedTrials) {
  testkit::Rng rng(2025);
  const std::vector<PathwayConfig> pathways{seg_pathway(), det_pathway()};
  const Image img = test_image();
  int wins = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> ks_seg(std::uniform_int_distribution<std::size_t>(1, 6)(rng));
    std::vector<int> ks_det(std::uniform_int_distribution<std::size_t>(1, 6)(rng));
    for (auto& k : ks_seg) k = std::uniform_int_distribution<int>(1, 4)(rng);
    for (auto& k : ks_det) k = std::uniform_int_distribution<int>(1, 4)(rng);
    auto mean = [](const std::vector<int>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
    const json script{
        {"seg", {{"roi", {{"text", "[1]"}}}, {"answer", {{"text", "seg answer"}, {"trace", trace_with_ks(ks_seg)}}}}},
        {"det", {{"roi", {{"text", "[2]"}}}, {"answer", {{"text", "det answer"}, {"trace", trace_with_ks(ks_det)}}}}}};
    const auto result = run_pipeline(img, "q", pathways, ScriptedReasoner(script));
    const std::string expected = mean(ks_det) < mean(ks_seg) ? "det answer" : "seg answer";
    wins += result.answer.answer_text == expected;
  }
  EXPECT_EQ(wins, 100);
}

TEST(Pipeline, StageOneFailureDropsOnlyThatPathway) {
  const json script{{"seg", {{"roi", {{"text", "nothing relevant"}}}, {"answer", {{"text", "s"}, {"trace", one_hot_trace()}}}}},
                    {"det", {{"roi", {{"text", "[1]"}}}, {"answer", {{"text", "d"}, {"trace", two_step_trace()}}}}}};
  const std::vector<PathwayConfig> pathways{seg_pathway(), det_pathway()};
  const auto result = run_pipeline(test_image(), "q", pathways, ScriptedReasoner(script));
  EXPECT_EQ(result.answer.answer_text, "d");
  EXPECT_EQ(result.trace["pathways"][0]["status"], "dropped");
  EXPECT_EQ(result.trace["pathways"][0]["error"]["code"], "SelectionParseError");
  EXPECT_EQ(result.trace["pathways"][1]["status"], "ok");
  EXPECT_EQ(result.trace["selected"]["pathway"], "det");
}

TEST(Pipeline, ToolCrashAndMissingTraceAreDropped) {
  auto broken = seg_pathway("broken");
  broken.seg_tool = std::make_shared<ThrowingSegTool>();
  const json script{{"*", {{"roi", {{"text", "[1]"}}}}},
                    {"det", {{"answer", {{"text", "d"}}}}},  // no trace
                    {"seg", {{"answer", {{"text", "s"}, {"trace", two_step_trace()}}}}}};
  const std::vector<PathwayConfig> pathways{broken, det_pathway(), seg_pathway()};
  const auto result = run_pipeline(test_image(), "q", pathways, ScriptedReasoner(script));
  EXPECT_EQ(result.answer.pathway_id, "seg");
  EXPECT_EQ(result.trace["pathways"][0]["error"]["code"], "AdapterFailure");
  EXPECT_EQ(result.trace["pathways"][1]["error"]["code"], "TraceMissing");
}

TEST(Pipeline, AllPathwaysFailing) {
  const std::vector<PathwayConfig> pathways{seg_pathway(), det_pathway()};
  EXPECT_CONFCAL_ERROR(run_pipeline(test_image(), "q", pathways, ScriptedReasoner(json::object())),
                       ErrorCode::NoViablePathway);
  EXPECT_CONFCAL_ERROR(run_pipeline(test_image(), "q", std::vector<PathwayConfig>{}, SeededReasoner(1)),
                       ErrorCode::NoViablePathway);
}

TEST(Pipeline, BadNucleusRejectedUpFront) {
  const std::vector<PathwayConfig> pathways{seg_pathway()};
  PipelineOptions opt;
  opt.p = 0.0;
  EXPECT_CONFCAL_ERROR(run_pipeline(test_image(), "q", pathways, SeededReasoner(1), opt),
                       ErrorCode::InvalidNucleus);
}

TEST(Pipeline, SeededRunsAreByteIdenticalSequentialOrConcurrent) {
  Image img(48, 40, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i * 31);
  auto make = [] {
    std::vector<PathwayConfig> v;
    PathwayConfig s;
    s.id = "seg";
    s.kind = ToolKind::Segmentation;
    s.seg_tool = std::make_shared<SyntheticSegmentationTool>(11);
    s.threshold = ConformalThreshold{0.8, RiskLevel(0.1), 1000};
    v.push_back(s);
    PathwayConfig d;
    d.id = "det";
    d.kind = ToolKind::Detection;
    d.det_tool = std::make_shared<SyntheticDetectionTool>(12);
    d.threshold = DetThreshold{{2, 2, 2, 2}, RiskLevel(0.1), 0.5, {500, 500, 500, 500}};
    v.push_back(d);
    return v;
  };
  PipelineOptions seq, par;
  par.concurrent = true;
  const auto a = run_pipeline(img, "what is here?", make(), SeededReasoner(42), seq).trace.dump();
  const auto b = run_pipeline(img, "what is here?", make(), SeededReasoner(42), seq).trace.dump();
  const auto c = run_pipeline(img, "what is here?", make(), SeededReasoner(42), par).trace.dump();
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
  const auto other = run_pipeline(img, "what is here?", make(), SeededReasoner(43), seq).trace.dump();
  EXPECT_NE(a, other);
}

TEST(Pipeline, EntropyMethodIsRecordedInTrace) {
  const json script{{"*", {{"roi", {{"text", "[1]"}}}, {"answer", {{"text", "x"}, {"trace", two_step_trace()}}}}}};
  PipelineOptions opt;
  opt.method = UqMethod::Entropy;
  const std::vector<PathwayConfig> pathways{seg_pathway()};
  const auto result = run_pipeline(test_image(), "q", pathways, ScriptedReasoner(script), opt);
  EXPECT_EQ(result.trace["uq"]["method"], "entropy");
  EXPECT_EQ(result.answer.us.method, UqMethod::Entropy);
}
