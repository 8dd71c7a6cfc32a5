#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "confcal/json_io.hpp"
#include "confcal/synthetic.hpp"
#include "support.hpp"

using namespace confcal;

TEST(ThresholdJson, SegRoundTripIncludingInfinity) {
  for (double q : {0.25, 0.123456789012345, std::numeric_limits<double>::infinity()}) {
    const ConformalThreshold t{q, RiskLevel(0.1), 812};
    const json j = parse_json(to_json(t).dump());
    const auto back = seg_threshold_from_json(j);
    EXPECT_EQ(back.value, t.value);
    EXPECT_EQ(back.alpha.value(), 0.1);
    EXPECT_EQ(back.n, 812u);
  }
  EXPECT_EQ(to_json(ConformalThreshold{std::numeric_limits<double>::infinity(), RiskLevel(0.1), 1})["q"], "inf");
}

TEST(ThresholdJson, SegShape) {
  const json j = to_json(ConformalThreshold{0.9, RiskLevel(0.1), 10});
  EXPECT_EQ(j, json::parse(R"({"kind":"seg","alpha":0.1,"q":0.9,"n":10})"));
}

TEST(ThresholdJson, DetRoundTrip) {
  const DetThreshold t{{1.5, -2.0, 3.25, std::numeric_limits<double>::infinity()}, RiskLevel(0.2), 0.6,
                       {7, 7, 7, 7}};
  const auto back = det_threshold_from_json(parse_json(to_json(t).dump()));
  EXPECT_EQ(back.q, t.q);
  EXPECT_EQ(back.counts, t.counts);
  EXPECT_EQ(back.tau, 0.6);
}

TEST(ThresholdJson, MalformedInputs) {
  EXPECT_CONFCAL_ERROR(seg_threshold_from_json(json::parse(R"({"kind":"det","alpha":0.1,"q":1,"n":1})")),
                       ErrorCode::InvariantViolation);
  EXPECT_CONFCAL_ERROR(seg_threshold_from_json(json::parse(R"({"kind":"seg","alpha":0.1})")),
                       ErrorCode::InvariantViolation);
  EXPECT_CONFCAL_ERROR(seg_threshold_from_json(json::parse(R"({"kind":"seg","alpha":1.5,"q":1,"n":1})")),
                       ErrorCode::InvalidRisk);
  EXPECT_CONFCAL_ERROR(seg_threshold_from_json(json::parse(R"({"kind":"seg","alpha":0.1,"q":"-inf","n":1})")),
                       ErrorCode::InvariantViolation);
  EXPECT_CONFCAL_ERROR(
      det_threshold_from_json(json::parse(R"({"kind":"det","alpha":0.1,"tau":0.5,"q":[1,2],"counts":[1,1]})")),
      ErrorCode::InvariantViolation);
  EXPECT_CONFCAL_ERROR(
      det_threshold_from_json(
          json::parse(R"({"kind":"det","alpha":0.1,"tau":1.0,"q":[1,2,3,4],"counts":[1,1,1,1]})")),
      ErrorCode::InvalidTau);
  EXPECT_CONFCAL_ERROR(parse_json("{not json"), ErrorCode::InvariantViolation);
}

TEST(DetectionJson, RoundTripWithOptionalFields) {
  DetectionList l;
  l.items.push_back({4, 2, 0.75, Box{1, 2, 3, 4}});
  l.items.push_back({5, std::nullopt, std::nullopt, Box{0.5, 0.5, 9.25, 7}});
  const auto back = detections_from_json(parse_json(to_json(l).dump()));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.items[0].class_id, 2);
  EXPECT_EQ(back.items[1].confidence, std::nullopt);
  EXPECT_EQ(back.items[1].box, (Box{0.5, 0.5, 9.25, 7}));
}

TEST(DetectionJson, IdsDefaultToRunningIndex) {
  const auto l = detections_from_json(json::parse(
      R"({"boxes":[{"x_min":0,"y_min":0,"x_max":1,"y_max":1},{"x_min":2,"y_min":2,"x_max":3,"y_max":3}]})"));
  EXPECT_EQ(l.items[0].id, 0);
  EXPECT_EQ(l.items[1].id, 1);
}

TEST(DetectionJson, InvalidBoxRejected) {
  EXPECT_CONFCAL_ERROR(
      detections_from_json(json::parse(R"({"boxes":[{"x_min":5,"y_min":0,"x_max":1,"y_max":1}]})")),
      ErrorCode::InvariantViolation);
  EXPECT_CONFCAL_ERROR(detections_from_json(json::parse(R"({"boxes":[{"x_min":0}]})")),
                       ErrorCode::InvariantViolation);
}

TEST(TraceJsonl, RoundTripIsExact) {
  testkit::Rng rng(6);
  const auto seq = synthetic::make_trace(20, 50, 0.3, rng);
  const auto back = parse_trace_jsonl(encode_trace_jsonl(seq));
  ASSERT_EQ(back.size(), seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) EXPECT_EQ(back[i].probs, seq[i].probs);
}

TEST(TraceJsonl, BlankLinesIgnoredAndBadLinesRejected) {
  const auto seq = parse_trace_jsonl("\n{\"probs\":[1.0],\"vocab_size\":3}\n  \n");
  ASSERT_EQ(seq.size(), 1u);
  EXPECT_EQ(seq[0].tail_mass, 0.0);
  EXPECT_CONFCAL_ERROR(parse_trace_jsonl("{\"probs\":[0.2,0.8],\"vocab_size\":2}\n"),
                       ErrorCode::InvariantViolation);
  EXPECT_CONFCAL_ERROR(parse_trace_jsonl("[1,2]\n"), ErrorCode::InvariantViolation);
}

TEST(ScoresJson, ParsesNumbers) {
  EXPECT_EQ(scores_from_json(json::parse("[1, 2.5]")).size(), 2u);
  EXPECT_CONFCAL_ERROR(scores_from_json(json::parse("{}")), ErrorCode::InvariantViolation);
  EXPECT_CONFCAL_ERROR(scores_from_json(json::parse("[\"a\"]")), ErrorCode::InvariantViolation);
}

TEST(ReportJson, SegmentationBoundaryShape) {
  LabelGrid g(1, 1, 2);
  g.labels = {1};
  const json j = to_json(make_seg_report(g));
  EXPECT_EQ(j["kind"], "segmentation");
  EXPECT_EQ(j["objects"][0]["boundary"], json::parse("[[0,0],[1,0],[1,1],[0,1]]"));
  EXPECT_EQ(j["objects"][0]["name"], "class_1");
}
