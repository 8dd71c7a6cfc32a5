#pragma once

// Two-stage reasoning pipeline. Stage 1 calls a calibrated vision tool,
// renders its output as a text report and asks the reasoning model which
// objects matter; the selected region is cut out of the image. Stage 2 asks
// for the final answer and scores its token trace. Across pathways the answer
// with the lowest uncertainty wins.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "confcal/adapter.hpp"
#include "confcal/cp_core.hpp"
#include "confcal/det_calib.hpp"
#include "confcal/error.hpp"
#include "confcal/image.hpp"
#include "confcal/json_io.hpp"
#include "confcal/report.hpp"
#include "confcal/seg_calib.hpp"
#include "confcal/seq_uq.hpp"

namespace confcal {

inline constexpr std::string_view kDefaultRoiPrompt =
    "You are given the objects found in the image by a vision tool, each with an id. "
    "Consider the semantic, location, size relationships between all objects and how they "
    "relate to the question. Reason step by step, then give the ids of the objects of "
    "interest as a JSON list, e.g. [1, 3].";

inline constexpr std::string_view kDefaultAnswerPrompt =
    "The second image is a region of the first image selected as relevant to the question. "
    "Look at the whole image first, then at the region details, and answer the question.";

using ToolThreshold = std::variant<ConformalThreshold, DetThreshold>;

struct PathwayConfig {
  std::string id;
  ToolKind kind = ToolKind::Segmentation;
  std::shared_ptr<const SegmentationTool> seg_tool;
  std::shared_ptr<const DetectionTool> det_tool;
  ToolThreshold threshold{ConformalThreshold{0.0, RiskLevel(0.1), 0}};
  std::string prompt_roi{kDefaultRoiPrompt};
  std::string prompt_answer{kDefaultAnswerPrompt};
  std::vector<std::string> class_names;

  void validate() const {
    const bool seg = kind == ToolKind::Segmentation;
    if (seg != std::holds_alternative<ConformalThreshold>(threshold)) {
      throw Error(ErrorCode::InvalidConfig, "pathway " + id + ": threshold kind does not match tool kind");
    }
    if (seg ? !seg_tool : !det_tool) {
      throw Error(ErrorCode::InvalidConfig, "pathway " + id + ": no tool adapter");
    }
  }
};

struct PipelineOptions {
  UqMethod method = UqMethod::TopP;
  double p = kDefaultNucleus;
  bool concurrent = false;
};

struct RoISelection {
  std::vector<int> selected_ids;
  std::string rationale;
};

struct Stage1Result {
  ToolReport report;
  RoISelection selection;
  std::optional<LabelGrid> labels;  // segmentation pathways only
  std::size_t repaired_boxes = 0;
};

struct PathwayAnswer {
  std::string pathway_id;
  std::string answer_text;
  TokenDistributionSequence token_trace;
  UncertaintyScore us;
};

/// Ids come from the first JSON array of integers found in the reply; every
/// id must name an object of the report.
inline RoISelection parse_selection(std::string_view reply, const ToolReport& report) {
  for (std::size_t open = reply.find('['); open != std::string_view::npos;
       open = reply.find('[', open + 1)) {
    const std::size_t close = reply.find(']', open);
    if (close == std::string_view::npos) break;
    const json candidate = json::parse(reply.substr(open, close - open + 1), nullptr, false);
    if (candidate.is_discarded() || !candidate.is_array() || candidate.empty()) continue;
    if (!std::all_of(candidate.begin(), candidate.end(),
                     [](const json& v) { return v.is_number_integer() || v.is_number_unsigned(); })) {
      continue;
    }
    RoISelection sel;
    sel.rationale = std::string(reply);
    std::set<int> seen;
    for (const auto& v : candidate) {
      const int id = v.get<int>();
      if (!report.find(id)) {
        throw Error(ErrorCode::SelectionParseError,
                    "reply selects object " + std::to_string(id) + " which is not in the report");
      }
      if (seen.insert(id).second) sel.selected_ids.push_back(id);
    }
    return sel;
  }
  throw Error(ErrorCode::SelectionParseError, "reply contains no JSON list of object ids");
}

inline Stage1Result run_stage1(const Image& image, std::string_view question,
                               const PathwayConfig& pathway, const Reasoner& reasoner) {
  pathway.validate();
  Stage1Result result;
  const Box extent{0.0, 0.0, static_cast<double>(image.width), static_cast<double>(image.height)};
  if (pathway.kind == ToolKind::Segmentation) {
    const auto& threshold = std::get<ConformalThreshold>(pathway.threshold);
    ProbabilityGrid grid = pathway.seg_tool->segment(image);
    grid.validate();
    if (grid.height != image.height || grid.width != image.width) {
      throw Error(ErrorCode::DimensionMismatch, "segmentation grid does not match image extent");
    }
    result.labels = calibrate_label_grid(grid, threshold);
    result.report = make_seg_report(*result.labels, pathway.class_names);
  } else {
    const auto& threshold = std::get<DetThreshold>(pathway.threshold);
    DetectionList dets = pathway.det_tool->detect(image);
    dets.validate();
    for (auto& d : dets.items) {
      const auto c = conformalize_box(d.box, threshold, extent);
      d.box = c.box;
      result.repaired_boxes += c.repaired ? 1 : 0;
    }
    result.report = make_det_report(dets, pathway.class_names);
  }
  ReasonerRequest req;
  req.stage = ReasonStage::SelectRoi;
  req.pathway_id = pathway.id;
  req.question = std::string(question);
  req.prompt = pathway.prompt_roi;
  req.report = to_json(result.report);
  const ReasonerReply reply = reasoner.reason(req);
  result.selection = parse_selection(reply.text, result.report);
  return result;
}

/// Keeps the pixels of the selected components (others filled with 0) and
/// crops to their tight bounding rectangle.
inline RoIImage extract_roi_seg(const Image& image, const LabelGrid& labels,
                                const RoISelection& selection) {
  if (labels.height != image.height || labels.width != image.width) {
    throw Error(ErrorCode::DimensionMismatch, "label grid does not match image extent");
  }
  const ComponentMap map = label_components(labels);
  const std::set<int> wanted(selection.selected_ids.begin(), selection.selected_ids.end());
  std::uint32_t x0 = image.width, y0 = image.height, x1 = 0, y1 = 0;
  bool any = false;
  for (const auto& c : map.components) {
    if (!wanted.count(c.id)) continue;
    any = true;
    x0 = std::min(x0, c.x_min);
    y0 = std::min(y0, c.y_min);
    x1 = std::max(x1, c.x_max);
    y1 = std::max(y1, c.y_max);
  }
  if (!any) throw Error(ErrorCode::EmptyRegion, "selection covers no pixels");
  RoIImage roi;
  roi.origin_x = x0;
  roi.origin_y = y0;
  roi.pixels = Image(x1 - x0 + 1, y1 - y0 + 1, image.channels, 0);
  for (std::uint32_t y = y0; y <= y1; ++y) {
    for (std::uint32_t x = x0; x <= x1; ++x) {
      if (!wanted.count(map.at(x, y))) continue;
      std::copy_n(image.at(x, y), image.channels, roi.pixels.at(x - x0, y - y0));
    }
  }
  return roi;
}

/// Crops the smallest pixel rectangle enclosing every selected box, clipped
/// to the image.
inline RoIImage extract_roi_det(const Image& image, const ToolReport& report,
                                const RoISelection& selection) {
  if (report.kind != ToolKind::Detection) {
    throw Error(ErrorCode::InvariantViolation, "box extraction needs a detection report");
  }
  std::optional<Box> enclosing;
  for (int id : selection.selected_ids) {
    const ReportObject* obj = report.find(id);
    if (!obj) throw Error(ErrorCode::EmptyRegion, "selected id " + std::to_string(id) + " not in report");
    const Box& b = std::get<Box>(obj->geometry);
    if (!enclosing) {
      enclosing = b;
    } else {
      enclosing->x_min = std::min(enclosing->x_min, b.x_min);
      enclosing->y_min = std::min(enclosing->y_min, b.y_min);
      enclosing->x_max = std::max(enclosing->x_max, b.x_max);
      enclosing->y_max = std::max(enclosing->y_max, b.y_max);
    }
  }
  if (!enclosing) throw Error(ErrorCode::EmptyRegion, "empty selection");
  const double fx0 = std::max(0.0, std::floor(enclosing->x_min));
  const double fy0 = std::max(0.0, std::floor(enclosing->y_min));
  const double fx1 = std::min(static_cast<double>(image.width), std::ceil(enclosing->x_max));
  const double fy1 = std::min(static_cast<double>(image.height), std::ceil(enclosing->y_max));
  if (!(fx1 > fx0 && fy1 > fy0)) {
    throw Error(ErrorCode::EmptyRegion, "selected boxes lie outside the image");
  }
  RoIImage roi;
  roi.origin_x = static_cast<std::uint32_t>(fx0);
  roi.origin_y = static_cast<std::uint32_t>(fy0);
  roi.pixels = crop(image, roi.origin_x, roi.origin_y, static_cast<std::uint32_t>(fx1 - fx0),
                    static_cast<std::uint32_t>(fy1 - fy0));
  return roi;
}

inline PathwayAnswer run_stage2(const Image& image, std::string_view question, const RoIImage& roi,
                                const PathwayConfig& pathway, const Reasoner& reasoner,
                                const PipelineOptions& options = {}) {
  ReasonerRequest req;
  req.stage = ReasonStage::Answer;
  req.pathway_id = pathway.id;
  req.question = std::string(question);
  req.prompt = pathway.prompt_answer;
  req.image = &image;
  req.roi = &roi;
  ReasonerReply reply = reasoner.reason(req);
  if (!reply.trace || reply.trace->empty()) {
    throw Error(ErrorCode::TraceMissing, "pathway " + pathway.id + " returned no token probabilities");
  }
  PathwayAnswer answer;
  answer.pathway_id = pathway.id;
  answer.answer_text = std::move(reply.text);
  answer.token_trace = std::move(*reply.trace);
  answer.us = score_sequence(answer.token_trace, options.method, NucleusLevel(options.p));
  return answer;
}

/// Lowest uncertainty wins; exact ties go to the earlier entry.
inline const PathwayAnswer& select_answer(std::span<const PathwayAnswer> answers) {
  if (answers.empty()) throw Error(ErrorCode::NoViablePathway, "no pathway produced an answer");
  const PathwayAnswer* best = &answers.front();
  for (const auto& a : answers.subspan(1)) {
    if (a.us.value < best->us.value) best = &a;
  }
  return *best;
}

struct PathwayOutcome {
  std::optional<Stage1Result> stage1;
  std::optional<RoIImage> roi;
  std::optional<PathwayAnswer> answer;
  std::optional<Error> error;
};

struct PipelineResult {
  PathwayAnswer answer;
  json trace;
};

namespace detail {

inline PathwayOutcome run_pathway(const Image& image, std::string_view question,
                                  const PathwayConfig& pathway, const Reasoner& reasoner,
                                  const PipelineOptions& options) {
  PathwayOutcome out;
  try {
    out.stage1 = run_stage1(image, question, pathway, reasoner);
    out.roi = pathway.kind == ToolKind::Segmentation
                  ? extract_roi_seg(image, *out.stage1->labels, out.stage1->selection)
                  : extract_roi_det(image, out.stage1->report, out.stage1->selection);
    out.answer = run_stage2(image, question, *out.roi, pathway, reasoner, options);
  } catch (const Error& e) {
    out.error = e;
  } catch (const std::exception& e) {
    out.error = Error(ErrorCode::AdapterFailure, e.what());
  }
  return out;
}

inline json outcome_to_json(const PathwayConfig& pathway, const PathwayOutcome& o) {
  json j{{"id", pathway.id}, {"kind", std::string(to_string(pathway.kind))}};
  j["status"] = o.answer ? "ok" : "dropped";
  if (o.error) {
    j["error"] = {{"code", std::string(to_string(o.error->code()))}, {"message", o.error->what()}};
  }
  if (o.stage1) {
    j["report"] = to_json(o.stage1->report);
    j["selection"] = {{"ids", o.stage1->selection.selected_ids},
                      {"rationale", o.stage1->selection.rationale}};
    if (pathway.kind == ToolKind::Detection) j["repaired_boxes"] = o.stage1->repaired_boxes;
  }
  if (o.roi) {
    j["roi"] = {{"x", o.roi->origin_x},
                {"y", o.roi->origin_y},
                {"width", o.roi->pixels.width},
                {"height", o.roi->pixels.height},
                {"fnv1a",
                 fnv1a(std::string_view(reinterpret_cast<const char*>(o.roi->pixels.pixels.data()),
                                        o.roi->pixels.pixels.size()))}};
  }
  if (o.answer) {
    j["answer"] = {{"text", o.answer->answer_text}, {"us", to_json(o.answer->us)}};
  }
  return j;
}

}  // namespace detail

/// Runs every pathway (concurrently when requested), drops failed ones and
/// returns the lowest-uncertainty answer with a trace of every intermediate.
inline PipelineResult run_pipeline(const Image& image, std::string_view question,
                                   std::span<const PathwayConfig> pathways, const Reasoner& reasoner,
                                   const PipelineOptions& options = {}) {
  (void)NucleusLevel(options.p);  // reject a bad p before any adapter runs
  std::vector<PathwayOutcome> outcomes(pathways.size());
  if (options.concurrent && pathways.size() > 1) {
    std::vector<std::future<PathwayOutcome>> futures;
    for (const auto& pw : pathways) {
      futures.push_back(std::async(std::launch::async, [&, pw_ptr = &pw] {
        return detail::run_pathway(image, question, *pw_ptr, reasoner, options);
      }));
    }
    for (std::size_t i = 0; i < futures.size(); ++i) outcomes[i] = futures[i].get();
  } else {
    for (std::size_t i = 0; i < pathways.size(); ++i) {
      outcomes[i] = detail::run_pathway(image, question, pathways[i], reasoner, options);
    }
  }

  json trace{{"question", std::string(question)},
             {"image", {{"width", image.width}, {"height", image.height}}},
             {"uq", {{"method", std::string(to_string(options.method))}, {"p", options.p}}}};
  json per_pathway = json::array();
  std::vector<PathwayAnswer> survivors;
  for (std::size_t i = 0; i < pathways.size(); ++i) {
    per_pathway.push_back(detail::outcome_to_json(pathways[i], outcomes[i]));
    if (outcomes[i].answer) survivors.push_back(*outcomes[i].answer);
  }
  trace["pathways"] = per_pathway;
  if (survivors.empty()) {
    throw Error(ErrorCode::NoViablePathway, "every pathway failed; trace: " + trace.dump());
  }
  PipelineResult result{select_answer(survivors), {}};
  trace["selected"] = {{"pathway", result.answer.pathway_id},
                       {"text", result.answer.answer_text},
                       {"us", result.answer.us.value}};
  result.trace = std::move(trace);
  return result;
}

}  // namespace confcal
