#pragma once

// Command-line surface. Results go to `out` as JSON, diagnostics to `err`.
// Exit status: 0 success, 1 usage error, 2 data or adapter error.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "confcal/adapter.hpp"
#include "confcal/cp_core.hpp"
#include "confcal/det_calib.hpp"
#include "confcal/error.hpp"
#include "confcal/eval_metrics.hpp"
#include "confcal/grid_io.hpp"
#include "confcal/image.hpp"
#include "confcal/json_io.hpp"
#include "confcal/manifest.hpp"
#include "confcal/pipeline.hpp"
#include "confcal/report.hpp"
#include "confcal/seg_calib.hpp"
#include "confcal/seq_uq.hpp"

namespace confcal {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

inline constexpr std::string_view kProbSuffix = ".prob.cpg";
inline constexpr std::string_view kLabelSuffix = ".label.cpg";

/// Loads `<stem>.prob.cpg` / `<stem>.label.cpg` pairs from a directory in
/// lexicographic stem order.
inline std::vector<SegCalibrationPair> load_seg_pairs(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw Error(ErrorCode::IoFailure, dir.string() + " is not a directory");
  }
  std::vector<std::string> stems;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > kProbSuffix.size() && name.ends_with(kProbSuffix)) {
      stems.push_back(name.substr(0, name.size() - kProbSuffix.size()));
    }
  }
  std::sort(stems.begin(), stems.end());
  std::vector<SegCalibrationPair> pairs;
  for (const auto& stem : stems) {
    SegCalibrationPair pair;
    pair.grid = read_grid_as<ProbabilityGrid>(dir / (stem + std::string(kProbSuffix)));
    pair.truth = read_grid_as<LabelGrid>(dir / (stem + std::string(kLabelSuffix)), pair.grid.classes);
    pair.validate();
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

inline void save_seg_pair(const std::filesystem::path& dir, const std::string& stem,
                          const SegCalibrationPair& pair) {
  write_grid(dir / (stem + std::string(kProbSuffix)), pair.grid);
  write_grid(dir / (stem + std::string(kLabelSuffix)), pair.truth);
}

/// `{"images":[{"predictions":DetectionList,"ground_truth":DetectionList}]}`
inline std::vector<DetCalibrationImage> det_images_from_json(const json& j) {
  std::vector<DetCalibrationImage> out;
  try {
    for (const auto& img : j.at("images")) {
      out.push_back({detections_from_json(img.at("predictions")),
                     detections_from_json(img.at("ground_truth"))});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvariantViolation, std::string("detection calibration file: ") + e.what());
  }
  return out;
}

inline json det_images_to_json(const std::vector<DetCalibrationImage>& images) {
  json arr = json::array();
  for (const auto& img : images) {
    arr.push_back({{"predictions", to_json(img.predictions)}, {"ground_truth", to_json(img.truth)}});
  }
  return {{"images", arr}};
}

namespace detail {

inline std::vector<double> parse_value_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw CLI::ValidationError("--values", "not a number: " + item);
    }
  }
  return out;
}

inline std::vector<CalibrationRecord> records_from_json(const json& j) {
  std::vector<CalibrationRecord> records;
  try {
    if (j.is_array()) {
      for (const auto& r : j) {
        records.push_back({r.at("confidence").get<double>(), r.at("correct").get<bool>()});
      }
    } else {
      // Raw uncertainty scores: normalised into confidences over this population.
      const auto us = j.at("us").get<std::vector<double>>();
      const auto correct = j.at("correct").get<std::vector<bool>>();
      if (us.size() != correct.size()) {
        throw Error(ErrorCode::DimensionMismatch, "'us' and 'correct' differ in length");
      }
      const auto conf = normalize_confidence(us);
      for (std::size_t i = 0; i < us.size(); ++i) records.push_back({conf[i], correct[i]});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvariantViolation, std::string("ECE records: ") + e.what());
  }
  return records;
}

inline void emit(std::ostream& out, const json& j) { out << j.dump(2) << '\n'; }

inline void maybe_write_json(const std::string& path, const json& j) {
  if (!path.empty()) write_file_atomic(path, j.dump(2) + "\n");
}

}  // namespace detail

inline int cli_dispatch(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Conformal calibration and uncertainty toolkit", "confcal"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  app.add_option("--config", config_path, "run manifest (JSON)");

  std::optional<double> alpha, tau, p;
  std::string out_path, calib, threshold_path, grid_path, report_path, detections_path, trace_path,
      method_name, image_path, question, kind, test_path, records_path, csv_path, axis_name,
      values_text, task_name;
  std::optional<std::string> bounds_text;
  std::vector<std::string> class_names, traces;
  std::size_t bins = kDefaultEceBins;
  std::optional<std::uint64_t> seed;
  std::size_t calib_images = 200, test_images = 200;

  auto* seg = app.add_subcommand("seg", "segmentation calibration")->require_subcommand(1);
  auto* seg_fit = seg->add_subcommand("fit", "fit the pixel-wise threshold");
  seg_fit->add_option("--alpha", alpha, "risk level in (0,1)");
  seg_fit->add_option("--calib", calib, "directory of <stem>.prob.cpg/<stem>.label.cpg pairs")->required();
  seg_fit->add_option("--out", out_path, "write the threshold JSON here too");
  auto* seg_apply = seg->add_subcommand("apply", "calibrate a probability grid into labels");
  seg_apply->add_option("--threshold", threshold_path)->required();
  seg_apply->add_option("--grid", grid_path)->required();
  seg_apply->add_option("--out", out_path, "calibrated label grid container");
  seg_apply->add_option("--report", report_path, "write the object report JSON here");
  seg_apply->add_option("--class-names", class_names)->delimiter(',');

  auto* det = app.add_subcommand("det", "detection calibration")->require_subcommand(1);
  auto* det_fit = det->add_subcommand("fit", "fit per-coordinate box margins");
  det_fit->add_option("--alpha", alpha);
  det_fit->add_option("--tau", tau, "IoU matching threshold in (0,1)");
  det_fit->add_option("--calib", calib, "calibration JSON {images:[{predictions,ground_truth}]}")->required();
  det_fit->add_option("--out", out_path);
  auto* det_apply = det->add_subcommand("apply", "expand predicted boxes");
  det_apply->add_option("--threshold", threshold_path)->required();
  det_apply->add_option("--detections", detections_path)->required();
  det_apply->add_option("--bounds", bounds_text, "image extent W,H");
  det_apply->add_option("--out", out_path);

  auto* uq = app.add_subcommand("uq", "answer uncertainty")->require_subcommand(1);
  auto* uq_score = uq->add_subcommand("score", "score a token trace (JSONL)");
  uq_score->add_option("--p", p, "nucleus mass in (0,1]");
  uq_score->add_option("--trace", trace_path)->required();
  uq_score->add_option("--method", method_name, "top_p | entropy");

  auto* pipe = app.add_subcommand("pipeline", "two-stage reasoning pipeline")->require_subcommand(1);
  auto* pipe_run = pipe->add_subcommand("run", "run every configured pathway and pick an answer");
  pipe_run->add_option("--image", image_path, "PGM/PPM raster")->required();
  pipe_run->add_option("--question", question)->required();
  pipe_run->add_option("--out", out_path, "write the full trace here too");

  auto* eval = app.add_subcommand("eval", "empirical checks")->require_subcommand(1);
  auto* eval_cov = eval->add_subcommand("coverage", "coverage of a fitted threshold on test data");
  eval_cov->add_option("--kind", kind)->required()->check(CLI::IsMember({"seg", "det"}));
  eval_cov->add_option("--threshold", threshold_path)->required();
  eval_cov->add_option("--test", test_path, "seg: pair directory; det: calibration-format JSON")->required();
  auto* eval_ece = eval->add_subcommand("ece", "expected calibration error");
  eval_ece->add_option("--records", records_path)->required();
  eval_ece->add_option("--bins", bins);
  eval_ece->add_option("--csv", csv_path, "reliability diagram bins as CSV");

  auto* sw = app.add_subcommand("sweep", "parameter sweep over a synthetic task or trace corpus");
  sw->add_option("--axis", axis_name)->required()->check(CLI::IsMember({"alpha", "p"}));
  sw->add_option("--values", values_text, "comma-separated parameter values")->required();
  sw->add_option("--task", task_name, "alpha axis: seg | det")->check(CLI::IsMember({"seg", "det"}));
  sw->add_option("--traces", traces, "p axis: trace JSONL files");
  sw->add_option("--seed", seed);
  sw->add_option("--calib-images", calib_images);
  sw->add_option("--test-images", test_images);

  try {
    std::vector<std::string> args(argv.rbegin(), argv.rend());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    std::optional<RunManifest> manifest;
    if (!config_path.empty()) manifest = RunManifest::load(config_path);
    const double alpha_seg = alpha.value_or(manifest ? manifest->alpha_seg : 0.1);
    const double alpha_det = alpha.value_or(manifest ? manifest->alpha_det : 0.1);
    const double tau_v = tau.value_or(manifest ? manifest->tau : kDefaultTau);
    const double p_v = p.value_or(manifest ? manifest->p : kDefaultNucleus);
    const std::uint64_t seed_v = seed.value_or(manifest ? manifest->seed : 0);
    const UqMethod method = method_name.empty() ? (manifest ? manifest->method : UqMethod::TopP)
                                                : parse_uq_method(method_name);

    if (seg_fit->parsed()) {
      const auto pairs = load_seg_pairs(calib);
      const auto t = fit_seg(pairs, RiskLevel(alpha_seg));
      const json j = to_json(t);
      detail::maybe_write_json(out_path, j);
      detail::emit(out, j);
    } else if (seg_apply->parsed()) {
      const auto t = seg_threshold_from_json(read_json_file(threshold_path));
      const auto grid = read_grid_as<ProbabilityGrid>(grid_path);
      const auto labels = calibrate_label_grid(grid, t);
      const auto raw = argmax_label_grid(grid);
      std::size_t changed = 0;
      for (std::size_t i = 0; i < labels.labels.size(); ++i) changed += labels.labels[i] != raw.labels[i];
      if (!out_path.empty()) write_grid(out_path, labels);
      const json report = to_json(make_seg_report(labels, class_names));
      detail::maybe_write_json(report_path, report);
      detail::emit(out, {{"height", labels.height},
                         {"width", labels.width},
                         {"relabelled_pixels", changed},
                         {"report", report}});
    } else if (det_fit->parsed()) {
      const auto images = det_images_from_json(read_json_file(calib));
      const auto t = fit_det(images, RiskLevel(alpha_det), tau_v);
      const json j = to_json(t);
      detail::maybe_write_json(out_path, j);
      detail::emit(out, j);
    } else if (det_apply->parsed()) {
      const auto t = det_threshold_from_json(read_json_file(threshold_path));
      auto dets = detections_from_json(read_json_file(detections_path));
      std::optional<Box> bounds;
      if (bounds_text) {
        double w = 0, h = 0;
        char comma = 0;
        std::istringstream bs(*bounds_text);
        if (!(bs >> w >> comma >> h) || comma != ',' || !(w > 0 && h > 0)) {
          err << "error: --bounds expects W,H\n";
          return kExitUsage;
        }
        bounds = Box{0.0, 0.0, w, h};
      }
      json repaired = json::array();
      for (auto& d : dets.items) {
        const auto c = conformalize_box(d.box, t, bounds);
        if (c.repaired) {
          repaired.push_back(d.id);
          err << "warning: box " << d.id << " collapsed to a unit extent\n";
        }
        d.box = c.box;
      }
      json j = to_json(dets);
      j["repaired"] = repaired;
      detail::maybe_write_json(out_path, j);
      detail::emit(out, j);
    } else if (uq_score->parsed()) {
      const auto seq = parse_trace_jsonl(read_file_bytes(trace_path));
      const auto us = score_sequence(seq, method, NucleusLevel(p_v));
      json j = to_json(us);
      j["p"] = p_v;
      detail::emit(out, j);
    } else if (pipe_run->parsed()) {
      if (!manifest) {
        err << "error: pipeline run requires --config\n";
        return kExitUsage;
      }
      const Image image = read_pnm(image_path);
      const auto pathways = manifest->build_pathways();
      const auto reasoner = manifest->build_reasoner();
      const auto result = run_pipeline(image, question, pathways, *reasoner, manifest->pipeline_options());
      const json j{{"answer", result.answer.answer_text},
                   {"pathway", result.answer.pathway_id},
                   {"us", result.answer.us.value},
                   {"trace", result.trace}};
      detail::maybe_write_json(out_path, j);
      detail::emit(out, j);
    } else if (eval_cov->parsed()) {
      if (kind == "seg") {
        const auto t = seg_threshold_from_json(read_json_file(threshold_path));
        const auto pairs = load_seg_pairs(test_path);
        json j = to_json(coverage_seg(t, pairs));
        j["mean_set_size"] = mean_set_size(t, pairs);
        detail::emit(out, j);
      } else {
        const auto t = det_threshold_from_json(read_json_file(threshold_path));
        const auto images = det_images_from_json(read_json_file(test_path));
        detail::emit(out, to_json(coverage_det(t, match_all(images, t.tau))));
      }
    } else if (eval_ece->parsed()) {
      const auto records = detail::records_from_json(read_json_file(records_path));
      const auto report = ece(records, bins);
      if (!csv_path.empty()) write_file_atomic(csv_path, reliability_csv(report));
      detail::emit(out, to_json(report));
    } else if (sw->parsed()) {
      const auto values = detail::parse_value_list(values_text);
      SweepAxis axis = axis_name == "alpha" ? SweepAxis::Alpha : SweepAxis::P;
      SweepTask task;
      if (axis == SweepAxis::Alpha) {
        if (task_name == "det") {
          DetSweepTask t;
          t.seed = seed_v;
          t.tau = tau_v;
          t.calib_images = calib_images;
          t.test_images = test_images;
          task = t;
        } else {
          SegSweepTask t;
          t.seed = seed_v;
          t.calib_images = calib_images;
          t.test_images = test_images;
          task = t;
        }
      } else {
        if (traces.empty()) {
          err << "error: --axis p needs at least one --traces file\n";
          return kExitUsage;
        }
        TraceSweepTask t;
        for (const auto& path : traces) {
          t.names.push_back(std::filesystem::path(path).filename().string());
          t.traces.push_back(parse_trace_jsonl(read_file_bytes(path)));
        }
        task = t;
      }
      const auto table = sweep(axis, values, task);
      json j = to_json(table);
      j["text"] = format_table(table);
      err << format_table(table);
      detail::emit(out, j);
    }
    return kExitOk;
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << json{{"error", std::string(to_string(e.code()))}, {"message", e.what()}}.dump() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << json{{"error", "InternalError"}, {"message", e.what()}}.dump() << '\n';
    return kExitData;
  }
}

}  // namespace confcal
