#pragma once

// JSON wire formats: thresholds, DetectionList, trace JSONL, tool reports,
// score arrays.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "confcal/cp_core.hpp"
#include "confcal/det_calib.hpp"
#include "confcal/error.hpp"
#include "confcal/grid_io.hpp"
#include "confcal/report.hpp"
#include "confcal/seq_uq.hpp"

namespace confcal {

using json = nlohmann::json;

namespace detail {

// JSON has no infinity; +inf thresholds are written as the string "inf".
inline json extended_real(double v) {
  if (std::isinf(v) && v > 0) return "inf";
  return v;
}

inline double parse_extended_real(const json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
    throw Error(ErrorCode::InvariantViolation, "expected a number or \"inf\"");
  }
  return j.get<double>();
}

template <typename T, typename F>
T with_json_errors(F&& f, const char* what) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvariantViolation, std::string(what) + ": " + e.what());
  }
}

}  // namespace detail

inline json parse_json(std::string_view text, const char* what = "JSON document") {
  return detail::with_json_errors<json>([&] { return json::parse(text); }, what);
}

inline json read_json_file(const std::filesystem::path& path) {
  return parse_json(read_file_bytes(path), path.string().c_str());
}

// --- thresholds -----------------------------------------------------------

inline json to_json(const ConformalThreshold& t) {
  return {{"kind", "seg"}, {"alpha", t.alpha.value()}, {"q", detail::extended_real(t.value)},
          {"n", t.n}};
}

inline json to_json(const DetThreshold& t) {
  json q = json::array(), counts = json::array();
  for (std::size_t m = 0; m < 4; ++m) {
    q.push_back(detail::extended_real(t.q[m]));
    counts.push_back(t.counts[m]);
  }
  return {{"kind", "det"}, {"alpha", t.alpha.value()}, {"tau", t.tau}, {"q", q},
          {"counts", counts}};
}

inline ConformalThreshold seg_threshold_from_json(const json& j) {
  return detail::with_json_errors<ConformalThreshold>(
      [&] {
        if (j.at("kind").get<std::string>() != "seg") {
          throw Error(ErrorCode::InvariantViolation, "threshold kind is not seg");
        }
        return ConformalThreshold{detail::parse_extended_real(j.at("q")),
                                  RiskLevel(j.at("alpha").get<double>()),
                                  j.at("n").get<std::size_t>()};
      },
      "segmentation threshold");
}

inline DetThreshold det_threshold_from_json(const json& j) {
  return detail::with_json_errors<DetThreshold>(
      [&] {
        if (j.at("kind").get<std::string>() != "det") {
          throw Error(ErrorCode::InvariantViolation, "threshold kind is not det");
        }
        DetThreshold t{{}, RiskLevel(j.at("alpha").get<double>()), j.at("tau").get<double>(), {}};
        check_tau(t.tau);
        const auto& q = j.at("q");
        const auto& counts = j.at("counts");
        if (q.size() != 4 || counts.size() != 4) {
          throw Error(ErrorCode::InvariantViolation, "det threshold needs four components");
        }
        for (std::size_t m = 0; m < 4; ++m) {
          t.q[m] = detail::parse_extended_real(q[m]);
          t.counts[m] = counts[m].get<std::size_t>();
        }
        return t;
      },
      "detection threshold");
}

// --- detections -----------------------------------------------------------

inline json to_json(const Detection& d) {
  return {{"id", d.id},
          {"class", d.class_id ? json(*d.class_id) : json(nullptr)},
          {"confidence", d.confidence ? json(*d.confidence) : json(nullptr)},
          {"x_min", d.box.x_min},
          {"y_min", d.box.y_min},
          {"x_max", d.box.x_max},
          {"y_max", d.box.y_max}};
}

inline json to_json(const DetectionList& list) {
  json boxes = json::array();
  for (const auto& d : list.items) boxes.push_back(to_json(d));
  return {{"boxes", boxes}};
}

inline DetectionList detections_from_json(const json& j) {
  return detail::with_json_errors<DetectionList>(
      [&] {
        DetectionList list;
        int next_id = 0;
        for (const auto& b : j.at("boxes")) {
          Detection d;
          d.id = b.contains("id") && !b["id"].is_null() ? b["id"].get<int>() : next_id;
          next_id = d.id + 1;
          if (b.contains("class") && !b["class"].is_null()) d.class_id = b["class"].get<int>();
          if (b.contains("confidence") && !b["confidence"].is_null()) {
            d.confidence = b["confidence"].get<double>();
          }
          d.box = {b.at("x_min").get<double>(), b.at("y_min").get<double>(),
                   b.at("x_max").get<double>(), b.at("y_max").get<double>()};
          list.items.push_back(d);
        }
        list.validate();
        return list;
      },
      "DetectionList");
}

// --- token traces ---------------------------------------------------------

inline json to_json(const TokenDistribution& d) {
  return {{"probs", d.probs}, {"vocab_size", d.vocab_size}, {"tail_mass", d.tail_mass}};
}

inline TokenDistribution token_distribution_from_json(const json& j) {
  return detail::with_json_errors<TokenDistribution>(
      [&] {
        TokenDistribution d;
        d.probs = j.at("probs").get<std::vector<double>>();
        d.vocab_size = j.at("vocab_size").get<std::size_t>();
        d.tail_mass = j.contains("tail_mass") ? j["tail_mass"].get<double>() : 0.0;
        d.validate();
        return d;
      },
      "token distribution");
}

inline json to_json(const TokenDistributionSequence& seq) {
  json arr = json::array();
  for (const auto& d : seq) arr.push_back(to_json(d));
  return arr;
}

inline TokenDistributionSequence trace_from_json(const json& arr) {
  if (!arr.is_array()) throw Error(ErrorCode::InvariantViolation, "trace must be a JSON array");
  TokenDistributionSequence seq;
  for (const auto& step : arr) seq.push_back(token_distribution_from_json(step));
  return seq;
}

/// One JSON object per non-blank line.
inline TokenDistributionSequence parse_trace_jsonl(std::string_view text) {
  TokenDistributionSequence seq;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    seq.push_back(token_distribution_from_json(parse_json(line, "trace line")));
  }
  return seq;
}

inline std::string encode_trace_jsonl(const TokenDistributionSequence& seq) {
  std::string out;
  for (const auto& d : seq) {
    out += to_json(d).dump();
    out += '\n';
  }
  return out;
}

inline json to_json(const UncertaintyScore& us) {
  return {{"value", us.value},
          {"method", std::string(to_string(us.method))},
          {"per_token", us.per_token},
          {"truncated_steps", us.truncated_steps}};
}

// --- scores ---------------------------------------------------------------

inline ScoreSet scores_from_json(const json& j) {
  return detail::with_json_errors<ScoreSet>(
      [&] {
        if (!j.is_array()) throw Error(ErrorCode::InvariantViolation, "scores must be an array");
        ScoreSet s;
        for (const auto& v : j) s.add(v.get<double>());
        return s;
      },
      "score array");
}

// --- tool reports ---------------------------------------------------------

inline json to_json(const ToolReport& report) {
  json objects = json::array();
  for (const auto& o : report.objects) {
    if (const auto* poly = std::get_if<Polygon>(&o.geometry)) {
      json boundary = json::array();
      for (const auto& p : *poly) boundary.push_back({p.x, p.y});
      objects.push_back({{"id", o.id}, {"class", o.class_id}, {"name", o.name},
                         {"boundary", boundary}});
    } else {
      const auto& b = std::get<Box>(o.geometry);
      objects.push_back({{"id", o.id},
                         {"class", o.class_id},
                         {"name", o.name},
                         {"confidence", o.confidence ? json(*o.confidence) : json(nullptr)},
                         {"x_min", b.x_min},
                         {"y_min", b.y_min},
                         {"x_max", b.x_max},
                         {"y_max", b.y_max}});
    }
  }
  if (report.kind == ToolKind::Detection) {
    return {{"kind", "detection"}, {"boxes", objects}};
  }
  return {{"kind", "segmentation"}, {"objects", objects}};
}

}  // namespace confcal
