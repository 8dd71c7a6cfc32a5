#pragma once

// Run manifest: a single JSON document with the statistical parameters,
// named file paths, the reasoning adapter and the pathway list.
//
//   {
//     "alpha": {"seg": 0.1, "det": 0.1}, "tau": 0.5, "p": 0.9,
//     "uq_method": "top_p", "seed": 0, "concurrent": false,
//     "paths": {"seg_threshold": "thresholds/seg.json", ...},
//     "reasoner": {"type": "seeded", "seed": 7}
//               | {"type": "scripted", "fixture": "$script"}
//               | {"type": "process", "command": ["./mllm_adapter"]},
//     "pathways": [
//       {"id": "seg", "tool_kind": "segmentation",
//        "tool": {"type": "synthetic", "seed": 3} | {"type": "process", "command": [...]},
//        "threshold": "$seg_threshold" | {...inline threshold...},
//        "prompt_roi": "...", "prompt_answer": "...", "class_names": [...]}
//     ]
//   }
//
// A string of the form "$name" refers to paths[name]. Relative paths resolve
// against the manifest's directory. CONFCAL_PATH_<NAME> environment variables
// override entries of "paths"; nothing else can be overridden.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "confcal/adapter.hpp"
#include "confcal/cp_core.hpp"
#include "confcal/error.hpp"
#include "confcal/json_io.hpp"
#include "confcal/pipeline.hpp"
#include "confcal/seq_uq.hpp"

namespace confcal {

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

inline std::optional<std::string> process_env(const std::string& name) {
  if (const char* v = std::getenv(name.c_str())) return std::string(v);
  return std::nullopt;
}

struct RunManifest {
  double alpha_seg = 0.1;
  double alpha_det = 0.1;
  double tau = kDefaultTau;
  double p = kDefaultNucleus;
  UqMethod method = UqMethod::TopP;
  std::uint64_t seed = 0;
  bool concurrent = false;
  std::filesystem::path base_dir;
  std::map<std::string, std::filesystem::path> paths;
  json reasoner;
  json pathways = json::array();

  /// Resolves a path field: "$name" via the paths table, otherwise relative
  /// to the manifest directory.
  std::filesystem::path resolve(const std::string& ref) const {
    if (!ref.empty() && ref.front() == '$') {
      auto it = paths.find(ref.substr(1));
      if (it == paths.end()) throw Error(ErrorCode::InvalidConfig, "unknown path reference " + ref);
      return it->second;
    }
    std::filesystem::path p(ref);
    return p.is_absolute() ? p : base_dir / p;
  }

  PipelineOptions pipeline_options() const { return {method, p, concurrent}; }

  static RunManifest from_json(const json& j, const std::filesystem::path& base_dir,
                               const EnvLookup& env = process_env) {
    RunManifest m;
    m.base_dir = base_dir;
    try {
      if (j.contains("alpha")) {
        const auto& a = j["alpha"];
        if (a.is_number()) {
          m.alpha_seg = m.alpha_det = a.get<double>();
        } else {
          m.alpha_seg = a.value("seg", m.alpha_seg);
          m.alpha_det = a.value("det", m.alpha_det);
        }
      }
      m.tau = j.value("tau", m.tau);
      m.p = j.value("p", m.p);
      if (j.contains("uq_method")) m.method = parse_uq_method(j["uq_method"].get<std::string>());
      m.seed = j.value("seed", m.seed);
      m.concurrent = j.value("concurrent", m.concurrent);
      if (j.contains("paths")) {
        for (const auto& [name, value] : j["paths"].items()) {
          std::filesystem::path p(value.get<std::string>());
          m.paths[name] = p.is_absolute() ? p : base_dir / p;
        }
      }
      m.reasoner = j.value("reasoner", json{{"type", "seeded"}, {"seed", m.seed}});
      m.pathways = j.value("pathways", json::array());
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidConfig, std::string("malformed manifest: ") + e.what());
    }
    for (auto& [name, path] : m.paths) {
      std::string key = "CONFCAL_PATH_" + name;
      std::transform(key.begin(), key.end(), key.begin(),
                     [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
      if (auto v = env(key)) path = *v;
    }
    m.validate();
    return m;
  }

  static RunManifest load(const std::filesystem::path& path, const EnvLookup& env = process_env) {
    json j;
    try {
      j = read_json_file(path);
    } catch (const Error& e) {
      throw Error(ErrorCode::InvalidConfig, e.what());
    }
    return from_json(j, path.parent_path(), env);
  }

  void validate() const {
    (void)RiskLevel(alpha_seg);
    (void)RiskLevel(alpha_det);
    check_tau(tau);
    (void)NucleusLevel(p);
    for (const auto& [name, path] : paths) {
      if (!std::filesystem::exists(path)) {
        throw Error(ErrorCode::InvalidConfig, "path '" + name + "' does not exist: " + path.string());
      }
    }
    auto check_ref = [&](const json& obj, const char* key) {
      if (obj.contains(key) && obj[key].is_string()) {
        const auto p = resolve(obj[key].get<std::string>());
        if (!std::filesystem::exists(p)) {
          throw Error(ErrorCode::InvalidConfig, std::string(key) + " does not exist: " + p.string());
        }
      }
    };
    check_ref(reasoner, "fixture");
    for (const auto& pw : pathways) check_ref(pw, "threshold");
  }

  std::shared_ptr<const Reasoner> build_reasoner() const {
    const std::string type = reasoner.value("type", "seeded");
    if (type == "seeded") {
      return std::make_shared<SeededReasoner>(reasoner.value("seed", seed));
    }
    if (type == "scripted") {
      return std::make_shared<ScriptedReasoner>(
          ScriptedReasoner::from_file(resolve(reasoner.at("fixture").get<std::string>())));
    }
    if (type == "process") {
      return std::make_shared<ProcessReasoner>(reasoner.at("command").get<std::vector<std::string>>());
    }
    throw Error(ErrorCode::InvalidConfig, "unknown reasoner type '" + type + "'");
  }

  std::vector<PathwayConfig> build_pathways() const {
    std::vector<PathwayConfig> out;
    try {
      for (const auto& pw : pathways) {
        PathwayConfig cfg;
        cfg.id = pw.at("id").get<std::string>();
        cfg.kind = parse_tool_kind(pw.at("tool_kind").get<std::string>());
        const json& tool = pw.at("tool");
        const std::string type = tool.value("type", "synthetic");
        const std::uint64_t tool_seed = tool.value("seed", seed);
        const std::uint32_t classes = tool.value("classes", 5u);
        if (cfg.kind == ToolKind::Segmentation) {
          if (type == "synthetic") {
            cfg.seg_tool = std::make_shared<SyntheticSegmentationTool>(tool_seed, classes,
                                                                      tool.value("objects", 2u));
          } else if (type == "process") {
            cfg.seg_tool = std::make_shared<ProcessSegmentationTool>(
                tool.at("command").get<std::vector<std::string>>());
          } else {
            throw Error(ErrorCode::InvalidConfig, "unknown tool type '" + type + "'");
          }
        } else {
          if (type == "synthetic") {
            cfg.det_tool = std::make_shared<SyntheticDetectionTool>(tool_seed, tool.value("count", 3u),
                                                                   classes);
          } else if (type == "process") {
            cfg.det_tool = std::make_shared<ProcessDetectionTool>(
                tool.at("command").get<std::vector<std::string>>());
          } else {
            throw Error(ErrorCode::InvalidConfig, "unknown tool type '" + type + "'");
          }
        }
        const json& th = pw.at("threshold");
        const json tj = th.is_string() ? read_json_file(resolve(th.get<std::string>())) : th;
        if (cfg.kind == ToolKind::Segmentation) {
          cfg.threshold = seg_threshold_from_json(tj);
        } else {
          cfg.threshold = det_threshold_from_json(tj);
        }
        if (pw.contains("prompt_roi")) cfg.prompt_roi = pw["prompt_roi"].get<std::string>();
        if (pw.contains("prompt_answer")) cfg.prompt_answer = pw["prompt_answer"].get<std::string>();
        if (pw.contains("class_names")) {
          cfg.class_names = pw["class_names"].get<std::vector<std::string>>();
        }
        cfg.validate();
        out.push_back(std::move(cfg));
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidConfig, std::string("malformed pathway: ") + e.what());
    }
    return out;
  }
};

}  // namespace confcal
