#pragma once

// Tool and reasoning adapters. External adapters are executables that read
// one JSON request on stdin and write one JSON response on stdout; the
// built-in ones are seeded synthetic oracles and a scripted replay.
//
// Requests:
//   {"task":"segment"|"detect", "image":{"path","width","height","channels"}}
//   {"task":"select_roi", "pathway", "question", "prompt", "report"}
//   {"task":"answer", "pathway", "question", "prompt", "image":{...},
//    "roi":{"path","x","y","width","height"}}
// Responses:
//   segment: "path/to/grid" or {"grid":"path/to/grid"}
//   detect:  DetectionList JSON
//   reason:  {"text": str, "trace": [TokenDistribution...]}  (trace optional)

#include <cerrno>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include "confcal/det_calib.hpp"
#include "confcal/error.hpp"
#include "confcal/grid_io.hpp"
#include "confcal/image.hpp"
#include "confcal/json_io.hpp"
#include "confcal/seg_calib.hpp"
#include "confcal/seq_uq.hpp"
#include "confcal/synthetic.hpp"

namespace confcal {

/// Crop of the source image and its offset in source coordinates.
struct RoIImage {
  Image pixels;
  std::uint32_t origin_x = 0;
  std::uint32_t origin_y = 0;
};

enum class ReasonStage { SelectRoi, Answer };

struct ReasonerRequest {
  ReasonStage stage = ReasonStage::SelectRoi;
  std::string pathway_id;
  std::string question;
  std::string prompt;
  std::optional<json> report;      // SelectRoi
  const Image* image = nullptr;    // Answer
  const RoIImage* roi = nullptr;   // Answer
};

struct ReasonerReply {
  std::string text;
  std::optional<TokenDistributionSequence> trace;
};

class SegmentationTool {
 public:
  virtual ~SegmentationTool() = default;
  virtual ProbabilityGrid segment(const Image& image) const = 0;
};

class DetectionTool {
 public:
  virtual ~DetectionTool() = default;
  virtual DetectionList detect(const Image& image) const = 0;
};

class Reasoner {
 public:
  virtual ~Reasoner() = default;
  virtual ReasonerReply reason(const ReasonerRequest& request) const = 0;
};

inline ReasonerReply reasoner_reply_from_json(const json& j) {
  if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) {
    throw Error(ErrorCode::AdapterFailure, "reasoning reply lacks a string 'text' field");
  }
  ReasonerReply reply;
  reply.text = j["text"].get<std::string>();
  if (j.contains("trace") && !j["trace"].is_null()) {
    try {
      reply.trace = trace_from_json(j["trace"]);
    } catch (const Error& e) {
      throw Error(ErrorCode::AdapterFailure, std::string("malformed trace: ") + e.what());
    }
  }
  return reply;
}

// --- external processes ----------------------------------------------------

struct ProcessResult {
  int exit_status = -1;
  std::string out;
};

/// Runs `argv`, feeding `input` on stdin and collecting stdout. stderr is
/// inherited. Writing and reading are interleaved, so large payloads in
/// either direction cannot deadlock.
inline ProcessResult run_process(const std::vector<std::string>& argv, std::string_view input) {
  if (argv.empty()) throw Error(ErrorCode::AdapterFailure, "empty adapter command");
  int in_sock[2];
  int out_pipe[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, in_sock) != 0) {
    throw Error(ErrorCode::AdapterFailure, "socketpair failed");
  }
  if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
    ::close(in_sock[0]);
    ::close(in_sock[1]);
    throw Error(ErrorCode::AdapterFailure, "pipe failed");
  }
  std::vector<char*> args;
  for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);

  const pid_t pid = ::fork();
  if (pid < 0) {
    for (int fd : {in_sock[0], in_sock[1], out_pipe[0], out_pipe[1]}) ::close(fd);
    throw Error(ErrorCode::AdapterFailure, "fork failed");
  }
  if (pid == 0) {
    ::dup2(in_sock[1], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::execvp(args[0], args.data());
    ::_exit(127);
  }
  ::close(in_sock[1]);
  ::close(out_pipe[1]);

  ProcessResult result;
  std::size_t written = 0;
  bool writing = true;
  if (input.empty()) {
    ::shutdown(in_sock[0], SHUT_WR);
    writing = false;
  }
  bool reading = true;
  char buf[65536];
  while (reading) {
    pollfd fds[2];
    nfds_t n = 0;
    fds[n++] = {out_pipe[0], POLLIN, 0};
    if (writing) fds[n++] = {in_sock[0], POLLOUT, 0};
    if (::poll(fds, n, -1) < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (writing && (fds[1].revents & (POLLOUT | POLLERR | POLLHUP))) {
      const ssize_t w = ::send(in_sock[0], input.data() + written, input.size() - written,
                               MSG_NOSIGNAL | MSG_DONTWAIT);
      if (w > 0) written += static_cast<std::size_t>(w);
      if (w < 0 && errno != EAGAIN && errno != EINTR) written = input.size();  // child stopped reading
      if (written == input.size()) {
        ::shutdown(in_sock[0], SHUT_WR);
        writing = false;
      }
    }
    if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) {
      const ssize_t r = ::read(out_pipe[0], buf, sizeof buf);
      if (r > 0) {
        result.out.append(buf, static_cast<std::size_t>(r));
      } else if (r == 0 || errno != EINTR) {
        reading = false;
      }
    }
  }
  ::close(in_sock[0]);
  ::close(out_pipe[0]);
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  result.exit_status = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
  return result;
}

namespace detail {

/// Scratch directory removed on destruction.
class ScratchDir {
 public:
  ScratchDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "confcal.XXXXXX").string();
    if (::mkdtemp(tmpl.data()) == nullptr) {
      throw Error(ErrorCode::IoFailure, "cannot create scratch directory");
    }
    path_ = tmpl;
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
};

inline json describe_image(const Image& img, const std::filesystem::path& path) {
  return {{"path", path.string()},
          {"width", img.width},
          {"height", img.height},
          {"channels", img.channels}};
}

inline json call_adapter(const std::vector<std::string>& command, const json& request) {
  const ProcessResult res = run_process(command, request.dump());
  if (res.exit_status != 0) {
    throw Error(ErrorCode::AdapterFailure,
                "adapter '" + command.front() + "' exited with status " +
                    std::to_string(res.exit_status));
  }
  try {
    return json::parse(res.out);
  } catch (const json::exception&) {
    throw Error(ErrorCode::AdapterFailure, "adapter '" + command.front() + "' replied with invalid JSON");
  }
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace detail

class ProcessSegmentationTool final : public SegmentationTool {
 public:
  explicit ProcessSegmentationTool(std::vector<std::string> command) : command_(std::move(command)) {}

  ProbabilityGrid segment(const Image& image) const override {
    detail::ScratchDir dir;
    const auto img_path = dir.path() / "image.pnm";
    write_file_atomic(img_path, encode_pnm(image));
    const json reply = detail::call_adapter(
        command_, {{"task", "segment"}, {"image", detail::describe_image(image, img_path)}});
    std::string grid_path;
    if (reply.is_string()) {
      grid_path = reply.get<std::string>();
    } else if (reply.is_object() && reply.contains("grid") && reply["grid"].is_string()) {
      grid_path = reply["grid"].get<std::string>();
    } else {
      throw Error(ErrorCode::AdapterFailure, "segmentation reply must name a grid container path");
    }
    try {
      return read_grid_as<ProbabilityGrid>(grid_path);
    } catch (const Error& e) {
      throw Error(ErrorCode::AdapterFailure, std::string("segmentation grid unusable: ") + e.what());
    }
  }

 private:
  std::vector<std::string> command_;
};

class ProcessDetectionTool final : public DetectionTool {
 public:
  explicit ProcessDetectionTool(std::vector<std::string> command) : command_(std::move(command)) {}

  DetectionList detect(const Image& image) const override {
    detail::ScratchDir dir;
    const auto img_path = dir.path() / "image.pnm";
    write_file_atomic(img_path, encode_pnm(image));
    const json reply = detail::call_adapter(
        command_, {{"task", "detect"}, {"image", detail::describe_image(image, img_path)}});
    try {
      return detections_from_json(reply);
    } catch (const Error& e) {
      throw Error(ErrorCode::AdapterFailure, std::string("detection reply unusable: ") + e.what());
    }
  }

 private:
  std::vector<std::string> command_;
};

class ProcessReasoner final : public Reasoner {
 public:
  explicit ProcessReasoner(std::vector<std::string> command) : command_(std::move(command)) {}

  ReasonerReply reason(const ReasonerRequest& req) const override {
    detail::ScratchDir dir;
    json request{{"pathway", req.pathway_id}, {"question", req.question}, {"prompt", req.prompt}};
    if (req.stage == ReasonStage::SelectRoi) {
      request["task"] = "select_roi";
      request["report"] = req.report.value_or(json::object());
    } else {
      request["task"] = "answer";
      if (req.image) {
        const auto p = dir.path() / "image.pnm";
        write_file_atomic(p, encode_pnm(*req.image));
        request["image"] = detail::describe_image(*req.image, p);
      }
      if (req.roi) {
        const auto p = dir.path() / "roi.pnm";
        write_file_atomic(p, encode_pnm(req.roi->pixels));
        request["roi"] = {{"path", p.string()},
                          {"x", req.roi->origin_x},
                          {"y", req.roi->origin_y},
                          {"width", req.roi->pixels.width},
                          {"height", req.roi->pixels.height}};
      }
    }
    return reasoner_reply_from_json(detail::call_adapter(command_, request));
  }

 private:
  std::vector<std::string> command_;
};

// --- built-in synthetic adapters -------------------------------------------

/// Seeded segmentation oracle: rectangular objects whose foreground
/// probability often loses to background, over the image's own extent.
class SyntheticSegmentationTool final : public SegmentationTool {
 public:
  SyntheticSegmentationTool(std::uint64_t seed, std::uint32_t classes = 5, std::uint32_t objects = 2)
      : seed_(seed), classes_(classes), objects_(objects) {}

  ProbabilityGrid segment(const Image& image) const override {
    std::mt19937_64 rng(seed_ ^ detail::fnv1a("segment"));
    synthetic::SegScenario sc;
    sc.height = image.height;
    sc.width = image.width;
    sc.classes = classes_;
    sc.objects_per_image = objects_;
    sc.object_strength = 3.0;
    sc.background_bias = 1.5;
    sc.noise = 0.5;
    return synthetic::make_seg_grid(sc, rng);
  }

 private:
  std::uint64_t seed_;
  std::uint32_t classes_;
  std::uint32_t objects_;
};

/// Seeded detection oracle: `count` random boxes inside the image.
class SyntheticDetectionTool final : public DetectionTool {
 public:
  SyntheticDetectionTool(std::uint64_t seed, std::uint32_t count = 3, std::uint32_t classes = 5)
      : seed_(seed), count_(count), classes_(classes) {}

  DetectionList detect(const Image& image) const override {
    std::mt19937_64 rng(seed_ ^ detail::fnv1a("detect"));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> cls(1, static_cast<int>(classes_) - 1);
    DetectionList out;
    const double w = image.width, h = image.height;
    for (std::uint32_t i = 0; i < count_; ++i) {
      const double bw = std::max(1.0, w * (0.1 + 0.3 * unit(rng)));
      const double bh = std::max(1.0, h * (0.1 + 0.3 * unit(rng)));
      const double x0 = unit(rng) * (w - bw);
      const double y0 = unit(rng) * (h - bh);
      out.items.push_back({static_cast<int>(i) + 1, cls(rng), 0.3 + 0.7 * unit(rng),
                           Box{x0, y0, x0 + bw, y0 + bh}});
    }
    return out;
  }

 private:
  std::uint64_t seed_;
  std::uint32_t count_;
  std::uint32_t classes_;
};

/// Seeded reasoning oracle. Its draws depend only on (seed, pathway, stage),
/// never on call order, so concurrent pathways stay reproducible.
class SeededReasoner final : public Reasoner {
 public:
  explicit SeededReasoner(std::uint64_t seed, std::size_t vocab = 32, std::size_t max_steps = 12)
      : seed_(seed), vocab_(vocab), max_steps_(max_steps) {}

  ReasonerReply reason(const ReasonerRequest& req) const override {
    const bool roi = req.stage == ReasonStage::SelectRoi;
    std::mt19937_64 rng(detail::fnv1a(req.pathway_id, seed_ ^ detail::fnv1a(roi ? "roi" : "answer")));
    ReasonerReply reply;
    if (roi) {
      std::vector<int> ids;
      if (req.report && req.report->contains("objects")) {
        for (const auto& o : (*req.report)["objects"]) ids.push_back(o.at("id").get<int>());
      } else if (req.report && req.report->contains("boxes")) {
        for (const auto& o : (*req.report)["boxes"]) ids.push_back(o.at("id").get<int>());
      }
      if (ids.empty()) {
        reply.text = "No object looks relevant.";
        return reply;
      }
      const int pick = ids[std::uniform_int_distribution<std::size_t>(0, ids.size() - 1)(rng)];
      reply.text = "The relevant region is object " + std::to_string(pick) + ". ids: [" +
                   std::to_string(pick) + "]";
      return reply;
    }
    const std::size_t steps = std::uniform_int_distribution<std::size_t>(1, max_steps_)(rng);
    const double concentration = std::uniform_real_distribution<double>(0.05, 0.6)(rng);
    reply.trace = synthetic::make_trace(steps, vocab_, concentration, rng);
    reply.text = "answer from " + req.pathway_id + " (" + std::to_string(steps) + " tokens)";
    return reply;
  }

 private:
  std::uint64_t seed_;
  std::size_t vocab_;
  std::size_t max_steps_;
};

/// Replays fixed replies keyed by pathway id then stage ("roi" / "answer").
/// A "*" pathway entry serves as the fallback.
class ScriptedReasoner final : public Reasoner {
 public:
  explicit ScriptedReasoner(json script) : script_(std::move(script)) {}

  static ScriptedReasoner from_file(const std::filesystem::path& path) {
    return ScriptedReasoner(read_json_file(path));
  }

  ReasonerReply reason(const ReasonerRequest& req) const override {
    const char* stage = req.stage == ReasonStage::SelectRoi ? "roi" : "answer";
    const json* entry = nullptr;
    for (const std::string& key : {req.pathway_id, std::string("*")}) {
      if (script_.contains(key) && script_[key].contains(stage)) {
        entry = &script_[key][stage];
        break;
      }
    }
    if (!entry) {
      throw Error(ErrorCode::AdapterFailure,
                  "script has no '" + std::string(stage) + "' reply for pathway " + req.pathway_id);
    }
    return reasoner_reply_from_json(*entry);
  }

 private:
  json script_;
};

}  // namespace confcal
