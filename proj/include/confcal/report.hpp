#pragma once

// Text-facing tool reports: segmentation objects as connected components with
// boundary polygons, detection objects as boxes.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "confcal/det_calib.hpp"
#include "confcal/error.hpp"
#include "confcal/seg_calib.hpp"

namespace confcal {

enum class ToolKind { Segmentation, Detection };

inline std::string_view to_string(ToolKind k) noexcept {
  return k == ToolKind::Segmentation ? "segmentation" : "detection";
}

inline ToolKind parse_tool_kind(std::string_view s) {
  if (s == "segmentation") return ToolKind::Segmentation;
  if (s == "detection") return ToolKind::Detection;
  throw Error(ErrorCode::InvalidConfig, "unknown tool kind '" + std::string(s) + "'");
}

/// Pixel-corner coordinate; pixel (x, y) spans [x, x+1] x [y, y+1].
struct Point {
  std::int64_t x = 0;
  std::int64_t y = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

using Polygon = std::vector<Point>;

struct ReportObject {
  int id = 0;
  int class_id = 0;
  std::string name;
  std::optional<double> confidence;
  std::variant<Polygon, Box> geometry;
};

struct ToolReport {
  ToolKind kind = ToolKind::Segmentation;
  std::vector<ReportObject> objects;

  const ReportObject* find(int id) const {
    for (const auto& o : objects) {
      if (o.id == id) return &o;
    }
    return nullptr;
  }

  void validate() const {
    std::set<int> seen;
    for (const auto& o : objects) {
      if (!seen.insert(o.id).second) {
        throw Error(ErrorCode::InvariantViolation, "duplicate object id " + std::to_string(o.id));
      }
      const bool is_box = std::holds_alternative<Box>(o.geometry);
      if (is_box != (kind == ToolKind::Detection)) {
        throw Error(ErrorCode::InvariantViolation, "object geometry does not match report kind");
      }
    }
  }
};

struct Component {
  int id = 0;
  std::uint16_t label = 0;
  std::size_t pixels = 0;
  std::uint32_t x_min = 0, y_min = 0, x_max = 0, y_max = 0;  // inclusive pixel bounds
};

/// 4-connected components of equal non-background labels. Ids start at 1 and
/// follow the raster-scan order of each component's first pixel; 0 marks
/// background in `ids`.
struct ComponentMap {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<int> ids;
  std::vector<Component> components;

  int at(std::size_t x, std::size_t y) const { return ids[y * width + x]; }
};

inline ComponentMap label_components(const LabelGrid& labels) {
  ComponentMap map;
  map.width = labels.width;
  map.height = labels.height;
  map.ids.assign(labels.pixel_count(), 0);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < labels.pixel_count(); ++start) {
    const std::uint16_t label = labels.labels[start];
    if (label == 0 || map.ids[start] != 0) continue;
    Component comp;
    comp.id = static_cast<int>(map.components.size()) + 1;
    comp.label = label;
    comp.x_min = comp.x_max = static_cast<std::uint32_t>(start % labels.width);
    comp.y_min = comp.y_max = static_cast<std::uint32_t>(start / labels.width);
    map.ids[start] = comp.id;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      const auto x = static_cast<std::uint32_t>(i % labels.width);
      const auto y = static_cast<std::uint32_t>(i / labels.width);
      ++comp.pixels;
      comp.x_min = std::min(comp.x_min, x);
      comp.x_max = std::max(comp.x_max, x);
      comp.y_min = std::min(comp.y_min, y);
      comp.y_max = std::max(comp.y_max, y);
      auto visit = [&](std::size_t j) {
        if (map.ids[j] == 0 && labels.labels[j] == label) {
          map.ids[j] = comp.id;
          stack.push_back(j);
        }
      };
      if (x > 0) visit(i - 1);
      if (x + 1 < labels.width) visit(i + 1);
      if (y > 0) visit(i - labels.width);
      if (y + 1 < labels.height) visit(i + labels.width);
    }
    map.components.push_back(comp);
  }
  return map;
}

namespace detail {

// Directions in screen coordinates (y grows downward): E, S, W, N.
inline constexpr std::array<std::array<int, 2>, 4> kSteps{{{1, 0}, {0, 1}, {-1, 0}, {0, -1}}};

}  // namespace detail

/// Outer boundary of one component as a clockwise (on screen) polygon of
/// pixel corners with collinear vertices removed. Diagonal pinch points are
/// not crossed, consistent with 4-connectivity.
inline Polygon component_boundary(const ComponentMap& map, int id) {
  const std::size_t vw = std::size_t{map.width} + 1;
  const std::size_t vh = std::size_t{map.height} + 1;
  std::vector<std::uint8_t> out_edges(vw * vh, 0);
  auto inside = [&](std::int64_t x, std::int64_t y) {
    return x >= 0 && y >= 0 && x < map.width && y < map.height &&
           map.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) == id;
  };
  auto vertex = [&](std::int64_t x, std::int64_t y) { return static_cast<std::size_t>(y) * vw + x; };
  std::optional<Point> start;
  for (std::int64_t y = 0; y < map.height; ++y) {
    for (std::int64_t x = 0; x < map.width; ++x) {
      if (!inside(x, y)) continue;
      if (!start) start = Point{x, y};
      if (!inside(x, y - 1)) out_edges[vertex(x, y)] |= 1u << 0;          // top, eastward
      if (!inside(x + 1, y)) out_edges[vertex(x + 1, y)] |= 1u << 1;      // right, southward
      if (!inside(x, y + 1)) out_edges[vertex(x + 1, y + 1)] |= 1u << 2;  // bottom, westward
      if (!inside(x - 1, y)) out_edges[vertex(x, y + 1)] |= 1u << 3;      // left, northward
    }
  }
  if (!start) return {};

  Polygon poly;
  Point v = *start;
  int dir = 0;
  poly.push_back(v);
  do {
    v = {v.x + detail::kSteps[dir][0], v.y + detail::kSteps[dir][1]};
    const std::uint8_t options = out_edges[vertex(v.x, v.y)];
    int next = -1;
    for (int turn : {1, 0, 3}) {  // right, straight, left
      const int d = (dir + turn) % 4;
      if (options & (1u << d)) {
        next = d;
        break;
      }
    }
    if (next < 0) {
      throw Error(ErrorCode::InvariantViolation, "open boundary while tracing component");
    }
    if (next != dir && !(v == *start)) poly.push_back(v);
    dir = next;
  } while (!(v == *start));
  return poly;
}

inline std::string default_class_name(int class_id) { return "class_" + std::to_string(class_id); }

/// Segmentation report: one object per connected component of the label map.
inline ToolReport make_seg_report(const LabelGrid& labels,
                                  std::span<const std::string> class_names = {}) {
  const ComponentMap map = label_components(labels);
  ToolReport report;
  report.kind = ToolKind::Segmentation;
  for (const auto& comp : map.components) {
    ReportObject obj;
    obj.id = comp.id;
    obj.class_id = comp.label;
    obj.name = comp.label < class_names.size() ? class_names[comp.label]
                                               : default_class_name(comp.label);
    obj.geometry = component_boundary(map, comp.id);
    report.objects.push_back(std::move(obj));
  }
  return report;
}

/// Detection report: ids are the detections' own ids.
inline ToolReport make_det_report(const DetectionList& dets,
                                  std::span<const std::string> class_names = {}) {
  ToolReport report;
  report.kind = ToolKind::Detection;
  for (const auto& d : dets.items) {
    ReportObject obj;
    obj.id = d.id;
    obj.class_id = d.class_id.value_or(0);
    obj.name = d.class_id && static_cast<std::size_t>(*d.class_id) < class_names.size()
                   ? class_names[static_cast<std::size_t>(*d.class_id)]
                   : default_class_name(obj.class_id);
    obj.confidence = d.confidence;
    obj.geometry = d.box;
    report.objects.push_back(std::move(obj));
  }
  report.validate();
  return report;
}

}  // namespace confcal
