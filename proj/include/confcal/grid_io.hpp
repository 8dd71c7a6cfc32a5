#pragma once

// "CPGRID01" container: 8-byte magic, 1-byte kind, three little-endian u32
// dims (H, W, C), then a row-major little-endian payload.
//
//   kind 0: probabilities, f32, C = classes
//   kind 1: labels, u16, C = 1
//   kind 2: scores, f64, C = 1 (stored as H = 1, W = n)

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <unistd.h>

#include "confcal/cp_core.hpp"
#include "confcal/error.hpp"
#include "confcal/seg_calib.hpp"

namespace confcal {

inline constexpr std::string_view kGridMagic = "CPGRID01";
inline constexpr std::size_t kGridHeaderSize = 8 + 1 + 12;

enum class GridKind : std::uint8_t { Probabilities = 0, Labels = 1, Scores = 2 };

using GridData = std::variant<ProbabilityGrid, LabelGrid, ScoreSet>;

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  using U = std::conditional_t<sizeof(T) == 2, std::uint16_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
  }
}

template <typename T>
T get_le(const unsigned char* p) {
  using U = std::conditional_t<sizeof(T) == 2, std::uint16_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(p[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

inline std::string header(GridKind kind, std::uint32_t h, std::uint32_t w, std::uint32_t c) {
  std::string out(kGridMagic);
  out.push_back(static_cast<char>(kind));
  put_le(out, h);
  put_le(out, w);
  put_le(out, c);
  return out;
}

}  // namespace detail

inline std::string encode_grid(const ProbabilityGrid& grid) {
  grid.validate();
  std::string out = detail::header(GridKind::Probabilities, grid.height, grid.width, grid.classes);
  out.reserve(out.size() + grid.probs.size() * 4);
  for (float v : grid.probs) detail::put_le(out, v);
  return out;
}

inline std::string encode_grid(const LabelGrid& grid) {
  grid.validate();
  std::string out = detail::header(GridKind::Labels, grid.height, grid.width, 1);
  out.reserve(out.size() + grid.labels.size() * 2);
  for (std::uint16_t v : grid.labels) detail::put_le(out, v);
  return out;
}

inline std::string encode_grid(const ScoreSet& scores) {
  std::string out =
      detail::header(GridKind::Scores, 1, static_cast<std::uint32_t>(scores.size()), 1);
  for (double v : scores.values()) detail::put_le(out, v);
  return out;
}

inline std::string encode_grid(const GridData& data) {
  return std::visit([](const auto& g) { return encode_grid(g); }, data);
}

/// Parses a container. `label_classes`, when given, is the class count that
/// label grids are validated against; otherwise it is inferred as max + 1.
inline GridData decode_grid(std::string_view bytes,
                            std::optional<std::uint32_t> label_classes = std::nullopt) {
  if (bytes.size() < kGridMagic.size() || bytes.substr(0, kGridMagic.size()) != kGridMagic) {
    throw Error(ErrorCode::BadMagic, "missing CPGRID01 magic");
  }
  if (bytes.size() < kGridHeaderSize) {
    throw Error(ErrorCode::TruncatedPayload, "container header is incomplete");
  }
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  const auto kind = raw[8];
  const auto h = detail::get_le<std::uint32_t>(raw + 9);
  const auto w = detail::get_le<std::uint32_t>(raw + 13);
  const auto c = detail::get_le<std::uint32_t>(raw + 17);
  std::size_t elem = 0;
  switch (kind) {
    case 0: elem = 4; break;
    case 1: elem = 2; break;
    case 2: elem = 8; break;
    default:
      throw Error(ErrorCode::InvariantViolation, "unknown container kind " + std::to_string(kind));
  }
  if (kind != 0 && c != 1) {
    throw Error(ErrorCode::InvariantViolation, "label and score containers require C = 1");
  }
  const std::uint64_t per_pixel = std::uint64_t{c} * elem;
  const std::uint64_t pixels = std::uint64_t{h} * w;
  const std::size_t have = bytes.size() - kGridHeaderSize;
  if (per_pixel != 0 && pixels > have / per_pixel) {
    throw Error(ErrorCode::TruncatedPayload,
                "payload has " + std::to_string(have) + " bytes, header requires " + std::to_string(h) + "x" +
                    std::to_string(w) + "x" + std::to_string(c) + " elements of " + std::to_string(elem) +
                    " bytes");
  }
  const std::uint64_t expected = pixels * per_pixel;
  if (expected < have) {
    throw Error(ErrorCode::InvariantViolation, "trailing bytes after container payload");
  }
  const unsigned char* payload = raw + kGridHeaderSize;
  const std::size_t count = static_cast<std::size_t>(h) * w * c;

  if (kind == 0) {
    ProbabilityGrid grid(h, w, c);
    for (std::size_t i = 0; i < count; ++i) grid.probs[i] = detail::get_le<float>(payload + 4 * i);
    grid.validate();
    return grid;
  }
  if (kind == 1) {
    LabelGrid grid(h, w, 0);
    std::uint32_t max_label = 0;
    for (std::size_t i = 0; i < count; ++i) {
      grid.labels[i] = detail::get_le<std::uint16_t>(payload + 2 * i);
      max_label = std::max<std::uint32_t>(max_label, grid.labels[i]);
    }
    grid.classes = label_classes.value_or(max_label + 1);
    grid.validate();
    return grid;
  }
  if (h != 1) {
    throw Error(ErrorCode::InvariantViolation, "score containers are stored as a single row");
  }
  ScoreSet scores;
  scores.reserve(count);
  for (std::size_t i = 0; i < count; ++i) scores.add(detail::get_le<double>(payload + 8 * i));
  return scores;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes to a sibling temporary file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error(ErrorCode::IoFailure, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorCode::IoFailure, "cannot rename into " + path.string());
  }
}

inline GridData read_grid(const std::filesystem::path& path,
                          std::optional<std::uint32_t> label_classes = std::nullopt) {
  return decode_grid(read_file_bytes(path), label_classes);
}

template <typename Grid>
void write_grid(const std::filesystem::path& path, const Grid& grid) {
  const std::string bytes = encode_grid(grid);  // validates before touching the filesystem
  write_file_atomic(path, bytes);
}

template <typename Grid>
Grid read_grid_as(const std::filesystem::path& path,
                  std::optional<std::uint32_t> label_classes = std::nullopt) {
  GridData data = read_grid(path, label_classes);
  if (auto* g = std::get_if<Grid>(&data)) return std::move(*g);
  throw Error(ErrorCode::InvariantViolation, path.string() + " holds a different container kind");
}

}  // namespace confcal
