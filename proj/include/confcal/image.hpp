#pragma once

// Minimal 8-bit raster plus binary/ASCII PGM and PPM I/O for pipeline
// fixtures. No other image formats are decoded.

#include <cctype>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "confcal/error.hpp"

namespace confcal {

struct Image {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t channels = 1;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::uint32_t w, std::uint32_t h, std::uint32_t c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(std::size_t{w} * h * c, fill) {}

  std::uint8_t* at(std::size_t x, std::size_t y) {
    return pixels.data() + (y * width + x) * channels;
  }
  const std::uint8_t* at(std::size_t x, std::size_t y) const {
    return pixels.data() + (y * width + x) * channels;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Copies the [x0, x0+w) x [y0, y0+h) window. The window must lie inside.
inline Image crop(const Image& src, std::uint32_t x0, std::uint32_t y0, std::uint32_t w,
                  std::uint32_t h) {
  if (std::size_t{x0} + w > src.width || std::size_t{y0} + h > src.height) {
    throw Error(ErrorCode::InvariantViolation, "crop window exceeds image extent");
  }
  Image out(w, h, src.channels);
  const std::size_t row_bytes = std::size_t{w} * src.channels;
  for (std::uint32_t y = 0; y < h; ++y) {
    const auto* from = src.at(x0, y0 + y);
    std::copy(from, from + row_bytes, out.at(0, y));
  }
  return out;
}

inline constexpr std::uint64_t kMaxRasterBytes = std::uint64_t{1} << 30;

namespace detail {

inline std::string next_pnm_token(std::istream& in) {
  std::string token;
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      if (!token.empty()) break;
    } else {
      token.push_back(static_cast<char>(c));
    }
    c = in.get();
  }
  return token;
}

}  // namespace detail

inline Image read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open image " + path);
  const std::string magic = detail::next_pnm_token(in);
  if (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6") {
    throw Error(ErrorCode::BadMagic, path + " is not a PGM/PPM raster");
  }
  Image img;
  try {
    img.width = static_cast<std::uint32_t>(std::stoul(detail::next_pnm_token(in)));
    img.height = static_cast<std::uint32_t>(std::stoul(detail::next_pnm_token(in)));
    const unsigned long maxval = std::stoul(detail::next_pnm_token(in));
    if (maxval == 0 || maxval > 255) {
      throw Error(ErrorCode::InvariantViolation, "only 8-bit rasters are supported");
    }
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::InvariantViolation, "malformed raster header in " + path);
  }
  img.channels = (magic == "P3" || magic == "P6") ? 3 : 1;
  if (img.width == 0 || img.height == 0 ||
      std::uint64_t{img.width} * img.height * img.channels > kMaxRasterBytes) {
    throw Error(ErrorCode::InvariantViolation, "raster dimensions out of range in " + path);
  }
  img.pixels.resize(std::size_t{img.width} * img.height * img.channels);
  if (magic == "P5" || magic == "P6") {
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
      throw Error(ErrorCode::TruncatedPayload, "raster payload shorter than header claims");
    }
  } else {
    for (auto& px : img.pixels) {
      const std::string tok = detail::next_pnm_token(in);
      if (tok.empty()) throw Error(ErrorCode::TruncatedPayload, "raster payload too short");
      if (tok.find_first_not_of("0123456789") != std::string::npos || tok.size() > 3 ||
          std::stoul(tok) > 255) {
        throw Error(ErrorCode::InvariantViolation, "bad raster sample '" + tok + "'");
      }
      px = static_cast<std::uint8_t>(std::stoul(tok));
    }
  }
  return img;
}

inline std::string encode_pnm(const Image& img) {
  std::ostringstream out;
  out << (img.channels == 3 ? "P6" : "P5") << '\n'
      << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  return out.str();
}

}  // namespace confcal
