#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "optin/pipeline.hpp"

namespace optin {

/// 8-bit interleaved RGB.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::uint8_t* pixel(int x, int y) { return &rgb[(static_cast<std::size_t>(y) * width + x) * 3]; }
  const std::uint8_t* pixel(int x, int y) const { return &rgb[(static_cast<std::size_t>(y) * width + x) * 3]; }
  bool operator==(const Image& o) const = default;
};

/// Binary PPM (P6, maxval 255). Header comments are skipped on read.
Image read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Image& img);
Image decode_ppm(const std::string& bytes);
std::string encode_ppm(const Image& img);

struct PixelRect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open
  long area() const { return static_cast<long>(x1 - x0) * (y1 - y0); }
};

/// Pixel rectangle of a centre/size box, clamped to the image.
PixelRect box_rect(const HeadDetection& box, int width, int height);

/// Background with the kept boxes copied from the live frame.
Image compose_mask(const Image& frame, const Image& background, const FrameDecision& decision);

}  // namespace optin
