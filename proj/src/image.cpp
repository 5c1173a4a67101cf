#include "optin/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>

#include "optin/error.hpp"
#include "optin/io.hpp"

namespace optin {

namespace {

// Reads the next whitespace-separated header token, skipping '#' comments.
std::string next_token(const std::string& s, std::size_t& pos) {
  while (pos < s.size()) {
    if (std::isspace(static_cast<unsigned char>(s[pos]))) {
      ++pos;
    } else if (s[pos] == '#') {
      while (pos < s.size() && s[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < s.size() && !std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  if (start == pos) throw Error(ErrorKind::SchemaError, "truncated PPM header");
  return s.substr(start, pos - start);
}

int header_int(const std::string& s, std::size_t& pos) {
  const std::string tok = next_token(s, pos);
  if (tok.find_first_not_of("0123456789") != std::string::npos || tok.size() > 9) {
    throw Error(ErrorKind::SchemaError, "bad PPM header value");
  }
  return std::stoi(tok);
}

}  // namespace

Image decode_ppm(const std::string& bytes) {
  std::size_t pos = 0;
  if (next_token(bytes, pos) != "P6") throw Error(ErrorKind::SchemaError, "not a binary PPM (P6)");
  const int w = header_int(bytes, pos);
  const int h = header_int(bytes, pos);
  const int maxval = header_int(bytes, pos);
  if (w <= 0 || h <= 0 || maxval != 255) throw Error(ErrorKind::SchemaError, "unsupported PPM dimensions/maxval");
  ++pos;  // single whitespace before the raster
  Image img(w, h);
  if (bytes.size() < pos + img.rgb.size()) throw Error(ErrorKind::SchemaError, "truncated PPM raster");
  std::memcpy(img.rgb.data(), bytes.data() + pos, img.rgb.size());
  return img;
}

std::string encode_ppm(const Image& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.rgb.data()), img.rgb.size());
  return out;
}

Image read_ppm(const std::string& path) { return decode_ppm(io::read_text(path)); }
void write_ppm(const std::string& path, const Image& img) { io::write_text(path, encode_ppm(img)); }

PixelRect box_rect(const HeadDetection& box, int width, int height) {
  const auto clampi = [](double v, int hi) { return static_cast<int>(std::clamp(v, 0.0, static_cast<double>(hi))); };
  PixelRect r;
  r.x0 = clampi(std::floor(box.u - 0.5 * box.width), width);
  r.x1 = clampi(std::ceil(box.u + 0.5 * box.width), width);
  r.y0 = clampi(std::floor(box.v - 0.5 * box.height), height);
  r.y1 = clampi(std::ceil(box.v + 0.5 * box.height), height);
  r.x1 = std::max(r.x0, r.x1);
  r.y1 = std::max(r.y0, r.y1);
  return r;
}

Image compose_mask(const Image& frame, const Image& background, const FrameDecision& decision) {
  if (frame.width != background.width || frame.height != background.height ||
      frame.rgb.size() != background.rgb.size()) {
    throw Error(ErrorKind::DimensionMismatch, "frame and background differ in size");
  }
  Image out = background;
  for (const BoxDecision& b : decision.boxes) {
    if (!b.keep) continue;
    const PixelRect r = box_rect(b.box, frame.width, frame.height);
    const std::size_t row_bytes = static_cast<std::size_t>(r.x1 - r.x0) * 3;
    for (int y = r.y0; y < r.y1; ++y) {
      std::memcpy(out.pixel(r.x0, y), frame.pixel(r.x0, y), row_bytes);
    }
  }
  return out;
}

}  // namespace optin
