#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "i2m/attention.h"

namespace i2m::attention {

namespace {

constexpr std::array<std::array<double, 3>, 5> kStops = {{
    {0, 0, 255}, {0, 255, 255}, {0, 255, 0}, {255, 255, 0}, {255, 0, 0}}};

[[noreturn]] void fail(const std::string& why) { throw Error("DECODE_FAILURE", why); }

class PnmReader {
 public:
  explicit PnmReader(std::span<const std::uint8_t> b) : b_(b) {}

  // Next header integer, skipping whitespace and # comments.
  long number() {
    skip_space();
    if (pos_ >= b_.size() || !std::isdigit(b_[pos_])) fail("malformed PNM header");
    long v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + (b_[pos_++] - '0');
      if (v > 1'000'000'000) fail("PNM header value too large");
    }
    return v;
  }
  // Exactly one whitespace byte separates the header from binary data.
  void end_header() {
    if (pos_ >= b_.size() || !std::isspace(b_[pos_])) fail("malformed PNM header");
    ++pos_;
  }
  std::span<const std::uint8_t> rest() const { return b_.subspan(pos_); }
  void skip(std::size_t n) { pos_ += n; }

 private:
  void skip_space() {
    while (pos_ < b_.size()) {
      if (std::isspace(b_[pos_])) {
        ++pos_;
      } else if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

Image decode_pnm(std::span<const std::uint8_t> bytes) {
  char kind = static_cast<char>(bytes[1]);
  bool color = kind == '3' || kind == '6';
  bool ascii = kind == '2' || kind == '3';
  PnmReader r(bytes.subspan(2));
  long w = r.number();
  long h = r.number();
  long maxval = r.number();
  if (w <= 0 || h <= 0 || w > 65535 || h > 65535) fail("bad PNM dimensions");
  if (maxval <= 0 || maxval > 65535) fail("bad PNM maxval");
  std::size_t channels = color ? 3 : 1;
  std::size_t samples = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * channels;
  std::vector<std::uint32_t> raw(samples);
  if (ascii) {
    for (auto& s : raw) s = static_cast<std::uint32_t>(r.number());
  } else {
    r.end_header();
    std::size_t width = maxval > 255 ? 2 : 1;
    auto data = r.rest();
    if (data.size() < samples * width) fail("PNM pixel data is truncated");
    for (std::size_t i = 0; i < samples; ++i) {
      raw[i] = width == 1 ? data[i] : (std::uint32_t{data[2 * i]} << 8) | data[2 * i + 1];
    }
  }
  Image img{static_cast<int>(w), static_cast<int>(h), {}};
  img.rgb.resize(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3);
  for (std::size_t px = 0; px < static_cast<std::size_t>(w) * static_cast<std::size_t>(h); ++px) {
    for (std::size_t c = 0; c < 3; ++c) {
      std::uint32_t s = raw[px * channels + (color ? c : 0)];
      if (s > static_cast<std::uint32_t>(maxval)) fail("PNM sample exceeds maxval");
      img.rgb[px * 3 + c] = static_cast<std::uint8_t>(maxval == 255 ? s : (s * 255 + maxval / 2) / maxval);
    }
  }
  return img;
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    std::string msg = png.message;
    png_image_free(&png);
    fail("PNG: " + msg);
  }
  png.format = PNG_FORMAT_RGB;
  Image img{static_cast<int>(png.width), static_cast<int>(png.height), {}};
  img.rgb.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, img.rgb.data(), 0, nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    fail("PNG: " + msg);
  }
  return img;
}

}  // namespace

Image decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) return decode_png(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] >= '2' && bytes[1] <= '6' && bytes[1] != '4') {
    return decode_pnm(bytes);
  }
  fail("unsupported image format (expected PNG, PPM or PGM)");
}

std::vector<std::uint8_t> encode_ppm(const Image& image) {
  std::string header = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.rgb.begin(), image.rgb.end());
  return out;
}

std::array<std::uint8_t, 3> ramp(double v) {
  v = std::clamp(v, 0.0, 1.0);
  double x = v * 4.0;
  int seg = std::min(3, static_cast<int>(std::floor(x)));
  double t = x - seg;
  std::array<std::uint8_t, 3> c{};
  for (std::size_t k = 0; k < 3; ++k) {
    double a = kStops[static_cast<std::size_t>(seg)][k];
    double b = kStops[static_cast<std::size_t>(seg) + 1][k];
    c[k] = static_cast<std::uint8_t>(std::floor(a + (b - a) * t + 0.5));
  }
  return c;
}

Image overlay(const Image& image, const AttentionProfile& profile, Grid grid, double alpha) {
  if (std::uint64_t{grid.rows} * grid.cols != profile.values.size() || grid.rows == 0 || grid.cols == 0) {
    throw Error("GRID_MISMATCH", "profile has " + std::to_string(profile.values.size()) + " values for a " +
                                     std::to_string(grid.rows) + "x" + std::to_string(grid.cols) + " grid");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("BAD_ALPHA", "alpha must lie in [0, 1]");
  auto [lo, hi] = std::minmax_element(profile.values.begin(), profile.values.end());
  double span = *hi - *lo;
  std::vector<std::array<std::uint8_t, 3>> colors;
  colors.reserve(profile.values.size());
  for (double v : profile.values) colors.push_back(ramp(span > 0 ? (v - *lo) / span : 0.5));

  Image out = image;
  const auto w = static_cast<std::uint64_t>(image.width);
  const auto h = static_cast<std::uint64_t>(image.height);
  for (std::uint64_t y = 0; y < h; ++y) {
    std::uint64_t row = y * grid.rows / h;
    for (std::uint64_t x = 0; x < w; ++x) {
      std::uint64_t col = x * grid.cols / w;
      const auto& c = colors[row * grid.cols + col];
      std::size_t px = static_cast<std::size_t>((y * w + x) * 3);
      for (std::size_t k = 0; k < 3; ++k) {
        double blended = (1.0 - alpha) * image.rgb[px + k] + alpha * c[k];
        out.rgb[px + k] = static_cast<std::uint8_t>(std::floor(blended + 0.5));
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> render_overlay(std::span<const std::uint8_t> image_bytes, const AttentionProfile& profile,
                                         Grid grid, double alpha) {
  return encode_ppm(overlay(decode_image(image_bytes), profile, grid, alpha));
}

}  // namespace i2m::attention
