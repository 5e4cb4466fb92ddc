// Attention tensors dumped by the VLM runtime, their reduction to one value
// per image patch, and heatmap overlays.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "i2m/error.h"

namespace i2m::attention {

struct Grid {
  std::uint32_t rows = 1;
  std::uint32_t cols = 1;
  bool operator==(const Grid&) const = default;
};

// Values indexed [layer][head][image token][text token], row-major.
struct AttentionTensor {
  std::uint32_t n_layers = 0;
  std::uint32_t n_heads = 0;
  std::uint32_t n_image_tokens = 0;
  std::uint32_t n_text_tokens = 0;
  Grid grid;
  std::vector<float> data;

  std::size_t offset(std::size_t layer, std::size_t head, std::size_t image, std::size_t text) const {
    return ((layer * n_heads + head) * n_image_tokens + image) * n_text_tokens + text;
  }
  float at(std::size_t layer, std::size_t head, std::size_t image, std::size_t text) const {
    return data[offset(layer, head, image, text)];
  }
};

// Checks shape and values. Throws CORRUPT_TENSOR or GRID_MISMATCH.
void validate(const AttentionTensor& t);

// "I2MA", u16 version, six u32 (l, heads, |I|, |t|, rows, cols), then the
// float32 payload, all little-endian.
std::vector<std::uint8_t> serialize_attention(const AttentionTensor& t);
AttentionTensor parse_attention(std::span<const std::uint8_t> bytes);
AttentionTensor load_attention(const std::filesystem::path& path);

struct TokenRange {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
};

// "a:b", ":b", "a:" or "" (full span). Throws BAD_RANGE.
TokenRange parse_range(std::string_view text, std::size_t n_text_tokens);

struct AttentionProfile {
  std::vector<double> values;  // one per image token
  TokenRange range;
};

// Mean over layers, heads and the text tokens in range. Throws BAD_RANGE.
AttentionProfile reduce(const AttentionTensor& t, TokenRange range);

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // width * height * 3
};

// PNG or binary/ASCII PPM and PGM. Throws DECODE_FAILURE.
Image decode_image(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_ppm(const Image& image);

// Blue -> cyan -> green -> yellow -> red, v clamped to [0, 1].
std::array<std::uint8_t, 3> ramp(double v);

// Min-max normalised profile (constant -> 0.5), nearest-neighbour upscaled
// from the grid to the image and alpha-blended over it.
// Throws GRID_MISMATCH or BAD_ALPHA.
Image overlay(const Image& image, const AttentionProfile& profile, Grid grid, double alpha);

// decode_image + overlay + encode_ppm.
std::vector<std::uint8_t> render_overlay(std::span<const std::uint8_t> image_bytes, const AttentionProfile& profile,
                                         Grid grid, double alpha);

}  // namespace i2m::attention
