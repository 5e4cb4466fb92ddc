#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "i2m/attention.h"

namespace i2m::attention {

namespace {

constexpr char kMagic[4] = {'I', '2', 'M', 'A'};
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kHeaderSize = 4 + 2 + 6 * 4;

std::uint32_t read_u32(const std::uint8_t* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24);
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

std::uint64_t element_count(const AttentionTensor& t) {
  return std::uint64_t{t.n_layers} * t.n_heads * t.n_image_tokens * t.n_text_tokens;
}

void validate_shape(const AttentionTensor& t) {
  if (t.n_layers == 0 || t.n_heads == 0 || t.n_image_tokens == 0 || t.n_text_tokens == 0) {
    throw Error("CORRUPT_TENSOR", "all tensor dimensions must be at least 1");
  }
  if (std::uint64_t{t.grid.rows} * t.grid.cols != t.n_image_tokens) {
    throw Error("GRID_MISMATCH", "grid " + std::to_string(t.grid.rows) + "x" + std::to_string(t.grid.cols) +
                                     " does not cover " + std::to_string(t.n_image_tokens) + " image tokens");
  }
}

}  // namespace

void validate(const AttentionTensor& t) {
  validate_shape(t);
  if (t.data.size() != element_count(t)) {
    throw Error("CORRUPT_TENSOR", "payload has " + std::to_string(t.data.size()) + " values, shape needs " +
                                      std::to_string(element_count(t)));
  }
  for (float v : t.data) {
    if (!std::isfinite(v) || v < 0.0f) throw Error("CORRUPT_TENSOR", "attention values must be finite and >= 0");
  }
}

std::vector<std::uint8_t> serialize_attention(const AttentionTensor& t) {
  validate(t);
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.push_back(kVersion & 0xFF);
  out.push_back(kVersion >> 8);
  for (std::uint32_t v : {t.n_layers, t.n_heads, t.n_image_tokens, t.n_text_tokens, t.grid.rows, t.grid.cols}) {
    put_u32(out, v);
  }
  out.reserve(out.size() + 4 * t.data.size());
  for (float f : t.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

AttentionTensor parse_attention(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderSize || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error("CORRUPT_TENSOR", "missing I2MA header");
  }
  std::uint16_t version = static_cast<std::uint16_t>(bytes[4] | (bytes[5] << 8));
  if (version != kVersion) throw Error("CORRUPT_TENSOR", "unsupported tensor version " + std::to_string(version));
  const std::uint8_t* p = bytes.data() + 6;
  AttentionTensor t;
  t.n_layers = read_u32(p);
  t.n_heads = read_u32(p + 4);
  t.n_image_tokens = read_u32(p + 8);
  t.n_text_tokens = read_u32(p + 12);
  t.grid = {read_u32(p + 16), read_u32(p + 20)};
  std::uint64_t n = element_count(t);
  std::uint64_t payload = bytes.size() - kHeaderSize;
  // Overflow-safe: compare against payload / 4 rather than n * 4.
  if (payload % 4 != 0 || n != payload / 4) {
    throw Error("CORRUPT_TENSOR", "payload is " + std::to_string(payload) + " bytes, shape needs " +
                                      std::to_string(n) + " floats");
  }
  validate_shape(t);
  t.data.resize(static_cast<std::size_t>(n));
  const std::uint8_t* d = bytes.data() + kHeaderSize;
  for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = std::bit_cast<float>(read_u32(d + 4 * i));
  validate(t);
  return t;
}

AttentionTensor load_attention(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("IO_FAILURE", "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_attention(bytes);
}

TokenRange parse_range(std::string_view text, std::size_t n) {
  TokenRange r{0, n};
  if (!text.empty()) {
    std::size_t colon = text.find(':');
    if (colon == std::string_view::npos) throw Error("BAD_RANGE", "range must look like start:end");
    auto num = [&](std::string_view s, std::size_t fallback) {
      if (s.empty()) return fallback;
      std::size_t v = 0;
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || ptr != s.data() + s.size()) throw Error("BAD_RANGE", "bad number '" + std::string(s) + "'");
      return v;
    };
    r.start = num(text.substr(0, colon), 0);
    r.end = num(text.substr(colon + 1), n);
  }
  if (!(r.start < r.end && r.end <= n)) {
    throw Error("BAD_RANGE", "token range [" + std::to_string(r.start) + ", " + std::to_string(r.end) +
                                 ") is not inside [0, " + std::to_string(n) + ")");
  }
  return r;
}

AttentionProfile reduce(const AttentionTensor& t, TokenRange range) {
  if (!(range.start < range.end && range.end <= t.n_text_tokens)) {
    throw Error("BAD_RANGE", "token range [" + std::to_string(range.start) + ", " + std::to_string(range.end) +
                                 ") is not inside [0, " + std::to_string(t.n_text_tokens) + ")");
  }
  validate(t);
  AttentionProfile p;
  p.range = range;
  p.values.assign(t.n_image_tokens, 0.0);
  for (std::size_t l = 0; l < t.n_layers; ++l) {
    for (std::size_t h = 0; h < t.n_heads; ++h) {
      for (std::size_t i = 0; i < t.n_image_tokens; ++i) {
        const float* row = t.data.data() + t.offset(l, h, i, 0);
        double s = 0.0;
        for (std::size_t k = range.start; k < range.end; ++k) s += row[k];
        p.values[i] += s;
      }
    }
  }
  double count = static_cast<double>(t.n_layers) * t.n_heads * static_cast<double>(range.end - range.start);
  for (double& v : p.values) v /= count;
  return p;
}

}  // namespace i2m::attention
