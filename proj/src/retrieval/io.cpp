#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "i2m/retrieval.h"
#include "json.hpp"

namespace i2m::retrieval {

namespace {

constexpr char kMagic[4] = {'I', '2', 'M', 'X'};
constexpr std::uint16_t kVersion = 1;

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  if (s.size() > 0xFFFFFFFFu) throw Error("IO_FAILURE", "string too long for index format");
  put_le(out, s.size(), 4);
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint64_t le(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= std::uint64_t{b_[pos_ + static_cast<std::size_t>(i)]} << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  std::string str() {
    auto n = static_cast<std::size_t>(le(4));
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  float f32() {
    auto bits = static_cast<std::uint32_t>(le(4));
    return std::bit_cast<float>(bits);
  }
  std::size_t remaining() const { return b_.size() - pos_; }
  void need(std::size_t n) const {
    if (remaining() < n) throw Error("CORRUPT_INDEX", "index file is truncated");
  }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

Vector to_vector(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw Error("BAD_EMBEDDING", what + " must be a non-empty array of numbers");
  Vector v;
  v.reserve(j.size());
  for (const auto& x : j) {
    if (!x.is_number()) throw Error("BAD_EMBEDDING", what + " contains a non-number");
    v.push_back(x.get<float>());
  }
  return v;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("IO_FAILURE", "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::vector<std::uint8_t> serialize_index(const RetrievalIndex& index) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_le(out, kVersion, 2);
  put_le(out, index.dimension(), 4);
  put_le(out, index.size(), 8);
  for (const EmbeddingRecord& r : index.records()) {
    put_string(out, r.id);
    put_string(out, r.caption);
    put_string(out, r.abc);
    for (float x : r.vector) put_le(out, std::bit_cast<std::uint32_t>(x), 4);
  }
  return out;
}

RetrievalIndex deserialize_index(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 18 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error("CORRUPT_INDEX", "missing I2MX header");
  }
  Reader r(bytes.subspan(4));
  auto version = r.le(2);
  if (version != kVersion) throw Error("CORRUPT_INDEX", "unsupported index version " + std::to_string(version));
  auto h = static_cast<std::size_t>(r.le(4));
  std::uint64_t n = r.le(8);
  if (h == 0 || n == 0) throw Error("CORRUPT_INDEX", "index header declares no data");
  // Each record needs three length prefixes and h floats at minimum.
  if (n > r.remaining() / (12 + 4 * static_cast<std::uint64_t>(h))) {
    throw Error("CORRUPT_INDEX", "record count exceeds file length");
  }
  std::vector<EmbeddingRecord> records;
  records.reserve(static_cast<std::size_t>(n));
  for (std::uint64_t i = 0; i < n; ++i) {
    EmbeddingRecord rec;
    rec.id = r.str();
    rec.caption = r.str();
    rec.abc = r.str();
    r.need(4 * h);
    rec.vector.resize(h);
    for (std::size_t j = 0; j < h; ++j) rec.vector[j] = r.f32();
    records.push_back(std::move(rec));
  }
  if (r.remaining() != 0) throw Error("CORRUPT_INDEX", "trailing bytes after the last record");
  try {
    return RetrievalIndex::build(std::move(records));
  } catch (const Error& e) {
    throw Error("CORRUPT_INDEX", e.what());
  }
}

void save_index(const RetrievalIndex& index, const std::filesystem::path& path) {
  auto bytes = serialize_index(index);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("IO_FAILURE", "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("IO_FAILURE", "short write to " + path.string());
}

RetrievalIndex load_index(const std::filesystem::path& path) {
  std::string data = read_file(path);
  return deserialize_index(
      std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(data.data()), data.size()));
}

std::vector<EmbeddingRecord> read_jsonl(std::istream& in) {
  std::vector<EmbeddingRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto where = "line " + std::to_string(lineno) + ": ";
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error("BAD_RECORD", where + "not a JSON object");
    EmbeddingRecord r;
    for (auto [field, dest] : {std::pair{"id", &r.id}, {"caption", &r.caption}, {"abc", &r.abc}}) {
      auto it = j.find(field);
      if (it == j.end() || !it->is_string()) throw Error("BAD_RECORD", where + "missing string field '" + field + "'");
      *dest = it->get<std::string>();
    }
    auto emb = j.find("embedding");
    if (emb == j.end()) throw Error("BAD_RECORD", where + "missing field 'embedding'");
    try {
      r.vector = to_vector(*emb, "embedding");
    } catch (const Error& e) {
      throw Error("BAD_RECORD", where + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<EmbeddingRecord> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("IO_FAILURE", "cannot open " + path.string());
  return read_jsonl(in);
}

std::string fnv1a_hex(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xF];
    h >>= 4;
  }
  return out;
}

std::string fnv1a_hex(std::string_view text) {
  return fnv1a_hex(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::unique_ptr<FixtureEmbeddingProvider> FixtureEmbeddingProvider::from_json_text(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error("BAD_EMBEDDING", "embedding fixture is not a JSON object");
  std::unique_ptr<FixtureEmbeddingProvider> p(new FixtureEmbeddingProvider());
  for (auto [key, dest] : {std::pair{"texts", &p->texts_}, {"images", &p->images_}}) {
    if (!j.contains(key)) continue;
    if (!j[key].is_object()) throw Error("BAD_EMBEDDING", std::string("'") + key + "' must be an object");
    for (auto it = j[key].begin(); it != j[key].end(); ++it) (*dest)[it.key()] = to_vector(it.value(), it.key());
  }
  if (j.contains("default_text")) p->default_text_ = to_vector(j["default_text"], "default_text");
  if (j.contains("default_image")) p->default_image_ = to_vector(j["default_image"], "default_image");
  return p;
}

std::unique_ptr<FixtureEmbeddingProvider> FixtureEmbeddingProvider::from_file(const std::filesystem::path& path) {
  return from_json_text(read_file(path));
}

Vector FixtureEmbeddingProvider::embed_text(const std::string& text) {
  if (auto it = texts_.find(text); it != texts_.end()) return it->second;
  if (!default_text_.empty()) return default_text_;
  throw Error("MISSING_EMBEDDING", "no fixture embedding for text '" + text.substr(0, 60) + "'");
}

Vector FixtureEmbeddingProvider::embed_image(std::span<const std::uint8_t> image) {
  std::string key = fnv1a_hex(image);
  if (auto it = images_.find(key); it != images_.end()) return it->second;
  if (!default_image_.empty()) return default_image_;
  throw Error("MISSING_EMBEDDING", "no fixture embedding for image " + key);
}

}  // namespace i2m::retrieval
