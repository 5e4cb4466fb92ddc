// Reference database of (caption, ABC, embedding) records with exact cosine
// top-k search over a dual image/text query.
#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "i2m/error.h"

namespace i2m::retrieval {

using Vector = std::vector<float>;

struct EmbeddingRecord {
  std::string id;
  std::string caption;
  std::string abc;
  Vector vector;

  bool operator==(const EmbeddingRecord&) const = default;
};

struct RetrievalHit {
  std::string id;
  double score_image = 0.0;
  double score_text = 0.0;
  double fused = 0.0;
};

enum class Fusion { Mean, RankIntersection };

// "mean" or "rank_intersection"; throws Error("BAD_FUSION").
Fusion parse_fusion(std::string_view name);
std::string to_string(Fusion f);

// Throws DIMENSION_MISMATCH or ZERO_NORM. Accumulates in double.
double cosine_similarity(std::span<const float> a, std::span<const float> b);

class RetrievalIndex {
 public:
  // Throws EMPTY_DATABASE, DUPLICATE_ID, DIMENSION_MISMATCH, ZERO_NORM, BAD_VECTOR.
  static RetrievalIndex build(std::vector<EmbeddingRecord> records);

  std::size_t dimension() const { return dimension_; }
  std::size_t size() const { return records_.size(); }
  const std::vector<EmbeddingRecord>& records() const { return records_; }
  const EmbeddingRecord* find(const std::string& id) const;
  double norm(std::size_t i) const { return norms_[i]; }

 private:
  RetrievalIndex() = default;
  std::size_t dimension_ = 0;
  std::vector<EmbeddingRecord> records_;
  std::vector<double> norms_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

// Exact full scan. Mean: fused = (s_img + s_txt) / 2, top k by fused, ties by
// ascending id. RankIntersection: smallest m >= k whose top-m image and text
// lists share at least k ids; the k best of those by fused are returned.
// Result is sorted by fused descending, then id; size is min(k, n).
std::vector<RetrievalHit> fused_topk(const RetrievalIndex& index, std::span<const float> e_image,
                                     std::span<const float> e_text, std::size_t k, Fusion fusion);

// Binary index file. Throws IO_FAILURE or CORRUPT_INDEX.
std::vector<std::uint8_t> serialize_index(const RetrievalIndex& index);
RetrievalIndex deserialize_index(std::span<const std::uint8_t> bytes);
void save_index(const RetrievalIndex& index, const std::filesystem::path& path);
RetrievalIndex load_index(const std::filesystem::path& path);

// JSON lines with id, caption, abc, embedding; other fields are ignored.
// Throws BAD_RECORD (with the line number) or IO_FAILURE.
std::vector<EmbeddingRecord> read_jsonl(std::istream& in);
std::vector<EmbeddingRecord> read_jsonl(const std::filesystem::path& path);

// Source of query embeddings. Implementations must be safe to call concurrently.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual Vector embed_text(const std::string& text) = 0;
  virtual Vector embed_image(std::span<const std::uint8_t> image) = 0;
};

// Precomputed vectors for offline runs, from a JSON file:
//   {"texts": {"<text>": [..]}, "images": {"<fnv1a64 hex of bytes>": [..]},
//    "default_text": [..], "default_image": [..]}
// Lookups without an entry fall back to the default, else throw MISSING_EMBEDDING.
class FixtureEmbeddingProvider : public EmbeddingProvider {
 public:
  static std::unique_ptr<FixtureEmbeddingProvider> from_file(const std::filesystem::path& path);
  static std::unique_ptr<FixtureEmbeddingProvider> from_json_text(const std::string& text);

  Vector embed_text(const std::string& text) override;
  Vector embed_image(std::span<const std::uint8_t> image) override;

 private:
  std::unordered_map<std::string, Vector> texts_;
  std::unordered_map<std::string, Vector> images_;
  Vector default_text_;
  Vector default_image_;
};

// 64-bit FNV-1a as 16 lower-case hex digits.
std::string fnv1a_hex(std::span<const std::uint8_t> bytes);
std::string fnv1a_hex(std::string_view text);

}  // namespace i2m::retrieval
