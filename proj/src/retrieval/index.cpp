#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "i2m/retrieval.h"

namespace i2m::retrieval {

namespace {

double norm_of(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(s);
}

double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

double clamp_cos(double c) { return std::clamp(c, -1.0, 1.0); }

void check_query(const RetrievalIndex& index, std::span<const float> q, const char* which) {
  if (q.size() != index.dimension()) {
    throw Error("DIMENSION_MISMATCH", std::string(which) + " query has dimension " + std::to_string(q.size()) +
                                          ", index has " + std::to_string(index.dimension()));
  }
}

bool by_fused(const RetrievalHit& a, const RetrievalHit& b) {
  if (a.fused != b.fused) return a.fused > b.fused;
  return a.id < b.id;
}

}  // namespace

Fusion parse_fusion(std::string_view name) {
  if (name == "mean") return Fusion::Mean;
  if (name == "rank_intersection") return Fusion::RankIntersection;
  throw Error("BAD_FUSION", "unknown fusion mode '" + std::string(name) + "' (mean, rank_intersection)");
}

std::string to_string(Fusion f) { return f == Fusion::Mean ? "mean" : "rank_intersection"; }

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw Error("DIMENSION_MISMATCH",
                "vectors have dimensions " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  double na = norm_of(a);
  double nb = norm_of(b);
  if (!(na > 0.0) || !(nb > 0.0)) throw Error("ZERO_NORM", "cosine similarity of a zero vector");
  return clamp_cos(dot(a, b) / (na * nb));
}

RetrievalIndex RetrievalIndex::build(std::vector<EmbeddingRecord> records) {
  if (records.empty()) throw Error("EMPTY_DATABASE", "no records to index");
  RetrievalIndex idx;
  idx.dimension_ = records.front().vector.size();
  if (idx.dimension_ == 0) throw Error("DIMENSION_MISMATCH", "record '" + records.front().id + "' has no vector");
  idx.norms_.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const EmbeddingRecord& r = records[i];
    if (r.vector.size() != idx.dimension_) {
      throw Error("DIMENSION_MISMATCH", "record '" + r.id + "' has dimension " + std::to_string(r.vector.size()) +
                                            ", expected " + std::to_string(idx.dimension_));
    }
    for (float x : r.vector) {
      if (!std::isfinite(x)) throw Error("BAD_VECTOR", "record '" + r.id + "' has a non-finite component");
    }
    double n = norm_of(r.vector);
    if (!(n > 0.0)) throw Error("ZERO_NORM", "record '" + r.id + "' has a zero vector");
    if (!idx.by_id_.emplace(r.id, i).second) throw Error("DUPLICATE_ID", "duplicate record id '" + r.id + "'");
    idx.norms_.push_back(n);
  }
  idx.records_ = std::move(records);
  return idx;
}

const EmbeddingRecord* RetrievalIndex::find(const std::string& id) const {
  auto it = by_id_.find(id);
  return it == by_id_.end() ? nullptr : &records_[it->second];
}

std::vector<RetrievalHit> fused_topk(const RetrievalIndex& index, std::span<const float> e_image,
                                     std::span<const float> e_text, std::size_t k, Fusion fusion) {
  if (k < 1) throw Error("BAD_K", "k must be at least 1");
  check_query(index, e_image, "image");
  check_query(index, e_text, "text");
  double ni = norm_of(e_image);
  double nt = norm_of(e_text);
  if (!(ni > 0.0) || !(nt > 0.0)) throw Error("ZERO_NORM", "query embedding is a zero vector");

  const auto& recs = index.records();
  std::vector<RetrievalHit> all;
  all.reserve(recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    RetrievalHit h;
    h.id = recs[i].id;
    h.score_image = clamp_cos(dot(e_image, recs[i].vector) / (ni * index.norm(i)));
    h.score_text = clamp_cos(dot(e_text, recs[i].vector) / (nt * index.norm(i)));
    h.fused = (h.score_image + h.score_text) / 2.0;
    all.push_back(std::move(h));
  }
  std::size_t take = std::min(k, all.size());

  if (fusion == Fusion::RankIntersection && take < all.size()) {
    auto ranks = [&](auto score) {
      std::vector<std::size_t> order(all.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        double sa = score(all[a]);
        double sb = score(all[b]);
        if (sa != sb) return sa > sb;
        return all[a].id < all[b].id;
      });
      std::vector<std::size_t> rank(all.size());
      for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
      return rank;
    };
    auto ri = ranks([](const RetrievalHit& h) { return h.score_image; });
    auto rt = ranks([](const RetrievalHit& h) { return h.score_text; });
    // A record is in both top-m lists iff max(rank_i, rank_t) < m.
    std::vector<std::size_t> worst(all.size());
    for (std::size_t i = 0; i < all.size(); ++i) worst[i] = std::max(ri[i], rt[i]);
    std::vector<std::size_t> sorted = worst;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<long>(take - 1), sorted.end());
    std::size_t m = std::max(take, sorted[take - 1] + 1);
    std::vector<RetrievalHit> members;
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (worst[i] < m) members.push_back(std::move(all[i]));
    }
    all = std::move(members);
  }

  std::partial_sort(all.begin(), all.begin() + static_cast<long>(take), all.end(), by_fused);
  all.resize(take);
  return all;
}

}  // namespace i2m::retrieval
