// The image-to-music pipeline: describe, retrieve, generate, grammar repair,
// metric-guided refinement and explanation assembly, with a full event trace.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "i2m/abc.h"
#include "i2m/metrics.h"
#include "i2m/retrieval.h"
#include "i2m/vlm.h"
#include "json.hpp"

namespace i2m::orchestrator {

struct PipelineConfig {
  std::size_t k = 3;
  int max_grammar_retries = 3;  // total parse attempts per grammar loop
  int max_refine_rounds = 2;
  retrieval::Fusion fusion = retrieval::Fusion::Mean;
  abc::ParseMode parse_mode = abc::ParseMode::Lenient;
  // Ask for a motivation separately when the final reply did not contain one.
  bool motivation_call = true;

  std::optional<std::filesystem::path> attention_path;
  std::string attention_range;  // "start:end", empty = all text tokens
  double attention_alpha = 0.5;

  // Recorded in the trace only; the transports are built by the caller.
  std::string chat_endpoint;
  std::string chat_model;
  std::string embed_endpoint;
  std::string embed_model;
};

// Throws Error("BAD_CONFIG").
void validate(const PipelineConfig& config);

struct Ablation {
  bool no_rag = false;
  bool no_refine = false;
};

// no_rag forces k = 0, no_refine forces max_refine_rounds = 0.
PipelineConfig ablation_flags(PipelineConfig config, Ablation ablation);

struct TraceEvent {
  int seq = 0;
  double t_ms = 0.0;        // since pipeline start
  double elapsed_ms = -1;   // duration of an external call, -1 if none
  std::string kind;
  nlohmann::json data = nlohmann::json::object();
};

using Trace = std::vector<TraceEvent>;

// seq, kind and timings first, then the event's own fields.
nlohmann::ordered_json trace_to_json(const Trace& trace, bool with_timings = true);
bool same_modulo_timings(const Trace& a, const Trace& b);
std::size_t count_kind(const Trace& trace, std::string_view kind);

struct ArtifactBundle {
  std::string abc;
  std::vector<std::uint8_t> midi;
  std::string motivation;
  std::vector<metrics::MetricReport> reports;  // one per evaluated candidate
  std::optional<std::vector<std::uint8_t>> heatmap;  // binary PPM
  Trace trace;
};

// Any failure inside the pipeline, carrying the trace up to that point.
// GENERATION_EXHAUSTED when no candidate passed the grammar loop; otherwise
// the upstream code (TRANSPORT, IO_FAILURE, ...).
class PipelineError : public Error {
 public:
  PipelineError(const std::string& code, const std::string& message, Trace trace)
      : Error(code, message), trace_(std::move(trace)) {}
  const Trace& trace() const { return trace_; }

 private:
  Trace trace_;
};

// index and embeddings may be null when config.k == 0. The sleeper paces
// embedding retries; chat retries use the client's own.
ArtifactBundle run_pipeline(std::span<const std::uint8_t> image, const retrieval::RetrievalIndex* index,
                            retrieval::EmbeddingProvider* embeddings, vlm::VlmClient& client,
                            const PipelineConfig& config, const vlm::Sleeper& sleeper = vlm::real_sleeper());

// music.abc, music.mid, motivation.txt, report_round_<i>.txt, heatmap.ppm
// (when present) and trace.json. Throws IO_FAILURE.
void write_bundle(const ArtifactBundle& bundle, const std::filesystem::path& dir);

}  // namespace i2m::orchestrator
