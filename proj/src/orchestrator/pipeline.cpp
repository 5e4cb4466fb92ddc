#include <algorithm>
#include <chrono>
#include <fstream>

#include "i2m/attention.h"
#include "i2m/midi.h"
#include "i2m/orchestrator.h"

namespace i2m::orchestrator {

namespace {

using Clock = std::chrono::steady_clock;
using nlohmann::json;

// What the model handed back: either ABC text or a reason there is none.
struct Draft {
  std::string abc;
  std::string motivation;
  std::optional<std::string> problem;
};

struct Candidate {
  std::string abc;
  std::string motivation;
  midi::NoteEventSequence sequence;
  metrics::MetricReport report;
};

std::string strip_code(const Error& e) {
  std::string what = e.what();
  std::string prefix = e.code() + ": ";
  return what.rfind(prefix, 0) == 0 ? what.substr(prefix.size()) : what;
}

class Run {
 public:
  Run(std::span<const std::uint8_t> image, const retrieval::RetrievalIndex* index,
      retrieval::EmbeddingProvider* embeddings, vlm::VlmClient& client, const PipelineConfig& config,
      const vlm::Sleeper& sleeper)
      : image_(image), index_(index), embeddings_(embeddings), client_(client), config_(config), sleeper_(sleeper) {}

  ArtifactBundle execute() {
    try {
      return steps();
    } catch (const PipelineError&) {
      throw;
    } catch (const Error& e) {
      emit("error", {{"code", e.code()}, {"message", strip_code(e)}});
      throw PipelineError(e.code(), strip_code(e), trace_);
    }
  }

 private:
  ArtifactBundle steps() {
    validate(config_);
    emit("start", config_json());

    description_ = call("describe", json::object(), [&](vlm::CallInfo* ci) { return client_.describe_image(image_, ci); });

    std::vector<vlm::Reference> references;
    if (config_.k > 0) references = retrieve();

    Draft first;
    {
      vlm::CallInfo ci;
      try {
        vlm::VlmMusicResponse r = client_.generate_music(image_, description_, references, &ci);
        first = {r.abc, r.motivation, std::nullopt};
        emit_call("generate", ci, {{"references", references.size()}, {"outcome", "abc"}});
      } catch (const Error& e) {
        if (e.code() != "NO_ABC_FOUND") {
          emit_call("generate", ci, {{"references", references.size()}, {"failed", e.code()}});
          throw;
        }
        first.problem = std::string(e.what());
        emit_call("generate", ci, {{"references", references.size()}, {"outcome", "no_abc"}});
      }
    }

    std::optional<Candidate> current = grammar_loop(std::move(first), 0);
    if (!current) {
      std::string msg = "no parseable ABC after " + std::to_string(config_.max_grammar_retries) + " attempts";
      emit("error", {{"code", "GENERATION_EXHAUSTED"}, {"message", msg}});
      throw PipelineError("GENERATION_EXHAUSTED", msg, trace_);
    }
    ArtifactBundle bundle;
    evaluate(*current, 0, bundle);

    for (int round = 1; round <= config_.max_refine_rounds; ++round) {
      vlm::CallInfo ci;
      vlm::RefineResult rr;
      json base = {{"round", round}};
      try {
        rr = client_.refine_music(image_, description_, current->abc, metrics::render_report(current->report),
                                  std::nullopt, &ci);
      } catch (const Error& e) {
        if (e.code() != "NO_ABC_FOUND") {
          emit_call("refine", ci, merge(base, {{"failed", e.code()}}));
          throw;
        }
        // A reply that is neither KEEP nor a tune leaves the piece as it is.
        emit_call("refine", ci, merge(base, {{"outcome", "no_abc"}}));
        break;
      }
      if (rr.keep) {
        emit_call("refine", ci, merge(base, {{"outcome", "keep"}}));
        break;
      }
      emit_call("refine", ci, merge(base, {{"outcome", "revised"}}));
      std::optional<Candidate> next = grammar_loop(Draft{rr.revised.abc, rr.revised.motivation, std::nullopt}, round);
      if (!next) {
        emit("revert", {{"round", round}});
        break;
      }
      evaluate(*next, round, bundle);
      current = std::move(next);
    }

    bundle.abc = current->abc;
    bundle.midi = midi::write_smf(current->sequence);
    bundle.motivation = current->motivation;
    if (!bundle.motivation.empty()) {
      emit("motivation", {{"source", "response"}});
    } else if (config_.motivation_call) {
      bundle.motivation = call("motivation", {{"source", "call"}}, [&](vlm::CallInfo* ci) {
        return client_.motivation(image_, description_, current->abc, ci);
      });
    } else {
      emit("motivation", {{"source", "none"}});
    }

    if (config_.attention_path) bundle.heatmap = heatmap();

    emit("done", {{"reports", bundle.reports.size()}});
    bundle.trace = trace_;
    return bundle;
  }

  std::vector<vlm::Reference> retrieve() {
    if (!index_ || !embeddings_) throw Error("BAD_CONFIG", "k > 0 needs a retrieval index and an embedding provider");
    auto embed = [&](const char* kind, auto&& fn) {
      int attempts = 0;
      auto start = Clock::now();
      try {
        retrieval::Vector v = vlm::with_retry(client_.config().retry, sleeper_, &attempts, fn);
        emit(kind, {{"attempts", attempts}, {"dimension", v.size()}}, since(start));
        if (v.size() != index_->dimension()) {
          throw Error("DIMENSION_MISMATCH", std::string(kind) + " returned " + std::to_string(v.size()) +
                                                " values, index has dimension " +
                                                std::to_string(index_->dimension()));
        }
        return v;
      } catch (const Error& e) {
        if (trace_.empty() || trace_.back().kind != kind) {
          emit(kind, {{"attempts", attempts}, {"failed", e.code()}}, since(start));
        }
        throw;
      }
    };
    retrieval::Vector e_image = embed("embed_image", [&] { return embeddings_->embed_image(image_); });
    retrieval::Vector e_text = embed("embed_text", [&] { return embeddings_->embed_text(description_); });
    std::vector<retrieval::RetrievalHit> hits = retrieval::fused_topk(*index_, e_image, e_text, config_.k, config_.fusion);
    json ids = json::array();
    json fused = json::array();
    std::vector<vlm::Reference> refs;
    for (const auto& h : hits) {
      ids.push_back(h.id);
      fused.push_back(h.fused);
      const retrieval::EmbeddingRecord* rec = index_->find(h.id);
      refs.push_back({rec->caption, rec->abc});
    }
    emit("retrieve", {{"fusion", retrieval::to_string(config_.fusion)}, {"k", config_.k}, {"hits", ids},
                      {"fused", fused}});
    return refs;
  }

  // Parses, lowers and checks for notes; returns the problem text on failure.
  std::optional<std::string> check(const Draft& d, midi::NoteEventSequence& out) const {
    if (d.problem) return d.problem;
    abc::ParseResult pr = abc::parse(d.abc, config_.parse_mode);
    if (!pr.ok()) return abc::format_diagnostics(pr.diagnostics);
    try {
      midi::LowerResult lr = midi::lower(*pr.score);
      if (lr.sequence.events.empty()) return std::string("line 1, col 1: [NO_NOTES] the tune contains no notes");
      out = std::move(lr.sequence);
    } catch (const Error& e) {
      return "line 1, col 1: [" + e.code() + "] " + strip_code(e);
    }
    return std::nullopt;
  }

  std::optional<Candidate> grammar_loop(Draft draft, int round) {
    for (int attempt = 1;; ++attempt) {
      midi::NoteEventSequence seq;
      std::optional<std::string> problem = check(draft, seq);
      emit("parse", {{"round", round}, {"attempt", attempt}, {"ok", !problem.has_value()}});
      if (!problem) return Candidate{draft.abc, draft.motivation, std::move(seq), {}};
      if (attempt >= config_.max_grammar_retries) return std::nullopt;

      vlm::CallInfo ci;
      json base = {{"round", round}, {"attempt", attempt}};
      try {
        vlm::RefineResult rr = client_.refine_music(image_, description_, draft.abc, "", *problem, &ci);
        if (rr.keep) {
          // KEEP is not a repair; the same text is parsed again next time.
          emit_call("repair", ci, merge(base, {{"outcome", "keep"}}));
        } else {
          emit_call("repair", ci, merge(base, {{"outcome", "revised"}}));
          draft = Draft{rr.revised.abc, rr.revised.motivation, std::nullopt};
        }
      } catch (const Error& e) {
        if (e.code() != "NO_ABC_FOUND") {
          emit_call("repair", ci, merge(base, {{"failed", e.code()}}));
          throw;
        }
        emit_call("repair", ci, merge(base, {{"outcome", "no_abc"}}));
      }
    }
  }

  void evaluate(Candidate& c, int round, ArtifactBundle& bundle) {
    c.report = metrics::evaluate_all(c.sequence);
    bundle.reports.push_back(c.report);
    const auto& r = c.report;
    emit("evaluate", {{"round", round},
                      {"report",
                       {{"pitch_range", r.pitch_range},
                        {"n_pitches_used", r.n_pitches_used},
                        {"n_pitch_classes_used", r.n_pitch_classes_used},
                        {"polyphony", r.polyphony},
                        {"scale_consistency", r.scale_consistency},
                        {"pitch_entropy", r.pitch_entropy},
                        {"pitch_class_entropy", r.pitch_class_entropy},
                        {"empty_beat_rate", r.empty_beat_rate},
                        {"n_events", r.n_events}}}});
  }

  std::vector<std::uint8_t> heatmap() {
    auto start = Clock::now();
    attention::AttentionTensor t = attention::load_attention(*config_.attention_path);
    attention::TokenRange range = attention::parse_range(config_.attention_range, t.n_text_tokens);
    attention::AttentionProfile p = attention::reduce(t, range);
    std::vector<std::uint8_t> ppm = attention::render_overlay(image_, p, t.grid, config_.attention_alpha);
    auto peak = std::max_element(p.values.begin(), p.values.end()) - p.values.begin();
    emit("attention",
         {{"grid", {t.grid.rows, t.grid.cols}}, {"range", {range.start, range.end}}, {"argmax", peak}},
         since(start));
    return ppm;
  }

  template <typename Fn>
  std::string call(const char* kind, json data, Fn&& fn) {
    vlm::CallInfo ci;
    try {
      std::string out = fn(&ci);
      emit_call(kind, ci, std::move(data));
      return out;
    } catch (const Error& e) {
      emit_call(kind, ci, merge(std::move(data), {{"failed", e.code()}}));
      throw;
    }
  }

  void emit_call(const char* kind, const vlm::CallInfo& ci, json data) {
    data["prompt_hash"] = ci.prompt_hash;
    data["attempts"] = ci.attempts;
    emit(kind, std::move(data), ci.elapsed_ms);
  }

  void emit(const char* kind, json data, double elapsed_ms = -1) {
    TraceEvent ev;
    ev.seq = static_cast<int>(trace_.size());
    ev.t_ms = since(start_);
    ev.elapsed_ms = elapsed_ms;
    ev.kind = kind;
    ev.data = std::move(data);
    trace_.push_back(std::move(ev));
  }

  static json merge(json a, const json& b) {
    a.update(b);
    return a;
  }

  static double since(Clock::time_point t) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t).count();
  }

  json config_json() const {
    const auto& cc = client_.config();
    return {{"k", config_.k},
            {"max_grammar_retries", config_.max_grammar_retries},
            {"max_refine_rounds", config_.max_refine_rounds},
            {"fusion", retrieval::to_string(config_.fusion)},
            {"parse_mode", config_.parse_mode == abc::ParseMode::Strict ? "strict" : "lenient"},
            {"motivation_call", config_.motivation_call},
            {"attention", config_.attention_path ? config_.attention_path->string() : ""},
            {"attention_range", config_.attention_range},
            {"attention_alpha", config_.attention_alpha},
            {"template_version", client_.templates().version()},
            {"temperature", cc.temperature},
            {"max_tokens", cc.max_tokens},
            {"max_retries", cc.retry.max_retries},
            {"chat_endpoint", config_.chat_endpoint},
            {"chat_model", config_.chat_model},
            {"embed_endpoint", config_.embed_endpoint},
            {"embed_model", config_.embed_model},
            {"image_hash", retrieval::fnv1a_hex(image_)}};
  }

  std::span<const std::uint8_t> image_;
  const retrieval::RetrievalIndex* index_;
  retrieval::EmbeddingProvider* embeddings_;
  vlm::VlmClient& client_;
  const PipelineConfig& config_;
  const vlm::Sleeper& sleeper_;
  Clock::time_point start_ = Clock::now();
  Trace trace_;
  std::string description_;
};

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IO_FAILURE", "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("IO_FAILURE", "write failed for " + path.string());
}

std::string_view as_chars(const std::vector<std::uint8_t>& v) {
  return {reinterpret_cast<const char*>(v.data()), v.size()};
}

}  // namespace

void validate(const PipelineConfig& c) {
  if (c.max_grammar_retries < 1) throw Error("BAD_CONFIG", "max_grammar_retries must be >= 1");
  if (c.max_refine_rounds < 0) throw Error("BAD_CONFIG", "max_refine_rounds must be >= 0");
  if (!(c.attention_alpha >= 0.0 && c.attention_alpha <= 1.0)) throw Error("BAD_CONFIG", "alpha must lie in [0, 1]");
}

PipelineConfig ablation_flags(PipelineConfig config, Ablation ablation) {
  if (ablation.no_rag) config.k = 0;
  if (ablation.no_refine) config.max_refine_rounds = 0;
  return config;
}

nlohmann::ordered_json trace_to_json(const Trace& trace, bool with_timings) {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const TraceEvent& ev : trace) {
    nlohmann::ordered_json j;
    j["seq"] = ev.seq;
    j["kind"] = ev.kind;
    if (with_timings) {
      j["t_ms"] = ev.t_ms;
      if (ev.elapsed_ms >= 0) j["elapsed_ms"] = ev.elapsed_ms;
    }
    for (const auto& [key, value] : ev.data.items()) j[key] = nlohmann::ordered_json(value);
    out.push_back(std::move(j));
  }
  return out;
}

bool same_modulo_timings(const Trace& a, const Trace& b) { return trace_to_json(a, false) == trace_to_json(b, false); }

std::size_t count_kind(const Trace& trace, std::string_view kind) {
  return static_cast<std::size_t>(
      std::count_if(trace.begin(), trace.end(), [&](const TraceEvent& e) { return e.kind == kind; }));
}

ArtifactBundle run_pipeline(std::span<const std::uint8_t> image, const retrieval::RetrievalIndex* index,
                            retrieval::EmbeddingProvider* embeddings, vlm::VlmClient& client,
                            const PipelineConfig& config, const vlm::Sleeper& sleeper) {
  return Run(image, index, embeddings, client, config, sleeper).execute();
}

void write_bundle(const ArtifactBundle& bundle, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("IO_FAILURE", "cannot create " + dir.string() + ": " + ec.message());
  write_file(dir / "music.abc", bundle.abc.empty() || bundle.abc.back() == '\n' ? bundle.abc : bundle.abc + "\n");
  write_file(dir / "music.mid", as_chars(bundle.midi));
  write_file(dir / "motivation.txt", bundle.motivation + "\n");
  for (std::size_t i = 0; i < bundle.reports.size(); ++i) {
    write_file(dir / ("report_round_" + std::to_string(i) + ".txt"), metrics::render_report(bundle.reports[i]));
  }
  if (bundle.heatmap) write_file(dir / "heatmap.ppm", as_chars(*bundle.heatmap));
  write_file(dir / "trace.json", trace_to_json(bundle.trace).dump(2) + "\n");
}

}  // namespace i2m::orchestrator
