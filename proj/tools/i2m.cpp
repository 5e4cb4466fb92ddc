// i2m: command-line front end. Exit status 0 on success, 1 on a domain
// error, 2 on a usage or configuration error.
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "i2m/attention.h"
#include "i2m/config.h"
#include "i2m/metrics.h"
#include "i2m/midi.h"
#include "i2m/orchestrator.h"
#include "i2m/retrieval.h"
#include "i2m/vlm.h"

using namespace i2m;

namespace {

void print_diagnostics(const abc::Diagnostics& d) {
  std::string text = abc::format_diagnostics(d);
  if (!text.empty() && text.back() != '\n') text += '\n';
  std::cerr << text;
}

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("IO_FAILURE", "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IO_FAILURE", "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("IO_FAILURE", "write failed for " + path.string());
}

abc::ParseMode mode_of(bool strict) { return strict ? abc::ParseMode::Strict : abc::ParseMode::Lenient; }

// ---------------------------------------------------------------------------

struct IngestArgs {
  std::string input;
  std::string out;
};

int run_ingest(const IngestArgs& a) {
  auto records = retrieval::read_jsonl(std::filesystem::path(a.input));
  auto index = retrieval::RetrievalIndex::build(std::move(records));
  retrieval::save_index(index, a.out);
  std::cerr << "indexed " << index.size() << " records of dimension " << index.dimension() << " into " << a.out
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string image;
  std::string index;
  std::string out;
  std::string config;
  std::string mock;
  std::string embed_fixture;
  std::string attention;
  std::string attention_range;
  double alpha = 0.5;
  std::size_t k = 3;
  int max_refine = 2;
  int max_grammar_retries = 3;
  std::string fusion = "mean";
  bool no_rag = false;
  bool no_refine = false;
  bool strict = false;
  bool no_motivation_call = false;
  std::string chat_endpoint;
  std::string chat_model;
  std::string embed_endpoint;
  std::string embed_model;
  std::string api_key;
  std::string api_key_env;
  std::string template_dir;
  double temperature = 0.0;
  int max_retries = 2;
  int timeout = 120;

  std::map<std::string, CLI::Option*> opts;
  bool given(const std::string& name) const {
    auto it = opts.find(name);
    return it != opts.end() && it->second->count() > 0;
  }
};

config::ToolConfig resolve(const GenerateArgs& a) {
  config::ToolConfig c = a.config.empty() ? config::ToolConfig{} : config::load_config(a.config);
  auto& p = c.pipeline;
  if (a.given("--k")) p.k = a.k;
  if (a.given("--max-refine")) p.max_refine_rounds = a.max_refine;
  if (a.given("--max-grammar-retries")) p.max_grammar_retries = a.max_grammar_retries;
  if (a.given("--fusion")) p.fusion = retrieval::parse_fusion(a.fusion);
  if (a.given("--strict")) p.parse_mode = abc::ParseMode::Strict;
  if (a.given("--no-motivation-call")) p.motivation_call = false;
  if (a.given("--attention")) p.attention_path = a.attention;
  if (a.given("--attention-range")) p.attention_range = a.attention_range;
  if (a.given("--alpha")) p.attention_alpha = a.alpha;
  if (a.given("--chat-endpoint")) c.chat_endpoint = a.chat_endpoint;
  if (a.given("--model")) c.chat_model = a.chat_model;
  if (a.given("--embed-endpoint")) c.embed_endpoint = a.embed_endpoint;
  if (a.given("--embed-model")) c.embed_model = a.embed_model;
  if (a.given("--api-key-env")) c.api_key_env = a.api_key_env;
  if (a.given("--template-dir")) c.template_dir = a.template_dir;
  if (a.given("--temperature")) c.client.temperature = a.temperature;
  if (a.given("--max-retries")) c.client.retry.max_retries = a.max_retries;
  if (a.given("--timeout")) c.timeout_seconds = a.timeout;
  p = orchestrator::ablation_flags(p, {a.no_rag, a.no_refine});
  orchestrator::validate(p);
  return c;
}

int run_generate(const GenerateArgs& a) {
  config::ToolConfig c = resolve(a);
  auto& p = c.pipeline;
  std::optional<std::string> key_flag;
  if (a.given("--api-key")) key_flag = a.api_key;
  std::string api_key = config::resolve_api_key(key_flag, c, config::process_env());

  std::shared_ptr<vlm::ChatTransport> transport;
  if (!a.mock.empty()) {
    transport = vlm::MockTransport::from_file(a.mock);
    p.chat_endpoint = "mock:" + a.mock;
  } else {
    if (c.chat_endpoint.empty()) throw UsageError("--chat-endpoint (or chat_endpoint in --config) is required without --mock");
    if (c.chat_model.empty()) throw UsageError("--model (or chat_model in --config) is required without --mock");
    transport = std::make_shared<vlm::HttpChatTransport>(
        vlm::HttpEndpoint{c.chat_endpoint, c.chat_model, api_key, c.timeout_seconds});
    p.chat_endpoint = c.chat_endpoint;
    p.chat_model = c.chat_model;
  }

  std::optional<retrieval::RetrievalIndex> index;
  std::unique_ptr<retrieval::EmbeddingProvider> embeddings;
  if (p.k > 0) {
    if (a.index.empty()) throw UsageError("--index is required when k > 0 (use --no-rag or --k 0 to skip retrieval)");
    if (!a.embed_fixture.empty()) {
      embeddings = retrieval::FixtureEmbeddingProvider::from_file(a.embed_fixture);
      p.embed_endpoint = "fixture:" + a.embed_fixture;
    } else if (!c.embed_endpoint.empty()) {
      if (c.embed_model.empty()) throw UsageError("--embed-model (or embed_model in --config) is required");
      embeddings = std::make_unique<vlm::HttpEmbeddingProvider>(
          vlm::HttpEndpoint{c.embed_endpoint, c.embed_model, api_key, c.timeout_seconds});
      p.embed_endpoint = c.embed_endpoint;
      p.embed_model = c.embed_model;
    } else {
      throw UsageError("retrieval needs --embed-fixture or --embed-endpoint");
    }
    index = retrieval::load_index(a.index);
  }

  std::vector<std::uint8_t> image = read_bytes(a.image);
  auto templates = vlm::PromptTemplates::load(c.template_dir.empty() ? vlm::default_template_dir() : c.template_dir);
  vlm::VlmClient client(transport, std::move(templates), c.client);

  try {
    orchestrator::ArtifactBundle bundle =
        orchestrator::run_pipeline(image, index ? &*index : nullptr, embeddings.get(), client, p);
    orchestrator::write_bundle(bundle, a.out);
    std::cerr << "wrote " << a.out << " (" << bundle.reports.size() << " metric report"
              << (bundle.reports.size() == 1 ? "" : "s") << ")\n";
  } catch (const orchestrator::PipelineError& e) {
    std::error_code ec;
    std::filesystem::create_directories(a.out, ec);
    std::ofstream(std::filesystem::path(a.out) / "trace.json") << orchestrator::trace_to_json(e.trace()).dump(2)
                                                              << "\n";
    throw;
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string file;
  bool kv = false;
  bool strict = false;
  int voice = -1;
};

int run_eval(const EvalArgs& a) {
  std::vector<std::uint8_t> bytes = read_bytes(a.file);
  midi::NoteEventSequence seq;
  if (bytes.size() >= 4 && std::equal(bytes.begin(), bytes.begin() + 4, "MThd")) {
    seq = midi::read_smf(bytes);
  } else {
    std::string text(bytes.begin(), bytes.end());
    abc::ParseResult pr = abc::parse(text, mode_of(a.strict));
    if (!pr.ok()) {
      print_diagnostics(pr.diagnostics);
      throw Error("PARSE_FAILED", a.file + " does not parse");
    }
    seq = midi::lower(*pr.score).sequence;
  }
  if (a.voice >= 0) {
    if (a.voice >= seq.n_voices) {
      throw Error("BAD_VOICE", "voice " + std::to_string(a.voice) + " out of range; the piece has " +
                                   std::to_string(seq.n_voices));
    }
    seq = midi::select_voice(seq, a.voice);
  }
  metrics::MetricReport r = metrics::evaluate_all(seq);
  std::cout << (a.kv ? metrics::render_key_values(r) : metrics::render_report(r));
  return 0;
}

// ---------------------------------------------------------------------------

struct ParseArgs {
  std::string file;
  bool strict = false;
};

int run_parse(const ParseArgs& a) {
  std::vector<std::uint8_t> bytes = read_bytes(a.file);
  abc::ParseResult pr = abc::parse(std::string(bytes.begin(), bytes.end()), mode_of(a.strict));
  print_diagnostics(pr.diagnostics);
  if (!pr.ok()) return 1;
  std::cout << "OK\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct AttnArgs {
  std::string image;
  std::string tensor;
  std::string range;
  std::string out;
  double alpha = 0.5;
};

int run_attn(const AttnArgs& a) {
  attention::AttentionTensor t = attention::load_attention(a.tensor);
  attention::TokenRange range = attention::parse_range(a.range, t.n_text_tokens);
  attention::AttentionProfile p = attention::reduce(t, range);
  write_bytes(a.out, attention::render_overlay(read_bytes(a.image), p, t.grid, a.alpha));
  std::cerr << "wrote " << a.out << " (" << t.grid.rows << "x" << t.grid.cols << " grid, text tokens "
            << range.start << ":" << range.end << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Image to ABC music with a vision-language model"};
  app.name("i2m");
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* ing = app.add_subcommand("ingest", "Build a retrieval index from a JSON-lines file");
  ing->add_option("--jsonl,--input", ingest.input, "JSONL with id, caption, abc, embedding")->required();
  ing->add_option("--out", ingest.out, "Index file to write")->required();

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Run the full pipeline on an image");
  auto opt = [&](CLI::Option* o) { gen.opts[o->get_name()] = o; return o; };
  g->add_option("--image", gen.image, "Input image")->required();
  g->add_option("--index", gen.index, "Retrieval index (from ingest)");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--config", gen.config, "Key-value config file; flags take precedence");
  g->add_option("--mock", gen.mock, "Replay a JSON transcript instead of calling a model");
  g->add_option("--embed-fixture", gen.embed_fixture, "Precomputed query embeddings (JSON)");
  opt(g->add_option("--k", gen.k, "Number of references to retrieve")->capture_default_str());
  opt(g->add_option("--max-refine", gen.max_refine, "Metric refinement rounds")->capture_default_str());
  opt(g->add_option("--max-grammar-retries", gen.max_grammar_retries, "Parse attempts per candidate")
          ->capture_default_str());
  opt(g->add_option("--fusion", gen.fusion, "mean or rank_intersection")
          ->check(CLI::IsMember({"mean", "rank_intersection"}))
          ->capture_default_str());
  g->add_flag("--no-rag", gen.no_rag, "Disable retrieval (k = 0)");
  g->add_flag("--no-refine", gen.no_refine, "Disable metric refinement");
  opt(g->add_flag("--strict", gen.strict, "Strict ABC parsing"));
  opt(g->add_flag("--no-motivation-call", gen.no_motivation_call,
                  "Do not ask separately for a motivation when the reply lacks one"));
  opt(g->add_option("--attention", gen.attention, "Attention tensor file for a heatmap"));
  opt(g->add_option("--attention-range", gen.attention_range, "Text-token range start:end"));
  opt(g->add_option("--alpha", gen.alpha, "Heatmap opacity")->capture_default_str());
  opt(g->add_option("--chat-endpoint", gen.chat_endpoint, "Chat API base URL, e.g. https://host/v1"));
  opt(g->add_option("--model", gen.chat_model, "Chat model name"));
  opt(g->add_option("--embed-endpoint", gen.embed_endpoint, "Embedding API base URL"));
  opt(g->add_option("--embed-model", gen.embed_model, "Embedding model name"));
  opt(g->add_option("--api-key", gen.api_key, "API key (overrides environment and config)"));
  opt(g->add_option("--api-key-env", gen.api_key_env, "Environment variable holding the API key")
          ->default_str("I2M_API_KEY"));
  opt(g->add_option("--template-dir", gen.template_dir, "Prompt template directory"));
  opt(g->add_option("--temperature", gen.temperature, "Sampling temperature")->capture_default_str());
  opt(g->add_option("--max-retries", gen.max_retries, "Transport retries per call")->capture_default_str());
  opt(g->add_option("--timeout", gen.timeout, "HTTP timeout in seconds")->capture_default_str());

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Print the metric report of an ABC or MIDI file");
  e->add_option("file", ev.file, "ABC or Standard MIDI file")->required();
  e->add_flag("--kv", ev.kv, "key=value output with full precision");
  e->add_flag("--strict", ev.strict, "Strict ABC parsing");
  e->add_option("--voice", ev.voice, "Evaluate one voice only (0-based)");

  ParseArgs pa;
  auto* ps = app.add_subcommand("parse", "Check an ABC file; prints OK or diagnostics");
  ps->add_option("file", pa.file, "ABC file")->required();
  ps->add_flag("--strict", pa.strict, "Reject decorations, grace notes and other skipped constructs");

  AttnArgs at;
  auto* an = app.add_subcommand("attn", "Overlay an attention heatmap on an image");
  an->add_option("--image", at.image, "Input image (PNG, PPM or PGM)")->required();
  an->add_option("--tensor", at.tensor, "Attention tensor file")->required();
  an->add_option("--range", at.range, "Text-token range start:end (default: all)");
  an->add_option("--out", at.out, "Output PPM")->required();
  an->add_option("--alpha", at.alpha, "Heatmap opacity")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return 2;
  }

  try {
    if (*ing) return run_ingest(ingest);
    if (*g) return run_generate(gen);
    if (*e) return run_eval(ev);
    if (*ps) return run_parse(pa);
    if (*an) return run_attn(at);
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << "\nRun with --help for more information.\n";
    return 2;
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return err.code() == "BAD_CONFIG" ? 2 : 1;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 2;
}
