// Client for the external vision-language model: chat transports (HTTP and
// scripted mock), retry with backoff, prompt templates and response parsing.
#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "i2m/error.h"
#include "i2m/retrieval.h"

namespace i2m::vlm {

struct TextPart {
  std::string text;
};

struct ImagePart {
  std::vector<std::uint8_t> bytes;
  std::string media_type;
};

using UserPart = std::variant<TextPart, ImagePart>;

struct ChatRequest {
  std::string system;
  std::vector<UserPart> user_parts;
  double temperature = 0.0;
  int max_tokens = 2048;
};

// Throws Error("BAD_REQUEST") when the request breaks its invariants.
void validate(const ChatRequest& request);

// FNV-1a over a canonical rendering of the request (images by content hash).
std::string prompt_hash(const ChatRequest& request);

// All user-part texts joined with blank lines; what the model reads as text.
std::string prompt_text(const ChatRequest& request);

std::string sniff_media_type(std::span<const std::uint8_t> bytes);

// Raised by transports. Retryable failures are network errors, HTTP 429 and
// 5xx; everything else fails the call at once.
class TransportError : public Error {
 public:
  TransportError(const std::string& message, bool retryable)
      : Error("TRANSPORT", message), retryable_(retryable) {}
  bool retryable() const { return retryable_; }

 private:
  bool retryable_;
};

class ChatTransport {
 public:
  virtual ~ChatTransport() = default;
  // Returns the assistant text. Must be safe to call concurrently.
  virtual std::string complete(const ChatRequest& request) = 0;
};

// Replays a transcript: a JSON array whose entries are either strings
// (assistant replies) or {"error": "..."} objects (one retryable failure).
// Running past the end is a non-retryable TRANSPORT error.
class MockTransport : public ChatTransport {
 public:
  struct Entry {
    std::string text;
    bool is_error = false;
  };

  explicit MockTransport(std::vector<Entry> entries) : entries_(std::move(entries)) {}
  static std::shared_ptr<MockTransport> from_json_text(const std::string& json);
  static std::shared_ptr<MockTransport> from_file(const std::filesystem::path& path);

  std::string complete(const ChatRequest& request) override;

  std::vector<ChatRequest> requests() const;
  std::size_t consumed() const;

 private:
  mutable std::mutex mu_;
  std::vector<Entry> entries_;
  std::size_t next_ = 0;
  std::vector<ChatRequest> requests_;
};

struct HttpEndpoint {
  std::string base_url;  // e.g. https://api.openai.com/v1
  std::string model;
  std::string api_key;   // sent as a bearer token when non-empty
  int timeout_seconds = 120;
};

// POST {base_url}/chat/completions, OpenAI-style message array with text and
// base64 data-URL image parts.
class HttpChatTransport : public ChatTransport {
 public:
  explicit HttpChatTransport(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
  std::string complete(const ChatRequest& request) override;

  // Exposed for tests: request body and response parsing without a network.
  static std::string request_body(const ChatRequest& request, const std::string& model);
  static std::string parse_response(const std::string& body);

 private:
  HttpEndpoint endpoint_;
};

// POST {base_url}/embeddings with {"model", "input"}; images are sent as a
// data URL string. Reads data[0].embedding.
class HttpEmbeddingProvider : public retrieval::EmbeddingProvider {
 public:
  explicit HttpEmbeddingProvider(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
  retrieval::Vector embed_text(const std::string& text) override;
  retrieval::Vector embed_image(std::span<const std::uint8_t> image) override;

  static retrieval::Vector parse_response(const std::string& body);

 private:
  retrieval::Vector post(const std::string& input);
  HttpEndpoint endpoint_;
};

std::string base64_encode(std::span<const std::uint8_t> bytes);

struct RetryPolicy {
  int max_retries = 2;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{8000};
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;
Sleeper real_sleeper();

// Runs fn up to max_retries + 1 times, sleeping initial * multiplier^i between
// retryable TransportErrors. *attempts receives the number of calls made.
template <typename Fn>
auto with_retry(const RetryPolicy& policy, const Sleeper& sleep, int* attempts, Fn&& fn) -> decltype(fn()) {
  auto delay = policy.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    if (attempts) *attempts = attempt;
    try {
      return fn();
    } catch (const TransportError& e) {
      if (!e.retryable() || attempt > policy.max_retries) {
        throw TransportError(std::string(e.what()) + " (after " + std::to_string(attempt) + " attempts)", false);
      }
    }
    if (sleep) sleep(delay);
    auto next = std::chrono::duration<double, std::milli>(delay) * policy.multiplier;
    delay = std::min(policy.max_backoff, std::chrono::duration_cast<std::chrono::milliseconds>(next));
  }
}

// Prompt templates: one file per template in a version directory, with
// {{name}} placeholders.
class PromptTemplates {
 public:
  static PromptTemplates load(const std::filesystem::path& dir);
  // Throws Error("TEMPLATE") for an unknown template or placeholder.
  std::string render(const std::string& name, const std::map<std::string, std::string>& vars) const;
  const std::string& version() const { return version_; }

 private:
  std::map<std::string, std::string> texts_;
  std::string version_;
};

// Directory holding the bundled templates (set at build time).
std::filesystem::path default_template_dir();

struct VlmMusicResponse {
  std::string abc;
  std::string motivation;
  std::string raw;
};

struct Reference {
  std::string caption;
  std::string abc;
};

struct RefineResult {
  bool keep = false;
  VlmMusicResponse revised;  // meaningful only when !keep
};

struct CallInfo {
  std::string prompt_hash;
  int attempts = 0;
  double elapsed_ms = 0.0;
};

struct ClientConfig {
  double temperature = 0.0;
  int max_tokens = 2048;
  RetryPolicy retry;
  int max_parallel = 4;
};

class VlmClient {
 public:
  VlmClient(std::shared_ptr<ChatTransport> transport, PromptTemplates templates, ClientConfig config,
            Sleeper sleeper = real_sleeper());

  // Each call fills *info (when given) even if it throws.
  std::string describe_image(std::span<const std::uint8_t> image, CallInfo* info = nullptr);
  VlmMusicResponse generate_music(std::span<const std::uint8_t> image, const std::string& description,
                                  const std::vector<Reference>& references, CallInfo* info = nullptr);
  RefineResult refine_music(std::span<const std::uint8_t> image, const std::string& description,
                            const std::string& abc, const std::string& report_text,
                            const std::optional<std::string>& diagnostics_text, CallInfo* info = nullptr);
  std::string motivation(std::span<const std::uint8_t> image, const std::string& description,
                         const std::string& abc, CallInfo* info = nullptr);

  // Prompt builders, public so tests can inspect exactly what is sent.
  ChatRequest describe_request(std::span<const std::uint8_t> image) const;
  ChatRequest generate_request(std::span<const std::uint8_t> image, const std::string& description,
                               const std::vector<Reference>& references) const;
  ChatRequest refine_request(std::span<const std::uint8_t> image, const std::string& description,
                             const std::string& abc, const std::string& report_text,
                             const std::optional<std::string>& diagnostics_text) const;
  ChatRequest motivation_request(std::span<const std::uint8_t> image, const std::string& description,
                                 const std::string& abc) const;

  const PromptTemplates& templates() const { return templates_; }
  const ClientConfig& config() const { return config_; }

 private:
  std::string call(const ChatRequest& request, CallInfo* info);
  ChatRequest base_request(std::span<const std::uint8_t> image, std::string text) const;

  std::shared_ptr<ChatTransport> transport_;
  PromptTemplates templates_;
  ClientConfig config_;
  Sleeper sleeper_;
  std::counting_semaphore<1024> slots_;
};

// First fenced block containing a line that starts with "X:"; otherwise the
// line span from the first "X:" line through the last music line. Never
// returns fence markers. Throws Error("NO_ABC_FOUND").
std::string extract_abc_block(std::string_view raw);

// Text after a "Motivation:" marker if present, otherwise the prose outside
// the ABC block; fence markers removed, whitespace trimmed.
std::string extract_motivation(std::string_view raw, std::string_view abc);

// True when the reply is the bare KEEP sentinel (markdown emphasis tolerated).
bool is_keep(std::string_view raw);

}  // namespace i2m::vlm
