#include <algorithm>
#include <chrono>
#include <fstream>
#include <sstream>
#include <thread>

#include "i2m/vlm.h"
#include "json.hpp"

#ifndef I2M_TEMPLATE_DIR
#define I2M_TEMPLATE_DIR "templates/v1"
#endif

namespace i2m::vlm {

namespace {

const char* const kTemplateNames[] = {"system",         "describe",       "generate",
                                      "references_section", "reference_item", "refine",
                                      "report_section", "diagnostics_section", "motivation"};

std::string trim_copy(std::string_view s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

// Semaphore guard that also releases when the transport throws.
class Slot {
 public:
  explicit Slot(std::counting_semaphore<1024>& s) : s_(s) { s_.acquire(); }
  ~Slot() { s_.release(); }
  Slot(const Slot&) = delete;
  Slot& operator=(const Slot&) = delete;

 private:
  std::counting_semaphore<1024>& s_;
};

}  // namespace

void validate(const ChatRequest& r) {
  if (r.user_parts.empty()) throw Error("BAD_REQUEST", "request has no user parts");
  for (const UserPart& p : r.user_parts) {
    if (const auto* img = std::get_if<ImagePart>(&p); img && img->bytes.empty()) {
      throw Error("BAD_REQUEST", "image part has no bytes");
    }
  }
  if (r.temperature < 0) throw Error("BAD_REQUEST", "temperature must be >= 0");
  if (r.max_tokens < 1) throw Error("BAD_REQUEST", "max_tokens must be >= 1");
}

std::string prompt_hash(const ChatRequest& r) {
  nlohmann::json j;
  j["system"] = r.system;
  j["temperature"] = r.temperature;
  j["max_tokens"] = r.max_tokens;
  j["parts"] = nlohmann::json::array();
  for (const UserPart& p : r.user_parts) {
    if (const auto* t = std::get_if<TextPart>(&p)) {
      j["parts"].push_back({{"text", t->text}});
    } else {
      const auto& img = std::get<ImagePart>(p);
      j["parts"].push_back({{"image", retrieval::fnv1a_hex(img.bytes)}, {"media_type", img.media_type}});
    }
  }
  return retrieval::fnv1a_hex(j.dump());
}

std::string prompt_text(const ChatRequest& r) {
  std::string out;
  for (const UserPart& p : r.user_parts) {
    if (const auto* t = std::get_if<TextPart>(&p)) {
      if (!out.empty()) out += "\n\n";
      out += t->text;
    }
  }
  return out;
}

std::string sniff_media_type(std::span<const std::uint8_t> b) {
  auto starts = [&](std::initializer_list<std::uint8_t> sig) {
    return b.size() >= sig.size() && std::equal(sig.begin(), sig.end(), b.begin());
  };
  if (starts({0x89, 'P', 'N', 'G'})) return "image/png";
  if (starts({0xFF, 0xD8, 0xFF})) return "image/jpeg";
  if (starts({'G', 'I', 'F', '8'})) return "image/gif";
  if (b.size() >= 12 && starts({'R', 'I', 'F', 'F'}) && std::equal(b.begin() + 8, b.begin() + 12, "WEBP")) {
    return "image/webp";
  }
  if (b.size() >= 2 && b[0] == 'P' && b[1] >= '1' && b[1] <= '6') return "image/x-portable-anymap";
  return "application/octet-stream";
}

Sleeper real_sleeper() {
  return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

PromptTemplates PromptTemplates::load(const std::filesystem::path& dir) {
  PromptTemplates t;
  t.version_ = dir.filename().string();
  if (t.version_.empty()) t.version_ = dir.parent_path().filename().string();
  for (const char* name : kTemplateNames) {
    auto path = dir / (std::string(name) + ".txt");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("TEMPLATE", "missing template file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();
    if (!text.empty() && text.back() == '\n') text.pop_back();
    t.texts_[name] = std::move(text);
  }
  return t;
}

std::string PromptTemplates::render(const std::string& name, const std::map<std::string, std::string>& vars) const {
  auto it = texts_.find(name);
  if (it == texts_.end()) throw Error("TEMPLATE", "unknown template '" + name + "'");
  const std::string& src = it->second;
  std::string out;
  std::size_t pos = 0;
  while (true) {
    std::size_t open = src.find("{{", pos);
    if (open == std::string::npos) break;
    std::size_t close = src.find("}}", open + 2);
    if (close == std::string::npos) break;
    out.append(src, pos, open - pos);
    std::string key = src.substr(open + 2, close - open - 2);
    auto v = vars.find(key);
    if (v == vars.end()) throw Error("TEMPLATE", "template '" + name + "' needs '" + key + "'");
    out += v->second;
    pos = close + 2;
  }
  out.append(src, pos, std::string::npos);
  return out;
}

std::filesystem::path default_template_dir() { return I2M_TEMPLATE_DIR; }

static MockTransport::Entry parse_entry(const nlohmann::json& e) {
  if (e.is_string()) return {e.get<std::string>(), false};
  if (e.is_object() && e.contains("error") && e["error"].is_string()) return {e["error"].get<std::string>(), true};
  throw Error("BAD_TRANSCRIPT", "transcript entries must be strings or {\"error\": \"...\"}");
}

std::shared_ptr<MockTransport> MockTransport::from_json_text(const std::string& json) {
  nlohmann::json j = nlohmann::json::parse(json, nullptr, false);
  if (j.is_discarded() || !j.is_array()) throw Error("BAD_TRANSCRIPT", "transcript must be a JSON array");
  std::vector<Entry> entries;
  for (const auto& e : j) entries.push_back(parse_entry(e));
  return std::make_shared<MockTransport>(std::move(entries));
}

std::shared_ptr<MockTransport> MockTransport::from_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("IO_FAILURE", "cannot open transcript " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string MockTransport::complete(const ChatRequest& request) {
  std::lock_guard lock(mu_);
  requests_.push_back(request);
  if (next_ >= entries_.size()) throw TransportError("mock transcript exhausted", false);
  const Entry& e = entries_[next_++];
  if (e.is_error) throw TransportError("mock: " + e.text, true);
  return e.text;
}

std::vector<ChatRequest> MockTransport::requests() const {
  std::lock_guard lock(mu_);
  return requests_;
}

std::size_t MockTransport::consumed() const {
  std::lock_guard lock(mu_);
  return next_;
}

VlmClient::VlmClient(std::shared_ptr<ChatTransport> transport, PromptTemplates templates, ClientConfig config,
                     Sleeper sleeper)
    : transport_(std::move(transport)),
      templates_(std::move(templates)),
      config_(config),
      sleeper_(std::move(sleeper)),
      slots_(std::clamp(config.max_parallel, 1, 1024)) {
  if (!transport_) throw Error("BAD_REQUEST", "no chat transport");
}

ChatRequest VlmClient::base_request(std::span<const std::uint8_t> image, std::string text) const {
  ChatRequest r;
  r.system = templates_.render("system", {});
  r.temperature = config_.temperature;
  r.max_tokens = config_.max_tokens;
  r.user_parts.push_back(ImagePart{std::vector<std::uint8_t>(image.begin(), image.end()), sniff_media_type(image)});
  r.user_parts.push_back(TextPart{std::move(text)});
  return r;
}

ChatRequest VlmClient::describe_request(std::span<const std::uint8_t> image) const {
  return base_request(image, templates_.render("describe", {}));
}

ChatRequest VlmClient::generate_request(std::span<const std::uint8_t> image, const std::string& description,
                                        const std::vector<Reference>& references) const {
  std::string section;
  if (!references.empty()) {
    std::string items;
    for (std::size_t i = 0; i < references.size(); ++i) {
      if (i > 0) items += "\n\n";
      items += templates_.render("reference_item", {{"index", std::to_string(i + 1)},
                                                    {"caption", references[i].caption},
                                                    {"abc", trim_copy(references[i].abc)}});
    }
    section = templates_.render("references_section", {{"items", items}});
  }
  return base_request(image,
                      templates_.render("generate", {{"description", description}, {"references_section", section}}));
}

ChatRequest VlmClient::refine_request(std::span<const std::uint8_t> image, const std::string& description,
                                      const std::string& abc, const std::string& report_text,
                                      const std::optional<std::string>& diagnostics_text) const {
  std::string report = report_text.empty()
                           ? std::string()
                           : templates_.render("report_section", {{"report", trim_copy(report_text)}});
  std::string diags = diagnostics_text ? templates_.render("diagnostics_section", {{"diagnostics", *diagnostics_text}})
                                       : std::string();
  return base_request(image, templates_.render("refine", {{"description", description},
                                                         {"abc", trim_copy(abc)},
                                                         {"report_section", report},
                                                         {"diagnostics_section", diags}}));
}

ChatRequest VlmClient::motivation_request(std::span<const std::uint8_t> image, const std::string& description,
                                          const std::string& abc) const {
  return base_request(image,
                      templates_.render("motivation", {{"description", description}, {"abc", trim_copy(abc)}}));
}

std::string VlmClient::call(const ChatRequest& request, CallInfo* info) {
  validate(request);
  CallInfo local;
  CallInfo& ci = info ? *info : local;
  ci = CallInfo{};
  ci.prompt_hash = prompt_hash(request);
  auto start = std::chrono::steady_clock::now();
  auto finish = [&] {
    ci.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  };
  try {
    std::string out = with_retry(config_.retry, sleeper_, &ci.attempts, [&] {
      Slot slot(slots_);
      return transport_->complete(request);
    });
    finish();
    return out;
  } catch (...) {
    finish();
    throw;
  }
}

std::string VlmClient::describe_image(std::span<const std::uint8_t> image, CallInfo* info) {
  std::string text = trim_copy(call(describe_request(image), info));
  if (text.empty()) throw Error("EMPTY_RESPONSE", "model returned an empty image description");
  return text;
}

VlmMusicResponse VlmClient::generate_music(std::span<const std::uint8_t> image, const std::string& description,
                                           const std::vector<Reference>& references, CallInfo* info) {
  VlmMusicResponse r;
  r.raw = call(generate_request(image, description, references), info);
  r.abc = extract_abc_block(r.raw);
  r.motivation = extract_motivation(r.raw, r.abc);
  return r;
}

RefineResult VlmClient::refine_music(std::span<const std::uint8_t> image, const std::string& description,
                                     const std::string& abc, const std::string& report_text,
                                     const std::optional<std::string>& diagnostics_text, CallInfo* info) {
  RefineResult out;
  std::string raw = call(refine_request(image, description, abc, report_text, diagnostics_text), info);
  if (is_keep(raw)) {
    out.keep = true;
    out.revised.raw = raw;
    return out;
  }
  out.revised.raw = raw;
  try {
    out.revised.abc = extract_abc_block(raw);
  } catch (const Error&) {
    throw Error("NO_ABC_FOUND", "refinement reply is neither KEEP nor an ABC tune");
  }
  out.revised.motivation = extract_motivation(raw, out.revised.abc);
  return out;
}

std::string VlmClient::motivation(std::span<const std::uint8_t> image, const std::string& description,
                                  const std::string& abc, CallInfo* info) {
  std::string raw = call(motivation_request(image, description, abc), info);
  std::string text = extract_motivation(raw, "");
  if (text.empty()) throw Error("EMPTY_RESPONSE", "model returned an empty motivation");
  return text;
}

}  // namespace i2m::vlm
