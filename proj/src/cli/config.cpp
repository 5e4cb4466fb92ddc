#include <algorithm>
#include <cctype>
#include <chrono>
#include <vector>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "i2m/config.h"

namespace i2m::config {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  std::size_t e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_line(int line, const std::string& why) {
  throw Error("BAD_CONFIG", "line " + std::to_string(line) + ": " + why);
}

bool valid_key(std::string_view k) {
  return !k.empty() && std::all_of(k.begin(), k.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
  });
}

// Value text after '=': quoted string or bare text up to a comment.
std::string parse_value(std::string_view s, int line) {
  std::string v = trim(s);
  if (v.empty() || v[0] != '"') {
    std::size_t hash = v.find('#');
    return trim(v.substr(0, hash == std::string::npos ? v.size() : hash));
  }
  std::string out;
  std::size_t i = 1;
  for (; i < v.size() && v[i] != '"'; ++i) {
    if (v[i] == '\\') {
      if (++i >= v.size()) bad_line(line, "unterminated escape");
      switch (v[i]) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        default: bad_line(line, std::string("unknown escape \\") + v[i]);
      }
    } else {
      out += v[i];
    }
  }
  if (i >= v.size()) bad_line(line, "unterminated string");
  std::string rest = trim(std::string_view(v).substr(i + 1));
  if (!rest.empty() && rest[0] != '#') bad_line(line, "unexpected text after string");
  return out;
}

template <typename T>
T number(const std::string& key, const std::string& v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw Error("BAD_CONFIG", "'" + key + "' needs a number, got '" + v + "'");
  }
  return out;
}

bool boolean(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error("BAD_CONFIG", "'" + key + "' needs true or false, got '" + v + "'");
}

using Setter = std::function<void(ToolConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"k", [](ToolConfig& c, auto& k, auto& v) {
         long n = number<long>(k, v);
         if (n < 0) throw Error("BAD_CONFIG", "k must be >= 0");
         c.pipeline.k = static_cast<std::size_t>(n);
       }},
      {"max_grammar_retries", [](ToolConfig& c, auto& k, auto& v) { c.pipeline.max_grammar_retries = number<int>(k, v); }},
      {"max_refine_rounds", [](ToolConfig& c, auto& k, auto& v) { c.pipeline.max_refine_rounds = number<int>(k, v); }},
      {"fusion", [](ToolConfig& c, auto&, auto& v) { c.pipeline.fusion = retrieval::parse_fusion(v); }},
      {"parse_mode", [](ToolConfig& c, auto& k, auto& v) {
         if (v == "strict") c.pipeline.parse_mode = abc::ParseMode::Strict;
         else if (v == "lenient") c.pipeline.parse_mode = abc::ParseMode::Lenient;
         else throw Error("BAD_CONFIG", "'" + k + "' must be strict or lenient");
       }},
      {"motivation_call", [](ToolConfig& c, auto& k, auto& v) { c.pipeline.motivation_call = boolean(k, v); }},
      {"attention_range", [](ToolConfig& c, auto&, auto& v) { c.pipeline.attention_range = v; }},
      {"attention_alpha", [](ToolConfig& c, auto& k, auto& v) { c.pipeline.attention_alpha = number<double>(k, v); }},
      {"temperature", [](ToolConfig& c, auto& k, auto& v) { c.client.temperature = number<double>(k, v); }},
      {"max_tokens", [](ToolConfig& c, auto& k, auto& v) { c.client.max_tokens = number<int>(k, v); }},
      {"max_parallel", [](ToolConfig& c, auto& k, auto& v) { c.client.max_parallel = number<int>(k, v); }},
      {"max_retries", [](ToolConfig& c, auto& k, auto& v) { c.client.retry.max_retries = number<int>(k, v); }},
      {"initial_backoff_ms",
       [](ToolConfig& c, auto& k, auto& v) { c.client.retry.initial_backoff = std::chrono::milliseconds(number<long>(k, v)); }},
      {"backoff_multiplier", [](ToolConfig& c, auto& k, auto& v) { c.client.retry.multiplier = number<double>(k, v); }},
      {"max_backoff_ms",
       [](ToolConfig& c, auto& k, auto& v) { c.client.retry.max_backoff = std::chrono::milliseconds(number<long>(k, v)); }},
      {"chat_endpoint", [](ToolConfig& c, auto&, auto& v) { c.chat_endpoint = v; }},
      {"chat_model", [](ToolConfig& c, auto&, auto& v) { c.chat_model = v; }},
      {"embed_endpoint", [](ToolConfig& c, auto&, auto& v) { c.embed_endpoint = v; }},
      {"embed_model", [](ToolConfig& c, auto&, auto& v) { c.embed_model = v; }},
      {"api_key", [](ToolConfig& c, auto&, auto& v) { c.api_key = v; }},
      {"api_key_env", [](ToolConfig& c, auto&, auto& v) { c.api_key_env = v; }},
      {"timeout_seconds", [](ToolConfig& c, auto& k, auto& v) { c.timeout_seconds = number<int>(k, v); }},
      {"template_dir", [](ToolConfig& c, auto&, auto& v) { c.template_dir = v; }},
  };
  return table;
}

}  // namespace

std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> out;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line[0] == '[') bad_line(line_no, "sections are not supported; use flat keys");
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) bad_line(line_no, "expected key = value");
    std::string key = trim(std::string_view(line).substr(0, eq));
    if (!valid_key(key)) bad_line(line_no, "bad key '" + key + "'");
    if (out.count(key)) bad_line(line_no, "duplicate key '" + key + "'");
    out[key] = parse_value(std::string_view(line).substr(eq + 1), line_no);
  }
  return out;
}

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, _] : setters()) k.push_back(name);
    return k;
  }();
  return keys;
}

void apply_key_values(ToolConfig& config, const std::map<std::string, std::string>& values) {
  for (const auto& [key, value] : values) {
    auto it = setters().find(key);
    if (it == setters().end()) throw Error("BAD_CONFIG", "unknown key '" + key + "'");
    try {
      it->second(config, key, value);
    } catch (const Error& e) {
      if (e.code() == "BAD_CONFIG") throw;
      throw Error("BAD_CONFIG", "'" + key + "': " + e.what());
    }
  }
}

ToolConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("IO_FAILURE", "cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  ToolConfig c;
  try {
    apply_key_values(c, parse_key_values(ss.str()));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + std::string(e.what()).substr(e.code().size() + 2));
  }
  return c;
}

EnvLookup process_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    const char* v = std::getenv(name.c_str());
    if (!v) return std::nullopt;
    return std::string(v);
  };
}

std::string resolve_api_key(const std::optional<std::string>& flag, const ToolConfig& config, const EnvLookup& env) {
  if (flag) return *flag;
  if (!config.api_key_env.empty() && env) {
    if (auto v = env(config.api_key_env); v && !v->empty()) return *v;
  }
  return config.api_key;
}

}  // namespace i2m::config
