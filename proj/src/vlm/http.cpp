#include <regex>

#include "i2m/vlm.h"
#include "json.hpp"

#include "httplib.h"

namespace i2m::vlm {

namespace {

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;    // without trailing slash
};

Url split_url(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw TransportError("bad endpoint URL '" + url + "'", false);
  Url u{m[1].str(), m[2].str()};
  while (!u.path.empty() && u.path.back() == '/') u.path.pop_back();
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
  if (u.origin.rfind("https://", 0) == 0) throw TransportError("built without TLS support; use an http:// endpoint", false);
#endif
  return u;
}

std::string post_json(const HttpEndpoint& ep, const std::string& route, const std::string& body) {
  Url u = split_url(ep.base_url);
  httplib::Client cli(u.origin);
  cli.set_connection_timeout(ep.timeout_seconds, 0);
  cli.set_read_timeout(ep.timeout_seconds, 0);
  cli.set_write_timeout(ep.timeout_seconds, 0);
  httplib::Headers headers;
  if (!ep.api_key.empty()) headers.emplace("Authorization", "Bearer " + ep.api_key);
  auto res = cli.Post(u.path + route, headers, body, "application/json");
  if (!res) throw TransportError("request to " + ep.base_url + route + " failed: " + httplib::to_string(res.error()), true);
  if (res->status == 429 || res->status >= 500) {
    throw TransportError("HTTP " + std::to_string(res->status) + " from " + ep.base_url + route, true);
  }
  if (res->status < 200 || res->status >= 300) {
    throw TransportError("HTTP " + std::to_string(res->status) + " from " + ep.base_url + route + ": " +
                             res->body.substr(0, 300),
                         false);
  }
  return res->body;
}

std::string data_url(std::span<const std::uint8_t> bytes, const std::string& media_type) {
  return "data:" + media_type + ";base64," + base64_encode(bytes);
}

}  // namespace

std::string base64_encode(std::span<const std::uint8_t> in) {
  static const char* tbl = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < in.size(); i += 3) {
    std::uint32_t v = (std::uint32_t{in[i]} << 16) | (std::uint32_t{in[i + 1]} << 8) | in[i + 2];
    out += tbl[(v >> 18) & 63];
    out += tbl[(v >> 12) & 63];
    out += tbl[(v >> 6) & 63];
    out += tbl[v & 63];
  }
  if (i < in.size()) {
    std::uint32_t v = std::uint32_t{in[i]} << 16;
    if (i + 1 < in.size()) v |= std::uint32_t{in[i + 1]} << 8;
    out += tbl[(v >> 18) & 63];
    out += tbl[(v >> 12) & 63];
    out += i + 1 < in.size() ? tbl[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::string HttpChatTransport::request_body(const ChatRequest& request, const std::string& model) {
  nlohmann::json content = nlohmann::json::array();
  for (const UserPart& p : request.user_parts) {
    if (const auto* t = std::get_if<TextPart>(&p)) {
      content.push_back({{"type", "text"}, {"text", t->text}});
    } else {
      const auto& img = std::get<ImagePart>(p);
      content.push_back({{"type", "image_url"}, {"image_url", {{"url", data_url(img.bytes, img.media_type)}}}});
    }
  }
  nlohmann::json messages = nlohmann::json::array();
  if (!request.system.empty()) messages.push_back({{"role", "system"}, {"content", request.system}});
  messages.push_back({{"role", "user"}, {"content", content}});
  nlohmann::json body = {{"model", model},
                         {"messages", messages},
                         {"temperature", request.temperature},
                         {"max_tokens", request.max_tokens}};
  return body.dump();
}

std::string HttpChatTransport::parse_response(const std::string& body) {
  nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded()) throw TransportError("chat response is not JSON", false);
  try {
    const auto& content = j.at("choices").at(0).at("message").at("content");
    if (content.is_null()) return "";
    if (content.is_string()) return content.get<std::string>();
    std::string out;
    for (const auto& part : content) {
      if (part.contains("text")) out += part["text"].get<std::string>();
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw TransportError(std::string("unexpected chat response shape: ") + e.what(), false);
  }
}

std::string HttpChatTransport::complete(const ChatRequest& request) {
  return parse_response(post_json(endpoint_, "/chat/completions", request_body(request, endpoint_.model)));
}

retrieval::Vector HttpEmbeddingProvider::parse_response(const std::string& body) {
  nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded()) throw TransportError("embedding response is not JSON", false);
  try {
    retrieval::Vector v;
    for (const auto& x : j.at("data").at(0).at("embedding")) v.push_back(x.get<float>());
    if (v.empty()) throw TransportError("embedding response has an empty vector", false);
    return v;
  } catch (const nlohmann::json::exception& e) {
    throw TransportError(std::string("unexpected embedding response shape: ") + e.what(), false);
  }
}

retrieval::Vector HttpEmbeddingProvider::post(const std::string& input) {
  nlohmann::json body = {{"model", endpoint_.model}, {"input", input}};
  return parse_response(post_json(endpoint_, "/embeddings", body.dump()));
}

retrieval::Vector HttpEmbeddingProvider::embed_text(const std::string& text) { return post(text); }

retrieval::Vector HttpEmbeddingProvider::embed_image(std::span<const std::uint8_t> image) {
  return post(data_url(image, sniff_media_type(image)));
}

}  // namespace i2m::vlm
