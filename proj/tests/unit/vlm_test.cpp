#include <atomic>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "i2m/vlm.h"
#include "json.hpp"
#include "support.h"

using namespace i2m;
using namespace i2m::vlm;

namespace {

const std::vector<std::uint8_t> kImage = {0x89, 'P', 'N', 'G', 1, 2, 3, 4};

struct Fixture {
  std::shared_ptr<MockTransport> mock;
  std::vector<std::chrono::milliseconds> sleeps;
  VlmClient client;

  Fixture(std::vector<MockTransport::Entry> entries, int retries = 2)
      : mock(std::make_shared<MockTransport>(std::move(entries))),
        client(mock, PromptTemplates::load(default_template_dir()), config(retries),
               [this](std::chrono::milliseconds d) { sleeps.push_back(d); }) {}

  static ClientConfig config(int retries) {
    ClientConfig c;
    c.retry.max_retries = retries;
    c.retry.initial_backoff = std::chrono::milliseconds(100);
    return c;
  }
};

MockTransport::Entry reply(std::string s) { return {std::move(s), false}; }
MockTransport::Entry fail(std::string s) { return {std::move(s), true}; }

const std::string kTune = "X:1\nT:Dusk\nM:4/4\nL:1/8\nK:Am\nA2 c2 e2 a2|g4 e4|]";

}  // namespace

TEST_CASE("extract fenced block") {
  CHECK(extract_abc_block("here: ```\nX:1\nK:C\nC|\n``` done") == "X:1\nK:C\nC|");
  CHECK(extract_abc_block("```abc\nX:1\nK:C\nC|\n```\nMotivation: calm") == "X:1\nK:C\nC|");
  // First block without an X: line is skipped.
  CHECK(extract_abc_block("```\nnot music\n```\n```abc\nX:2\nK:G\nG|\n```") == "X:2\nK:G\nG|");
}

TEST_CASE("extract bare tune") {
  CHECK(extract_abc_block("X:1\nK:C\nC|") == "X:1\nK:C\nC|");
  CHECK(extract_abc_block("Sure! Here it is.\nX:1\nM:4/4\nK:C\n\"C\"CDEF|G4|]\n\nI chose C major because it is bright.") ==
        "X:1\nM:4/4\nK:C\n\"C\"CDEF|G4|]");
  // Unterminated fence: fall back to the X: line span.
  CHECK(extract_abc_block("```abc\nX:1\nK:C\nC|") == "X:1\nK:C\nC|");
}

TEST_CASE("no ABC found") {
  CHECK_THROWS_WITH_AS(extract_abc_block("no music here"), doctest::Contains("NO_ABC_FOUND"), Error);
  CHECK_THROWS_AS(extract_abc_block(""), Error);
  CHECK_THROWS_AS(extract_abc_block("```\n```"), Error);
}

TEST_CASE("extract is total and never returns fences") {
  test::Rng rng(1234);
  const std::string pieces[] = {"```", "```abc\n", "X:1\n", "K:C\n", "CDEF|", "\n", "text ", "Motivation: x", "`"};
  for (int i = 0; i < 5000; ++i) {
    std::string raw;
    int n = rng.uniform(0, 12);
    for (int j = 0; j < n; ++j) raw += pieces[static_cast<std::size_t>(rng.uniform(0, 8))];
    try {
      std::string abc = extract_abc_block(raw);
      CHECK(abc.find("```") == std::string::npos);
      CHECK(raw.find(abc) != std::string::npos);
      CHECK_FALSE(abc.empty());
      (void)extract_motivation(raw, abc);
    } catch (const Error& e) {
      CHECK(e.code() == "NO_ABC_FOUND");
    }
  }
}

TEST_CASE("motivation extraction") {
  std::string raw = "```abc\n" + kTune + "\n```\n\n**Motivation:** The dusky sky suggests A minor.\n";
  CHECK(extract_motivation(raw, extract_abc_block(raw)) == "The dusky sky suggests A minor.");
  std::string prose = "I picked a slow tempo.\n```abc\n" + kTune + "\n```\nThe melody falls like the sun.";
  CHECK(extract_motivation(prose, extract_abc_block(prose)) == "I picked a slow tempo.\n\nThe melody falls like the sun.");
  CHECK(extract_motivation("```abc\n" + kTune + "\n```", kTune).empty());
}

TEST_CASE("keep sentinel") {
  CHECK(is_keep("KEEP"));
  CHECK(is_keep("  **KEEP**.\n"));
  CHECK_FALSE(is_keep("KEEP it as is, but change the key"));
  CHECK_FALSE(is_keep("keep"));
}

TEST_CASE("describe image passes the reply through") {
  Fixture f({reply("a coastal sunset with a lighthouse")});
  CallInfo info;
  CHECK(f.client.describe_image(kImage, &info) == "a coastal sunset with a lighthouse");
  CHECK(info.attempts == 1);
  CHECK(info.prompt_hash.size() == 16);
  auto reqs = f.mock->requests();
  REQUIRE(reqs.size() == 1);
  REQUIRE(reqs[0].user_parts.size() == 2);
  const auto& img = std::get<ImagePart>(reqs[0].user_parts[0]);
  CHECK(img.bytes == kImage);
  CHECK(img.media_type == "image/png");
}

TEST_CASE("empty description") {
  Fixture f({reply("  \n")});
  CHECK_THROWS_WITH_AS(f.client.describe_image(kImage), doctest::Contains("EMPTY_RESPONSE"), Error);
}

TEST_CASE("retries with exponential backoff") {
  Fixture f({fail("503"), fail("503"), reply("ok")}, 2);
  CallInfo info;
  CHECK(f.client.describe_image(kImage, &info) == "ok");
  CHECK(info.attempts == 3);
  CHECK(f.sleeps == std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(100), std::chrono::milliseconds(200)});
}

TEST_CASE("endpoint down: TRANSPORT after the configured retries") {
  Fixture f({fail("down"), fail("down"), fail("down"), fail("down")}, 2);
  CallInfo info;
  CHECK_THROWS_WITH_AS(f.client.describe_image(kImage, &info), doctest::Contains("TRANSPORT"), Error);
  CHECK(info.attempts == 3);
  CHECK(f.mock->consumed() == 3);
}

TEST_CASE("exhausted transcript is not retried") {
  Fixture f({}, 5);
  CallInfo info;
  CHECK_THROWS_AS(f.client.describe_image(kImage, &info), TransportError);
  CHECK(info.attempts == 1);
}

TEST_CASE("generate with references") {
  Fixture f({reply("```abc\n" + kTune + "\n```\nMotivation: warm light, minor key.")});
  std::vector<Reference> refs = {{"a slow waltz", "X:1\nM:3/4\nK:G\nG3|"}, {"a fast reel", "X:2\nK:D\nd2|"}};
  auto r = f.client.generate_music(kImage, "a sunset", refs);
  CHECK(r.abc == kTune);
  CHECK(r.motivation == "warm light, minor key.");
  CHECK(r.raw.find(r.abc) != std::string::npos);
  std::string text = prompt_text(f.mock->requests()[0]);
  CHECK(text.find("a sunset") != std::string::npos);
  CHECK(text.find("a slow waltz") != std::string::npos);
  CHECK(text.find("X:1\nM:3/4\nK:G\nG3|") != std::string::npos);
  CHECK(text.find("Reference 2") != std::string::npos);
  CHECK(text.find("Motivation:") != std::string::npos);
}

TEST_CASE("generate without references has no reference section") {
  Fixture f({reply("```abc\n" + kTune + "\n```")});
  (void)f.client.generate_music(kImage, "a sunset", {});
  std::string text = prompt_text(f.mock->requests()[0]);
  CHECK(text.find("Reference") == std::string::npos);
  CHECK(text.find("Compose") != std::string::npos);
}

TEST_CASE("generate with prose only") {
  Fixture f({reply("I would write something gentle.")});
  CHECK_THROWS_WITH_AS(f.client.generate_music(kImage, "d", {}), doctest::Contains("NO_ABC_FOUND"), Error);
}

TEST_CASE("refine: keep, revise, neither") {
  Fixture f({reply("KEEP"), reply("```abc\nX:1\nK:C\nCEG|\n```"), reply("It is lovely already.")});
  auto keep = f.client.refine_music(kImage, "d", kTune, "Pitch Range (PR): 12.0000", std::nullopt);
  CHECK(keep.keep);
  auto rev = f.client.refine_music(kImage, "d", kTune, "Pitch Range (PR): 12.0000", std::nullopt);
  CHECK_FALSE(rev.keep);
  CHECK(rev.revised.abc == "X:1\nK:C\nCEG|");
  CHECK_THROWS_WITH_AS(f.client.refine_music(kImage, "d", kTune, "r", std::nullopt), doctest::Contains("NO_ABC_FOUND"),
                       Error);
  auto reqs = f.mock->requests();
  std::string text = prompt_text(reqs[0]);
  CHECK(text.find(kTune) != std::string::npos);
  CHECK(text.find("Pitch Range (PR): 12.0000") != std::string::npos);
  CHECK(text.find("KEEP") != std::string::npos);
  CHECK(std::holds_alternative<ImagePart>(reqs[0].user_parts[0]));
}

TEST_CASE("refine with diagnostics") {
  Fixture f({reply("```abc\nX:1\nK:C\nC|\n```")});
  (void)f.client.refine_music(kImage, "d", "X:1\nC0|", "", std::string("line 2, col 1: [BAD_DURATION] zero"));
  std::string text = prompt_text(f.mock->requests()[0]);
  CHECK(text.find("line 2, col 1: [BAD_DURATION] zero") != std::string::npos);
  CHECK(text.find("measured") == std::string::npos);
}

TEST_CASE("prompts are deterministic") {
  Fixture a({}), b({});
  std::vector<Reference> refs = {{"c", "X:1\nK:C\nC|"}};
  auto ra = a.client.generate_request(kImage, "desc", refs);
  auto rb = b.client.generate_request(kImage, "desc", refs);
  CHECK(prompt_text(ra) == prompt_text(rb));
  CHECK(prompt_hash(ra) == prompt_hash(rb));
  CHECK(HttpChatTransport::request_body(ra, "m") == HttpChatTransport::request_body(rb, "m"));
  auto rc = a.client.generate_request(kImage, "other", refs);
  CHECK(prompt_hash(ra) != prompt_hash(rc));
}

TEST_CASE("templates") {
  auto t = PromptTemplates::load(default_template_dir());
  CHECK(t.version() == "v1");
  CHECK_THROWS_WITH_AS(t.render("nope", {}), doctest::Contains("TEMPLATE"), Error);
  CHECK_THROWS_WITH_AS(t.render("generate", {}), doctest::Contains("description"), Error);
  CHECK_THROWS_AS(PromptTemplates::load("/nonexistent"), Error);
}

TEST_CASE("request validation") {
  ChatRequest r;
  CHECK_THROWS_AS(validate(r), Error);
  r.user_parts.push_back(ImagePart{{}, "image/png"});
  CHECK_THROWS_AS(validate(r), Error);
  r.user_parts[0] = TextPart{"hi"};
  CHECK_NOTHROW(validate(r));
}

TEST_CASE("mock transcript file format") {
  auto m = MockTransport::from_json_text(R"(["one", {"error": "flaky"}, "two"])");
  ChatRequest r;
  r.user_parts.push_back(TextPart{"x"});
  CHECK(m->complete(r) == "one");
  CHECK_THROWS_AS(m->complete(r), TransportError);
  CHECK(m->complete(r) == "two");
  CHECK_THROWS_AS(MockTransport::from_json_text("{}"), Error);
  CHECK_THROWS_AS(MockTransport::from_json_text("[1]"), Error);
}

TEST_CASE("bounded parallelism") {
  struct Slow : ChatTransport {
    std::atomic<int> active{0}, peak{0};
    std::string complete(const ChatRequest&) override {
      int now = ++active;
      int p = peak.load();
      while (now > p && !peak.compare_exchange_weak(p, now)) {
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
      --active;
      return "desc";
    }
  };
  auto slow = std::make_shared<Slow>();
  ClientConfig c;
  c.max_parallel = 2;
  VlmClient client(slow, PromptTemplates::load(default_template_dir()), c);
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i) threads.emplace_back([&] { (void)client.describe_image(kImage); });
  for (auto& t : threads) t.join();
  CHECK(slow->peak.load() <= 2);
  CHECK(slow->peak.load() >= 1);
}

TEST_CASE("base64") {
  auto enc = [](std::string s) {
    return base64_encode(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  };
  CHECK(enc("") == "");
  CHECK(enc("f") == "Zg==");
  CHECK(enc("fo") == "Zm8=");
  CHECK(enc("foo") == "Zm9v");
  CHECK(enc("foobar") == "Zm9vYmFy");
}

TEST_CASE("HTTP wire format against a loopback server") {
  httplib::Server server;
  std::string seen_body, seen_auth;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen_body = req.body;
    seen_auth = req.get_header_value("Authorization");
    res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"a quiet harbour"}}]})",
                    "application/json");
  });
  int calls = 0;
  server.Post("/v1/embeddings", [&](const httplib::Request&, httplib::Response& res) {
    if (++calls == 1) {
      res.status = 503;
      return;
    }
    res.set_content(R"({"data":[{"embedding":[0.5,-1,2]}]})", "application/json");
  });
  server.Post("/v1/bad/chat/completions", [&](const httplib::Request&, httplib::Response& res) { res.status = 401; });
  int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  HttpEndpoint ep{"http://127.0.0.1:" + std::to_string(port) + "/v1", "test-model", "secret", 5};
  VlmClient client(std::make_shared<HttpChatTransport>(ep), PromptTemplates::load(default_template_dir()), {});
  CHECK(client.describe_image(kImage) == "a quiet harbour");
  CHECK(seen_auth == "Bearer secret");
  auto body = nlohmann::json::parse(seen_body);
  CHECK(body["model"] == "test-model");
  CHECK(body["messages"][0]["role"] == "system");
  CHECK(body["messages"][1]["content"][0]["type"] == "image_url");
  CHECK(body["messages"][1]["content"][0]["image_url"]["url"] == "data:image/png;base64," + base64_encode(kImage));
  CHECK(body["messages"][1]["content"][1]["type"] == "text");

  HttpEmbeddingProvider emb(ep);
  int attempts = 0;
  RetryPolicy policy;
  auto v = with_retry(policy, nullptr, &attempts, [&] { return emb.embed_text("x"); });
  CHECK(v == retrieval::Vector{0.5f, -1.f, 2.f});
  CHECK(attempts == 2);

  HttpEndpoint bad = ep;
  bad.base_url += "/bad";
  int bad_attempts = 0;
  CHECK_THROWS_AS(with_retry(policy, nullptr, &bad_attempts, [&] {
                    return HttpChatTransport(bad).complete(client.describe_request(kImage));
                  }),
                  TransportError);
  CHECK(bad_attempts == 1);

  server.stop();
  th.join();
}

TEST_CASE("HTTP response parsing") {
  CHECK(HttpChatTransport::parse_response(R"({"choices":[{"message":{"content":[{"type":"text","text":"a"},{"type":"text","text":"b"}]}}]})") == "ab");
  CHECK_THROWS_AS(HttpChatTransport::parse_response("{}"), TransportError);
  CHECK_THROWS_AS(HttpChatTransport::parse_response("nope"), TransportError);
  CHECK_THROWS_AS(HttpEmbeddingProvider::parse_response(R"({"data":[]})"), TransportError);
}
