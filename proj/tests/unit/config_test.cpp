#include "doctest.h"
#include "i2m/config.h"
#include "support.h"

using namespace i2m;
using namespace i2m::config;

TEST_CASE("key-value syntax") {
  auto kv = parse_key_values(
      "# comment\n"
      "k = 5\n"
      "  chat_model=gpt-4o   # trailing comment\n"
      "\n"
      "chat_endpoint = \"http://host/v1#frag\"\n"
      "api_key = \"a \\\"quoted\\\" \\\\ key\"\r\n");
  CHECK(kv.size() == 4);
  CHECK(kv["k"] == "5");
  CHECK(kv["chat_model"] == "gpt-4o");
  CHECK(kv["chat_endpoint"] == "http://host/v1#frag");
  CHECK(kv["api_key"] == "a \"quoted\" \\ key");
  CHECK(parse_key_values("").empty());
  CHECK(parse_key_values("x =").at("x").empty());

  for (const char* bad : {"novalue", "= 3", "a b = 1", "k = 1\nk = 2", "s = \"open", "s = \"x\" y", "[section]",
                          "s = \"\\q\""}) {
    CAPTURE(std::string(bad));
    CHECK_THROWS_WITH(parse_key_values(bad), doctest::Contains("BAD_CONFIG"));
  }
  CHECK_THROWS_WITH(parse_key_values("k = 1\n\nbroken"), doctest::Contains("line 3"));
}

TEST_CASE("applying values") {
  ToolConfig c;
  apply_key_values(c, parse_key_values("k = 0\nmax_refine_rounds = 4\nmax_grammar_retries = 2\n"
                                       "fusion = rank_intersection\nparse_mode = strict\nmotivation_call = false\n"
                                       "temperature = 0.7\nmax_retries = 5\ninitial_backoff_ms = 10\n"
                                       "chat_endpoint = http://x/v1\nchat_model = m\napi_key_env = MY_KEY\n"
                                       "timeout_seconds = 9\nattention_alpha = 0.25"));
  CHECK(c.pipeline.k == 0);
  CHECK(c.pipeline.max_refine_rounds == 4);
  CHECK(c.pipeline.max_grammar_retries == 2);
  CHECK(c.pipeline.fusion == retrieval::Fusion::RankIntersection);
  CHECK(c.pipeline.parse_mode == abc::ParseMode::Strict);
  CHECK(!c.pipeline.motivation_call);
  CHECK(c.client.temperature == 0.7);
  CHECK(c.client.retry.max_retries == 5);
  CHECK(c.client.retry.initial_backoff.count() == 10);
  CHECK(c.chat_endpoint == "http://x/v1");
  CHECK(c.api_key_env == "MY_KEY");
  CHECK(c.timeout_seconds == 9);
  CHECK(c.pipeline.attention_alpha == 0.25);

  ToolConfig d;
  CHECK_THROWS_WITH(apply_key_values(d, {{"colour", "red"}}), doctest::Contains("unknown key 'colour'"));
  CHECK_THROWS_WITH(apply_key_values(d, {{"k", "three"}}), doctest::Contains("BAD_CONFIG"));
  CHECK_THROWS_WITH(apply_key_values(d, {{"k", "-1"}}), doctest::Contains("BAD_CONFIG"));
  CHECK_THROWS_WITH(apply_key_values(d, {{"fusion", "max"}}), doctest::Contains("BAD_CONFIG"));
  CHECK_THROWS_WITH(apply_key_values(d, {{"motivation_call", "maybe"}}), doctest::Contains("BAD_CONFIG"));
  CHECK(std::is_sorted(known_keys().begin(), known_keys().end()));
}

TEST_CASE("config files") {
  auto path = std::filesystem::temp_directory_path() / "i2m_config_test.conf";
  std::ofstream(path) << "k = 1\nbogus = 2\n";
  CHECK_THROWS_WITH(load_config(path), doctest::Contains("unknown key 'bogus'"));
  std::ofstream(path) << "k = 1\n";
  CHECK(load_config(path).pipeline.k == 1);
  std::filesystem::remove(path);
  CHECK_THROWS_WITH(load_config(path), doctest::Contains("IO_FAILURE"));
}

TEST_CASE("credential precedence") {
  ToolConfig c;
  c.api_key = "from-file";
  c.api_key_env = "KEY_VAR";
  EnvLookup env = [](const std::string& name) -> std::optional<std::string> {
    if (name == "KEY_VAR") return "from-env";
    return std::nullopt;
  };
  EnvLookup empty = [](const std::string&) -> std::optional<std::string> { return std::nullopt; };
  CHECK(resolve_api_key(std::string("from-flag"), c, env) == "from-flag");
  CHECK(resolve_api_key(std::nullopt, c, env) == "from-env");
  CHECK(resolve_api_key(std::nullopt, c, empty) == "from-file");
  c.api_key_env = "OTHER";
  CHECK(resolve_api_key(std::nullopt, c, env) == "from-file");
}
