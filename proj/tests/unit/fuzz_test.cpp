#include "doctest.h"
#include "i2m/abc.h"
#include "i2m/midi.h"
#include "support.h"

using namespace i2m;

namespace {

const std::string kAlphabet =
    "ABCDEFGabcdefgzxZ^_=,'/0123456789|:[]()<>-{}!+~\"%&. \nXTMLQKVw";

std::string random_input(test::Rng& rng) {
  int len = rng.uniform(0, 200);
  std::string s;
  if (rng.uniform(0, 2) == 0) {
    for (int i = 0; i < len; ++i) s += static_cast<char>(rng.uniform(0, 255));
    return s;
  }
  if (rng.uniform(0, 1) == 0) s = "X:1\nM:4/4\nL:1/8\nK:C\n";
  for (int i = 0; i < len; ++i) s += kAlphabet[static_cast<std::size_t>(rng.uniform(0, static_cast<int>(kAlphabet.size()) - 1))];
  return s;
}

}  // namespace

TEST_CASE("parse is total on random input") {
  test::Rng rng(424242);
  int scores = 0;
  for (int i = 0; i < 10000; ++i) {
    std::string src = random_input(rng);
    abc::ParseResult r;
    REQUIRE_NOTHROW(r = abc::parse(src, abc::ParseMode::Lenient));
    REQUIRE((r.ok() || abc::has_errors(r.diagnostics)));
    for (const abc::Diagnostic& d : r.diagnostics) {
      REQUIRE(d.line >= 1);
      REQUIRE(d.column >= 1);
    }
    if (r.ok()) {
      ++scores;
      // Lowering may reject absurd scores, but only with domain errors.
      try {
        auto lowered = midi::lower(*r.score);
        (void)midi::write_smf(lowered.sequence);
      } catch (const Error&) {
      }
      auto again = abc::parse(abc::to_abc(*r.score));
      REQUIRE(again.ok());
      CHECK(*again.score == *r.score);
    }
  }
  MESSAGE("inputs yielding a score: " << scores);
}
