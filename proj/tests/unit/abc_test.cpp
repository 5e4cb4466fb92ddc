#include <algorithm>

#include "doctest.h"
#include "i2m/abc.h"
#include "support.h"

using namespace i2m::abc;

namespace {

bool has_code(const Diagnostics& d, const std::string& code) {
  return std::any_of(d.begin(), d.end(), [&](const Diagnostic& x) { return x.code == code; });
}

const Diagnostic* find_code(const Diagnostics& d, const std::string& code) {
  auto it = std::find_if(d.begin(), d.end(), [&](const Diagnostic& x) { return x.code == code; });
  return it == d.end() ? nullptr : &*it;
}

std::size_t count_notes(const VoiceBody& v) {
  return static_cast<std::size_t>(std::count_if(v.elements.begin(), v.elements.end(), [](const Element& e) {
    return std::holds_alternative<NoteElem>(e);
  }));
}

}  // namespace

TEST_CASE("tokenize plain notes") {
  auto r = tokenize("CDEF");
  REQUIRE(r.tokens.size() == 4);
  const char letters[] = {'C', 'D', 'E', 'F'};
  for (int i = 0; i < 4; ++i) {
    CHECK(r.tokens[i].kind == TokenKind::Note);
    CHECK(r.tokens[i].letter == letters[i]);
    CHECK_FALSE(r.tokens[i].has_duration);
  }
  CHECK(r.diagnostics.empty());
}

TEST_CASE("tokenize note with accidental, octave and length") {
  auto r = tokenize("^c'2");
  REQUIRE(r.tokens.size() == 1);
  const Token& t = r.tokens[0];
  CHECK(t.kind == TokenKind::Note);
  CHECK(t.letter == 'C');
  CHECK(t.accidental == Accidental::Sharp);
  CHECK(t.octave == 2);
  CHECK(t.has_duration);
  CHECK(t.dur_num == 2);
  CHECK(t.dur_den == 1);
  CHECK(t.column == 1);
}

TEST_CASE("tokenize empty input") {
  auto r = tokenize("");
  CHECK(r.tokens.empty());
  CHECK(r.diagnostics.empty());
}

TEST_CASE("tokenize duration forms") {
  auto r = tokenize("C/ D// E3/2 F/4 G2/");
  REQUIRE(r.tokens.size() == 5);
  CHECK(r.tokens[0].dur_num == 1);
  CHECK(r.tokens[0].dur_den == 2);
  CHECK(r.tokens[1].dur_den == 4);
  CHECK(r.tokens[2].dur_num == 3);
  CHECK(r.tokens[2].dur_den == 2);
  CHECK(r.tokens[3].dur_den == 4);
  CHECK(r.tokens[4].dur_num == 2);
  CHECK(r.tokens[4].dur_den == 2);
}

TEST_CASE("tokenize bars, tuplets, broken rhythm, chords") {
  auto r = tokenize("|: (3:2:3 A>B [CE] :| || |] [1 C :: D");
  std::vector<TokenKind> kinds;
  for (const auto& t : r.tokens) kinds.push_back(t.kind);
  std::vector<TokenKind> expect = {TokenKind::Bar, TokenKind::Tuplet, TokenKind::Note, TokenKind::Broken,
                                   TokenKind::Note, TokenKind::ChordStart, TokenKind::Note, TokenKind::Note,
                                   TokenKind::ChordEnd, TokenKind::Bar, TokenKind::Bar, TokenKind::Bar,
                                   TokenKind::Ending, TokenKind::Note, TokenKind::Bar, TokenKind::Note};
  CHECK(kinds == expect);
  CHECK(r.tokens[0].bar == BarKind::RepeatStart);
  CHECK(r.tokens[1].number == 3);
  CHECK(r.tokens[1].tuplet_q == 2);
  CHECK(r.tokens[1].tuplet_r == 3);
  CHECK(r.tokens[9].bar == BarKind::RepeatEnd);
  CHECK(r.tokens[10].bar == BarKind::Double);
  CHECK(r.tokens[11].bar == BarKind::Final);
  CHECK(r.tokens[12].number == 1);
  CHECK(r.tokens[14].bar == BarKind::RepeatBoth);
}

TEST_CASE("tokenize header fields and comments") {
  auto r = tokenize("X:1 % index\nT: Title \n% whole-line comment\nK:G\n");
  REQUIRE(r.tokens.size() == 3);
  CHECK(r.tokens[0].field == 'X');
  CHECK(r.tokens[0].value == "1");
  CHECK(r.tokens[1].value == "Title");
  CHECK(r.tokens[2].line == 4);
}

TEST_CASE("tokenize decorations as warning tokens") {
  auto r = tokenize("!trill!C ~D {g}E \"Am\"F");
  int deco = 0, grace = 0, anno = 0;
  for (const auto& t : r.tokens) {
    deco += t.kind == TokenKind::Decoration;
    grace += t.kind == TokenKind::GraceGroup;
    anno += t.kind == TokenKind::Annotation;
  }
  CHECK(deco == 2);
  CHECK(grace == 1);
  CHECK(anno == 1);
}

TEST_CASE("tokenize unknown characters merge into one warning") {
  auto r = tokenize("C @@@ D");
  REQUIRE(r.diagnostics.size() == 1);
  CHECK(r.diagnostics[0].code == "UNKNOWN_TOKEN");
  CHECK(r.diagnostics[0].severity == Severity::Warning);
  CHECK(r.diagnostics[0].column == 3);
}

TEST_CASE("parse C major scale") {
  auto r = parse("X:1\nM:4/4\nL:1/8\nK:C\nCDEFGABc|");
  REQUIRE(r.ok());
  const AbcScore& s = *r.score;
  CHECK(s.index == 1);
  CHECK(s.meter == Meter{4, 4});
  CHECK(s.unit_length == i2m::Rational(1, 8));
  CHECK(s.tempo_qpm == 120.0);
  CHECK(s.key.tonic == 'C');
  REQUIRE(s.voices.size() == 1);
  CHECK(count_notes(s.voices[0]) == 8);
}

TEST_CASE("missing key reported at first body line") {
  auto r = parse("X:1\nM:4/4\nL:1/8\nCDEF|");
  CHECK_FALSE(r.ok());
  const Diagnostic* d = find_code(r.diagnostics, "MISSING_KEY");
  REQUIRE(d != nullptr);
  CHECK(d->line == 4);
  CHECK(d->severity == Severity::Error);
  CHECK(std::count_if(r.diagnostics.begin(), r.diagnostics.end(),
                      [](const Diagnostic& x) { return x.code == "MISSING_KEY"; }) == 1);
}

TEST_CASE("missing key with empty body") {
  auto r = parse("X:1\nT:nothing\n");
  CHECK_FALSE(r.ok());
  CHECK(has_code(r.diagnostics, "MISSING_KEY"));
}

TEST_CASE("grace notes: lenient skips, strict rejects") {
  auto lenient = parse("X:1\nK:C\n{gc}C|", ParseMode::Lenient);
  REQUIRE(lenient.ok());
  CHECK(count_notes(lenient.score->voices[0]) == 1);
  REQUIRE(lenient.diagnostics.size() == 1);
  CHECK(lenient.diagnostics[0].severity == Severity::Warning);

  auto strict = parse("X:1\nK:C\n{gc}C|", ParseMode::Strict);
  CHECK_FALSE(strict.ok());
  CHECK(has_errors(strict.diagnostics));
}

TEST_CASE("decorations: lenient skips, strict rejects") {
  CHECK(parse("X:1\nK:C\n!trill!C ~D .E|").ok());
  CHECK_FALSE(parse("X:1\nK:C\n!trill!C|", ParseMode::Strict).ok());
}

TEST_CASE("bad duration") {
  auto r = parse("X:1\nK:C\nC0 D|");
  CHECK_FALSE(r.ok());
  const Diagnostic* d = find_code(r.diagnostics, "BAD_DURATION");
  REQUIRE(d != nullptr);
  CHECK(d->line == 3);
  CHECK(d->column == 1);
}

TEST_CASE("unbalanced chord") {
  CHECK(has_code(parse("X:1\nK:C\n[CEG|").diagnostics, "UNBALANCED_CHORD"));
  CHECK(has_code(parse("X:1\nK:C\n[CE\nG]").diagnostics, "UNBALANCED_CHORD"));
  CHECK(has_code(parse("X:1\nK:C\n[CE[G]]").diagnostics, "UNBALANCED_CHORD"));
}

TEST_CASE("bad tuplet") {
  CHECK(has_code(parse("X:1\nK:C\n(1C D|").diagnostics, "BAD_TUPLET"));
  auto ok = parse("X:1\nK:C\n(9CDEFGABcd|");
  CHECK(ok.ok());
}

TEST_CASE("default unit length follows the meter") {
  CHECK(default_unit_length(Meter{2, 4}) == i2m::Rational(1, 16));
  CHECK(default_unit_length(Meter{3, 4}) == i2m::Rational(1, 8));
  CHECK(default_unit_length(Meter{4, 4}) == i2m::Rational(1, 8));
  auto r = parse("X:1\nM:2/4\nK:C\nC|");
  REQUIRE(r.ok());
  CHECK(r.score->unit_length == i2m::Rational(1, 16));
}

TEST_CASE("header defaults and tempo forms") {
  auto r = parse("X:3\nT:Tune\nK:D\nD|");
  REQUIRE(r.ok());
  CHECK(r.score->index == 3);
  CHECK(r.score->title == "Tune");
  CHECK(r.score->meter == Meter{4, 4});
  CHECK(r.score->tempo_qpm == 120.0);
  CHECK(parse("X:1\nQ:1/4=90\nK:C\nC|").score->tempo_qpm == 90.0);
  CHECK(parse("X:1\nQ:1/8=180\nK:C\nC|").score->tempo_qpm == 90.0);
  CHECK(parse("X:1\nQ:3/8=60\nK:C\nC|").score->tempo_qpm == doctest::Approx(90.0));
  CHECK(parse("X:1\nQ:\"Allegro\" 1/4=132\nK:C\nC|").score->tempo_qpm == 132.0);
}

TEST_CASE("meter forms") {
  CHECK(parse("X:1\nM:C\nK:C\nC|").score->meter == Meter{4, 4});
  CHECK(parse("X:1\nM:C|\nK:C\nC|").score->meter == Meter{2, 2});
  CHECK(parse("X:1\nM:6/8\nK:C\nC|").score->meter == Meter{6, 8});
  CHECK_FALSE(parse("X:1\nM:3/5\nK:C\nC|").ok());
  CHECK_FALSE(parse("X:1\nM:0/4\nK:C\nC|").ok());
}

TEST_CASE("key signatures from the circle of fifths") {
  struct Case {
    const char* field;
    int fifths;
  };
  const Case cases[] = {{"C", 0},   {"G", 1},    {"D", 2},  {"A", 3},    {"E", 4},   {"B", 5},
                        {"F#", 6},  {"C#", 7},   {"F", -1}, {"Bb", -2},  {"Eb", -3}, {"Ab", -4},
                        {"Db", -5}, {"Gb", -6},  {"Cb", -7}, {"Am", 0},  {"Em", 1},  {"Dm", -1},
                        {"F#m", 3}, {"Bbm", -5}, {"D dor", 0}, {"G mix", 0}, {"F lyd", 0}, {"E phr", 0},
                        {"B loc", 0}, {"A minor", 0}, {"C major", 0}};
  for (const Case& c : cases) {
    CAPTURE(c.field);
    auto r = parse(std::string("X:1\nK:") + c.field + "\nC|");
    REQUIRE(r.ok());
    CHECK(r.score->key.fifths() == c.fifths);
    int altered = 0;
    for (int a : r.score->key.sharps_flats) altered += a != 0;
    CHECK(altered == std::abs(c.fifths));
  }
  auto g = parse("X:1\nK:G\nC|").score->key;
  CHECK(g.alteration('F') == 1);
  CHECK(g.alteration('C') == 0);
  auto f = parse("X:1\nK:F\nC|").score->key;
  CHECK(f.alteration('B') == -1);
}

TEST_CASE("key beyond seven accidentals is rejected") {
  CHECK_FALSE(parse("X:1\nK:G#\nC|").ok());
}

TEST_CASE("voices") {
  auto r = parse("X:1\nL:1/8\nV:1 name=\"Upper\"\nV:2\nK:C\nV:1\nCDEF|\nV:2\nC,D,E,F,|\n");
  REQUIRE(r.ok());
  REQUIRE(r.score->voices.size() == 2);
  CHECK(r.score->voices[0].id == "1");
  CHECK(r.score->voices[0].name == "Upper");
  CHECK(r.score->voices[1].id == "2");
  CHECK(count_notes(r.score->voices[1]) == 4);
}

TEST_CASE("multiple tunes: first tune kept with a warning") {
  auto r = parse("X:1\nK:C\nCDE|\nX:2\nK:G\nGAB|\n");
  REQUIRE(r.ok());
  CHECK(has_code(r.diagnostics, "MULTIPLE_TUNES"));
  CHECK(count_notes(r.score->voices[0]) == 3);
}

TEST_CASE("empty body is an error") {
  auto r = parse("X:1\nK:C\n| |\n");
  CHECK_FALSE(r.ok());
  CHECK(has_code(r.diagnostics, "EMPTY_BODY"));
}

TEST_CASE("format diagnostics") {
  Diagnostics one = {{Severity::Error, 3, 5, "BAD_DURATION", "zero length"}};
  CHECK(format_diagnostics(one) == "line 3, col 5: [BAD_DURATION] zero length");

  Diagnostics two = {{Severity::Error, 4, 1, "B", "second"}, {Severity::Error, 2, 7, "A", "first"}};
  CHECK(format_diagnostics(two) == "line 2, col 7: [A] first\nline 4, col 1: [B] second");

  Diagnostics warn = {{Severity::Warning, 1, 2, "UNKNOWN_TOKEN", "skipped"}};
  CHECK(format_diagnostics(warn) == "warning: line 1, col 2: [UNKNOWN_TOKEN] skipped");
}

TEST_CASE("parse is deterministic") {
  const std::string src = "X:1\nM:6/8\nK:Em\n(3EFG A>B c2 [EGB]|z2 ^D- D E3|]";
  auto a = parse(src);
  auto b = parse(src);
  CHECK(a.score == b.score);
  CHECK(a.diagnostics == b.diagnostics);
}

TEST_CASE("error positions lie inside the source") {
  const char* sources[] = {"X:1\nK:C\nC0|", "X:1\nCDEF", "X:1\nK:C\n[CEG", "X:1\nK:C\n(1CD", "X:1\nM:9/7\nK:C\nC",
                           "X:1\nK:C\n\n\n[C\nE]"};
  for (const char* src : sources) {
    CAPTURE(src);
    std::string s = src;
    std::vector<std::size_t> line_len = {0};
    for (char c : s) {
      if (c == '\n') line_len.push_back(0);
      else ++line_len.back();
    }
    for (const Diagnostic& d : parse(s).diagnostics) {
      if (d.severity != Severity::Error) continue;
      REQUIRE(d.line >= 1);
      REQUIRE(static_cast<std::size_t>(d.line) <= line_len.size());
      CHECK(d.column >= 1);
      CHECK(static_cast<std::size_t>(d.column) <= line_len[static_cast<std::size_t>(d.line - 1)] + 1);
    }
  }
}

TEST_CASE("canonical serialization round trips the golden corpus") {
  int seen = 0;
  for (const auto& entry : std::filesystem::directory_iterator(test::data_dir() / "golden")) {
    if (entry.path().extension() != ".abc") continue;
    CAPTURE(entry.path().filename().string());
    auto first = parse(test::slurp(entry.path()));
    REQUIRE(first.ok());
    std::string text = to_abc(*first.score);
    auto second = parse(text);
    REQUIRE_MESSAGE(second.ok(), text);
    CHECK(*second.score == *first.score);
    CHECK(to_abc(*second.score) == text);
    ++seen;
  }
  CHECK(seen == 20);
}

TEST_CASE("canonical serialization header order") {
  auto r = parse("K:G\nT:t\nX:2\n");
  (void)r;
  auto s = parse("X:2\nT:Tune\nM:3/4\nL:1/4\nQ:1/4=100\nK:Am\nA B c|");
  REQUIRE(s.ok());
  std::string text = to_abc(*s.score);
  CHECK(text.rfind("X:2\nT:Tune\nM:3/4\nL:1/4\nQ:1/4=100\nK:Am\n", 0) == 0);
  CHECK(text.find('\r') == std::string::npos);
}

TEST_CASE("serialization keeps repeats, endings, tuplets, ties, body fields") {
  const std::string src =
      "X:1\nM:4/4\nL:1/8\nK:C\n|: (3CDE F>G A2-A2 | [1 c4 z4 :| [2 C8 |]\nK:G\nM:3/4\nL:1/4\nF G A | Z2 |\n";
  auto a = parse(src);
  REQUIRE(a.ok());
  auto b = parse(to_abc(*a.score));
  REQUIRE(b.ok());
  CHECK(*a.score == *b.score);
}
