// ABC notation front end: tokenizer, parser, diagnostics and canonical
// serialization for the single-tune subset a VLM is asked to emit.
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "i2m/rational.h"

namespace i2m::abc {

// ---------------------------------------------------------------------------
// Diagnostics

enum class Severity { Error, Warning };

struct Diagnostic {
  Severity severity = Severity::Error;
  int line = 1;    // 1-based
  int column = 1;  // 1-based, in bytes
  std::string code;
  std::string message;

  bool operator==(const Diagnostic&) const = default;
};

using Diagnostics = std::vector<Diagnostic>;

// One line per diagnostic, sorted by (line, column):
//   "line L, col C: [CODE] message"            for errors
//   "warning: line L, col C: [CODE] message"   for warnings
std::string format_diagnostics(const Diagnostics& diags);

bool has_errors(const Diagnostics& diags);

// ---------------------------------------------------------------------------
// Tokens

enum class TokenKind {
  Field,          // header or body field line, e.g. "K:G"
  Note,
  Rest,           // z, x, Z
  Bar,
  Ending,         // [1 |2 ...
  ChordStart,
  ChordEnd,
  Tie,
  Broken,         // > >> < <<
  Tuplet,
  Slur,
  Annotation,     // "..." chord symbol or text annotation
  Decoration,     // !..! +..+ ~ . H L M O P S T u v
  GraceGroup,     // {..}
  InlineField,    // [K:..] and friends
  Lyrics,         // w: / W:
  Overlay,        // &
  Unknown,
};

enum class Accidental : std::int8_t { None, DoubleFlat, Flat, Natural, Sharp, DoubleSharp };

enum class BarKind { Single, Double, Final, Start, RepeatStart, RepeatEnd, RepeatBoth };

enum class RestKind { Normal, Invisible, MultiMeasure };

struct Token {
  TokenKind kind = TokenKind::Unknown;
  int line = 1;
  int column = 1;
  std::string text;

  // Field: letter + value (comment stripped, trimmed).
  char field = 0;
  std::string value;

  // Note / rest payload.
  char letter = 0;  // 'A'..'G' (upper case) for notes
  Accidental accidental = Accidental::None;
  int octave = 0;   // 0 = C..B starting at middle C; lower-case letters +1
  std::int64_t dur_num = 1;
  std::int64_t dur_den = 1;
  bool has_duration = false;
  bool bad_duration = false;
  RestKind rest = RestKind::Normal;

  // Bar / ending / broken / tuplet payload.
  BarKind bar = BarKind::Single;
  int number = 0;               // ending number, broken count, tuplet p
  int tuplet_q = 0;             // 0 = defaulted
  int tuplet_r = 0;             // 0 = defaulted
  bool broken_first_longer = true;
  bool slur_open = true;
};

struct TokenizeResult {
  std::vector<Token> tokens;
  Diagnostics diagnostics;  // warnings only (UNKNOWN_TOKEN)
};

// Total: never throws on any input.
TokenizeResult tokenize(std::string_view source);

// ---------------------------------------------------------------------------
// Score model

struct Meter {
  int numerator = 4;
  int denominator = 4;
  bool operator==(const Meter&) const = default;
  double value() const { return static_cast<double>(numerator) / denominator; }
};

enum class Mode { Major, Minor, Dorian, Phrygian, Lydian, Mixolydian, Locrian };

struct KeySignature {
  char tonic = 'C';                          // 'A'..'G'
  Accidental tonic_accidental = Accidental::None;  // None, Sharp or Flat
  Mode mode = Mode::Major;
  // Semitone alteration per letter, indexed A..G (0..6); values in {-1,0,1}.
  std::array<int, 7> sharps_flats{};

  int alteration(char letter) const { return sharps_flats[static_cast<std::size_t>(letter - 'A')]; }
  // Position on the circle of fifths, -7..7.
  int fifths() const;
  std::string str() const;

  bool operator==(const KeySignature& o) const {
    return tonic == o.tonic && tonic_accidental == o.tonic_accidental && mode == o.mode;
  }
};

// Builds a key from tonic and mode; throws Error("BAD_KEY") when the
// signature would need more than seven accidentals.
KeySignature make_key(char tonic, Accidental tonic_accidental, Mode mode);

struct SourcePos {
  int line = 0;
  int column = 0;
};

struct NoteElem {
  char letter = 'C';
  Accidental accidental = Accidental::None;
  int octave = 0;
  Rational length{1};  // multiple of the unit length
  bool tie = false;
  SourcePos pos;

  bool operator==(const NoteElem& o) const {
    return letter == o.letter && accidental == o.accidental && octave == o.octave &&
           length == o.length && tie == o.tie;
  }
};

struct RestElem {
  Rational length{1};  // unit multiples; for multi-measure rests, the bar count
  bool multi_measure = false;
  SourcePos pos;
  bool operator==(const RestElem& o) const {
    return length == o.length && multi_measure == o.multi_measure;
  }
};

struct ChordElem {
  std::vector<NoteElem> notes;
  Rational length{1};  // suffix multiplier applied to the chord as a whole
  bool tie = false;
  SourcePos pos;
  bool operator==(const ChordElem& o) const {
    return notes == o.notes && length == o.length && tie == o.tie;
  }
};

struct BarElem {
  BarKind kind = BarKind::Single;
  SourcePos pos;
  bool operator==(const BarElem& o) const { return kind == o.kind; }
};

struct EndingElem {
  int number = 1;
  SourcePos pos;
  bool operator==(const EndingElem& o) const { return number == o.number; }
};

struct TupletElem {
  int p = 3;
  int q = 2;
  int r = 3;
  SourcePos pos;
  bool operator==(const TupletElem& o) const { return p == o.p && q == o.q && r == o.r; }
};

struct BrokenElem {
  bool first_longer = true;
  int count = 1;
  SourcePos pos;
  bool operator==(const BrokenElem& o) const {
    return first_longer == o.first_longer && count == o.count;
  }
};

struct KeyChangeElem {
  KeySignature key;
  bool operator==(const KeyChangeElem&) const = default;
};

struct MeterChangeElem {
  Meter meter;
  bool operator==(const MeterChangeElem&) const = default;
};

struct UnitChangeElem {
  Rational unit{1, 8};
  bool operator==(const UnitChangeElem&) const = default;
};

using Element = std::variant<NoteElem, RestElem, ChordElem, BarElem, EndingElem, TupletElem,
                             BrokenElem, KeyChangeElem, MeterChangeElem, UnitChangeElem>;

bool is_timed(const Element& e);

struct VoiceBody {
  std::string id;
  std::optional<std::string> name;
  std::vector<Element> elements;
  bool operator==(const VoiceBody&) const = default;
};

struct AbcScore {
  int index = 1;
  std::optional<std::string> title;
  Meter meter;
  Rational unit_length{1, 8};
  double tempo_qpm = 120.0;
  KeySignature key;
  std::vector<VoiceBody> voices;

  bool operator==(const AbcScore&) const = default;
};

// ---------------------------------------------------------------------------
// Parsing

enum class ParseMode { Strict, Lenient };

struct ParseResult {
  std::optional<AbcScore> score;  // present iff no error diagnostics
  Diagnostics diagnostics;        // errors and warnings in source order

  bool ok() const { return score.has_value(); }
};

ParseResult parse(std::string_view source, ParseMode mode = ParseMode::Lenient);

// Canonical ABC: LF line endings, headers X,T,M,L,Q,K then V blocks.
std::string to_abc(const AbcScore& score);

// Default unit length for a meter when L: is absent.
Rational default_unit_length(const Meter& meter);

}  // namespace i2m::abc
