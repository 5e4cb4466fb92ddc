#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <sstream>
#include <string>

#include "i2m/abc.h"

namespace i2m::abc {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> words(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

bool parse_int(std::string_view s, std::int64_t& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool valid_meter_denominator(std::int64_t d) {
  return d == 1 || d == 2 || d == 4 || d == 8 || d == 16 || d == 32;
}

// Returns nullopt for free meter ("none" or empty).
std::optional<Meter> parse_meter(std::string_view value) {
  std::string v = lower(value);
  v.erase(std::remove_if(v.begin(), v.end(), [](unsigned char c) { return std::isspace(c); }),
          v.end());
  if (v.empty() || v == "none") return std::nullopt;
  if (v == "c") return Meter{4, 4};
  if (v == "c|") return Meter{2, 2};
  std::size_t slash = v.find('/');
  if (slash == std::string::npos) throw Error("BAD_METER", "meter must look like n/d");
  std::string num = v.substr(0, slash);
  std::string den = v.substr(slash + 1);
  num.erase(std::remove(num.begin(), num.end(), '('), num.end());
  num.erase(std::remove(num.begin(), num.end(), ')'), num.end());
  std::int64_t n = 0;
  std::size_t start = 0;
  while (start <= num.size()) {
    std::size_t plus = num.find('+', start);
    if (plus == std::string::npos) plus = num.size();
    std::int64_t part = 0;
    if (!parse_int(std::string_view(num).substr(start, plus - start), part) || part < 1 ||
        part > 64) {
      throw Error("BAD_METER", "bad meter numerator '" + num + "'");
    }
    n += part;
    start = plus + 1;
  }
  std::int64_t d = 0;
  if (!parse_int(den, d) || !valid_meter_denominator(d)) {
    throw Error("BAD_METER", "meter denominator must be one of 1,2,4,8,16,32");
  }
  if (n > 64) throw Error("BAD_METER", "meter numerator too large");
  return Meter{static_cast<int>(n), static_cast<int>(d)};
}

Rational parse_fraction(std::string_view v, const char* code) {
  std::string s(v);
  s.erase(std::remove_if(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); }),
          s.end());
  std::size_t slash = s.find('/');
  std::int64_t n = 0;
  std::int64_t d = 1;
  bool ok = slash == std::string::npos
                ? parse_int(s, n)
                : parse_int(std::string_view(s).substr(0, slash), n) &&
                      parse_int(std::string_view(s).substr(slash + 1), d);
  if (!ok || n <= 0 || d <= 0 || n > 1000000 || d > 1000000) {
    throw Error(code, "expected a positive fraction, got '" + s + "'");
  }
  return Rational(n, d);
}

Rational parse_unit_length(std::string_view value) {
  Rational r = parse_fraction(value, "BAD_UNIT_LENGTH");
  if (r < Rational(1, 64) || r > Rational(1)) {
    throw Error("BAD_UNIT_LENGTH", "unit length must lie between 1/64 and 1/1");
  }
  return r;
}

// Q: field in any of the common forms: "1/4=120", "3/8=60", "\"Allegro\" 1/4=140",
// "C=120" (old: unit-length beats) or a bare number (taken as quarter notes per minute).
double parse_tempo(std::string_view value, const Rational& unit) {
  std::string v;
  bool in_quote = false;
  for (char c : value) {
    if (c == '"') {
      in_quote = !in_quote;
      continue;
    }
    if (!in_quote) v += c;
  }
  std::size_t eq = v.find('=');
  std::string rhs = eq == std::string::npos ? v : v.substr(eq + 1);
  std::vector<std::string> rhs_words = words(rhs);
  if (rhs_words.empty()) throw Error("BAD_TEMPO", "no tempo value");
  double bpm = 0.0;
  const std::string& num = rhs_words.front();
  auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), bpm);
  if (ec != std::errc() || ptr != num.data() + num.size() || !(bpm > 0.0) || bpm > 10000.0) {
    throw Error("BAD_TEMPO", "bad tempo value '" + num + "'");
  }
  if (eq == std::string::npos) return bpm;
  Rational beat(0);
  std::vector<std::string> lhs = words(v.substr(0, eq));
  for (const std::string& w : lhs) {
    if (w == "C" || w == "c") {
      beat += unit;
    } else {
      beat += parse_fraction(w, "BAD_TEMPO");
    }
  }
  if (beat == Rational(0)) throw Error("BAD_TEMPO", "missing beat length before '='");
  return bpm * beat.to_double() * 4.0;
}

struct ParsedKey {
  KeySignature key;
  bool ignored_accidentals = false;
};

ParsedKey parse_key(std::string_view value) {
  ParsedKey out;
  std::vector<std::string> ws = words(value);
  if (ws.empty()) {
    out.key = make_key('C', Accidental::None, Mode::Major);
    return out;
  }
  std::size_t next = 1;
  const std::string& head = ws.front();
  std::string head_l = lower(head);
  if (head_l == "none" || head_l == "hp" || head.find('=') != std::string::npos) {
    out.key = make_key('C', Accidental::None, Mode::Major);
    next = head.find('=') != std::string::npos ? 0 : 1;
  } else {
    char tonic = static_cast<char>(std::toupper(static_cast<unsigned char>(head[0])));
    if (tonic < 'A' || tonic > 'G') throw Error("BAD_KEY", "unrecognized key '" + head + "'");
    std::size_t i = 1;
    Accidental acc = Accidental::None;
    if (i < head.size() && head[i] == '#') {
      acc = Accidental::Sharp;
      ++i;
    } else if (i < head.size() && head[i] == 'b') {
      acc = Accidental::Flat;
      ++i;
    }
    std::string mode_str = lower(std::string_view(head).substr(i));
    if (mode_str.empty() && ws.size() > 1) {
      // "K:A minor" style: mode as a separate word.
      std::string cand = lower(ws[1]);
      static const char* kModes[] = {"maj", "min", "ion", "aeo", "mix", "dor", "phr", "lyd", "loc", "m"};
      for (const char* m : kModes) {
        if (cand == m || (std::string(m).size() == 3 && cand.rfind(m, 0) == 0)) {
          mode_str = cand;
          next = 2;
          break;
        }
      }
    }
    Mode mode = Mode::Major;
    std::string m3 = mode_str.substr(0, 3);
    if (mode_str.empty() || m3 == "maj" || m3 == "ion") {
      mode = Mode::Major;
    } else if (mode_str == "m" || m3 == "min" || m3 == "aeo") {
      mode = Mode::Minor;
    } else if (m3 == "dor") {
      mode = Mode::Dorian;
    } else if (m3 == "phr") {
      mode = Mode::Phrygian;
    } else if (m3 == "lyd") {
      mode = Mode::Lydian;
    } else if (m3 == "mix") {
      mode = Mode::Mixolydian;
    } else if (m3 == "loc") {
      mode = Mode::Locrian;
    } else {
      throw Error("BAD_KEY", "unrecognized mode '" + mode_str + "'");
    }
    out.key = make_key(tonic, acc, mode);
  }
  for (std::size_t i = next; i < ws.size(); ++i) {
    const std::string& w = ws[i];
    if (w.find('=') != std::string::npos && w[0] != '=') continue;  // clef=, octave=, ...
    if (w == "exp" || w[0] == '^' || w[0] == '_' || w[0] == '=') {
      out.ignored_accidentals = true;
      continue;
    }
    // Unknown trailing words (clef names like "treble", "bass") are ignored.
  }
  return out;
}

int default_tuplet_q(int p) {
  switch (p) {
    case 2: return 3;
    case 3: return 2;
    case 4: return 3;
    case 6: return 2;
    case 8: return 3;
    default: return 2;
  }
}

class Parser {
 public:
  Parser(std::string_view source, ParseMode mode) : source_(source), mode_(mode) {
    score_.key = make_key('C', Accidental::None, Mode::Major);
  }

  ParseResult run() {
    TokenizeResult tr = tokenize(source_);
    diags_ = std::move(tr.diagnostics);
    for (const Token& t : tr.tokens) {
      if (stopped_) break;
      if (chord_open_ && t.line != chord_pos_.line) close_unbalanced_chord();
      if (phase_ == Phase::Header) {
        header_token(t);
      } else {
        body_token(t);
      }
    }
    if (chord_open_) close_unbalanced_chord();
    finish();
    std::stable_sort(diags_.begin(), diags_.end(), [](const Diagnostic& a, const Diagnostic& b) {
      return std::tie(a.line, a.column) < std::tie(b.line, b.column);
    });
    ParseResult result;
    if (!has_errors(diags_)) result.score = std::move(score_);
    result.diagnostics = std::move(diags_);
    return result;
  }

 private:
  enum class Phase { Header, Body };

  void error(const Token& t, std::string code, std::string message) {
    diags_.push_back({Severity::Error, t.line, t.column, std::move(code), std::move(message)});
  }
  void warning(const Token& t, std::string code, std::string message) {
    diags_.push_back({Severity::Warning, t.line, t.column, std::move(code), std::move(message)});
  }
  // Unsupported construct: warning in lenient mode, error in strict mode.
  void unsupported(const Token& t, std::string code, const std::string& what) {
    if (mode_ == ParseMode::Strict) {
      error(t, std::move(code), what + " not supported in strict mode");
    } else {
      warning(t, std::move(code), what + " skipped");
    }
  }

  void header_token(const Token& t) {
    if (t.kind == TokenKind::Lyrics) {
      unsupported(t, "LYRICS", "lyrics line");
      return;
    }
    if (t.kind != TokenKind::Field) {
      diags_.push_back({Severity::Error, t.line, 1, "MISSING_KEY",
                        "tune body starts before any K: header"});
      missing_key_reported_ = true;
      enter_body();
      body_token(t);
      return;
    }
    try {
      switch (t.field) {
        case 'X': {
          if (seen_x_) {
            warning(t, "MULTIPLE_TUNES", "only the first tune is used");
            stopped_ = true;
            return;
          }
          seen_x_ = true;
          std::int64_t n = 0;
          if (parse_int(t.value, n) && n >= 0 && n <= 1000000000) {
            score_.index = static_cast<int>(n);
          } else {
            warning(t, "BAD_INDEX", "X: header is not a number; using 1");
          }
          break;
        }
        case 'T':
          if (!score_.title && !t.value.empty()) score_.title = t.value;
          break;
        case 'M': {
          std::optional<Meter> m = parse_meter(t.value);
          if (!m) warning(t, "FREE_METER", "free meter treated as 4/4");
          score_.meter = m.value_or(Meter{4, 4});
          seen_meter_ = true;
          break;
        }
        case 'L':
          score_.unit_length = parse_unit_length(t.value);
          seen_unit_ = true;
          break;
        case 'Q':
          pending_tempo_ = t;
          break;
        case 'V':
          declare_voice(t.value);
          break;
        case 'K': {
          ParsedKey k = parse_key(t.value);
          if (k.ignored_accidentals) warning(t, "KEY_ACCIDENTALS", "explicit key accidentals ignored");
          score_.key = k.key;
          key_seen_ = true;
          enter_body();
          break;
        }
        default:
          break;  // informational fields (C:, R:, Z:, N:, ...)
      }
    } catch (const Error& e) {
      error(t, e.code(), std::string(e.what()).substr(e.code().size() + 2));
    }
  }

  void enter_body() {
    phase_ = Phase::Body;
    if (!seen_unit_) score_.unit_length = default_unit_length(score_.meter);
    if (pending_tempo_) {
      try {
        score_.tempo_qpm = parse_tempo(pending_tempo_->value, score_.unit_length);
      } catch (const Error& e) {
        warning(*pending_tempo_, e.code(), "unreadable Q: field; using 120 qpm");
      }
    }
  }

  std::pair<std::string, std::optional<std::string>> voice_id(std::string_view value) {
    std::vector<std::string> ws = words(value);
    std::string id = ws.empty() ? std::string("1") : ws.front();
    std::optional<std::string> name;
    std::string v(value);
    std::size_t np = v.find("name=");
    if (np == std::string::npos) np = v.find("nm=");
    if (np != std::string::npos) {
      std::size_t q1 = v.find('"', np);
      std::size_t q2 = q1 == std::string::npos ? q1 : v.find('"', q1 + 1);
      if (q2 != std::string::npos) name = v.substr(q1 + 1, q2 - q1 - 1);
    }
    return {id, name};
  }

  int find_or_add_voice(const std::string& id, const std::optional<std::string>& name) {
    for (std::size_t i = 0; i < score_.voices.size(); ++i) {
      if (score_.voices[i].id == id) {
        if (name && !score_.voices[i].name) score_.voices[i].name = name;
        return static_cast<int>(i);
      }
    }
    score_.voices.push_back(VoiceBody{id, name, {}});
    return static_cast<int>(score_.voices.size()) - 1;
  }

  void declare_voice(std::string_view value) {
    auto [id, name] = voice_id(value);
    find_or_add_voice(id, name);
  }

  VoiceBody& voice() {
    if (current_voice_ < 0) {
      current_voice_ = score_.voices.empty() ? find_or_add_voice("1", std::nullopt) : 0;
    }
    return score_.voices[static_cast<std::size_t>(current_voice_)];
  }

  Rational duration_of(const Token& t) {
    if (t.bad_duration) {
      error(t, "BAD_DURATION", "note length '" + t.text + "' is not a positive number");
      return Rational(1);
    }
    return Rational(t.dur_num, t.dur_den);
  }

  void body_token(const Token& t) {
    switch (t.kind) {
      case TokenKind::Field:
        body_field(t);
        break;
      case TokenKind::Note: {
        NoteElem n;
        n.letter = t.letter;
        n.accidental = t.accidental;
        n.octave = t.octave;
        n.length = duration_of(t);
        n.pos = {t.line, t.column};
        if (chord_open_) {
          chord_.notes.push_back(n);
        } else {
          voice().elements.emplace_back(n);
        }
        break;
      }
      case TokenKind::Rest: {
        if (chord_open_) {
          warning(t, "REST_IN_CHORD", "rest inside chord ignored");
          break;
        }
        RestElem r;
        r.multi_measure = t.rest == RestKind::MultiMeasure;
        if (r.multi_measure && t.bad_duration) {
          error(t, "BAD_DURATION", "multi-measure rest count must be positive");
        }
        r.length = r.multi_measure ? Rational(t.bad_duration ? 1 : t.dur_num) : duration_of(t);
        r.pos = {t.line, t.column};
        voice().elements.emplace_back(r);
        break;
      }
      case TokenKind::ChordStart:
        if (chord_open_) {
          error(t, "UNBALANCED_CHORD", "chord opened inside another chord");
          break;
        }
        chord_open_ = true;
        chord_ = ChordElem{};
        chord_pos_ = {t.line, t.column};
        chord_.pos = chord_pos_;
        break;
      case TokenKind::ChordEnd:
        if (!chord_open_) {
          warning(t, "STRAY_BRACKET", "']' without matching '['");
          break;
        }
        chord_open_ = false;
        chord_.length = duration_of(t);
        if (chord_.notes.empty()) {
          warning(t, "EMPTY_CHORD", "empty chord ignored");
        } else {
          voice().elements.emplace_back(std::move(chord_));
        }
        break;
      case TokenKind::Tie:
        attach_tie(t);
        break;
      case TokenKind::Broken:
        if (chord_open_) {
          warning(t, "STRAY_BROKEN_RHYTHM", "broken rhythm inside chord ignored");
          break;
        }
        voice().elements.emplace_back(BrokenElem{t.broken_first_longer, t.number, {t.line, t.column}});
        break;
      case TokenKind::Tuplet: {
        if (t.number < 2 || t.number > 9) {
          error(t, "BAD_TUPLET", "tuplet size must be between 2 and 9");
          break;
        }
        if (chord_open_) {
          warning(t, "STRAY_TUPLET", "tuplet inside chord ignored");
          break;
        }
        TupletElem tu;
        tu.p = t.number;
        tu.q = t.tuplet_q > 0 ? t.tuplet_q : default_tuplet_q(t.number);
        tu.r = t.tuplet_r > 0 ? t.tuplet_r : t.number;
        if (tu.q > 9 || tu.r > 64) {
          error(t, "BAD_TUPLET", "tuplet ratio out of range");
          break;
        }
        tu.pos = {t.line, t.column};
        voice().elements.emplace_back(tu);
        break;
      }
      case TokenKind::Bar:
        if (chord_open_) close_unbalanced_chord();
        voice().elements.emplace_back(BarElem{t.bar, {t.line, t.column}});
        break;
      case TokenKind::Ending:
        if (t.number < 1) {
          warning(t, "BAD_ENDING", "ending number ignored");
          break;
        }
        voice().elements.emplace_back(EndingElem{t.number, {t.line, t.column}});
        break;
      case TokenKind::Decoration:
        unsupported(t, "DECORATION", "decoration '" + t.text + "'");
        break;
      case TokenKind::GraceGroup:
        unsupported(t, "GRACE_NOTES", "grace notes");
        break;
      case TokenKind::InlineField:
        unsupported(t, "INLINE_FIELD", "inline field '" + t.text + "'");
        break;
      case TokenKind::Lyrics:
        unsupported(t, "LYRICS", "lyrics line");
        break;
      case TokenKind::Overlay:
        unsupported(t, "VOICE_OVERLAY", "voice overlay");
        break;
      case TokenKind::Slur:
      case TokenKind::Annotation:
      case TokenKind::Unknown:  // already reported by the tokenizer
        break;
    }
  }

  void attach_tie(const Token& t) {
    if (chord_open_) {
      if (chord_.notes.empty()) {
        warning(t, "STRAY_TIE", "tie without a preceding note");
      } else {
        chord_.notes.back().tie = true;
      }
      return;
    }
    if (current_voice_ >= 0 && !voice().elements.empty()) {
      Element& last = voice().elements.back();
      if (auto* n = std::get_if<NoteElem>(&last)) {
        n->tie = true;
        return;
      }
      if (auto* c = std::get_if<ChordElem>(&last)) {
        c->tie = true;
        return;
      }
    }
    warning(t, "STRAY_TIE", "tie without a preceding note");
  }

  void body_field(const Token& t) {
    try {
      switch (t.field) {
        case 'X':
          warning(t, "MULTIPLE_TUNES", "only the first tune is used");
          stopped_ = true;
          break;
        case 'K': {
          ParsedKey k = parse_key(t.value);
          if (k.ignored_accidentals) warning(t, "KEY_ACCIDENTALS", "explicit key accidentals ignored");
          voice().elements.emplace_back(KeyChangeElem{k.key});
          break;
        }
        case 'M': {
          std::optional<Meter> m = parse_meter(t.value);
          if (!m) warning(t, "FREE_METER", "free meter treated as 4/4");
          voice().elements.emplace_back(MeterChangeElem{m.value_or(Meter{4, 4})});
          break;
        }
        case 'L':
          voice().elements.emplace_back(UnitChangeElem{parse_unit_length(t.value)});
          break;
        case 'Q':
          warning(t, "TEMPO_CHANGE", "tempo changes inside the body are ignored");
          break;
        case 'V': {
          auto [id, name] = voice_id(t.value);
          current_voice_ = find_or_add_voice(id, name);
          break;
        }
        default:
          break;
      }
    } catch (const Error& e) {
      error(t, e.code(), std::string(e.what()).substr(e.code().size() + 2));
    }
  }

  void close_unbalanced_chord() {
    diags_.push_back({Severity::Error, chord_pos_.line, chord_pos_.column, "UNBALANCED_CHORD",
                      "'[' is not closed on the same line"});
    chord_open_ = false;
    chord_ = ChordElem{};
  }

  void finish() {
    if (!key_seen_) {
      if (missing_key_reported_) return;
      diags_.push_back({Severity::Error, 1, 1, "MISSING_KEY", "no K: header found"});
      return;
    }
    for (VoiceBody& v : score_.voices) drop_stray_broken(v);
    std::vector<VoiceBody> kept;
    for (VoiceBody& v : score_.voices) {
      bool has_music = std::any_of(v.elements.begin(), v.elements.end(),
                                   [](const Element& e) { return is_timed(e); });
      if (has_music) {
        kept.push_back(std::move(v));
      } else {
        diags_.push_back({Severity::Warning, last_line(), 1, "EMPTY_VOICE",
                          "voice '" + v.id + "' has no notes or rests and was dropped"});
      }
    }
    score_.voices = std::move(kept);
    if (score_.voices.empty()) {
      diags_.push_back({Severity::Error, last_line(), 1, "EMPTY_BODY", "tune has no notes or rests"});
    }
  }

  void drop_stray_broken(VoiceBody& v) {
    std::vector<Element> out;
    out.reserve(v.elements.size());
    for (std::size_t i = 0; i < v.elements.size(); ++i) {
      if (const auto* b = std::get_if<BrokenElem>(&v.elements[i])) {
        bool prev_ok = !out.empty() && is_timed(out.back()) &&
                       !std::get_if<BrokenElem>(&out.back());
        bool next_ok = i + 1 < v.elements.size() && is_timed(v.elements[i + 1]);
        if (!prev_ok || !next_ok) {
          diags_.push_back({Severity::Warning, b->pos.line, b->pos.column, "STRAY_BROKEN_RHYTHM",
                            "broken rhythm must sit between two notes"});
          continue;
        }
      }
      out.push_back(std::move(v.elements[i]));
    }
    v.elements = std::move(out);
  }

  int last_line() const {
    int lines = 1;
    for (char c : source_) lines += c == '\n';
    if (!source_.empty() && source_.back() == '\n') --lines;
    return std::max(lines, 1);
  }

  std::string_view source_;
  ParseMode mode_;
  Diagnostics diags_;
  AbcScore score_;
  Phase phase_ = Phase::Header;
  bool seen_x_ = false;
  bool seen_meter_ = false;
  bool seen_unit_ = false;
  bool key_seen_ = false;
  bool missing_key_reported_ = false;
  bool stopped_ = false;
  std::optional<Token> pending_tempo_;
  int current_voice_ = -1;
  bool chord_open_ = false;
  ChordElem chord_;
  SourcePos chord_pos_;
};

}  // namespace

bool is_timed(const Element& e) {
  return std::holds_alternative<NoteElem>(e) || std::holds_alternative<RestElem>(e) ||
         std::holds_alternative<ChordElem>(e);
}

bool has_errors(const Diagnostics& diags) {
  return std::any_of(diags.begin(), diags.end(),
                     [](const Diagnostic& d) { return d.severity == Severity::Error; });
}

std::string format_diagnostics(const Diagnostics& diags) {
  Diagnostics sorted = diags;
  std::stable_sort(sorted.begin(), sorted.end(), [](const Diagnostic& a, const Diagnostic& b) {
    return std::tie(a.line, a.column) < std::tie(b.line, b.column);
  });
  std::string out;
  for (const Diagnostic& d : sorted) {
    if (!out.empty()) out += '\n';
    if (d.severity == Severity::Warning) out += "warning: ";
    out += "line " + std::to_string(d.line) + ", col " + std::to_string(d.column) + ": [" + d.code +
           "] " + d.message;
  }
  return out;
}

ParseResult parse(std::string_view source, ParseMode mode) { return Parser(source, mode).run(); }

}  // namespace i2m::abc
