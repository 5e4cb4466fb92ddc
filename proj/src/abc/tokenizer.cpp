#include <cctype>
#include <string>

#include "i2m/abc.h"

namespace i2m::abc {

namespace {

constexpr std::size_t kMaxDigits = 6;
constexpr int kMaxSlashes = 6;

bool is_note_letter(char c) { return (c >= 'A' && c <= 'G') || (c >= 'a' && c <= 'g'); }
bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_alpha(char c) { return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z'); }

bool is_decoration_char(char c) {
  switch (c) {
    case '~': case '.': case 'H': case 'L': case 'M': case 'O':
    case 'P': case 'S': case 'T': case 'u': case 'v':
      return true;
    default:
      return false;
  }
}

class LineScanner {
 public:
  LineScanner(std::string_view line, int line_no, TokenizeResult& out)
      : line_(line), line_no_(line_no), out_(out) {}

  void scan() {
    while (pos_ < line_.size()) {
      char c = line_[pos_];
      std::size_t start = pos_;
      if (c == ' ' || c == '\t' || c == '`' || c == 'y') {
        flush_unknown();
        ++pos_;
        continue;
      }
      if (c == '%') {
        flush_unknown();
        return;
      }
      if (c == '\\') {
        flush_unknown();
        ++pos_;
        continue;
      }
      if (c == '"') {
        if (!delimited(TokenKind::Annotation, '"')) unknown_rest();
        continue;
      }
      if (c == '!' || c == '+') {
        if (!delimited(TokenKind::Decoration, c)) {
          flush_unknown();
          ++pos_;
          add_unknown(start);
        }
        continue;
      }
      if (c == '{') {
        if (!delimited(TokenKind::GraceGroup, '}')) unknown_rest();
        continue;
      }
      if (is_decoration_char(c)) {
        ++pos_;
        emit(TokenKind::Decoration, start);
        continue;
      }
      if (c == '&') {
        ++pos_;
        emit(TokenKind::Overlay, start);
        continue;
      }
      if (c == '(') {
        if (pos_ + 1 < line_.size() && is_digit(line_[pos_ + 1])) {
          scan_tuplet();
        } else {
          ++pos_;
          Token& t = emit(TokenKind::Slur, start);
          t.slur_open = true;
        }
        continue;
      }
      if (c == ')') {
        ++pos_;
        Token& t = emit(TokenKind::Slur, start);
        t.slur_open = false;
        continue;
      }
      if (c == '-') {
        ++pos_;
        emit(TokenKind::Tie, start);
        continue;
      }
      if (c == '>' || c == '<') {
        while (pos_ < line_.size() && line_[pos_] == c) ++pos_;
        Token& t = emit(TokenKind::Broken, start);
        t.broken_first_longer = (c == '>');
        t.number = static_cast<int>(pos_ - start);
        continue;
      }
      if (c == '|' || c == ':') {
        scan_bar();
        continue;
      }
      if (c == '[') {
        scan_open_bracket();
        continue;
      }
      if (c == ']') {
        ++pos_;
        Token& t = emit(TokenKind::ChordEnd, start);
        scan_duration(t);
        t.text = std::string(line_.substr(start, pos_ - start));
        continue;
      }
      if (c == '^' || c == '_' || c == '=' || is_note_letter(c)) {
        scan_note();
        continue;
      }
      if (c == 'z' || c == 'x' || c == 'Z' || c == 'X') {
        scan_rest();
        continue;
      }
      // Anything else: accumulate into one unknown span.
      if (!unknown_open_) {
        unknown_open_ = true;
        unknown_start_ = pos_;
      }
      ++pos_;
      unknown_end_ = pos_;
    }
    flush_unknown();
  }

 private:
  Token& emit(TokenKind kind, std::size_t start) {
    flush_unknown();
    Token t;
    t.kind = kind;
    t.line = line_no_;
    t.column = static_cast<int>(start) + 1;
    t.text = std::string(line_.substr(start, pos_ - start));
    out_.tokens.push_back(std::move(t));
    return out_.tokens.back();
  }

  void add_unknown(std::size_t start) { add_unknown(start, pos_); }

  void add_unknown(std::size_t start, std::size_t end) {
    Token t;
    t.kind = TokenKind::Unknown;
    t.line = line_no_;
    t.column = static_cast<int>(start) + 1;
    t.text = std::string(line_.substr(start, end - start));
    out_.diagnostics.push_back({Severity::Warning, t.line, t.column, "UNKNOWN_TOKEN",
                                "unrecognized input skipped"});
    out_.tokens.push_back(std::move(t));
  }

  void flush_unknown() {
    if (!unknown_open_) return;
    unknown_open_ = false;
    add_unknown(unknown_start_, unknown_end_);
  }

  void unknown_rest() {
    std::size_t start = pos_;
    flush_unknown();
    pos_ = line_.size();
    add_unknown(start);
  }

  // Scans open..close on this line; returns false (consuming nothing) if the
  // closing delimiter is missing.
  bool delimited(TokenKind kind, char close) {
    std::size_t start = pos_;
    std::size_t end = line_.find(close, pos_ + 1);
    if (end == std::string_view::npos) return false;
    pos_ = end + 1;
    emit(kind, start);
    return true;
  }

  std::int64_t read_number(bool& overflow) {
    std::size_t begin = pos_;
    while (pos_ < line_.size() && is_digit(line_[pos_])) ++pos_;
    std::size_t len = pos_ - begin;
    if (len == 0) return -1;
    if (len > kMaxDigits) {
      overflow = true;
      return 0;
    }
    return std::stoll(std::string(line_.substr(begin, len)));
  }

  void scan_duration(Token& t) {
    std::size_t begin = pos_;
    bool overflow = false;
    std::int64_t num = read_number(overflow);
    std::int64_t den = 1;
    int slashes = 0;
    while (pos_ < line_.size() && line_[pos_] == '/') {
      ++slashes;
      ++pos_;
    }
    if (slashes > 0) {
      std::int64_t d = read_number(overflow);
      if (slashes > kMaxSlashes) {
        overflow = true;
      } else {
        den = (d < 0 ? 2 : d) * (std::int64_t{1} << (slashes - 1));
      }
    }
    t.has_duration = pos_ > begin;
    t.dur_num = num < 0 ? 1 : num;
    t.dur_den = den;
    t.bad_duration = overflow || t.dur_num == 0 || t.dur_den == 0;
  }

  void scan_octave(Token& t) {
    while (pos_ < line_.size() && (line_[pos_] == '\'' || line_[pos_] == ',')) {
      t.octave += line_[pos_] == '\'' ? 1 : -1;
      ++pos_;
    }
  }

  void scan_note() {
    std::size_t start = pos_;
    Accidental acc = Accidental::None;
    char c = line_[pos_];
    if (c == '^') {
      ++pos_;
      acc = Accidental::Sharp;
      if (pos_ < line_.size() && line_[pos_] == '^') {
        ++pos_;
        acc = Accidental::DoubleSharp;
      }
    } else if (c == '_') {
      ++pos_;
      acc = Accidental::Flat;
      if (pos_ < line_.size() && line_[pos_] == '_') {
        ++pos_;
        acc = Accidental::DoubleFlat;
      }
    } else if (c == '=') {
      ++pos_;
      acc = Accidental::Natural;
    }
    if (pos_ >= line_.size() || !is_note_letter(line_[pos_])) {
      add_unknown_span(start);
      return;
    }
    char letter = line_[pos_++];
    Token& t = emit(TokenKind::Note, start);
    t.accidental = acc;
    t.letter = static_cast<char>(std::toupper(static_cast<unsigned char>(letter)));
    t.octave = std::islower(static_cast<unsigned char>(letter)) ? 1 : 0;
    scan_octave(t);
    scan_duration(t);
    t.text = std::string(line_.substr(start, pos_ - start));
  }

  void add_unknown_span(std::size_t start) {
    flush_unknown();
    add_unknown(start);
  }

  void scan_rest() {
    std::size_t start = pos_;
    char c = line_[pos_++];
    Token& t = emit(TokenKind::Rest, start);
    if (c == 'Z' || c == 'X') {
      t.rest = RestKind::MultiMeasure;
      bool overflow = false;
      std::int64_t n = read_number(overflow);
      t.has_duration = n >= 0 || overflow;
      t.dur_num = n < 0 ? 1 : n;
      t.bad_duration = overflow || t.dur_num == 0;
    } else {
      t.rest = c == 'x' ? RestKind::Invisible : RestKind::Normal;
      scan_duration(t);
    }
    t.text = std::string(line_.substr(start, pos_ - start));
  }

  void scan_tuplet() {
    std::size_t start = pos_;
    ++pos_;  // '('
    bool overflow = false;
    std::int64_t p = read_number(overflow);
    std::int64_t q = 0;
    std::int64_t r = 0;
    if (pos_ < line_.size() && line_[pos_] == ':') {
      ++pos_;
      q = read_number(overflow);
      if (pos_ < line_.size() && line_[pos_] == ':') {
        ++pos_;
        r = read_number(overflow);
      }
    }
    Token& t = emit(TokenKind::Tuplet, start);
    t.number = overflow ? 0 : static_cast<int>(p);
    t.tuplet_q = q < 0 || overflow ? 0 : static_cast<int>(q);
    t.tuplet_r = r < 0 || overflow ? 0 : static_cast<int>(r);
  }

  void scan_ending_number(Token& t) {
    bool overflow = false;
    std::int64_t n = read_number(overflow);
    t.number = overflow || n < 0 ? 0 : static_cast<int>(n);
    // Lists such as [1,3 or ranges [1-2 keep only the first number.
    while (pos_ < line_.size() &&
           (line_[pos_] == ',' || line_[pos_] == '-') && pos_ + 1 < line_.size() &&
           is_digit(line_[pos_ + 1])) {
      ++pos_;
      read_number(overflow);
    }
  }

  void scan_bar() {
    std::size_t start = pos_;
    while (pos_ < line_.size() && (line_[pos_] == '|' || line_[pos_] == ':')) ++pos_;
    std::string_view run = line_.substr(start, pos_ - start);
    if (run.back() == '|' && pos_ < line_.size() && line_[pos_] == ']') ++pos_;
    std::size_t first_bar = run.find('|');
    if (first_bar == std::string_view::npos && run.size() < 2) {
      add_unknown_span(start);
      return;
    }
    BarKind kind;
    if (first_bar == std::string_view::npos) {
      kind = BarKind::RepeatBoth;
    } else {
      std::size_t last_bar = run.rfind('|');
      bool leading = first_bar > 0;
      bool trailing = last_bar + 1 < run.size();
      if (leading && trailing) {
        kind = BarKind::RepeatBoth;
      } else if (leading) {
        kind = BarKind::RepeatEnd;
      } else if (trailing) {
        kind = BarKind::RepeatStart;
      } else if (pos_ > start + run.size()) {
        kind = BarKind::Final;
      } else if (run.size() >= 2) {
        kind = BarKind::Double;
      } else {
        kind = BarKind::Single;
      }
    }
    Token& t = emit(TokenKind::Bar, start);
    t.bar = kind;
    if (pos_ < line_.size() && is_digit(line_[pos_])) {
      std::size_t es = pos_;
      Token e;
      e.kind = TokenKind::Ending;
      e.line = line_no_;
      e.column = static_cast<int>(es) + 1;
      scan_ending_number(e);
      e.text = std::string(line_.substr(es, pos_ - es));
      out_.tokens.push_back(std::move(e));
    }
  }

  void scan_open_bracket() {
    std::size_t start = pos_;
    char next = pos_ + 1 < line_.size() ? line_[pos_ + 1] : '\0';
    if (next == '|') {
      pos_ += 2;
      if (pos_ < line_.size() && line_[pos_] == ']') ++pos_;
      Token& t = emit(TokenKind::Bar, start);
      t.bar = BarKind::Start;
      return;
    }
    if (is_digit(next)) {
      ++pos_;
      Token& t = emit(TokenKind::Ending, start);
      scan_ending_number(t);
      t.text = std::string(line_.substr(start, pos_ - start));
      return;
    }
    if (is_alpha(next) && pos_ + 2 < line_.size() && line_[pos_ + 2] == ':') {
      std::size_t end = line_.find(']', pos_);
      if (end == std::string_view::npos) {
        unknown_rest();
        return;
      }
      pos_ = end + 1;
      Token& t = emit(TokenKind::InlineField, start);
      t.field = next;
      return;
    }
    ++pos_;
    emit(TokenKind::ChordStart, start);
  }

  std::string_view line_;
  int line_no_;
  TokenizeResult& out_;
  std::size_t pos_ = 0;
  bool unknown_open_ = false;
  std::size_t unknown_start_ = 0;
  std::size_t unknown_end_ = 0;
};

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

TokenizeResult tokenize(std::string_view source) {
  TokenizeResult out;
  std::size_t begin = 0;
  int line_no = 0;
  while (begin <= source.size()) {
    std::size_t end = source.find('\n', begin);
    if (end == std::string_view::npos) end = source.size();
    std::string_view line = source.substr(begin, end - begin);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    if (line.size() >= 2 && is_alpha(line[0]) && line[1] == ':') {
      Token t;
      t.line = line_no;
      t.column = 1;
      t.text = std::string(line);
      t.field = line[0];
      std::string_view value = line.substr(2);
      std::size_t pct = value.find('%');
      if (pct != std::string_view::npos) value = value.substr(0, pct);
      t.value = trim(value);
      t.kind = (t.field == 'w' || t.field == 'W') ? TokenKind::Lyrics : TokenKind::Field;
      out.tokens.push_back(std::move(t));
    } else if (!line.empty() && line[0] != '%') {
      LineScanner(line, line_no, out).scan();
    }

    if (end == source.size()) break;
    begin = end + 1;
  }
  return out;
}

}  // namespace i2m::abc
