#include <charconv>
#include <string>

#include "i2m/abc.h"

namespace i2m::abc {

namespace {

std::string length_suffix(const Rational& r) {
  if (r == Rational(1)) return "";
  if (r.den() == 1) return std::to_string(r.num());
  if (r.num() == 1) return "/" + std::to_string(r.den());
  return std::to_string(r.num()) + "/" + std::to_string(r.den());
}

std::string accidental_str(Accidental a) {
  switch (a) {
    case Accidental::DoubleFlat: return "__";
    case Accidental::Flat: return "_";
    case Accidental::Natural: return "=";
    case Accidental::Sharp: return "^";
    case Accidental::DoubleSharp: return "^^";
    case Accidental::None: break;
  }
  return "";
}

std::string note_str(const NoteElem& n) {
  std::string s = accidental_str(n.accidental);
  if (n.octave >= 1) {
    s += static_cast<char>(n.letter - 'A' + 'a');
    s.append(static_cast<std::size_t>(n.octave - 1), '\'');
  } else {
    s += n.letter;
    s.append(static_cast<std::size_t>(-n.octave), ',');
  }
  s += length_suffix(n.length);
  if (n.tie) s += '-';
  return s;
}

std::string bar_str(BarKind k) {
  switch (k) {
    case BarKind::Single: return "|";
    case BarKind::Double: return "||";
    case BarKind::Final: return "|]";
    case BarKind::Start: return "[|";
    case BarKind::RepeatStart: return "|:";
    case BarKind::RepeatEnd: return ":|";
    case BarKind::RepeatBoth: return "::";
  }
  return "|";
}

std::string unit_str(const Rational& r) {
  return std::to_string(r.num()) + "/" + std::to_string(r.den());
}

std::string tempo_str(double qpm) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, qpm);
  return std::string(buf, ptr);
}

struct BodyWriter {
  std::string out;
  std::string line;
  int bars_on_line = 0;

  void token(const std::string& t, bool glue) {
    if (!line.empty() && !glue) line += ' ';
    line += t;
  }
  void field_line(const std::string& f) {
    flush();
    out += f + "\n";
  }
  void flush() {
    if (!line.empty()) out += line + "\n";
    line.clear();
    bars_on_line = 0;
  }
};

}  // namespace

std::string to_abc(const AbcScore& score) {
  std::string out = "X:" + std::to_string(score.index) + "\n";
  if (score.title) out += "T:" + *score.title + "\n";
  out += "M:" + std::to_string(score.meter.numerator) + "/" + std::to_string(score.meter.denominator) + "\n";
  out += "L:" + unit_str(score.unit_length) + "\n";
  out += "Q:1/4=" + tempo_str(score.tempo_qpm) + "\n";
  out += "K:" + score.key.str() + "\n";

  bool print_voice_headers =
      score.voices.size() > 1 || (score.voices.size() == 1 && (score.voices[0].id != "1" || score.voices[0].name));
  for (const VoiceBody& v : score.voices) {
    BodyWriter w;
    if (print_voice_headers) {
      std::string h = "V:" + v.id;
      if (v.name) h += " name=\"" + *v.name + "\"";
      w.field_line(h);
    }
    bool glue_next = false;
    for (const Element& e : v.elements) {
      bool glue = glue_next;
      glue_next = false;
      if (const auto* n = std::get_if<NoteElem>(&e)) {
        w.token(note_str(*n), glue);
      } else if (const auto* r = std::get_if<RestElem>(&e)) {
        if (r->multi_measure) {
          w.token(r->length == Rational(1) ? "Z" : "Z" + std::to_string(r->length.num()), glue);
        } else {
          w.token("z" + length_suffix(r->length), glue);
        }
      } else if (const auto* c = std::get_if<ChordElem>(&e)) {
        std::string s = "[";
        for (const NoteElem& m : c->notes) s += note_str(m);
        s += "]" + length_suffix(c->length);
        if (c->tie) s += '-';
        w.token(s, glue);
      } else if (const auto* b = std::get_if<BarElem>(&e)) {
        w.token(bar_str(b->kind), false);
        if (++w.bars_on_line >= 4) w.flush();
      } else if (const auto* en = std::get_if<EndingElem>(&e)) {
        w.token("[" + std::to_string(en->number), false);
      } else if (const auto* t = std::get_if<TupletElem>(&e)) {
        w.token("(" + std::to_string(t->p) + ":" + std::to_string(t->q) + ":" + std::to_string(t->r), glue);
        glue_next = true;
      } else if (const auto* br = std::get_if<BrokenElem>(&e)) {
        w.token(std::string(static_cast<std::size_t>(br->count), br->first_longer ? '>' : '<'), true);
        glue_next = true;
      } else if (const auto* k = std::get_if<KeyChangeElem>(&e)) {
        w.field_line("K:" + k->key.str());
      } else if (const auto* m = std::get_if<MeterChangeElem>(&e)) {
        w.field_line("M:" + std::to_string(m->meter.numerator) + "/" + std::to_string(m->meter.denominator));
      } else if (const auto* u = std::get_if<UnitChangeElem>(&e)) {
        w.field_line("L:" + unit_str(u->unit));
      }
    }
    w.flush();
    out += w.out;
  }
  return out;
}

}  // namespace i2m::abc
