#include <algorithm>
#include <map>
#include <tuple>

#include "i2m/midi.h"

namespace i2m::midi {

namespace {

using abc::Accidental;
using abc::Element;

constexpr int kLetterSemitone[7] = {9, 11, 0, 2, 4, 5, 7};  // A B C D E F G
constexpr std::int64_t kTicksPerWhole = 4 * kTicksPerQuarter;

struct RawEvent {
  Rational onset;
  Rational end;
  int pitch;
  abc::SourcePos pos;
};

struct PendingTie {
  std::size_t event;
  abc::SourcePos pos;
};

// Playback order of element indices with simple repeats and first/second
// endings expanded. Every repeated section plays exactly twice.
std::vector<std::size_t> playback_order(const std::vector<Element>& elems) {
  std::vector<std::size_t> order;
  std::size_t start = 0;
  int pass = 1;
  std::size_t i = 0;
  while (i < elems.size()) {
    if (const auto* b = std::get_if<abc::BarElem>(&elems[i])) {
      order.push_back(i);
      switch (b->kind) {
        case abc::BarKind::RepeatStart:
          start = i + 1;
          pass = 1;
          break;
        case abc::BarKind::RepeatEnd:
        case abc::BarKind::RepeatBoth:
          if (pass == 1) {
            pass = 2;
            i = start;
            continue;
          }
          pass = 1;
          start = i + 1;
          break;
        default:
          break;
      }
      ++i;
      continue;
    }
    if (const auto* en = std::get_if<abc::EndingElem>(&elems[i])) {
      if (pass == 2 && en->number == 1) {
        std::size_t j = i + 1;
        while (j < elems.size()) {
          const auto* other = std::get_if<abc::EndingElem>(&elems[j]);
          if (other && other->number >= 2) break;
          ++j;
        }
        i = j;
        continue;
      }
      ++i;
      continue;
    }
    order.push_back(i);
    ++i;
  }
  return order;
}

Rational pow2_inverse(int count) {
  count = std::clamp(count, 1, 8);
  return Rational(1, std::int64_t{1} << count);
}

// Per-element multiplier from broken rhythm markers.
std::vector<Rational> broken_factors(const std::vector<Element>& elems) {
  std::vector<Rational> f(elems.size(), Rational(1));
  for (std::size_t i = 0; i < elems.size(); ++i) {
    const auto* b = std::get_if<abc::BrokenElem>(&elems[i]);
    if (!b || i == 0 || i + 1 >= elems.size()) continue;
    if (!abc::is_timed(elems[i - 1]) || !abc::is_timed(elems[i + 1])) continue;
    Rational shrt = pow2_inverse(b->count);
    Rational lng = Rational(2) - shrt;
    f[i - 1] *= b->first_longer ? lng : shrt;
    f[i + 1] *= b->first_longer ? shrt : lng;
  }
  return f;
}

class VoiceLowering {
 public:
  VoiceLowering(const abc::AbcScore& score, int voice, std::vector<NoteEvent>& out,
                abc::Diagnostics& warnings)
      : score_(score), voice_(voice), out_(out), warnings_(warnings) {
    key_ = score.key;
    unit_ = score.unit_length;
    meter_ = score.meter;
  }

  Rational run() {
    const auto& elems = score_.voices[static_cast<std::size_t>(voice_)].elements;
    std::vector<Rational> broken = broken_factors(elems);
    for (std::size_t idx : playback_order(elems)) {
      const Element& e = elems[idx];
      if (const auto* n = std::get_if<abc::NoteElem>(&e)) {
        Rational len = n->length * unit_ * step_factor(broken[idx]);
        play({n}, len, n->pos);
      } else if (const auto* c = std::get_if<abc::ChordElem>(&e)) {
        Rational longest(0);
        std::vector<const abc::NoteElem*> members;
        for (const abc::NoteElem& m : c->notes) {
          longest = std::max(longest, m.length);
          members.push_back(&m);
        }
        Rational len = longest * c->length * unit_ * step_factor(broken[idx]);
        play(members, len, c->pos, c->tie);
      } else if (const auto* r = std::get_if<abc::RestElem>(&e)) {
        Rational len = r->multi_measure
                           ? r->length * Rational(meter_.numerator, meter_.denominator)
                           : r->length * unit_ * step_factor(broken[idx]);
        drop_pending_ties();
        cursor_ += len;
      } else if (std::get_if<abc::BarElem>(&e)) {
        bar_accidentals_.clear();
      } else if (const auto* t = std::get_if<abc::TupletElem>(&e)) {
        tuplet_remaining_ = t->r;
        tuplet_ratio_ = Rational(t->q, t->p);
      } else if (const auto* k = std::get_if<abc::KeyChangeElem>(&e)) {
        key_ = k->key;
      } else if (const auto* m = std::get_if<abc::MeterChangeElem>(&e)) {
        meter_ = m->meter;
      } else if (const auto* u = std::get_if<abc::UnitChangeElem>(&e)) {
        unit_ = u->unit;
      }
      check_length();
    }
    drop_pending_ties();
    for (const RawEvent& r : raw_) {
      std::int64_t on = r.onset.round_scaled(kTicksPerWhole);
      std::int64_t off = r.end.round_scaled(kTicksPerWhole);
      out_.push_back(NoteEvent{voice_, on, std::max<std::int64_t>(1, off - on), r.pitch, kDefaultVelocity});
    }
    return cursor_;
  }

 private:
  Rational step_factor(const Rational& broken) {
    Rational f = broken;
    if (tuplet_remaining_ > 0) {
      f *= tuplet_ratio_;
      --tuplet_remaining_;
    }
    return f;
  }

  void check_length() {
    if (cursor_ > Rational(kMaxTicks, kTicksPerWhole)) {
      throw Error("TICK_OVERFLOW", "piece exceeds 2^28 ticks");
    }
  }

  int resolve_pitch(const abc::NoteElem& n) {
    auto key = std::make_pair(n.letter, n.octave);
    int alteration = 0;
    switch (n.accidental) {
      case Accidental::DoubleFlat: alteration = -2; break;
      case Accidental::Flat: alteration = -1; break;
      case Accidental::Natural: alteration = 0; break;
      case Accidental::Sharp: alteration = 1; break;
      case Accidental::DoubleSharp: alteration = 2; break;
      case Accidental::None: {
        auto it = bar_accidentals_.find(key);
        alteration = it != bar_accidentals_.end() ? it->second : key_.alteration(n.letter);
        break;
      }
    }
    if (n.accidental != Accidental::None) bar_accidentals_[key] = alteration;
    std::int64_t pitch = 60 + 12 * static_cast<std::int64_t>(n.octave) +
                         kLetterSemitone[n.letter - 'A'] + alteration;
    if (pitch < 0 || pitch > 127) {
      throw Error("PITCH_OUT_OF_RANGE", "note at line " + std::to_string(n.pos.line) + ", col " +
                                            std::to_string(n.pos.column) + " is outside MIDI range");
    }
    return static_cast<int>(pitch);
  }

  void play(const std::vector<const abc::NoteElem*>& members, const Rational& len, abc::SourcePos pos,
            bool chord_tie = false) {
    std::vector<PendingTie> next_pending;
    std::vector<int> seen;
    for (const abc::NoteElem* m : members) {
      int pitch = resolve_pitch(*m);
      if (std::find(seen.begin(), seen.end(), pitch) != seen.end()) continue;
      seen.push_back(pitch);
      std::size_t event_index;
      auto hit = std::find_if(pending_.begin(), pending_.end(), [&](const PendingTie& p) {
        return raw_[p.event].pitch == pitch && raw_[p.event].end == cursor_;
      });
      if (hit != pending_.end()) {
        event_index = hit->event;
        raw_[event_index].end = cursor_ + len;
        pending_.erase(hit);
      } else {
        raw_.push_back(RawEvent{cursor_, cursor_ + len, pitch, m->pos});
        event_index = raw_.size() - 1;
      }
      if (m->tie || chord_tie) next_pending.push_back({event_index, m->pos.line ? m->pos : pos});
    }
    drop_pending_ties();
    pending_ = std::move(next_pending);
    cursor_ += len;
  }

  void drop_pending_ties() {
    for (const PendingTie& p : pending_) {
      warnings_.push_back({abc::Severity::Warning, p.pos.line, p.pos.column, "UNRESOLVED_TIE",
                           "tie does not connect to a note of the same pitch; dropped"});
    }
    pending_.clear();
  }

  const abc::AbcScore& score_;
  int voice_;
  std::vector<NoteEvent>& out_;
  abc::Diagnostics& warnings_;
  abc::KeySignature key_;
  Rational unit_;
  abc::Meter meter_;
  Rational cursor_{0};
  int tuplet_remaining_ = 0;
  Rational tuplet_ratio_{1};
  std::map<std::pair<char, int>, int> bar_accidentals_;
  std::vector<RawEvent> raw_;
  std::vector<PendingTie> pending_;
};

}  // namespace

void sort_events(std::vector<NoteEvent>& events) {
  std::stable_sort(events.begin(), events.end(), [](const NoteEvent& a, const NoteEvent& b) {
    return std::tie(a.onset, a.voice, a.pitch, a.duration) <
           std::tie(b.onset, b.voice, b.pitch, b.duration);
  });
}

LowerResult lower(const abc::AbcScore& score) {
  LowerResult result;
  NoteEventSequence& seq = result.sequence;
  seq.tempo_qpm = score.tempo_qpm;
  seq.meter = score.meter;
  seq.n_voices = static_cast<int>(std::max<std::size_t>(1, score.voices.size()));
  Rational end(0);
  for (std::size_t v = 0; v < score.voices.size(); ++v) {
    Rational voice_end =
        VoiceLowering(score, static_cast<int>(v), seq.events, result.warnings).run();
    end = std::max(end, voice_end);
  }
  seq.end_tick = end.round_scaled(kTicksPerWhole);
  sort_events(seq.events);
  std::stable_sort(result.warnings.begin(), result.warnings.end(),
                   [](const abc::Diagnostic& a, const abc::Diagnostic& b) {
                     return std::tie(a.line, a.column) < std::tie(b.line, b.column);
                   });
  return result;
}

NoteEventSequence select_voice(const NoteEventSequence& seq, int voice) {
  NoteEventSequence out = seq;
  out.n_voices = 1;
  out.events.clear();
  for (NoteEvent e : seq.events) {
    if (e.voice != voice) continue;
    e.voice = 0;
    out.events.push_back(e);
  }
  return out;
}

}  // namespace i2m::midi
