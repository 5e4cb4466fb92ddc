#include <algorithm>
#include <string>

#include "i2m/abc.h"

namespace i2m::abc {

namespace {

int natural_fifths(char tonic) {
  switch (tonic) {
    case 'C': return 0;
    case 'G': return 1;
    case 'D': return 2;
    case 'A': return 3;
    case 'E': return 4;
    case 'B': return 5;
    case 'F': return -1;
    default: return 0;
  }
}

int mode_offset(Mode mode) {
  switch (mode) {
    case Mode::Major: return 0;
    case Mode::Minor: return -3;
    case Mode::Dorian: return -2;
    case Mode::Phrygian: return -4;
    case Mode::Lydian: return 1;
    case Mode::Mixolydian: return -1;
    case Mode::Locrian: return -5;
  }
  return 0;
}

int accidental_fifths(Accidental a) {
  switch (a) {
    case Accidental::Sharp: return 7;
    case Accidental::Flat: return -7;
    default: return 0;
  }
}

constexpr char kSharpOrder[] = "FCGDAEB";
constexpr char kFlatOrder[] = "BEADGCF";

}  // namespace

int KeySignature::fifths() const {
  return natural_fifths(tonic) + accidental_fifths(tonic_accidental) + mode_offset(mode);
}

std::string KeySignature::str() const {
  std::string s(1, tonic);
  if (tonic_accidental == Accidental::Sharp) s += '#';
  if (tonic_accidental == Accidental::Flat) s += 'b';
  switch (mode) {
    case Mode::Major: break;
    case Mode::Minor: s += "m"; break;
    case Mode::Dorian: s += "dor"; break;
    case Mode::Phrygian: s += "phr"; break;
    case Mode::Lydian: s += "lyd"; break;
    case Mode::Mixolydian: s += "mix"; break;
    case Mode::Locrian: s += "loc"; break;
  }
  return s;
}

KeySignature make_key(char tonic, Accidental tonic_accidental, Mode mode) {
  if (tonic < 'A' || tonic > 'G') throw Error("BAD_KEY", std::string("invalid tonic '") + tonic + "'");
  if (tonic_accidental != Accidental::None && tonic_accidental != Accidental::Sharp &&
      tonic_accidental != Accidental::Flat) {
    throw Error("BAD_KEY", "tonic accidental must be # or b");
  }
  KeySignature key;
  key.tonic = tonic;
  key.tonic_accidental = tonic_accidental;
  key.mode = mode;
  int f = key.fifths();
  if (f > 7 || f < -7) throw Error("BAD_KEY", "key " + key.str() + " needs more than 7 accidentals");
  for (int i = 0; i < f; ++i) key.sharps_flats[static_cast<std::size_t>(kSharpOrder[i] - 'A')] = 1;
  for (int i = 0; i < -f; ++i) key.sharps_flats[static_cast<std::size_t>(kFlatOrder[i] - 'A')] = -1;
  return key;
}

Rational default_unit_length(const Meter& meter) {
  return meter.value() < 0.75 ? Rational(1, 16) : Rational(1, 8);
}

}  // namespace i2m::abc
