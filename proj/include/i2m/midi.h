#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "i2m/abc.h"

namespace i2m::midi {

inline constexpr int kTicksPerQuarter = 480;
inline constexpr int kDefaultVelocity = 90;
inline constexpr std::int64_t kMaxTicks = std::int64_t{1} << 28;

struct NoteEvent {
  int voice = 0;
  std::int64_t onset = 0;
  std::int64_t duration = 1;
  int pitch = 60;
  int velocity = kDefaultVelocity;

  bool operator==(const NoteEvent&) const = default;
};

struct NoteEventSequence {
  int ticks_per_quarter = kTicksPerQuarter;
  double tempo_qpm = 120.0;
  abc::Meter meter;
  int n_voices = 1;
  std::int64_t end_tick = 0;     // elapsed length including trailing rests
  std::vector<NoteEvent> events;  // sorted by (onset, voice, pitch)

  bool operator==(const NoteEventSequence&) const = default;
};

void sort_events(std::vector<NoteEvent>& events);

struct LowerResult {
  NoteEventSequence sequence;
  abc::Diagnostics warnings;  // UNRESOLVED_TIE, STRAY_ENDING, ...
};

// Resolves pitches and timing. Throws Error("TICK_OVERFLOW") when the piece is
// longer than 2^28 ticks and Error("PITCH_OUT_OF_RANGE") for notes outside 0..127.
LowerResult lower(const abc::AbcScore& score);

// Standard MIDI File, format 1, division 480. Track 0 carries tempo and time
// signature; one track per voice follows.
std::vector<std::uint8_t> write_smf(const NoteEventSequence& seq);

// Reads format 0/1 SMF files; ticks are rescaled to 480 per quarter. Each track
// that contains notes becomes one voice. Throws Error("CORRUPT_MIDI").
NoteEventSequence read_smf(std::span<const std::uint8_t> bytes);

// Restricts a sequence to a single voice (renumbered to 0).
NoteEventSequence select_voice(const NoteEventSequence& seq, int voice);

}  // namespace i2m::midi
