// Symbolic music metrics used as the refinement evaluator. Definitions follow
// MusPy: pitch-domain statistics over note events plus a beat-grid emptiness
// measure. All functions throw Error("EMPTY_SEQUENCE") on a sequence without
// events.
#pragma once

#include <string>

#include "i2m/midi.h"

namespace i2m::metrics {

struct MetricReport {
  int pitch_range = 0;
  int n_pitches_used = 0;
  int n_pitch_classes_used = 0;
  double polyphony = 0.0;
  double scale_consistency = 0.0;
  double pitch_entropy = 0.0;
  double pitch_class_entropy = 0.0;
  double empty_beat_rate = 0.0;
  int n_events = 0;

  bool operator==(const MetricReport&) const = default;
};

int pitch_range(const midi::NoteEventSequence& seq);
int n_pitches_used(const midi::NoteEventSequence& seq);
int n_pitch_classes_used(const midi::NoteEventSequence& seq);

// Mean number of distinct sounding pitches over ticks where at least one
// note sounds; a note sounds on [onset, onset + duration).
double polyphony(const midi::NoteEventSequence& seq);

// Largest fraction of events whose pitch class lies in one of the 24 major
// and natural-minor scales.
double scale_consistency(const midi::NoteEventSequence& seq);

// Shannon entropy (bits) of the event-count histogram.
double pitch_entropy(const midi::NoteEventSequence& seq);
double pitch_class_entropy(const midi::NoteEventSequence& seq);

// Beats are 480-tick windows from 0 to the last note-off (rounded up); a beat
// is empty when no onset falls inside it.
double empty_beat_rate(const midi::NoteEventSequence& seq);

MetricReport evaluate_all(const midi::NoteEventSequence& seq);

// Eight metric lines plus one event-count line, each metric with a fixed,
// style-neutral explanation.
std::string render_report(const MetricReport& report);

// "key=value" lines with full precision, for scripts and tests.
std::string render_key_values(const MetricReport& report);

}  // namespace i2m::metrics
