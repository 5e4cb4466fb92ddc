#include <cstdio>
#include <string>

#include "i2m/metrics.h"

namespace i2m::metrics {

namespace {

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Line {
  const char* name;
  double value;
  const char* explanation;
};

}  // namespace

std::string render_report(const MetricReport& r) {
  const Line lines[] = {
      {"Pitch Range (PR)", static_cast<double>(r.pitch_range),
       "Semitone span between lowest and highest note; wide spans give a sweeping register, narrow spans a "
       "focused one."},
      {"Number of Pitches Used (NPU)", static_cast<double>(r.n_pitches_used),
       "Count of distinct MIDI pitches; more pitches give melodic variety, fewer give a sparse, repetitive palette."},
      {"Number of Pitch Classes Used (NPCU)", static_cast<double>(r.n_pitch_classes_used),
       "Count of distinct pitch classes out of 12; close to 7 fits diatonic writing, close to 12 fits chromatic "
       "writing."},
      {"Polyphony", r.polyphony,
       "Mean number of pitches sounding together; 1 means a single line, higher values mean chords or layered "
       "voices."},
      {"Scale Consistency (SC)", r.scale_consistency,
       "Largest share of notes belonging to one major or minor scale; high values fit tonal music, lower values "
       "fit modal or atonal music."},
      {"Pitch Entropy (PE)", r.pitch_entropy,
       "Entropy in bits of the pitch distribution; higher entropy suits atonal or serial styles, lower entropy "
       "suits tonal melodies built on few notes."},
      {"Pitch Class Entropy (PCE)", r.pitch_class_entropy,
       "Entropy in bits of the pitch-class distribution; values near log2(12) = 3.585 spread evenly over all "
       "classes, lower values centre on a key."},
      {"Empty Beat Rate (EBR)", r.empty_beat_rate,
       "Share of beats without any note onset; higher values mean long notes or rests, lower values mean steady "
       "rhythmic activity."},
  };
  std::string out;
  for (const Line& l : lines) {
    out += l.name;
    out += ": ";
    out += fixed4(l.value);
    out += " - ";
    out += l.explanation;
    out += '\n';
  }
  out += "Events: " + std::to_string(r.n_events) + '\n';
  return out;
}

std::string render_key_values(const MetricReport& r) {
  std::string out;
  out += "pitch_range=" + std::to_string(r.pitch_range) + '\n';
  out += "n_pitches_used=" + std::to_string(r.n_pitches_used) + '\n';
  out += "n_pitch_classes_used=" + std::to_string(r.n_pitch_classes_used) + '\n';
  out += "polyphony=" + full(r.polyphony) + '\n';
  out += "scale_consistency=" + full(r.scale_consistency) + '\n';
  out += "pitch_entropy=" + full(r.pitch_entropy) + '\n';
  out += "pitch_class_entropy=" + full(r.pitch_class_entropy) + '\n';
  out += "empty_beat_rate=" + full(r.empty_beat_rate) + '\n';
  out += "n_events=" + std::to_string(r.n_events) + '\n';
  return out;
}

}  // namespace i2m::metrics
