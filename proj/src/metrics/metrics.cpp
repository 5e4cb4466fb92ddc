#include "i2m/metrics.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>

namespace i2m::metrics {

namespace {

void require_events(const midi::NoteEventSequence& seq) {
  if (seq.events.empty()) throw Error("EMPTY_SEQUENCE", "sequence has no note events");
}

int pitch_class(int pitch) { return ((pitch % 12) + 12) % 12; }

template <typename Map>
double entropy_of(const Map& counts, std::size_t total) {
  double h = 0.0;
  for (const auto& [key, count] : counts) {
    if (count == 0) continue;
    double p = static_cast<double>(count) / static_cast<double>(total);
    h -= p * std::log2(p);
  }
  return h;
}

constexpr std::array<int, 7> kMajorSteps = {0, 2, 4, 5, 7, 9, 11};
constexpr std::array<int, 7> kMinorSteps = {0, 2, 3, 5, 7, 8, 10};

}  // namespace

int pitch_range(const midi::NoteEventSequence& seq) {
  require_events(seq);
  auto [lo, hi] = std::minmax_element(seq.events.begin(), seq.events.end(),
                                      [](const auto& a, const auto& b) { return a.pitch < b.pitch; });
  return hi->pitch - lo->pitch;
}

int n_pitches_used(const midi::NoteEventSequence& seq) {
  require_events(seq);
  std::array<bool, 128> used{};
  for (const auto& e : seq.events) used[static_cast<std::size_t>(e.pitch & 0x7F)] = true;
  return static_cast<int>(std::count(used.begin(), used.end(), true));
}

int n_pitch_classes_used(const midi::NoteEventSequence& seq) {
  require_events(seq);
  std::array<bool, 12> used{};
  for (const auto& e : seq.events) used[static_cast<std::size_t>(pitch_class(e.pitch))] = true;
  return static_cast<int>(std::count(used.begin(), used.end(), true));
}

double polyphony(const midi::NoteEventSequence& seq) {
  require_events(seq);
  // Sweep over boundaries; per-pitch reference counts so that overlapping
  // notes of one pitch count once, as in a binarized piano roll.
  std::map<std::int64_t, std::vector<std::pair<int, int>>> changes;
  for (const auto& e : seq.events) {
    changes[e.onset].push_back({e.pitch, +1});
    changes[e.onset + e.duration].push_back({e.pitch, -1});
  }
  std::array<int, 128> active{};
  int distinct = 0;
  std::int64_t prev = 0;
  double weighted = 0.0;
  double sounding = 0.0;
  for (const auto& [tick, deltas] : changes) {
    if (distinct > 0) {
      double span = static_cast<double>(tick - prev);
      weighted += span * distinct;
      sounding += span;
    }
    for (auto [pitch, d] : deltas) {
      int& a = active[static_cast<std::size_t>(pitch & 0x7F)];
      int before = a;
      a += d;
      if (before == 0 && a > 0) ++distinct;
      if (before > 0 && a == 0) --distinct;
    }
    prev = tick;
  }
  return sounding > 0 ? weighted / sounding : 0.0;
}

double scale_consistency(const midi::NoteEventSequence& seq) {
  require_events(seq);
  std::array<std::size_t, 12> hist{};
  for (const auto& e : seq.events) ++hist[static_cast<std::size_t>(pitch_class(e.pitch))];
  std::size_t best = 0;
  for (const auto* steps : {&kMajorSteps, &kMinorSteps}) {
    for (int root = 0; root < 12; ++root) {
      std::size_t in_scale = 0;
      for (int s : *steps) in_scale += hist[static_cast<std::size_t>((root + s) % 12)];
      best = std::max(best, in_scale);
    }
  }
  return static_cast<double>(best) / static_cast<double>(seq.events.size());
}

double pitch_entropy(const midi::NoteEventSequence& seq) {
  require_events(seq);
  std::map<int, std::size_t> counts;
  for (const auto& e : seq.events) ++counts[e.pitch];
  return entropy_of(counts, seq.events.size());
}

double pitch_class_entropy(const midi::NoteEventSequence& seq) {
  require_events(seq);
  std::map<int, std::size_t> counts;
  for (const auto& e : seq.events) ++counts[pitch_class(e.pitch)];
  return entropy_of(counts, seq.events.size());
}

double empty_beat_rate(const midi::NoteEventSequence& seq) {
  require_events(seq);
  const std::int64_t beat = seq.ticks_per_quarter;
  std::int64_t last_off = 0;
  for (const auto& e : seq.events) last_off = std::max(last_off, e.onset + e.duration);
  std::int64_t beats = (last_off + beat - 1) / beat;
  if (beats <= 0) return 0.0;
  std::set<std::int64_t> occupied;
  for (const auto& e : seq.events) occupied.insert(e.onset / beat);
  auto empty = static_cast<double>(beats - static_cast<std::int64_t>(occupied.size()));
  return empty / static_cast<double>(beats);
}

MetricReport evaluate_all(const midi::NoteEventSequence& seq) {
  require_events(seq);
  MetricReport r;
  r.pitch_range = pitch_range(seq);
  r.n_pitches_used = n_pitches_used(seq);
  r.n_pitch_classes_used = n_pitch_classes_used(seq);
  r.polyphony = polyphony(seq);
  r.scale_consistency = scale_consistency(seq);
  r.pitch_entropy = pitch_entropy(seq);
  r.pitch_class_entropy = pitch_class_entropy(seq);
  r.empty_beat_rate = empty_beat_rate(seq);
  r.n_events = static_cast<int>(seq.events.size());
  return r;
}

}  // namespace i2m::metrics
