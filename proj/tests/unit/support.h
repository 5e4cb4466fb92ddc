#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "i2m/abc.h"
#include "i2m/midi.h"

namespace test {

inline std::filesystem::path data_dir() { return I2M_TEST_DATA; }

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline i2m::midi::NoteEventSequence lower_text(const std::string& abc) {
  auto r = i2m::abc::parse(abc);
  if (!r.ok()) throw std::runtime_error(i2m::abc::format_diagnostics(r.diagnostics));
  return i2m::midi::lower(*r.score).sequence;
}

inline std::vector<i2m::midi::NoteEvent> events_with_pitches(const std::vector<int>& pitches,
                                                            std::int64_t step = 480) {
  std::vector<i2m::midi::NoteEvent> out;
  for (std::size_t i = 0; i < pitches.size(); ++i) {
    out.push_back({0, static_cast<std::int64_t>(i) * step, step, pitches[i], 90});
  }
  return out;
}

inline i2m::midi::NoteEventSequence seq_of(std::vector<i2m::midi::NoteEvent> events) {
  i2m::midi::NoteEventSequence s;
  s.events = std::move(events);
  i2m::midi::sort_events(s.events);
  for (const auto& e : s.events) s.end_tick = std::max(s.end_tick, e.onset + e.duration);
  return s;
}

// mt19937_64 is specified bit-exactly; the std distributions are not, so
// ranges are mapped by hand to keep random cases identical everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  std::uint64_t next() { return gen_(); }
  int uniform(int lo, int hi) { return lo + static_cast<int>(gen_() % static_cast<std::uint64_t>(hi - lo + 1)); }
  double unit() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace test
