#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <string>
#include <tuple>

#include "i2m/midi.h"

namespace i2m::midi {

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>((v >> shift) & 0xFF));
}

void put_vlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::uint8_t buf[5];
  int n = 0;
  buf[n++] = static_cast<std::uint8_t>(v & 0x7F);
  while ((v >>= 7) != 0) buf[n++] = static_cast<std::uint8_t>(0x80 | (v & 0x7F));
  while (n > 0) out.push_back(buf[--n]);
}

void put_track(std::vector<std::uint8_t>& out, const std::vector<std::uint8_t>& body) {
  out.insert(out.end(), {'M', 'T', 'r', 'k'});
  put_u32(out, static_cast<std::uint32_t>(body.size()));
  out.insert(out.end(), body.begin(), body.end());
}

int channel_for_voice(int voice) { return (voice >= 9 ? voice + 1 : voice) % 16; }

struct MidiMessage {
  std::int64_t tick;
  bool on;
  int pitch;
  int velocity;
};

}  // namespace

std::vector<std::uint8_t> write_smf(const NoteEventSequence& seq) {
  std::vector<std::uint8_t> out;
  int n_voices = std::max(1, seq.n_voices);
  out.insert(out.end(), {'M', 'T', 'h', 'd'});
  put_u32(out, 6);
  put_u16(out, 1);
  put_u16(out, static_cast<std::uint32_t>(1 + n_voices));
  put_u16(out, static_cast<std::uint32_t>(seq.ticks_per_quarter));

  std::vector<std::uint8_t> tempo;
  double us = std::round(60'000'000.0 / seq.tempo_qpm);
  auto us_per_quarter = static_cast<std::uint32_t>(std::clamp(us, 1.0, 16'777'215.0));
  put_vlq(tempo, 0);
  tempo.insert(tempo.end(), {0xFF, 0x51, 0x03});
  tempo.push_back(static_cast<std::uint8_t>((us_per_quarter >> 16) & 0xFF));
  tempo.push_back(static_cast<std::uint8_t>((us_per_quarter >> 8) & 0xFF));
  tempo.push_back(static_cast<std::uint8_t>(us_per_quarter & 0xFF));
  int dd = 0;
  while ((1 << dd) < seq.meter.denominator && dd < 7) ++dd;
  put_vlq(tempo, 0);
  tempo.insert(tempo.end(), {0xFF, 0x58, 0x04, static_cast<std::uint8_t>(seq.meter.numerator),
                             static_cast<std::uint8_t>(dd), 24, 8});
  put_vlq(tempo, 0);
  tempo.insert(tempo.end(), {0xFF, 0x2F, 0x00});
  put_track(out, tempo);

  for (int v = 0; v < n_voices; ++v) {
    std::vector<MidiMessage> msgs;
    for (const NoteEvent& e : seq.events) {
      if (e.voice != v) continue;
      msgs.push_back({e.onset, true, e.pitch, e.velocity});
      msgs.push_back({e.onset + e.duration, false, e.pitch, 0x40});
    }
    // Note-offs sort before note-ons on the same tick so repeated pitches retrigger.
    std::stable_sort(msgs.begin(), msgs.end(), [](const MidiMessage& a, const MidiMessage& b) {
      return std::make_tuple(a.tick, a.on, a.pitch) < std::make_tuple(b.tick, b.on, b.pitch);
    });
    std::vector<std::uint8_t> body;
    std::int64_t last = 0;
    auto ch = static_cast<std::uint8_t>(channel_for_voice(v));
    for (const MidiMessage& m : msgs) {
      put_vlq(body, static_cast<std::uint32_t>(m.tick - last));
      last = m.tick;
      body.push_back(static_cast<std::uint8_t>((m.on ? 0x90 : 0x80) | ch));
      body.push_back(static_cast<std::uint8_t>(m.pitch & 0x7F));
      body.push_back(static_cast<std::uint8_t>(m.velocity & 0x7F));
    }
    put_vlq(body, 0);
    body.insert(body.end(), {0xFF, 0x2F, 0x00});
    put_track(out, body);
  }
  return out;
}

namespace {

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  bool done() const { return pos_ >= bytes_.size(); }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint8_t peek() {
    need(1);
    return bytes_[pos_];
  }
  std::uint32_t u16() {
    std::uint32_t a = u8();
    return (a << 8) | u8();
  }
  std::uint32_t u32() {
    std::uint32_t a = u16();
    return (a << 16) | u16();
  }
  std::uint32_t vlq() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      std::uint8_t b = u8();
      v = (v << 7) | (b & 0x7F);
      if ((b & 0x80) == 0) return v;
    }
    throw Error("CORRUPT_MIDI", "variable-length quantity longer than 4 bytes");
  }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error("CORRUPT_MIDI", "unexpected end of data");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

NoteEventSequence read_smf(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), "MThd")) throw Error("CORRUPT_MIDI", "missing MThd header");
  std::uint32_t hlen = r.u32();
  if (hlen < 6) throw Error("CORRUPT_MIDI", "short header");
  std::uint32_t format = r.u16();
  std::uint32_t ntracks = r.u16();
  std::uint32_t division = r.u16();
  r.skip(hlen - 6);
  if (format > 1) throw Error("CORRUPT_MIDI", "only SMF format 0 and 1 are supported");
  if ((division & 0x8000) != 0 || division == 0) throw Error("CORRUPT_MIDI", "SMPTE time division not supported");

  auto rescale = [division](std::int64_t t) {
    return Rational(t * kTicksPerQuarter, division).round_scaled(1);
  };

  NoteEventSequence seq;
  bool have_tempo = false;
  bool have_meter = false;
  int voice = 0;
  std::int64_t end = 0;
  for (std::uint32_t track = 0; track < ntracks && !r.done(); ++track) {
    auto id = r.take(4);
    std::uint32_t len = r.u32();
    if (!std::equal(id.begin(), id.end(), "MTrk")) {
      r.skip(len);
      --track;
      continue;
    }
    ByteReader t(r.take(len));
    std::int64_t tick = 0;
    std::uint8_t status = 0;
    std::map<std::pair<int, int>, std::deque<std::pair<std::int64_t, int>>> open;
    std::vector<NoteEvent> notes;
    auto close = [&](int ch, int pitch) {
      auto it = open.find({ch, pitch});
      if (it == open.end() || it->second.empty()) return;
      auto [on, vel] = it->second.front();
      it->second.pop_front();
      std::int64_t o = rescale(on);
      std::int64_t d = rescale(tick) - o;
      if (d > 0) notes.push_back(NoteEvent{voice, o, d, pitch, vel});
    };
    while (!t.done()) {
      tick += t.vlq();
      std::uint8_t b = t.peek();
      if (b & 0x80) {
        t.u8();
        if (b < 0xF0) status = b;
      } else if (status == 0) {
        throw Error("CORRUPT_MIDI", "running status without a previous status byte");
      } else {
        b = status;
      }
      if (b == 0xFF) {
        std::uint8_t type = t.u8();
        std::uint32_t mlen = t.vlq();
        auto data = t.take(mlen);
        if (type == 0x51 && mlen == 3 && !have_tempo) {
          std::uint32_t us = (std::uint32_t{data[0]} << 16) | (std::uint32_t{data[1]} << 8) | data[2];
          if (us > 0) seq.tempo_qpm = 60'000'000.0 / us;
          have_tempo = true;
        } else if (type == 0x58 && mlen >= 2 && !have_meter) {
          seq.meter = abc::Meter{std::max(1, int{data[0]}), 1 << std::min<int>(data[1], 5)};
          have_meter = true;
        } else if (type == 0x2F) {
          break;
        }
        continue;
      }
      if (b == 0xF0 || b == 0xF7) {
        t.skip(t.vlq());
        continue;
      }
      int kind = b & 0xF0;
      int ch = b & 0x0F;
      if (kind == 0xC0 || kind == 0xD0) {
        t.u8();
        continue;
      }
      int d1 = t.u8() & 0x7F;
      int d2 = t.u8() & 0x7F;
      if (kind == 0x90 && d2 > 0) {
        open[{ch, d1}].push_back({tick, d2});
      } else if (kind == 0x80 || kind == 0x90) {
        close(ch, d1);
      }
    }
    for (auto& [key, q] : open) {
      while (!q.empty()) close(key.first, key.second);
    }
    end = std::max(end, rescale(tick));
    if (!notes.empty()) {
      seq.events.insert(seq.events.end(), notes.begin(), notes.end());
      ++voice;
    }
  }
  seq.n_voices = std::max(1, voice);
  for (const NoteEvent& e : seq.events) end = std::max(end, e.onset + e.duration);
  seq.end_tick = end;
  sort_events(seq.events);
  return seq;
}

}  // namespace i2m::midi
