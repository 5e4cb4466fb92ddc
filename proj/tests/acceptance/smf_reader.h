// Minimal standalone Standard MIDI File reader for checking the writer. It
// shares no code with src/ on purpose.
#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <vector>

namespace testsmf {

struct Note {
  int track = 0;
  std::int64_t onset = 0;
  std::int64_t duration = 0;
  int pitch = 0;
  int velocity = 0;
};

struct File {
  int format = 0;
  int division = 0;
  std::vector<Note> notes;
};

class Cursor {
 public:
  Cursor(const std::vector<std::uint8_t>& b, std::size_t pos, std::size_t end) : b_(b), pos_(pos), end_(end) {}
  bool done() const { return pos_ >= end_; }
  std::uint8_t byte() {
    if (pos_ >= end_) throw std::runtime_error("smf: read past end of chunk");
    return b_[pos_++];
  }
  std::uint8_t peek() const {
    if (pos_ >= end_) throw std::runtime_error("smf: read past end of chunk");
    return b_[pos_];
  }
  std::uint32_t be(int n) {
    std::uint32_t v = 0;
    for (int i = 0; i < n; ++i) v = (v << 8) | byte();
    return v;
  }
  std::uint32_t vlq() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      std::uint8_t c = byte();
      v = (v << 7) | (c & 0x7F);
      if (!(c & 0x80)) return v;
    }
    throw std::runtime_error("smf: variable-length quantity longer than 4 bytes");
  }
  void skip(std::size_t n) {
    if (end_ - pos_ < n) throw std::runtime_error("smf: skip past end of chunk");
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_, end_;
};

inline File read(const std::vector<std::uint8_t>& bytes) {
  Cursor head(bytes, 0, bytes.size());
  if (head.be(4) != 0x4D546864) throw std::runtime_error("smf: missing MThd");
  if (head.be(4) != 6) throw std::runtime_error("smf: bad header length");
  File f;
  f.format = static_cast<int>(head.be(2));
  int ntracks = static_cast<int>(head.be(2));
  f.division = static_cast<int>(head.be(2));
  std::size_t pos = head.pos();
  for (int track = 0; track < ntracks; ++track) {
    Cursor c(bytes, pos, bytes.size());
    if (c.be(4) != 0x4D54726B) throw std::runtime_error("smf: missing MTrk");
    std::uint32_t len = c.be(4);
    std::size_t start = c.pos();
    if (bytes.size() - start < len) throw std::runtime_error("smf: truncated track");
    Cursor t(bytes, start, start + len);
    std::int64_t now = 0;
    std::uint8_t status = 0;
    std::map<std::pair<int, int>, std::vector<std::pair<std::int64_t, int>>> open;  // (channel, pitch) -> onsets
    bool ended = false;
    while (!t.done()) {
      now += t.vlq();
      std::uint8_t s = t.peek();
      if (s & 0x80) {
        t.byte();
        status = s;
      } else if (status == 0) {
        throw std::runtime_error("smf: running status without a prior status");
      }
      if (status == 0xFF) {
        std::uint8_t type = t.byte();
        std::uint32_t n = t.vlq();
        t.skip(n);
        status = 0;
        if (type == 0x2F) {
          ended = true;
          break;
        }
        continue;
      }
      if (status == 0xF0 || status == 0xF7) {
        t.skip(t.vlq());
        status = 0;
        continue;
      }
      int kind = status & 0xF0, channel = status & 0x0F;
      int a = t.byte();
      int b = (kind == 0xC0 || kind == 0xD0) ? 0 : t.byte();
      bool on = kind == 0x90 && b > 0;
      bool off = kind == 0x80 || (kind == 0x90 && b == 0);
      if (on) {
        open[{channel, a}].push_back({now, b});
      } else if (off) {
        auto& stack = open[{channel, a}];
        if (stack.empty()) throw std::runtime_error("smf: note-off without note-on");
        auto [onset, vel] = stack.front();  // first in, first out
        stack.erase(stack.begin());
        f.notes.push_back({track, onset, now - onset, a, vel});
      }
    }
    if (!ended) throw std::runtime_error("smf: track without end-of-track");
    for (const auto& [_, stack] : open) {
      if (!stack.empty()) throw std::runtime_error("smf: unterminated note");
    }
    pos = start + len;
  }
  return f;
}

}  // namespace testsmf
