#include <algorithm>
#include <cctype>
#include <string>
#include <vector>

#include "i2m/vlm.h"

namespace i2m::vlm {

namespace {

constexpr std::string_view kFence = "```";

struct Line {
  std::size_t begin;
  std::size_t end;  // exclusive, before '\n'
};

std::vector<Line> split_lines(std::string_view s) {
  std::vector<Line> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t nl = s.find('\n', start);
    if (nl == std::string_view::npos) {
      out.push_back({start, s.size()});
      break;
    }
    out.push_back({start, nl});
    start = nl + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Trims blank lines (and trailing spaces) from both ends while keeping the
// result a substring of s.
std::string_view trim_block(std::string_view s) {
  while (!s.empty()) {
    std::size_t nl = s.find('\n');
    std::string_view first = s.substr(0, nl);
    if (nl == std::string_view::npos || !trim(first).empty()) break;
    s.remove_prefix(nl + 1);
  }
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool starts_field(std::string_view line, char field) {
  std::size_t i = 0;
  while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
  return i + 1 < line.size() && line[i] == field && line[i + 1] == ':';
}

bool has_x_line(std::string_view block) {
  for (const Line& l : split_lines(block)) {
    if (starts_field(block.substr(l.begin, l.end - l.begin), 'X')) return true;
  }
  return false;
}

bool is_field_line(std::string_view line) {
  return line.size() >= 2 && std::isalpha(static_cast<unsigned char>(line[0])) && line[1] == ':';
}

// Body line made only of ABC symbols once annotations and decorations are removed.
bool is_music_line(std::string_view raw) {
  std::string_view line = trim(raw);
  if (line.empty()) return false;
  if (is_field_line(line) || line.front() == '%') return true;
  static const std::string_view allowed = "ABCDEFGabcdefgzxZX0123456789^_=,'/|:[]()<>-{}&.~ \t\r\\";
  int letters = 0;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (c == '"' || c == '!') {
      std::size_t close = line.find(c, i + 1);
      if (close == std::string_view::npos) return false;
      i = close;
      continue;
    }
    if (allowed.find(c) == std::string_view::npos) return false;
    letters += std::isalpha(static_cast<unsigned char>(c)) ? 1 : 0;
  }
  return letters > 0 || line.find('|') != std::string_view::npos;
}

std::string_view cut_at_fence(std::string_view s) {
  std::size_t f = s.find(kFence);
  if (f != std::string_view::npos) s = s.substr(0, f);
  return trim_block(s);
}

// The fenced block is [begin, end) of raw, or npos.
std::pair<std::size_t, std::size_t> locate_block(std::string_view raw) {
  std::vector<std::size_t> fences;
  for (std::size_t p = raw.find(kFence); p != std::string_view::npos; p = raw.find(kFence, p + kFence.size())) {
    fences.push_back(p);
  }
  for (std::size_t i = 0; i + 1 < fences.size(); i += 2) {
    std::size_t open = fences[i];
    std::size_t close = fences[i + 1];
    // Skip the info string ("abc", "text", ...) on the opening line.
    std::size_t body = raw.find('\n', open);
    if (body == std::string_view::npos || body > close) body = open + kFence.size();
    else ++body;
    std::string_view inner = raw.substr(body, close - body);
    if (!has_x_line(inner)) continue;
    std::string_view trimmed = trim_block(inner);
    std::size_t b = static_cast<std::size_t>(trimmed.data() - raw.data());
    return {b, b + trimmed.size()};
  }
  auto lines = split_lines(raw);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string_view first = raw.substr(lines[i].begin, lines[i].end - lines[i].begin);
    if (!starts_field(first, 'X')) continue;
    std::size_t last = i;
    for (std::size_t j = i + 1; j < lines.size(); ++j) {
      std::string_view l = raw.substr(lines[j].begin, lines[j].end - lines[j].begin);
      if (trim(l).empty()) continue;
      if (!is_music_line(l)) break;
      last = j;
    }
    std::size_t b = lines[i].begin;
    while (raw[b] == ' ' || raw[b] == '\t') ++b;
    std::string_view span = cut_at_fence(raw.substr(b, lines[last].end - b));
    return {b, b + span.size()};
  }
  return {std::string_view::npos, std::string_view::npos};
}

std::string remove_fences(std::string_view s) {
  std::string out;
  for (const Line& l : split_lines(s)) {
    std::string_view line = s.substr(l.begin, l.end - l.begin);
    std::size_t f = line.find(kFence);
    if (f != std::string_view::npos) {
      // Drop the marker and any info string glued to it.
      std::string_view before = line.substr(0, f);
      std::string_view after = line.substr(f + kFence.size());
      std::size_t k = 0;
      while (k < after.size() && std::isalnum(static_cast<unsigned char>(after[k]))) ++k;
      out += std::string(before) + std::string(after.substr(k));
    } else {
      out += line;
    }
    out += '\n';
  }
  return out;
}

std::string tidy(std::string_view s) {
  std::string text = remove_fences(s);
  // Collapse runs of blank lines and trim the ends.
  std::string out;
  int blank = 0;
  for (const Line& l : split_lines(text)) {
    std::string_view line = trim(std::string_view(text).substr(l.begin, l.end - l.begin));
    if (line.empty()) {
      ++blank;
      continue;
    }
    if (!out.empty()) out += blank > 0 ? "\n\n" : "\n";
    blank = 0;
    out += line;
  }
  return out;
}

std::size_t find_marker(std::string_view raw, std::size_t* marker_end) {
  static const std::string_view needle = "motivation";
  std::string lower(raw);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (std::size_t p = lower.find(needle); p != std::string::npos; p = lower.find(needle, p + 1)) {
    std::size_t q = p + needle.size();
    while (q < lower.size() && (lower[q] == '*' || lower[q] == ' ')) ++q;
    if (q < lower.size() && lower[q] == ':') {
      ++q;
      while (q < lower.size() && lower[q] == '*') ++q;
      *marker_end = q;
      return p;
    }
  }
  return std::string_view::npos;
}

}  // namespace

std::string extract_abc_block(std::string_view raw) {
  auto [b, e] = locate_block(raw);
  if (b == std::string_view::npos || b == e) throw Error("NO_ABC_FOUND", "response contains no ABC tune (no X: line)");
  return std::string(raw.substr(b, e - b));
}

std::string extract_motivation(std::string_view raw, std::string_view abc) {
  std::size_t ab = std::string_view::npos;
  std::size_t ae = std::string_view::npos;
  if (!abc.empty()) {
    ab = raw.find(abc);
    if (ab != std::string_view::npos) ae = ab + abc.size();
  }
  std::size_t marker_end = 0;
  std::size_t marker = find_marker(raw, &marker_end);
  if (marker != std::string_view::npos && (ab == std::string_view::npos || marker < ab || marker >= ae)) {
    std::string_view after = raw.substr(marker_end);
    if (ab != std::string_view::npos && ab >= marker_end) {
      // The tune follows the marker: keep only the prose around it.
      std::string out(raw.substr(marker_end, ab - marker_end));
      out += "\n";
      out += raw.substr(ae);
      return tidy(out);
    }
    return tidy(after);
  }
  if (ab == std::string_view::npos) return tidy(raw);
  std::string outside(raw.substr(0, ab));
  outside += "\n";
  outside += raw.substr(ae);
  return tidy(outside);
}

bool is_keep(std::string_view raw) {
  std::string_view s = trim(raw);
  auto strip = [](std::string_view& v) {
    while (!v.empty() && (v.front() == '*' || v.front() == '`' || v.front() == '"' || v.front() == '_')) v.remove_prefix(1);
    while (!v.empty() && (v.back() == '*' || v.back() == '`' || v.back() == '"' || v.back() == '_' || v.back() == '.' ||
                          v.back() == '!')) {
      v.remove_suffix(1);
    }
  };
  strip(s);
  return trim(s) == "KEEP";
}

}  // namespace i2m::vlm
