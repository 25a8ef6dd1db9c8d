#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mambapupil {

struct Resolution {
  int width = 0;
  int height = 0;
  friend bool operator==(const Resolution&, const Resolution&) = default;
};

/// One camera event. Timestamps are microseconds.
struct Event {
  std::int64_t t = 0;
  int x = 0;
  int y = 0;
  int p = 1;  // +1 or -1
  friend bool operator==(const Event&, const Event&) = default;
};

struct EventStream {
  Resolution resolution;
  std::vector<Event> events;  // sorted by t
};

struct LabelSample {
  std::int64_t t = 0;
  double cx = 0;  // normalized to [0,1]
  double cy = 0;
  bool closed = false;
};

struct LabelTrack {
  int rate_hz = 100;
  std::vector<LabelSample> samples;  // sorted by t
};

/// Half-open time span [t_start, t_end) and the events inside it.
struct Window {
  std::int64_t t_start = 0;
  std::int64_t t_end = 0;
  std::span<const Event> events;

  std::int64_t duration() const { return t_end - t_start; }
};

/// Malformed input file. `line` is 1-based, 0 when not applicable.
class DataError : public std::runtime_error {
 public:
  DataError(const std::string& path, std::size_t line, const std::string& what)
      : std::runtime_error(path + (line ? ":" + std::to_string(line) : std::string()) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    std::string_view f = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
    fields.push_back(f);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

template <typename N>
bool parse_number(std::string_view s, N& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && !s.empty();
}

inline bool blank(std::string_view line) {
  return line.find_first_not_of(" \t\r") == std::string_view::npos;
}

}  // namespace detail

/// Parses "t,x,y,p" records. Rejects malformed lines, polarity outside
/// {-1,+1}, out-of-range coordinates and decreasing timestamps.
inline EventStream parse_events(std::istream& in, Resolution resolution, const std::string& source = "<events>") {
  if (resolution.width <= 0 || resolution.height <= 0) throw std::invalid_argument("resolution must be positive");
  EventStream stream{resolution, {}};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::blank(line)) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != 4) throw DataError(source, lineno, "expected 4 fields t,x,y,p");
    Event e;
    if (!detail::parse_number(f[0], e.t) || e.t < 0) throw DataError(source, lineno, "bad timestamp");
    if (!detail::parse_number(f[1], e.x) || !detail::parse_number(f[2], e.y))
      throw DataError(source, lineno, "bad coordinate");
    if (!detail::parse_number(f[3], e.p) || (e.p != 1 && e.p != -1))
      throw DataError(source, lineno, "polarity must be 1 or -1");
    if (e.x < 0 || e.x >= resolution.width) throw DataError(source, lineno, "x out of range");
    if (e.y < 0 || e.y >= resolution.height) throw DataError(source, lineno, "y out of range");
    if (!stream.events.empty() && e.t < stream.events.back().t) throw DataError(source, lineno, "unsorted timestamps");
    stream.events.push_back(e);
  }
  return stream;
}

inline EventStream load_events(const std::string& path, Resolution resolution) {
  std::ifstream in(path);
  if (!in) throw DataError(path, 0, "cannot open event file");
  return parse_events(in, resolution, path);
}

inline void write_events(std::ostream& out, const EventStream& stream) {
  for (const auto& e : stream.events) out << e.t << ',' << e.x << ',' << e.y << ',' << e.p << '\n';
}

inline void save_events(const std::string& path, const EventStream& stream) {
  std::ofstream out(path);
  if (!out) throw DataError(path, 0, "cannot write event file");
  write_events(out, stream);
  if (!out) throw DataError(path, 0, "failed writing event file");
}

/// Parses "t,cx,cy,closed" with pixel coordinates; normalizes by resolution.
inline LabelTrack parse_labels(std::istream& in, Resolution resolution, int rate_hz,
                               const std::string& source = "<labels>") {
  if (rate_hz <= 0) throw std::invalid_argument("label rate must be positive");
  LabelTrack track{rate_hz, {}};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::blank(line)) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != 4) throw DataError(source, lineno, "expected 4 fields t,cx,cy,closed");
    LabelSample s;
    double px = 0, py = 0;
    int closed = 0;
    if (!detail::parse_number(f[0], s.t) || s.t < 0) throw DataError(source, lineno, "bad timestamp");
    if (!detail::parse_number(f[1], px) || !detail::parse_number(f[2], py))
      throw DataError(source, lineno, "bad label coordinate");
    if (!detail::parse_number(f[3], closed) || (closed != 0 && closed != 1))
      throw DataError(source, lineno, "closed must be 0 or 1");
    s.cx = px / resolution.width;
    s.cy = py / resolution.height;
    s.closed = closed == 1;
    if (s.cx < 0 || s.cx > 1 || s.cy < 0 || s.cy > 1) throw DataError(source, lineno, "label outside frame");
    if (!track.samples.empty() && s.t < track.samples.back().t) throw DataError(source, lineno, "unsorted timestamps");
    track.samples.push_back(s);
  }
  return track;
}

inline LabelTrack load_labels(const std::string& path, Resolution resolution, int rate_hz) {
  std::ifstream in(path);
  if (!in) throw DataError(path, 0, "cannot open label file");
  return parse_labels(in, resolution, rate_hz, path);
}

inline void save_labels(const std::string& path, const LabelTrack& track, Resolution resolution) {
  std::ofstream out(path);
  if (!out) throw DataError(path, 0, "cannot write label file");
  out.precision(17);
  for (const auto& s : track.samples) {
    out << s.t << ',' << s.cx * resolution.width << ',' << s.cy * resolution.height << ',' << (s.closed ? 1 : 0)
        << '\n';
  }
  if (!out) throw DataError(path, 0, "failed writing label file");
}

/// Windows [origin + k*hop, origin + k*hop + window) for k = 0..count-1.
inline std::vector<Window> window_span(const EventStream& stream, std::int64_t origin, std::int64_t window_us,
                                       std::int64_t hop_us, std::size_t count) {
  if (window_us <= 0 || hop_us <= 0) throw std::invalid_argument("window and hop must be positive");
  std::vector<Window> windows;
  windows.reserve(count);
  const auto& ev = stream.events;
  auto by_time = [](const Event& e, std::int64_t t) { return e.t < t; };
  for (std::size_t k = 0; k < count; ++k) {
    const std::int64_t start = origin + static_cast<std::int64_t>(k) * hop_us;
    const std::int64_t end = start + window_us;
    auto lo = std::lower_bound(ev.begin(), ev.end(), start, by_time);
    auto hi = std::lower_bound(lo, ev.end(), end, by_time);
    windows.push_back({start, end, std::span<const Event>(ev.data() + (lo - ev.begin()), static_cast<std::size_t>(hi - lo))});
  }
  return windows;
}

/// Fixed-rate windows starting at t = 0; window k is [k*hop, k*hop + window).
/// Windows are emitted while their start does not exceed the last event
/// timestamp, so every event lands in at least one window.
inline std::vector<Window> window_stream(const EventStream& stream, std::int64_t window_us, std::int64_t hop_us) {
  if (window_us <= 0 || hop_us <= 0) throw std::invalid_argument("window and hop must be positive");
  if (stream.events.empty()) return {};
  const std::int64_t last = stream.events.back().t;
  const auto count = static_cast<std::size_t>(last / hop_us + 1);
  return window_span(stream, 0, window_us, hop_us, count);
}

/// Index of the label sample nearest to `t` (ties toward the earlier sample).
/// Throws when `t` lies more than half a label period outside the track.
inline std::size_t nearest_label(const LabelTrack& track, std::int64_t t) {
  const auto& s = track.samples;
  if (s.empty()) throw std::out_of_range("empty label track");
  const std::int64_t half_period = 1'000'000 / track.rate_hz / 2;
  if (t < s.front().t - half_period || t > s.back().t + half_period) {
    throw std::out_of_range("time " + std::to_string(t) + " beyond label track extent [" +
                            std::to_string(s.front().t) + "," + std::to_string(s.back().t) + "]");
  }
  auto it = std::lower_bound(s.begin(), s.end(), t, [](const LabelSample& a, std::int64_t v) { return a.t < v; });
  if (it == s.end()) return s.size() - 1;
  if (it == s.begin()) return 0;
  auto prev = it - 1;
  return (it->t - t) < (t - prev->t) ? static_cast<std::size_t>(it - s.begin())
                                     : static_cast<std::size_t>(prev - s.begin());
}

struct AlignedLabel {
  double cx = 0;
  double cy = 0;
  bool closed = false;
  std::size_t sample = 0;
};

/// One label per window: the sample nearest to the window's end.
inline std::vector<AlignedLabel> align_labels(const LabelTrack& track, std::span<const Window> windows,
                                              int out_rate_hz) {
  if (out_rate_hz <= 0 || track.rate_hz % out_rate_hz != 0) {
    throw std::invalid_argument("output rate " + std::to_string(out_rate_hz) + " must divide label rate " +
                                std::to_string(track.rate_hz));
  }
  std::vector<AlignedLabel> out;
  out.reserve(windows.size());
  for (const auto& w : windows) {
    const std::size_t i = nearest_label(track, w.t_end);
    const auto& s = track.samples[i];
    out.push_back({s.cx, s.cy, s.closed, i});
  }
  return out;
}

}  // namespace mambapupil
