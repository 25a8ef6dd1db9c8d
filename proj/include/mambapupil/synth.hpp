#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mambapupil/augmentation.hpp"
#include "mambapupil/event_core.hpp"
#include "mambapupil/representations.hpp"

// Synthetic event camera looking at a dark pupil on a uniform background.
namespace mambapupil::synth {

struct IrisRing {
  double radius = 11.0;
  double contrast = -0.4;
};

struct SceneModel {
  Resolution resolution{80, 60};
  double background_log_intensity = 0.0;
  double pupil_radius = 6.0;
  double pupil_contrast = -1.5;  // log-intensity offset inside the pupil
  std::optional<IrisRing> iris;
  double threshold = 0.25;       // contrast threshold C
  double noise_events_per_s = 0.0;  // Poisson background activity over the whole sensor

  void validate() const {
    if (resolution.width <= 0 || resolution.height <= 0) throw std::invalid_argument("scene resolution must be positive");
    if (!(threshold > 0)) throw std::invalid_argument("scene threshold must be positive");
    const double limit = std::min(resolution.width, resolution.height) / 2.0;
    if (!(pupil_radius > 0) || pupil_radius >= limit) throw std::invalid_argument("pupil radius out of range");
    if (iris && (iris->radius <= pupil_radius || iris->radius >= limit)) {
      throw std::invalid_argument("iris radius must lie between the pupil radius and half the frame");
    }
    if (noise_events_per_s < 0) throw std::invalid_argument("noise rate must be non-negative");
  }
};

/// Continuous sensor coordinates; pixel (x, y) covers [x, x+1) x [y, y+1).
struct Point {
  double x = 0;
  double y = 0;
};

/// Area-coverage approximation of a disc edge: 1 inside, 0 outside, linear
/// across a one-pixel band centred on the boundary.
inline double disc_coverage(double dist, double radius) { return std::clamp(radius + 0.5 - dist, 0.0, 1.0); }

/// Log intensity image, one channel. `eyelid` is the occluded fraction of
/// rows counted from the top; occluded rows show the background.
inline Grid render_log_intensity(const SceneModel& scene, Point center, double eyelid) {
  const int H = scene.resolution.height, W = scene.resolution.width;
  Grid img(1, H, W);
  const double bg = scene.background_log_intensity;
  const double lid = std::clamp(eyelid, 0.0, 1.0) * H;
  for (int y = 0; y < H; ++y) {
    const double covered = std::clamp(lid - y, 0.0, 1.0);
    const double dy = y + 0.5 - center.y;
    for (int x = 0; x < W; ++x) {
      const double dx = x + 0.5 - center.x;
      const double d = std::sqrt(dx * dx + dy * dy);
      double v = bg;
      if (scene.iris) {
        v += scene.iris->contrast * disc_coverage(d, scene.iris->radius) +
             (scene.pupil_contrast - scene.iris->contrast) * disc_coverage(d, scene.pupil_radius);
      } else {
        v += scene.pupil_contrast * disc_coverage(d, scene.pupil_radius);
      }
      img.at(0, y, x) = covered * bg + (1.0 - covered) * v;
    }
  }
  return img;
}

struct Frame {
  std::int64_t t = 0;
  Grid log_intensity;
};

/// Per-pixel threshold model. Each pixel remembers the log intensity at which
/// it last fired; whenever the current value is at least C away, an event of
/// the matching sign fires and the reference moves by exactly C.
class EventEmitter {
 public:
  EventEmitter(const SceneModel& scene, const Frame& first, std::uint64_t noise_seed = 0)
      : scene_(scene), residual_(first.log_intensity.data), last_(first.log_intensity.data), t_(first.t),
        noise_rng_(noise_seed) {}

  /// Appends the events of the interval (previous frame, `frame`] in time order.
  void step(const Frame& frame, std::vector<Event>& out) {
    if (frame.t < t_) throw std::invalid_argument("frames must be time-ordered");
    if (frame.log_intensity.data.size() != residual_.size()) throw std::invalid_argument("frame size changed");
    const int W = scene_.resolution.width;
    const double C = scene_.threshold;
    const auto dt = static_cast<double>(frame.t - t_);
    buffer_.clear();
    for (std::size_t i = 0; i < residual_.size(); ++i) {
      const double l0 = last_[i], l1 = frame.log_intensity.data[i];
      double& ref = residual_[i];
      while (std::abs(l1 - ref) >= C) {
        const int p = l1 > ref ? 1 : -1;
        ref += p * C;
        const double frac = l1 == l0 ? 1.0 : std::clamp((ref - l0) / (l1 - l0), 0.0, 1.0);
        buffer_.push_back({t_ + std::llround(frac * dt), static_cast<int>(i % static_cast<std::size_t>(W)),
                           static_cast<int>(i / static_cast<std::size_t>(W)), p});
      }
    }
    if (scene_.noise_events_per_s > 0 && frame.t > t_) {
      std::poisson_distribution<int> count(scene_.noise_events_per_s * dt * 1e-6);
      const int n = count(noise_rng_);
      for (int k = 0; k < n; ++k) {
        Event e;
        e.t = t_ + 1 + static_cast<std::int64_t>(noise_rng_() % static_cast<std::uint64_t>(frame.t - t_));
        e.x = static_cast<int>(noise_rng_() % static_cast<std::uint64_t>(W));
        e.y = static_cast<int>(noise_rng_() % static_cast<std::uint64_t>(scene_.resolution.height));
        e.p = (noise_rng_() & 1u) ? 1 : -1;
        buffer_.push_back(e);
      }
    }
    std::stable_sort(buffer_.begin(), buffer_.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
    out.insert(out.end(), buffer_.begin(), buffer_.end());
    last_ = frame.log_intensity.data;
    t_ = frame.t;
  }

  std::span<const double> residual() const { return residual_; }

 private:
  SceneModel scene_;
  std::vector<double> residual_;
  std::vector<double> last_;
  std::int64_t t_;
  std::mt19937_64 noise_rng_;
  std::vector<Event> buffer_;
};

/// Events for a whole frame sequence; the first frame sets the reference.
inline EventStream emit_events(const SceneModel& scene, std::span<const Frame> frames, std::uint64_t noise_seed = 0) {
  EventStream stream{scene.resolution, {}};
  if (frames.empty()) return stream;
  EventEmitter em(scene, frames.front(), noise_seed);
  for (std::size_t k = 1; k < frames.size(); ++k) em.step(frames[k], stream.events);
  return stream;
}

enum class MotionKind { fixation, saccade, smooth_pursuit, blink, random };

inline MotionKind parse_motion(const std::string& s) {
  if (s == "fixation") return MotionKind::fixation;
  if (s == "saccade") return MotionKind::saccade;
  if (s == "smooth_pursuit") return MotionKind::smooth_pursuit;
  if (s == "blink") return MotionKind::blink;
  if (s == "random") return MotionKind::random;
  throw std::invalid_argument("unknown motion kind '" + s + "'");
}

/// One motion segment. Times are relative to the segment start.
struct Trajectory {
  MotionKind kind = MotionKind::fixation;
  std::int64_t duration_us = 1'000'000;
  Point start;
  Point end;                           // saccade, smooth_pursuit, random
  std::int64_t onset_us = 0;           // saccade movement / blink closure start
  std::int64_t transition_us = 40'000;  // saccade movement time
  std::int64_t close_us = 80'000;      // blink phases
  std::int64_t closed_us = 100'000;
  std::int64_t open_us = 120'000;
  std::vector<Point> waypoints;        // random: interior points between start and end
};

struct TrajectoryState {
  Point center;
  double eyelid = 0;
};

/// Minimum-jerk profile on [0,1].
inline double min_jerk(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * u * (10.0 + u * (-15.0 + 6.0 * u));
}

inline Point lerp(Point a, Point b, double s) { return {a.x + (b.x - a.x) * s, a.y + (b.y - a.y) * s}; }

inline TrajectoryState sample(const Trajectory& tr, std::int64_t t) {
  const double tt = static_cast<double>(std::clamp<std::int64_t>(t, 0, tr.duration_us));
  switch (tr.kind) {
    case MotionKind::fixation:
      return {tr.start, 0.0};
    case MotionKind::smooth_pursuit:
      return {lerp(tr.start, tr.end, tt / static_cast<double>(tr.duration_us)), 0.0};
    case MotionKind::saccade:
      return {lerp(tr.start, tr.end, min_jerk((tt - tr.onset_us) / static_cast<double>(tr.transition_us))), 0.0};
    case MotionKind::blink: {
      const double a = static_cast<double>(tr.onset_us), b = a + tr.close_us, c = b + tr.closed_us;
      double lid = 0;
      if (tt < a) lid = 0;
      else if (tt < b) lid = min_jerk((tt - a) / tr.close_us);
      else if (tt < c) lid = 1;
      else lid = 1.0 - min_jerk((tt - c) / tr.open_us);
      return {tr.start, lid};
    }
    case MotionKind::random: {
      std::vector<Point> knots{tr.start};
      knots.insert(knots.end(), tr.waypoints.begin(), tr.waypoints.end());
      knots.push_back(tr.end);
      const double seg = static_cast<double>(tr.duration_us) / static_cast<double>(knots.size() - 1);
      const auto i = std::min(static_cast<std::size_t>(tt / seg), knots.size() - 2);
      const double u = (tt - static_cast<double>(i) * seg) / seg;
      return {lerp(knots[i], knots[i + 1], 0.5 - 0.5 * std::cos(std::numbers::pi * std::clamp(u, 0.0, 1.0))), 0.0};
    }
  }
  return {tr.start, 0.0};
}

inline void validate(const Trajectory& tr, const SceneModel& scene) {
  if (tr.duration_us <= 0) throw std::invalid_argument("trajectory duration must be positive");
  auto inside = [&](Point p) {
    return p.x >= 0 && p.x <= scene.resolution.width && p.y >= 0 && p.y <= scene.resolution.height;
  };
  bool ok = inside(tr.start);
  if (tr.kind != MotionKind::fixation && tr.kind != MotionKind::blink) ok = ok && inside(tr.end);
  for (const auto& w : tr.waypoints) ok = ok && inside(w);
  if (!ok) throw std::invalid_argument("trajectory leaves the frame");
  if (tr.kind == MotionKind::saccade && (tr.transition_us <= 0 || tr.onset_us + tr.transition_us > tr.duration_us)) {
    throw std::invalid_argument("saccade movement must fit inside the segment");
  }
  if (tr.kind == MotionKind::blink &&
      (tr.close_us <= 0 || tr.open_us <= 0 || tr.closed_us < 0 ||
       tr.onset_us + tr.close_us + tr.closed_us + tr.open_us > tr.duration_us)) {
    throw std::invalid_argument("blink phases must fit inside the segment");
  }
}

/// Concatenated trajectories evaluated at absolute time t.
class Timeline {
 public:
  explicit Timeline(std::span<const Trajectory> parts) : parts_(parts.begin(), parts.end()) {
    std::int64_t acc = 0;
    for (const auto& p : parts_) {
      starts_.push_back(acc);
      acc += p.duration_us;
    }
    total_ = acc;
  }
  std::int64_t duration() const { return total_; }
  TrajectoryState at(std::int64_t t) const {
    if (parts_.empty()) throw std::logic_error("empty timeline");
    auto it = std::upper_bound(starts_.begin(), starts_.end(), t);
    const auto i = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, (it - starts_.begin()) - 1));
    return sample(parts_[i], t - starts_[i]);
  }

 private:
  std::vector<Trajectory> parts_;
  std::vector<std::int64_t> starts_;
  std::int64_t total_ = 0;
};

struct Dataset {
  EventStream events;
  LabelTrack labels;
};

constexpr std::int64_t kFramePeriodUs = 1000;  // 1 kHz internal sampling

/// Renders the timeline at 1 kHz, runs the threshold model and samples the
/// exact trajectory at `label_rate_hz`. `closed` is set while the eyelid
/// covers the pupil centre.
inline Dataset generate_dataset(std::span<const Trajectory> spec, const SceneModel& scene, int label_rate_hz,
                                std::uint64_t seed) {
  scene.validate();
  if (spec.empty()) throw std::invalid_argument("empty trajectory list");
  if (label_rate_hz <= 0 || 1'000'000 % label_rate_hz != 0) {
    throw std::invalid_argument("label rate must divide 1 MHz");
  }
  for (const auto& tr : spec) validate(tr, scene);
  const Timeline timeline(spec);
  Dataset out{{scene.resolution, {}}, {label_rate_hz, {}}};

  auto frame_at = [&](std::int64_t t) {
    const auto s = timeline.at(t);
    return Frame{t, render_log_intensity(scene, s.center, s.eyelid)};
  };
  EventEmitter em(scene, frame_at(0), seed);
  for (std::int64_t t = kFramePeriodUs; t <= timeline.duration(); t += kFramePeriodUs) em.step(frame_at(t), out.events.events);

  const std::int64_t period = 1'000'000 / label_rate_hz;
  for (std::int64_t t = 0; t <= timeline.duration(); t += period) {
    const auto s = timeline.at(t);
    const bool closed = s.eyelid * scene.resolution.height > s.center.y;
    out.labels.samples.push_back(
        {t, s.center.x / scene.resolution.width, s.center.y / scene.resolution.height, closed});
  }
  return out;
}

/// Keeps the iris (or pupil) fully inside the frame.
inline double safe_margin(const SceneModel& scene) {
  return (scene.iris ? scene.iris->radius : scene.pupil_radius) + 2.0;
}

/// Named scenario lists: fixation, saccade, pursuit, blink, mixed.
inline std::vector<Trajectory> make_preset(const std::string& name, const SceneModel& scene, std::int64_t duration_us,
                                           std::uint64_t seed) {
  if (duration_us <= 0) throw std::invalid_argument("preset duration must be positive");
  std::mt19937_64 rng = split_rng(seed, 0x5a5a);
  const double m = safe_margin(scene);
  const double W = scene.resolution.width, H = scene.resolution.height;
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto ms = [&](double lo, double hi) { return static_cast<std::int64_t>(std::llround(uniform(lo, hi))) * 1000; };
  auto random_point = [&] { return Point{uniform(m, W - m), uniform(m, H - m)}; };
  const Point middle{W / 2, H / 2};

  std::vector<std::string> pool;
  if (name == "fixation") pool = {"fixation"};
  else if (name == "saccade") pool = {"fixation", "saccade"};
  else if (name == "pursuit") pool = {"smooth_pursuit"};
  else if (name == "blink") pool = {"fixation", "blink"};
  else if (name == "mixed") pool = {"fixation", "saccade", "saccade", "smooth_pursuit", "smooth_pursuit", "smooth_pursuit",
                                    "random", "random", "blink"};
  else throw std::invalid_argument("unknown preset '" + name + "'");

  std::vector<Trajectory> out;
  if (name == "fixation") {
    Trajectory tr;
    tr.duration_us = duration_us;
    tr.start = middle;
    out.push_back(tr);
    return out;
  }

  Point here = random_point();
  std::int64_t used = 0;
  std::size_t turn = 0;
  while (used < duration_us) {
    std::string kind = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
    if (name == "saccade" || name == "blink") kind = pool[turn % pool.size()];
    ++turn;
    Trajectory tr;
    tr.kind = parse_motion(kind);
    tr.start = here;
    tr.end = here;
    switch (tr.kind) {
      case MotionKind::fixation:
        tr.duration_us = name == "mixed" ? ms(100, 300) : ms(300, 700);
        break;
      case MotionKind::saccade:
        tr.end = random_point();
        tr.onset_us = ms(20, 80);
        tr.transition_us = ms(30, 60);
        tr.duration_us = tr.onset_us + tr.transition_us + ms(50, 200);
        break;
      case MotionKind::smooth_pursuit: {
        tr.end = random_point();
        const double dist = std::hypot(tr.end.x - tr.start.x, tr.end.y - tr.start.y);
        const double speed = uniform(15.0, 45.0);  // px/s
        tr.duration_us = std::max<std::int64_t>(200'000, static_cast<std::int64_t>(dist / speed * 1e3) * 1000);
        break;
      }
      case MotionKind::random: {
        const int n = 2 + static_cast<int>(rng() % 3);
        for (int i = 0; i < n; ++i) {
          const Point p = here;
          const Point q{std::clamp(p.x + uniform(-15, 15), m, W - m), std::clamp(p.y + uniform(-10, 10), m, H - m)};
          tr.waypoints.push_back(i == 0 ? q : Point{std::clamp(tr.waypoints.back().x + uniform(-15, 15), m, W - m),
                                                    std::clamp(tr.waypoints.back().y + uniform(-10, 10), m, H - m)});
        }
        tr.end = random_point();
        tr.duration_us = static_cast<std::int64_t>(n + 1) * ms(250, 450);
        break;
      }
      case MotionKind::blink:
        tr.onset_us = ms(20, 60);
        tr.close_us = ms(60, 100);
        tr.closed_us = ms(50, 150);
        tr.open_us = ms(100, 150);
        tr.duration_us = tr.onset_us + tr.close_us + tr.closed_us + tr.open_us + ms(20, 60);
        break;
    }
    if (tr.duration_us > duration_us - used) {
      const std::int64_t keep = duration_us - used;
      const Point stop = sample(tr, keep).center;
      if (tr.kind == MotionKind::smooth_pursuit || tr.kind == MotionKind::random || tr.kind == MotionKind::saccade) {
        // The truncated tail becomes a straight pursuit to where the eye is at the cut.
        tr.kind = MotionKind::smooth_pursuit;
        tr.waypoints.clear();
        tr.end = stop;
      } else {
        tr.kind = MotionKind::fixation;
      }
      tr.duration_us = keep;
    }
    used += tr.duration_us;
    here = sample(tr, tr.duration_us).center;
    out.push_back(std::move(tr));
  }
  return out;
}

}  // namespace mambapupil::synth
