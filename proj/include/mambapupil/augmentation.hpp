#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "mambapupil/representations.hpp"

// Training-time transforms over (representation sequence, label sequence).
namespace mambapupil {

struct Center {
  double cx = 0;
  double cy = 0;
  friend bool operator==(const Center&, const Center&) = default;
};

using GridSequence = std::vector<Grid>;
using CenterSequence = std::vector<Center>;

enum class FlipAxis { horizontal, vertical };

/// Cutout rectangle in grid pixels: [x0, x0+w) x [y0, y0+h).
struct Rect {
  int x0 = 0;
  int y0 = 0;
  int w = 0;
  int h = 0;
};

/// horizontal mirrors columns (x -> W-1-x, cx -> 1-cx); vertical mirrors rows.
inline std::pair<GridSequence, CenterSequence> spatial_flip(const GridSequence& seq, const CenterSequence& labels,
                                                            FlipAxis axis) {
  GridSequence out;
  out.reserve(seq.size());
  for (const auto& g : seq) {
    Grid f(g.channels, g.height, g.width);
    for (int c = 0; c < g.channels; ++c)
      for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x) {
          const int sx = axis == FlipAxis::horizontal ? g.width - 1 - x : x;
          const int sy = axis == FlipAxis::vertical ? g.height - 1 - y : y;
          f.at(c, y, x) = g.at(c, sy, sx);
        }
    out.push_back(std::move(f));
  }
  CenterSequence flipped = labels;
  for (auto& l : flipped) {
    if (axis == FlipAxis::horizontal) l.cx = 1.0 - l.cx;
    else l.cy = 1.0 - l.cy;
  }
  return {std::move(out), std::move(flipped)};
}

/// Translates content by (dx, dy) grid pixels with zero fill; labels move by
/// (dx/W, dy/H) and are clamped to [0,1].
inline std::pair<GridSequence, CenterSequence> spatial_shift(const GridSequence& seq, const CenterSequence& labels,
                                                             int dx, int dy) {
  GridSequence out;
  out.reserve(seq.size());
  int width = 0, height = 0;
  for (const auto& g : seq) {
    if (std::abs(dx) >= g.width || std::abs(dy) >= g.height) {
      throw std::invalid_argument("shift (" + std::to_string(dx) + "," + std::to_string(dy) + ") exceeds grid size");
    }
    width = g.width;
    height = g.height;
    Grid s(g.channels, g.height, g.width);
    for (int c = 0; c < g.channels; ++c)
      for (int y = 0; y < g.height; ++y) {
        const int sy = y - dy;
        if (sy < 0 || sy >= g.height) continue;
        for (int x = 0; x < g.width; ++x) {
          const int sx = x - dx;
          if (sx >= 0 && sx < g.width) s.at(c, y, x) = g.at(c, sy, sx);
        }
      }
    out.push_back(std::move(s));
  }
  CenterSequence shifted = labels;
  if (!seq.empty()) {
    for (auto& l : shifted) {
      l.cx = std::clamp(l.cx + static_cast<double>(dx) / width, 0.0, 1.0);
      l.cy = std::clamp(l.cy + static_cast<double>(dy) / height, 0.0, 1.0);
    }
  }
  return {std::move(out), std::move(shifted)};
}

/// New window origin, uniform in [origin - max, origin + max] microseconds.
template <typename Rng>
std::int64_t temporal_shift(std::int64_t origin, std::int64_t max_tshift_us, Rng& rng) {
  if (max_tshift_us < 0) throw std::invalid_argument("max temporal shift must be non-negative");
  if (max_tshift_us == 0) return origin;
  std::uniform_int_distribution<std::int64_t> dist(-max_tshift_us, max_tshift_us);
  return origin + dist(rng);
}

/// Zeroes every channel of every grid inside `rect`.
inline GridSequence event_cutout(const GridSequence& seq, const Rect& rect) {
  GridSequence out = seq;
  for (auto& g : out) {
    if (rect.w < 0 || rect.h < 0 || rect.x0 < 0 || rect.y0 < 0 || rect.x0 + rect.w > g.width ||
        rect.y0 + rect.h > g.height) {
      throw std::out_of_range("cutout rectangle outside the frame");
    }
    for (int c = 0; c < g.channels; ++c)
      for (int y = rect.y0; y < rect.y0 + rect.h; ++y)
        for (int x = rect.x0; x < rect.x0 + rect.w; ++x) g.at(c, y, x) = 0.0;
  }
  return out;
}

struct AugmentConfig {
  double prob_flip = 0.5;
  double prob_shift = 0.5;
  double prob_tshift = 0.5;
  double prob_cutout = 0.5;
  // "horizontal", "vertical" or "both" (axis drawn uniformly).
  std::string flip_axes = "horizontal";
  int max_shift_x = 8;  // grid pixels
  int max_shift_y = 6;
  std::int64_t max_tshift_us = 25'000;
  double cutout_min_frac = 0.1;  // of each dimension
  double cutout_max_frac = 0.5;
  bool cutout_per_timestep = false;
  std::uint64_t seed = 0;

  void validate() const {
    for (double p : {prob_flip, prob_shift, prob_tshift, prob_cutout}) {
      if (p < 0 || p > 1) throw std::invalid_argument("augment probabilities must lie in [0,1]");
    }
    if (flip_axes != "horizontal" && flip_axes != "vertical" && flip_axes != "both") {
      throw std::invalid_argument("augment.flip_axes must be horizontal, vertical or both");
    }
    if (max_shift_x < 0 || max_shift_y < 0 || max_tshift_us < 0) {
      throw std::invalid_argument("augment shift bounds must be non-negative");
    }
    if (cutout_min_frac < 0 || cutout_max_frac > 1 || cutout_min_frac > cutout_max_frac) {
      throw std::invalid_argument("augment cutout fractions must satisfy 0 <= min <= max <= 1");
    }
  }
};

/// Independent stream for item `index` derived from a base seed (splitmix64).
inline std::mt19937_64 split_rng(std::uint64_t seed, std::uint64_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return std::mt19937_64(mix(mix(seed) ^ index));
}

/// The random choices for one sequence. Drawn once, then applied to every
/// timestep so that the cutout acts as a persistent occluder.
struct AugmentPlan {
  std::optional<FlipAxis> flip;
  int shift_x = 0;
  int shift_y = 0;
  std::int64_t tshift_us = 0;
  std::vector<Rect> cutouts;  // one entry, or one per timestep
};

template <typename Rng>
Rect sample_cutout(const AugmentConfig& cfg, int height, int width, Rng& rng) {
  auto extent = [&](int size) {
    const int lo = std::max(0, static_cast<int>(std::ceil(cfg.cutout_min_frac * size)));
    const int hi = std::max(lo, static_cast<int>(std::floor(cfg.cutout_max_frac * size)));
    return std::uniform_int_distribution<int>(lo, hi)(rng);
  };
  Rect r;
  r.w = extent(width);
  r.h = extent(height);
  r.x0 = std::uniform_int_distribution<int>(0, width - r.w)(rng);
  r.y0 = std::uniform_int_distribution<int>(0, height - r.h)(rng);
  return r;
}

template <typename Rng>
AugmentPlan sample_plan(const AugmentConfig& cfg, int steps, int height, int width, Rng& rng) {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  AugmentPlan plan;
  if (coin(rng) < cfg.prob_flip) {
    if (cfg.flip_axes == "horizontal") plan.flip = FlipAxis::horizontal;
    else if (cfg.flip_axes == "vertical") plan.flip = FlipAxis::vertical;
    else plan.flip = coin(rng) < 0.5 ? FlipAxis::horizontal : FlipAxis::vertical;
  }
  if (coin(rng) < cfg.prob_shift) {
    const int mx = std::min(cfg.max_shift_x, width - 1), my = std::min(cfg.max_shift_y, height - 1);
    plan.shift_x = std::uniform_int_distribution<int>(-mx, mx)(rng);
    plan.shift_y = std::uniform_int_distribution<int>(-my, my)(rng);
  }
  if (coin(rng) < cfg.prob_tshift) plan.tshift_us = temporal_shift(0, cfg.max_tshift_us, rng);
  if (coin(rng) < cfg.prob_cutout) {
    const int n = cfg.cutout_per_timestep ? steps : 1;
    for (int i = 0; i < n; ++i) plan.cutouts.push_back(sample_cutout(cfg, height, width, rng));
  }
  return plan;
}

/// Applies the spatial part of a plan (flip, shift, cutout). The temporal
/// shift is realized upstream by re-windowing from the shifted origin.
inline std::pair<GridSequence, CenterSequence> apply_plan(const AugmentPlan& plan, GridSequence seq,
                                                          CenterSequence labels) {
  if (plan.flip) std::tie(seq, labels) = spatial_flip(seq, labels, *plan.flip);
  if (plan.shift_x != 0 || plan.shift_y != 0) std::tie(seq, labels) = spatial_shift(seq, labels, plan.shift_x, plan.shift_y);
  if (plan.cutouts.size() == 1) {
    seq = event_cutout(seq, plan.cutouts.front());
  } else if (!plan.cutouts.empty()) {
    if (plan.cutouts.size() != seq.size()) throw std::invalid_argument("per-timestep cutouts do not match sequence");
    for (std::size_t t = 0; t < seq.size(); ++t) {
      GridSequence one{seq[t]};
      seq[t] = event_cutout(one, plan.cutouts[t]).front();
    }
  }
  return {std::move(seq), std::move(labels)};
}

}  // namespace mambapupil
