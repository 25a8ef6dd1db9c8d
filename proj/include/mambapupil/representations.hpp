#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mambapupil/event_core.hpp"

// Dense encodings of event windows. All grids are channel-major (C, H, W).
namespace mambapupil {

struct Grid {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Grid() = default;
  Grid(int c, int h, int w) : channels(c), height(h), width(w), data(static_cast<std::size_t>(c * h * w), 0.0) {}

  double& at(int c, int y, int x) { return data[index(c, y, x)]; }
  double at(int c, int y, int x) const { return data[index(c, y, x)]; }
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * static_cast<std::size_t>(height) + static_cast<std::size_t>(y)) *
               static_cast<std::size_t>(width) +
           static_cast<std::size_t>(x);
  }
  bool same_shape(const Grid& o) const { return channels == o.channels && height == o.height && width == o.width; }
  friend bool operator==(const Grid&, const Grid&) = default;
};

/// Per-polarity event counts. Channel 0 positive, channel 1 negative.
struct EventFrame {
  Grid grid;
};

/// N-bit temporal binarization. Channel 0 positive, channel 1 negative;
/// values lie on the lattice k / (2^bits - 1).
struct BinaRep {
  int bits = 4;
  Grid grid;
};

struct VoxelGrid {
  int n_bins = 1;
  Grid grid;
};

/// Integer downscaling from sensor pixels to an H x W grid.
struct PixelMap {
  int scale_x = 1;
  int scale_y = 1;

  PixelMap(Resolution sensor, int height, int width) {
    if (height <= 0 || width <= 0) throw std::invalid_argument("grid size must be positive");
    if (sensor.width % width != 0 || sensor.height % height != 0) {
      throw std::invalid_argument("sensor " + std::to_string(sensor.width) + "x" + std::to_string(sensor.height) +
                                  " is not an integer multiple of " + std::to_string(width) + "x" +
                                  std::to_string(height));
    }
    scale_x = sensor.width / width;
    scale_y = sensor.height / height;
  }
  int x(int px) const { return px / scale_x; }
  int y(int py) const { return py / scale_y; }
};

inline int polarity_channel(int p) { return p > 0 ? 0 : 1; }

inline EventFrame encode_frame(const Window& window, Resolution sensor, int height, int width) {
  const PixelMap map(sensor, height, width);
  EventFrame frame{Grid(2, height, width)};
  for (const auto& e : window.events) frame.grid.at(polarity_channel(e.p), map.y(e.y), map.x(e.x)) += 1.0;
  return frame;
}

/// Sub-interval i in [0, bits) of an event inside the window.
inline int sub_interval(const Window& window, std::int64_t t, int bits) {
  const auto i = static_cast<int>(((t - window.t_start) * bits) / window.duration());
  return std::clamp(i, 0, bits - 1);
}

/// Splits the window into `bits` equal sub-intervals; a cell's value is
/// sum_i b_i 2^i / (2^bits - 1) where b_i marks at least one event of that
/// polarity in sub-interval i. The latest sub-interval is the most
/// significant bit.
inline BinaRep encode_bina_rep(const Window& window, Resolution sensor, int bits, int height, int width) {
  if (bits < 1 || bits > 30) throw std::invalid_argument("bina-rep bits must be in [1,30], got " + std::to_string(bits));
  if (window.duration() <= 0) throw std::invalid_argument("bina-rep window must have positive duration");
  const PixelMap map(sensor, height, width);
  std::vector<std::uint32_t> masks(static_cast<std::size_t>(2 * height * width), 0u);
  for (const auto& e : window.events) {
    const int i = sub_interval(window, e.t, bits);
    const std::size_t cell = (static_cast<std::size_t>(polarity_channel(e.p)) * static_cast<std::size_t>(height) +
                              static_cast<std::size_t>(map.y(e.y))) *
                                 static_cast<std::size_t>(width) +
                             static_cast<std::size_t>(map.x(e.x));
    masks[cell] |= (1u << i);
  }
  BinaRep rep{bits, Grid(2, height, width)};
  const double denom = static_cast<double>((1u << bits) - 1u);
  for (std::size_t k = 0; k < masks.size(); ++k) rep.grid.data[k] = static_cast<double>(masks[k]) / denom;
  return rep;
}

/// Polarity mass split linearly between the two nearest of `n_bins`
/// temporal bins; bin centers sit at t_start + k * duration / (n_bins - 1).
inline VoxelGrid encode_voxel(const Window& window, Resolution sensor, int n_bins, int height, int width) {
  if (n_bins < 1) throw std::invalid_argument("voxel grid needs at least one bin");
  if (window.duration() <= 0) throw std::invalid_argument("voxel window must have positive duration");
  const PixelMap map(sensor, height, width);
  VoxelGrid vox{n_bins, Grid(n_bins, height, width)};
  const double span = static_cast<double>(window.duration());
  for (const auto& e : window.events) {
    const int x = map.x(e.x), y = map.y(e.y);
    if (n_bins == 1) {
      vox.grid.at(0, y, x) += e.p;
      continue;
    }
    const double ts = static_cast<double>(n_bins - 1) * static_cast<double>(e.t - window.t_start) / span;
    const int left = std::clamp(static_cast<int>(std::floor(ts)), 0, n_bins - 1);
    const double frac = ts - left;
    vox.grid.at(left, y, x) += e.p * (1.0 - frac);
    if (frac > 0 && left + 1 < n_bins) vox.grid.at(left + 1, y, x) += e.p * frac;
  }
  return vox;
}

// BREP dump: 16-byte header { "BREP", u8 bits, u8 channels, u16 height,
// u16 width, 6 zero bytes } then little-endian f32 values in (C, H, W) order.
namespace brep {

inline void write(std::ostream& os, const BinaRep& rep) {
  std::array<unsigned char, 16> header{};
  std::memcpy(header.data(), "BREP", 4);
  header[4] = static_cast<unsigned char>(rep.bits);
  header[5] = static_cast<unsigned char>(rep.grid.channels);
  header[6] = static_cast<unsigned char>(rep.grid.height & 0xff);
  header[7] = static_cast<unsigned char>((rep.grid.height >> 8) & 0xff);
  header[8] = static_cast<unsigned char>(rep.grid.width & 0xff);
  header[9] = static_cast<unsigned char>((rep.grid.width >> 8) & 0xff);
  os.write(reinterpret_cast<const char*>(header.data()), header.size());
  for (double v : rep.grid.data) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    const std::array<unsigned char, 4> le{static_cast<unsigned char>(bits & 0xff),
                                          static_cast<unsigned char>((bits >> 8) & 0xff),
                                          static_cast<unsigned char>((bits >> 16) & 0xff),
                                          static_cast<unsigned char>((bits >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(le.data()), 4);
  }
}

/// Reads one record; returns false at clean end of stream.
inline bool read(std::istream& is, BinaRep& rep) {
  std::array<unsigned char, 16> header{};
  if (!is.read(reinterpret_cast<char*>(header.data()), header.size())) {
    if (is.gcount() == 0) return false;
    throw std::runtime_error("truncated BREP header");
  }
  if (std::memcmp(header.data(), "BREP", 4) != 0) throw std::runtime_error("bad BREP magic");
  rep.bits = header[4];
  const int channels = header[5];
  const int height = header[6] | (header[7] << 8);
  const int width = header[8] | (header[9] << 8);
  rep.grid = Grid(channels, height, width);
  for (double& v : rep.grid.data) {
    std::array<unsigned char, 4> le{};
    if (!is.read(reinterpret_cast<char*>(le.data()), 4)) throw std::runtime_error("truncated BREP payload");
    const std::uint32_t bits = le[0] | (le[1] << 8) | (le[2] << 16) | (static_cast<std::uint32_t>(le[3]) << 24);
    v = std::bit_cast<float>(bits);
  }
  return true;
}

}  // namespace brep

}  // namespace mambapupil
