#pragma once

#include <cstdint>
#include <vector>

namespace tcal {

// Single-channel 8-bit raster, row-major.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  ImageBuffer() = default;
  ImageBuffer(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t at(int x, int y) const {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
  std::uint8_t& at(int x, int y) {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }

  bool operator==(const ImageBuffer&) const = default;
};

// Mirror an out-of-range index into [0, n). Symmetric reflection with the
// edge sample repeated (…cba|abc…|cba…), period 2n.
int mirror_index(long long t, int n);

// Half-pixel-center bilinear resampling, rounded to nearest and clamped.
ImageBuffer resize_bilinear(const ImageBuffer& src, int new_width, int new_height);

// Pixels scaled to [0, 1] doubles, row-major.
std::vector<double> to_unit_doubles(const ImageBuffer& img);

std::uint8_t clamp_to_byte(double v);

}  // namespace tcal
