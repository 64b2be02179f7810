#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mfr/common.hpp"

namespace mfr {

// 8-bit interleaved RGB, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pix;

  static Image solid(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b);
  bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
  std::uint8_t* at(int x, int y) { return pix.data() + 3 * (static_cast<std::size_t>(y) * width + x); }
  const std::uint8_t* at(int x, int y) const {
    return pix.data() + 3 * (static_cast<std::size_t>(y) * width + x);
  }
};

// Binary PPM (P6), maxval 255.
Image read_ppm(const std::string& path);
void read_ppm_size(const std::string& path, int* width, int* height);
void write_ppm(const std::string& path, const Image& img);

}  // namespace mfr
