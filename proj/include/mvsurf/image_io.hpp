#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mvsurf {

// Interleaved RGB in [0,1], row-major from the top-left pixel.
struct Image {
  int width = 0, height = 0;
  std::vector<float> rgb;

  float* pixel(int x, int y) { return rgb.data() + 3 * (static_cast<std::size_t>(y) * width + x); }
  const float* pixel(int x, int y) const {
    return rgb.data() + 3 * (static_cast<std::size_t>(y) * width + x);
  }
};

// Single-channel float map, row-major from the top-left pixel. Zero marks an
// invalid depth sample.
struct FloatMap {
  int width = 0, height = 0;
  std::vector<float> values;

  float& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

// PPM, binary P6 8-bit.
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);

// PFM, grayscale "Pf", little-endian (scale header -1.0), rows bottom-up.
void write_pfm(const std::string& path, const FloatMap& map);
FloatMap read_pfm(const std::string& path);

// PGM, binary P5 8-bit (debug masks).
void write_pgm(const std::string& path, const std::vector<std::uint8_t>& gray, int width,
               int height);

}  // namespace mvsurf
