#include "mvsurf/image_io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mvsurf {

namespace {

std::uint8_t to_byte(float v) {
  const float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

}  // namespace

void write_ppm(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("ppm: cannot open " + path + " for writing");
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    const float* src = img.rgb.data() + 3 * static_cast<std::size_t>(y) * img.width;
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = to_byte(src[i]);
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw std::runtime_error("ppm: short write to " + path);
}

Image read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("ppm: cannot open " + path);
  std::string magic;
  int w, h, maxval;
  is >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255)
    throw std::runtime_error("ppm: expected binary P6 maxval 255 in " + path);
  is.get();  // single whitespace after the header
  Image img;
  img.width = w;
  img.height = h;
  img.rgb.resize(static_cast<std::size_t>(w) * h * 3);
  std::vector<std::uint8_t> bytes(img.rgb.size());
  is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (is.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw std::runtime_error("ppm: truncated pixel data in " + path);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.rgb[i] = bytes[i] / 255.0f;
  return img;
}

void write_pfm(const std::string& path, const FloatMap& map) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("pfm: cannot open " + path + " for writing");
  os << "Pf\n" << map.width << " " << map.height << "\n-1.0\n";
  // PFM stores rows bottom-up.
  for (int y = map.height - 1; y >= 0; --y)
    os.write(reinterpret_cast<const char*>(map.values.data() +
                                           static_cast<std::size_t>(y) * map.width),
             static_cast<std::streamsize>(sizeof(float)) * map.width);
  if (!os) throw std::runtime_error("pfm: short write to " + path);
}

FloatMap read_pfm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("pfm: cannot open " + path);
  std::string magic;
  int w, h;
  double scale;
  is >> magic >> w >> h >> scale;
  if (magic != "Pf") throw std::runtime_error("pfm: expected grayscale 'Pf' in " + path);
  if (scale >= 0) throw std::runtime_error("pfm: big-endian files unsupported: " + path);
  is.get();
  FloatMap map;
  map.width = w;
  map.height = h;
  map.values.resize(static_cast<std::size_t>(w) * h);
  for (int y = h - 1; y >= 0; --y) {
    is.read(reinterpret_cast<char*>(map.values.data() + static_cast<std::size_t>(y) * w),
            static_cast<std::streamsize>(sizeof(float)) * w);
    if (is.gcount() != static_cast<std::streamsize>(sizeof(float)) * w)
      throw std::runtime_error("pfm: truncated row data in " + path);
  }
  return map;
}

void write_pgm(const std::string& path, const std::vector<std::uint8_t>& gray, int width,
               int height) {
  if (static_cast<std::size_t>(width) * height != gray.size())
    throw std::invalid_argument("pgm: size mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("pgm: cannot open " + path + " for writing");
  os << "P5\n" << width << " " << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
}

}  // namespace mvsurf
