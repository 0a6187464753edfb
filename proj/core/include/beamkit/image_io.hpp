#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace beamkit::img {

struct Gray8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

struct Gray16 {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> pixels;  // row-major
};

// Deterministic grayscale PNG: fixed encoder settings, no ancillary chunks,
// so identical pixels produce identical bytes.
void write_png(const std::string& path, const Gray8& image);
void write_png(const std::string& path, const Gray16& image);
Gray8 read_png_gray8(const std::string& path);

// Binary PGM (P5), maxval 255.
void write_pgm(const std::string& path, const Gray8& image);
Gray8 read_pgm(const std::string& path);

}  // namespace beamkit::img
