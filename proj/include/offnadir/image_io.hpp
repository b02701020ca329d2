#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace offnadir {

// Binary PGM (P5) / PPM (P6), maxval 255.
// Header is exactly "P5\n<w> <h>\n255\n" (P6 for PPM) followed by raw bytes.
void write_pgm(const std::filesystem::path& p, const std::vector<uint8_t>& pix, int w, int h);
void write_ppm(const std::filesystem::path& p, const std::vector<uint8_t>& rgb, int w, int h);

struct GrayImage {
  int w = 0, h = 0;
  std::vector<uint8_t> pix;
};
struct RgbImage {
  int w = 0, h = 0;
  std::vector<uint8_t> pix;  // 3 bytes per pixel
};

GrayImage read_pgm(const std::filesystem::path& p);
RgbImage read_ppm(const std::filesystem::path& p);

}  // namespace offnadir
