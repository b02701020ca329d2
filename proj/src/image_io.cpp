#include "offnadir/image_io.hpp"

#include <fstream>
#include <stdexcept>
#include <string>

namespace offnadir {

namespace {

void write_pnm(const std::filesystem::path& p, const char* magic,
               const std::vector<uint8_t>& pix, int w, int h, size_t bytes_per_px) {
  if (w <= 0 || h <= 0) throw std::invalid_argument("pnm: positive dimensions required");
  if (pix.size() != static_cast<size_t>(w) * h * bytes_per_px)
    throw std::invalid_argument("pnm: pixel buffer size mismatch");
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + p.string());
  f << magic << "\n" << w << " " << h << "\n255\n";
  f.write(reinterpret_cast<const char*>(pix.data()), static_cast<std::streamsize>(pix.size()));
  if (!f) throw std::runtime_error("pnm write failed: " + p.string());
}

int read_pnm_int(std::istream& is) {
  int c = is.get();
  while (c == ' ' || c == '\t' || c == '\n' || c == '\r') c = is.get();
  if (c == '#') {  // comment to end of line
    while (c != '\n' && c != EOF) c = is.get();
    return read_pnm_int(is);
  }
  int v = 0;
  bool any = false;
  while (c >= '0' && c <= '9') {
    v = v * 10 + (c - '0');
    any = true;
    c = is.get();
  }
  if (!any) throw std::runtime_error("pnm: malformed header integer");
  return v;
}

std::vector<uint8_t> read_pnm(const std::filesystem::path& p, const char* magic,
                              size_t bytes_per_px, int* w_out, int* h_out) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for read: " + p.string());
  char m[2];
  f.read(m, 2);
  if (!f || m[0] != magic[0] || m[1] != magic[1])
    throw std::runtime_error("pnm: bad magic in " + p.string());
  int w = read_pnm_int(f);
  int h = read_pnm_int(f);
  int maxv = read_pnm_int(f);
  if (maxv != 255) throw std::runtime_error("pnm: only maxval 255 supported");
  // the single whitespace after maxval was already consumed
  std::vector<uint8_t> pix(static_cast<size_t>(w) * h * bytes_per_px);
  f.read(reinterpret_cast<char*>(pix.data()), static_cast<std::streamsize>(pix.size()));
  if (!f) throw std::runtime_error("pnm: truncated pixel data in " + p.string());
  *w_out = w;
  *h_out = h;
  return pix;
}

}  // namespace

void write_pgm(const std::filesystem::path& p, const std::vector<uint8_t>& pix, int w, int h) {
  write_pnm(p, "P5", pix, w, h, 1);
}

void write_ppm(const std::filesystem::path& p, const std::vector<uint8_t>& rgb, int w, int h) {
  write_pnm(p, "P6", rgb, w, h, 3);
}

GrayImage read_pgm(const std::filesystem::path& p) {
  GrayImage g;
  g.pix = read_pnm(p, "P5", 1, &g.w, &g.h);
  return g;
}

RgbImage read_ppm(const std::filesystem::path& p) {
  RgbImage g;
  g.pix = read_pnm(p, "P6", 3, &g.w, &g.h);
  return g;
}

}  // namespace offnadir
