#include "mfr/image.hpp"

#include <fstream>

namespace mfr {

Image Image::solid(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  Image img;
  img.width = w;
  img.height = h;
  img.pix.resize(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < img.pix.size(); i += 3) {
    img.pix[i] = r;
    img.pix[i + 1] = g;
    img.pix[i + 2] = b;
  }
  return img;
}

namespace {
// Next whitespace-delimited token, skipping '#' comment lines.
std::string next_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}
}  // namespace

namespace {
void read_header(std::ifstream& in, const std::string& path, int* w, int* h) {
  if (next_token(in) != "P6") throw ParseError(path + ": not a binary PPM (P6) file");
  int maxval = 0;
  try {
    *w = std::stoi(next_token(in));
    *h = std::stoi(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw ParseError(path + ": malformed PPM header");
  }
  if (*w <= 0 || *h <= 0) throw ParseError(path + ": non-positive PPM dimensions");
  if (maxval != 255) throw ParseError(path + ": only maxval 255 is supported");
}
}  // namespace

void read_ppm_size(const std::string& path, int* width, int* height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image file: " + path);
  read_header(in, path, width, height);
}

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image file: " + path);
  int w = 0, h = 0;
  read_header(in, path, &w, &h);
  Image img;
  img.width = w;
  img.height = h;
  img.pix.resize(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(img.pix.data()), static_cast<std::streamsize>(img.pix.size()));
  if (static_cast<std::size_t>(in.gcount()) != img.pix.size())
    throw ParseError(path + ": truncated PPM pixel data");
  return img;
}

void write_ppm(const std::string& path, const Image& img) {
  if (img.width <= 0 || img.height <= 0 ||
      img.pix.size() != static_cast<std::size_t>(img.width) * img.height * 3)
    throw DimensionError("write_ppm: inconsistent image buffer");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write image file: " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pix.data()),
            static_cast<std::streamsize>(img.pix.size()));
  if (!out) throw IoError("short write on image file: " + path);
}

}  // namespace mfr
