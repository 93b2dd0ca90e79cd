#include "alff/pgm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace alff {

GrayImage quantize(const Tensor3<double>& map) {
  GrayImage img;
  img.width = map.width();
  img.height = map.height();
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const double v = std::clamp(map[i], 0.0, 1.0);
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return img;
}

Tensor3<double> dequantize(const GrayImage& img) {
  Tensor3<double> out(1, img.height, img.width);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) out[i] = img.pixels[i] / 255.0;
  return out;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "P5\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()),
           static_cast<std::streamsize>(img.pixels.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& is) {
  std::string tok;
  char ch = 0;
  while (is.get(ch)) {
    if (ch == '#') {
      std::string discard;
      std::getline(is, discard);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  if (next_token(is) != "P5") throw std::runtime_error(path.string() + ": not a binary PGM (P5)");
  GrayImage img;
  try {
    img.width = std::stoi(next_token(is));
    img.height = std::stoi(next_token(is));
    if (std::stoi(next_token(is)) != 255) {
      throw std::runtime_error(path.string() + ": only maxval 255 is supported");
    }
  } catch (const std::logic_error&) {
    throw std::runtime_error(path.string() + ": malformed PGM header");
  }
  if (img.width <= 0 || img.height <= 0) throw std::runtime_error(path.string() + ": bad size");
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (is.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw std::runtime_error(path.string() + ": truncated pixel data");
  }
  return img;
}

}  // namespace alff
