#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "alff/tensor.hpp"

namespace alff {

/// 8-bit grayscale raster.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  bool operator==(const GrayImage&) const = default;
};

/// Quantizes channel 0 of a [0, 1] map to 8 bits (value * 255, rounded, clamped).
GrayImage quantize(const Tensor3<double>& map);
Tensor3<double> dequantize(const GrayImage& img);

/// Binary P5 with maxval 255.
void write_pgm(const std::filesystem::path& path, const GrayImage& img);
GrayImage read_pgm(const std::filesystem::path& path);

}  // namespace alff
