#pragma once

// Binary PPM (P6) output for scenes and score-map visualizations.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "rfcn/box.hpp"
#include "rfcn/tensor.hpp"

namespace rfcn {

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB triples

  RgbImage() = default;
  RgbImage(int w, int h, std::uint8_t fill = 0);
  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b);
};

// Channels 0..2 of batch item 0, values in [0, 1].
RgbImage to_rgb(const Tensor& image);

// Gray image of one plane: value v maps to 128 + 127 * v / scale, clamped.
// scale <= 0 renders uniform mid-gray.
RgbImage plane_to_gray(const Tensor& t, std::size_t n, std::size_t c, double scale);

void draw_rect(RgbImage& img, const Box& b, std::uint8_t r, std::uint8_t g, std::uint8_t bl);

void write_ppm(const std::filesystem::path& path, const RgbImage& img);

}  // namespace rfcn
