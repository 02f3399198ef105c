#include "rfcn/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace rfcn {

RgbImage::RgbImage(int w, int h, std::uint8_t fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, fill) {}

void RgbImage::set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  const auto i = (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                  static_cast<std::size_t>(x)) * 3;
  pixels[i] = r;
  pixels[i + 1] = g;
  pixels[i + 2] = b;
}

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

RgbImage to_rgb(const Tensor& image) {
  const Shape s = image.shape();
  if (s.c < 3) throw std::invalid_argument("to_rgb: need 3 channels");
  RgbImage img(static_cast<int>(s.w), static_cast<int>(s.h));
  for (std::size_t y = 0; y < s.h; ++y) {
    for (std::size_t x = 0; x < s.w; ++x) {
      img.set(static_cast<int>(x), static_cast<int>(y), to_byte(image.at(0, 0, y, x)),
              to_byte(image.at(0, 1, y, x)), to_byte(image.at(0, 2, y, x)));
    }
  }
  return img;
}

RgbImage plane_to_gray(const Tensor& t, std::size_t n, std::size_t c, double scale) {
  const Shape s = t.shape();
  RgbImage img(static_cast<int>(s.w), static_cast<int>(s.h), 128);
  if (!(scale > 0.0)) return img;
  for (std::size_t y = 0; y < s.h; ++y) {
    for (std::size_t x = 0; x < s.w; ++x) {
      const double v = 128.0 + 127.0 * t.at(n, c, y, x) / scale;
      const auto b = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      img.set(static_cast<int>(x), static_cast<int>(y), b, b, b);
    }
  }
  return img;
}

void draw_rect(RgbImage& img, const Box& b, std::uint8_t r, std::uint8_t g, std::uint8_t bl) {
  const int x0 = static_cast<int>(std::floor(b.x0));
  const int y0 = static_cast<int>(std::floor(b.y0));
  const int x1 = static_cast<int>(std::ceil(b.x0 + b.w)) - 1;
  const int y1 = static_cast<int>(std::ceil(b.y0 + b.h)) - 1;
  for (int x = x0; x <= x1; ++x) {
    img.set(x, y0, r, g, bl);
    img.set(x, y1, r, g, bl);
  }
  for (int y = y0; y <= y1; ++y) {
    img.set(x0, y, r, g, bl);
    img.set(x1, y, r, g, bl);
  }
}

void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()),
           static_cast<std::streamsize>(img.pixels.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace rfcn
