#include "rfcn/scene.hpp"

#include <algorithm>
#include <array>
#include <stdexcept>

namespace rfcn {

void SceneConfig::validate() const {
  if (size < 8) throw std::invalid_argument("scene: size must be >= 8");
  if (min_objects < 1 || max_objects < min_objects) {
    throw std::invalid_argument("scene: need 1 <= min_objects <= max_objects");
  }
  if (min_object_size < 2 || max_object_size < min_object_size || max_object_size > size) {
    throw std::invalid_argument("scene: object size range invalid for image size");
  }
  if (!(noise >= 0.0)) throw std::invalid_argument("scene: noise must be >= 0");
}

std::vector<double> class_color(int label) {
  static constexpr std::array<std::array<double, 3>, 8> palette{{
      {0.95, 0.15, 0.15},
      {0.15, 0.85, 0.20},
      {0.15, 0.30, 0.95},
      {0.95, 0.90, 0.10},
      {0.90, 0.15, 0.90},
      {0.10, 0.90, 0.90},
      {0.95, 0.55, 0.10},
      {0.05, 0.05, 0.05},
  }};
  const auto& c = palette[static_cast<std::size_t>(label - 1) % palette.size()];
  return {c[0], c[1], c[2]};
}

namespace {

bool intersects(const Box& a, const Box& b) {
  return a.x0 < b.x0 + b.w && b.x0 < a.x0 + a.w && a.y0 < b.y0 + b.h && b.y0 < a.y0 + a.h;
}

bool inside_shape(int label, int x, int y, int x0, int y0, int w, int h) {
  if (label % 2 == 1) return true;
  const double rx = 0.5 * w;
  const double ry = 0.5 * h;
  const double dx = (x + 0.5 - x0 - rx) / rx;
  const double dy = (y + 0.5 - y0 - ry) / ry;
  return dx * dx + dy * dy <= 1.0;
}

}  // namespace

SyntheticScene generate_scene(std::mt19937_64& rng, int num_classes, const SceneConfig& cfg) {
  if (num_classes < 1) throw std::invalid_argument("generate_scene: num_classes must be >= 1");
  cfg.validate();
  const auto S = static_cast<std::size_t>(cfg.size);
  SyntheticScene scene{Tensor(Shape{1, 3, S, S}), {}};

  std::normal_distribution<double> noise(0.0, cfg.noise);
  for (double& v : scene.image.data()) v = std::clamp(0.5 + noise(rng), 0.0, 1.0);

  std::uniform_int_distribution<int> count_dist(cfg.min_objects, cfg.max_objects);
  std::uniform_int_distribution<int> class_dist(1, num_classes);
  std::uniform_int_distribution<int> size_dist(cfg.min_object_size, cfg.max_object_size);
  const int wanted = count_dist(rng);

  for (int obj = 0; obj < wanted; ++obj) {
    const int label = class_dist(rng);
    for (int attempt = 0; attempt < 50; ++attempt) {
      const int w = size_dist(rng);
      const int h = size_dist(rng);
      std::uniform_int_distribution<int> xd(0, cfg.size - w);
      std::uniform_int_distribution<int> yd(0, cfg.size - h);
      const int x0 = xd(rng);
      const int y0 = yd(rng);
      const Box candidate{double(x0), double(y0), double(w), double(h)};
      const bool clash = std::any_of(scene.gts.begin(), scene.gts.end(), [&](const GroundTruth& g) {
        return intersects(g.box, candidate);
      });
      if (clash) continue;

      const auto color = class_color(label);
      int bx0 = cfg.size, by0 = cfg.size, bx1 = -1, by1 = -1;
      for (int y = y0; y < y0 + h; ++y) {
        for (int x = x0; x < x0 + w; ++x) {
          if (!inside_shape(label, x, y, x0, y0, w, h)) continue;
          for (std::size_t c = 0; c < 3; ++c) {
            scene.image.at(0, c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
                std::clamp(color[c] + noise(rng), 0.0, 1.0);
          }
          bx0 = std::min(bx0, x);
          by0 = std::min(by0, y);
          bx1 = std::max(bx1, x);
          by1 = std::max(by1, y);
        }
      }
      scene.gts.push_back(GroundTruth{
          Box{double(bx0), double(by0), double(bx1 - bx0 + 1), double(by1 - by0 + 1)}, label});
      break;
    }
  }
  return scene;
}

}  // namespace rfcn
