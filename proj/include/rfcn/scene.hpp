#pragma once

// Synthetic detection scenes: filled rectangles and ellipses of a per-class
// color on a noisy gray background.

#include <cstdint>
#include <random>
#include <vector>

#include "rfcn/sampling.hpp"
#include "rfcn/tensor.hpp"

namespace rfcn {

struct SceneConfig {
  int size = 96;  // square image side
  int min_objects = 1;
  int max_objects = 4;
  int min_object_size = 16;
  int max_object_size = 48;
  double noise = 0.05;
  void validate() const;
};

struct SyntheticScene {
  Tensor image;  // (1, 3, size, size), values in [0, 1]
  std::vector<GroundTruth> gts;
};

// Odd classes are drawn as rectangles, even classes as ellipses; each class
// has its own color. Objects never overlap and each gt box is the exact pixel
// bounding box of its drawn shape.
SyntheticScene generate_scene(std::mt19937_64& rng, int num_classes, const SceneConfig& cfg = {});

std::vector<double> class_color(int label);

}  // namespace rfcn
