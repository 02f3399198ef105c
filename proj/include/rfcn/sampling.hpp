#pragma once

// Box overlap, proposal labeling, online hard example mining, and the
// synthetic proposal generator that stands in for a region proposal network.

#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "rfcn/box.hpp"
#include "rfcn/head.hpp"

namespace rfcn {

struct GroundTruth {
  Box box;
  int label = 1;  // >= 1
};

struct LabeledRoI {
  Box roi;
  int label = 0;  // 0 = background
  std::optional<BoxDelta> target;
  double loss = 0.0;
};

struct SamplerConfig {
  std::size_t n_proposals = 300;  // N
  std::size_t batch_rois = 128;   // B
  double pos_iou = 0.5;
  double jitter = 0.15;  // Gaussian std of center/log-size noise, relative to box size
  int grid_stride = 32;  // 0 disables the negative grid
  std::vector<double> grid_sizes{16.0, 32.0, 48.0};
  std::vector<double> grid_aspects{1.0, 0.5, 2.0};  // w / h
  // Fraction of N filled with uniformly placed random boxes, after the grid.
  double random_fraction = 0.0;
  // Random boxes are redrawn (up to 100 times) until their IoU with every
  // ground truth is below this; 1.0 never redraws.
  double random_max_iou = 1.0;
  void validate() const;
};

// Intersection over union; 0 when either box has no area.
double iou(const Box& a, const Box& b);

// Each proposal takes the class of its highest-IoU ground truth (lowest index
// on ties) when that IoU >= pos_iou, with target encode_box(proposal, gt);
// otherwise background with no target.
std::vector<LabeledRoI> label_rois(std::span<const Box> proposals,
                                   std::span<const GroundTruth> gts, double pos_iou = 0.5);

// Indices of the B largest losses, in descending loss order, ties broken by
// lower index. Every index is selected when losses.size() <= B.
std::vector<std::size_t> ohem_select(std::span<const double> losses, std::size_t batch);
std::vector<std::size_t> ohem_select(std::span<const LabeledRoI> samples, std::size_t batch);

// Exactly cfg.n_proposals boxes clipped to a width x height image: the grid
// of negatives (capped at N), then cfg.random_fraction * N random boxes, then
// jittered ground-truth copies cycling over gts until N. Without gts the
// remainder is filled with random boxes.
std::vector<Box> generate_proposals(std::span<const GroundTruth> gts, double width, double height,
                                    const SamplerConfig& cfg, std::mt19937_64& rng);

}  // namespace rfcn
