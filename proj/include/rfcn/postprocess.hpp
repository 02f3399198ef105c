#pragma once

// Inference-side assembly and PASCAL-style evaluation.

#include <cstddef>
#include <iosfwd>
#include <map>
#include <span>
#include <vector>

#include "rfcn/box.hpp"
#include "rfcn/head.hpp"

namespace rfcn {

struct Detection {
  std::size_t image_id = 0;
  int label = 1;       // >= 1
  double score = 0.0;  // (0, 1)
  Box box;             // image coordinates
  bool operator==(const Detection&) const = default;
};

// Greedy NMS over detections of one class. Keeps the highest score, drops any
// remaining detection with IoU > iou_threshold against it, repeats. Output is
// in descending score order; equal scores keep input order.
std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold);

struct AssembleConfig {
  double score_threshold = 0.05;
  double nms_iou = 0.3;
  double image_width = 0.0;  // 0 disables clipping
  double image_height = 0.0;
};

// For each class c >= 1: RoIs with probs[r, c] > threshold, boxes decoded from
// deltas[r] against proposals[r] and clipped, then per-class NMS. Output is
// grouped by class, each group in descending score order.
std::vector<Detection> assemble_detections(const Matrix& probs, const Matrix& deltas,
                                           std::span<const Box> proposals, std::size_t image_id,
                                           const AssembleConfig& cfg);

struct GtRecord {
  std::size_t image_id = 0;
  Box box;
  int label = 1;
};

struct ApResult {
  std::map<int, double> per_class;  // classes with at least one ground truth
  double mean_ap = 0.0;
};

// All-point interpolated AP per class at the given IoU threshold. Detections
// are visited in descending score order; each one claims the unmatched
// ground truth of the same image and class with the highest IoU, provided
// that IoU >= threshold. mAP averages over classes with ground truths.
ApResult average_precision(std::span<const Detection> dets, std::span<const GtRecord> gts,
                           double iou_threshold = 0.5);

// Area under the all-point interpolated precision/recall curve for one
// ranked list of true/false positive flags.
double ap_from_flags(const std::vector<bool>& tp_in_rank_order, std::size_t num_gt);

// CSV: header "image_id,class,score,x0,y0,w,h", reals with 6 decimals.
void write_detections_csv(std::ostream& os, std::span<const Detection> dets);

}  // namespace rfcn
