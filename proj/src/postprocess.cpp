#include "rfcn/postprocess.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <set>

#include "rfcn/sampling.hpp"

namespace rfcn {

namespace {

std::vector<std::size_t> score_order(std::span<const Detection> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

}  // namespace

std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold) {
  const auto order = score_order(dets);
  std::vector<bool> suppressed(dets.size(), false);
  std::vector<Detection> kept;
  for (std::size_t a = 0; a < order.size(); ++a) {
    if (suppressed[a]) continue;
    const Detection& best = dets[order[a]];
    kept.push_back(best);
    for (std::size_t b = a + 1; b < order.size(); ++b) {
      if (!suppressed[b] && iou(best.box, dets[order[b]].box) > iou_threshold) {
        suppressed[b] = true;
      }
    }
  }
  return kept;
}

std::vector<Detection> assemble_detections(const Matrix& probs, const Matrix& deltas,
                                           std::span<const Box> proposals, std::size_t image_id,
                                           const AssembleConfig& cfg) {
  if (probs.rows() != proposals.size() || deltas.rows() != proposals.size() ||
      deltas.cols() != 4) {
    throw std::invalid_argument("assemble_detections: misaligned probs/deltas/proposals");
  }
  std::vector<Detection> out;
  for (std::size_t c = 1; c < probs.cols(); ++c) {
    std::vector<Detection> cand;
    for (std::size_t r = 0; r < proposals.size(); ++r) {
      const double s = probs(r, c);
      if (!(s > cfg.score_threshold)) continue;
      Box b = decode_box(proposals[r], BoxDelta::from(deltas.row(r)));
      if (cfg.image_width > 0.0 && cfg.image_height > 0.0) {
        b = clip_box(b, cfg.image_width, cfg.image_height);
      }
      if (!(b.w > 0.0 && b.h > 0.0)) continue;
      cand.push_back(Detection{image_id, static_cast<int>(c), s, b});
    }
    auto kept = nms(cand, cfg.nms_iou);
    out.insert(out.end(), kept.begin(), kept.end());
  }
  return out;
}

double ap_from_flags(const std::vector<bool>& tp, std::size_t num_gt) {
  if (num_gt == 0 || tp.empty()) return 0.0;
  std::vector<double> recall(tp.size());
  std::vector<double> precision(tp.size());
  double ntp = 0.0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    if (tp[i]) ntp += 1.0;
    recall[i] = ntp / static_cast<double>(num_gt);
    precision[i] = ntp / static_cast<double>(i + 1);
  }
  // Precision envelope, then sum precision over recall increments.
  for (std::size_t i = tp.size() - 1; i > 0; --i) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

ApResult average_precision(std::span<const Detection> dets, std::span<const GtRecord> gts,
                           double iou_threshold) {
  std::set<int> classes;
  for (const GtRecord& g : gts) classes.insert(g.label);

  ApResult result;
  for (int c : classes) {
    std::vector<std::size_t> gt_idx;
    for (std::size_t i = 0; i < gts.size(); ++i) {
      if (gts[i].label == c) gt_idx.push_back(i);
    }
    std::vector<Detection> cls_dets;
    for (const Detection& d : dets) {
      if (d.label == c) cls_dets.push_back(d);
    }
    const auto order = score_order(cls_dets);
    std::vector<bool> matched(gt_idx.size(), false);
    std::vector<bool> flags;
    flags.reserve(order.size());
    for (std::size_t o : order) {
      const Detection& d = cls_dets[o];
      double best = -1.0;
      std::size_t best_g = 0;
      for (std::size_t g = 0; g < gt_idx.size(); ++g) {
        const GtRecord& gt = gts[gt_idx[g]];
        if (matched[g] || gt.image_id != d.image_id) continue;
        const double ov = iou(d.box, gt.box);
        if (ov > best) {
          best = ov;
          best_g = g;
        }
      }
      const bool hit = best >= iou_threshold;
      if (hit) matched[best_g] = true;
      flags.push_back(hit);
    }
    result.per_class[c] = ap_from_flags(flags, gt_idx.size());
  }
  if (!result.per_class.empty()) {
    double sum = 0.0;
    for (const auto& [c, ap] : result.per_class) sum += ap;
    result.mean_ap = sum / static_cast<double>(result.per_class.size());
  }
  return result;
}

void write_detections_csv(std::ostream& os, std::span<const Detection> dets) {
  os << "image_id,class,score,x0,y0,w,h\n";
  char buf[256];
  for (const Detection& d : dets) {
    std::snprintf(buf, sizeof(buf), "%zu,%d,%.6f,%.6f,%.6f,%.6f,%.6f\n", d.image_id, d.label,
                  d.score, d.box.x0, d.box.y0, d.box.w, d.box.h);
    os << buf;
  }
}

}  // namespace rfcn
