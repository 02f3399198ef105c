#include "rfcn/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace rfcn {

void SamplerConfig::validate() const {
  if (n_proposals == 0) throw std::invalid_argument("sampler: n_proposals must be >= 1");
  if (batch_rois == 0 || batch_rois > n_proposals) {
    throw std::invalid_argument("sampler: batch_rois must be in [1, n_proposals]");
  }
  if (!(pos_iou > 0.0 && pos_iou < 1.0)) throw std::invalid_argument("sampler: pos_iou in (0,1)");
  if (!(jitter >= 0.0)) throw std::invalid_argument("sampler: jitter must be >= 0");
  if (grid_stride < 0) throw std::invalid_argument("sampler: grid_stride must be >= 0");
  if (!(random_fraction >= 0.0 && random_fraction <= 1.0)) {
    throw std::invalid_argument("sampler: random_fraction in [0,1]");
  }
  if (!(random_max_iou > 0.0 && random_max_iou <= 1.0)) {
    throw std::invalid_argument("sampler: random_max_iou in (0,1]");
  }
}

double iou(const Box& a, const Box& b) {
  const double ix = std::min(a.x0 + a.w, b.x0 + b.w) - std::max(a.x0, b.x0);
  const double iy = std::min(a.y0 + a.h, b.y0 + b.h) - std::max(a.y0, b.y0);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<LabeledRoI> label_rois(std::span<const Box> proposals,
                                   std::span<const GroundTruth> gts, double pos_iou) {
  std::vector<LabeledRoI> out;
  out.reserve(proposals.size());
  for (const Box& p : proposals) {
    LabeledRoI s;
    s.roi = p;
    double best = -1.0;
    const GroundTruth* match = nullptr;
    for (const GroundTruth& g : gts) {
      const double o = iou(p, g.box);
      if (o > best) {
        best = o;
        match = &g;
      }
    }
    if (match != nullptr && best >= pos_iou) {
      s.label = match->label;
      s.target = encode_box(p, match->box);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::size_t> ohem_select(std::span<const double> losses, std::size_t batch) {
  std::vector<std::size_t> idx(losses.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return losses[a] > losses[b]; });
  if (idx.size() > batch) idx.resize(batch);
  return idx;
}

std::vector<std::size_t> ohem_select(std::span<const LabeledRoI> samples, std::size_t batch) {
  std::vector<double> losses(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) losses[i] = samples[i].loss;
  return ohem_select(losses, batch);
}

namespace {

Box clip_keep_pixel(const Box& b, double width, double height) {
  Box c = clip_box(b, width, height);
  if (c.w < 1.0) {
    c.x0 = std::clamp(c.x0, 0.0, width - 1.0);
    c.w = 1.0;
  }
  if (c.h < 1.0) {
    c.y0 = std::clamp(c.y0, 0.0, height - 1.0);
    c.h = 1.0;
  }
  return c;
}

Box random_box(double width, double height, std::mt19937_64& rng) {
  const double lo = std::max(1.0, 0.1 * std::min(width, height));
  const double hi = std::max(lo, 0.5 * std::min(width, height));
  std::uniform_real_distribution<double> size(lo, hi);
  const double w = size(rng);
  const double h = size(rng);
  std::uniform_real_distribution<double> px(0.0, width - w);
  std::uniform_real_distribution<double> py(0.0, height - h);
  return Box{px(rng), py(rng), w, h};
}

}  // namespace

std::vector<Box> generate_proposals(std::span<const GroundTruth> gts, double width, double height,
                                    const SamplerConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const std::size_t n = cfg.n_proposals;
  std::vector<Box> out;
  out.reserve(n);

  if (cfg.grid_stride > 0) {
    const double stride = cfg.grid_stride;
    for (double cy = 0.5 * stride; cy < height && out.size() < n; cy += stride) {
      for (double cx = 0.5 * stride; cx < width && out.size() < n; cx += stride) {
        for (double s : cfg.grid_sizes) {
          for (double a : cfg.grid_aspects) {
            if (out.size() >= n) break;
            const double w = s * std::sqrt(a);
            const double h = s / std::sqrt(a);
            out.push_back(clip_keep_pixel(Box{cx - 0.5 * w, cy - 0.5 * h, w, h}, width, height));
          }
        }
      }
    }
  }

  const auto n_random = static_cast<std::size_t>(std::lround(cfg.random_fraction * n));
  auto max_iou = [&](const Box& b) {
    double best = 0.0;
    for (const GroundTruth& g : gts) best = std::max(best, iou(b, g.box));
    return best;
  };
  for (std::size_t i = 0; i < n_random && out.size() < n; ++i) {
    Box b = random_box(width, height, rng);
    if (cfg.random_max_iou < 1.0) {
      for (int attempt = 1; attempt < 100 && max_iou(b) >= cfg.random_max_iou; ++attempt) {
        b = random_box(width, height, rng);
      }
    }
    out.push_back(b);
  }

  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t g = 0; out.size() < n; ++g) {
    if (gts.empty()) {
      out.push_back(random_box(width, height, rng));
      continue;
    }
    const Box& b = gts[g % gts.size()].box;
    if (cfg.jitter == 0.0) {
      out.push_back(clip_keep_pixel(b, width, height));
      continue;
    }
    const double cx = b.cx() + cfg.jitter * b.w * noise(rng);
    const double cy = b.cy() + cfg.jitter * b.h * noise(rng);
    const double w = b.w * std::exp(cfg.jitter * noise(rng));
    const double h = b.h * std::exp(cfg.jitter * noise(rng));
    out.push_back(clip_keep_pixel(Box{cx - 0.5 * w, cy - 0.5 * h, w, h}, width, height));
  }
  return out;
}

}  // namespace rfcn
