#include "rfcn/psroi.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <stdexcept>
#include <string>

namespace rfcn {

Box clip_box(const Box& b, double width, double height) {
  const double x0 = std::clamp(b.x0, 0.0, width);
  const double y0 = std::clamp(b.y0, 0.0, height);
  const double x1 = std::clamp(b.x0 + b.w, 0.0, width);
  const double y1 = std::clamp(b.y0 + b.h, 0.0, height);
  return Box{x0, y0, x1 - x0, y1 - y0};
}

void PsRoiConfig::validate() const {
  if (k < 1) throw std::invalid_argument("psroi: k must be >= 1");
  if (num_classes < 1) throw std::invalid_argument("psroi: num_classes must be >= 1");
}

PooledBins::PooledBins(std::size_t num_rois, int groups, int k, double fill)
    : num_rois_(num_rois), groups_(groups), k_(k) {
  if (groups < 1 || k < 1) throw std::invalid_argument("PooledBins: groups and k must be >= 1");
  values_.assign(num_rois * static_cast<std::size_t>(groups) * static_cast<std::size_t>(k) *
                     static_cast<std::size_t>(k),
                 fill);
}

Span bin_span(int index, int extent, int k) {
  if (k < 1) throw std::invalid_argument("bin_span: k must be >= 1");
  if (extent < 1) throw std::invalid_argument("bin_span: extent must be >= 1");
  if (index < 0 || index >= k) {
    throw std::out_of_range("bin_span: index " + std::to_string(index) + " outside [0, " +
                            std::to_string(k) + ")");
  }
  const long lo = static_cast<long>(index) * extent / k;
  const long hi = (static_cast<long>(index + 1) * extent + k - 1) / k;
  assert(hi > lo);
  return Span{static_cast<int>(lo), static_cast<int>(hi)};
}

RoI clip_roi(const RoI& roi, std::size_t height, std::size_t width) {
  const int W = static_cast<int>(width);
  const int H = static_cast<int>(height);
  RoI out = roi;
  const int x1 = roi.x0 + std::max(roi.w, 1);
  const int y1 = roi.y0 + std::max(roi.h, 1);
  out.x0 = std::clamp(roi.x0, 0, W - 1);
  out.y0 = std::clamp(roi.y0, 0, H - 1);
  out.w = std::max(1, std::min(x1, W) - out.x0);
  out.h = std::max(1, std::min(y1, H) - out.y0);
  return out;
}

RoI project_box(const Box& box, int stride, const Shape& feature_shape, std::size_t batch_index) {
  if (stride < 1) throw std::invalid_argument("project_box: stride must be >= 1");
  const double s = static_cast<double>(stride);
  RoI r;
  r.batch_index = batch_index;
  r.x0 = static_cast<int>(std::lround(box.x0 / s));
  r.y0 = static_cast<int>(std::lround(box.y0 / s));
  r.w = std::max(1, static_cast<int>(std::lround(box.w / s)));
  r.h = std::max(1, static_cast<int>(std::lround(box.h / s)));
  return clip_roi(r, feature_shape.h, feature_shape.w);
}

namespace {

void check_bank(const Tensor& maps, const PsRoiConfig& cfg) {
  cfg.validate();
  if (maps.shape().c != cfg.channels()) {
    throw std::invalid_argument("psroi: bank has " + std::to_string(maps.shape().c) +
                                " channels, expected " + std::to_string(cfg.channels()));
  }
}

void check_batch(std::span<const RoI> rois, std::size_t batch) {
  for (const RoI& r : rois) {
    if (r.batch_index >= batch) {
      throw std::invalid_argument("psroi: RoI batch index " + std::to_string(r.batch_index) +
                                  " out of range");
    }
  }
}

}  // namespace

PooledBins psroi_pool_forward(const Tensor& maps, std::span<const RoI> rois,
                              const PsRoiConfig& cfg, Exec exec) {
  check_bank(maps, cfg);
  const Shape s = maps.shape();
  check_batch(rois, s.n);
  const int k = cfg.k;
  const int groups = cfg.groups();
  PooledBins out(rois.size(), groups, k);

  // Pixel-major copy of the bank: the groups of one bin at one pixel are
  // contiguous, so a bin reads a few cache lines per pixel instead of one
  // line in each of `groups` separate maps.
  const std::size_t C = s.c;
  std::vector<double> hwc(s.size());
  constexpr std::size_t kTile = 16;  // pixels per transpose tile
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t p0 = 0; p0 < s.plane(); p0 += kTile) {
      const std::size_t p1 = std::min(p0 + kTile, s.plane());
      for (std::size_t c = 0; c < C; ++c) {
        const double* plane = maps.plane(b, c).data();
        double* dst = hwc.data() + b * s.plane() * C + c;
        for (std::size_t p = p0; p < p1; ++p) dst[p * C] = plane[p];
      }
    }
  }

  const long num_rois = static_cast<long>(rois.size());
#pragma omp parallel if (exec == Exec::parallel)
  {
    std::vector<double> acc(static_cast<std::size_t>(groups));
#pragma omp for schedule(static)
    for (long rl = 0; rl < num_rois; ++rl) {
      const auto r = static_cast<std::size_t>(rl);
      const RoI roi = clip_roi(rois[r], s.h, s.w);
      const double* image = hwc.data() + roi.batch_index * s.plane() * C;
      for (int i = 0; i < k; ++i) {
        const Span xs = bin_span(i, roi.w, k);
        for (int j = 0; j < k; ++j) {
          const Span ys = bin_span(j, roi.h, k);
          const double n = static_cast<double>((xs.hi - xs.lo) * (ys.hi - ys.lo));
          const std::size_t ch0 = cfg.channel(i, j, 0);
          std::fill(acc.begin(), acc.end(), 0.0);
          for (int y = roi.y0 + ys.lo; y < roi.y0 + ys.hi; ++y) {
            for (int x = roi.x0 + xs.lo; x < roi.x0 + xs.hi; ++x) {
              const double* px =
                  image + (static_cast<std::size_t>(y) * s.w + static_cast<std::size_t>(x)) * C + ch0;
              for (int g = 0; g < groups; ++g) acc[static_cast<std::size_t>(g)] += px[g];
            }
          }
          for (int g = 0; g < groups; ++g) out.at(r, g, i, j) = acc[static_cast<std::size_t>(g)] / n;
        }
      }
    }
  }
  return out;
}

Tensor psroi_pool_backward(const Shape& maps_shape, std::span<const RoI> rois,
                           const PsRoiConfig& cfg, const PooledBins& grad_bins, Exec exec) {
  cfg.validate();
  if (maps_shape.c != cfg.channels()) {
    throw std::invalid_argument("psroi_pool_backward: maps_shape has " +
                                std::to_string(maps_shape.c) + " channels, expected " +
                                std::to_string(cfg.channels()));
  }
  if (grad_bins.num_rois() != rois.size() || grad_bins.groups() != cfg.groups() ||
      grad_bins.k() != cfg.k) {
    throw std::invalid_argument("psroi_pool_backward: grad_bins layout does not match rois/cfg");
  }
  check_batch(rois, maps_shape.n);
  Tensor grad(maps_shape);
  const int k = cfg.k;
  const int groups = cfg.groups();
  const long channels = static_cast<long>(cfg.channels());

  // Every channel belongs to exactly one (bin, group), so channels are
  // independent; RoIs are visited in order within a channel, which keeps the
  // accumulation order identical for serial and parallel execution.
#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
  for (long ch = 0; ch < channels; ++ch) {
    const int bin = static_cast<int>(ch) / groups;
    const int g = static_cast<int>(ch) % groups;
    const int i = bin / k;
    const int j = bin % k;
    for (std::size_t r = 0; r < rois.size(); ++r) {
      const double gv = grad_bins.at(r, g, i, j);
      if (gv == 0.0) continue;
      const RoI roi = clip_roi(rois[r], maps_shape.h, maps_shape.w);
      const Span xs = bin_span(i, roi.w, k);
      const Span ys = bin_span(j, roi.h, k);
      const double share = gv / static_cast<double>((xs.hi - xs.lo) * (ys.hi - ys.lo));
      auto plane = grad.plane(roi.batch_index, static_cast<std::size_t>(ch));
      for (int y = roi.y0 + ys.lo; y < roi.y0 + ys.hi; ++y) {
        double* row = plane.data() + static_cast<std::size_t>(y) * maps_shape.w;
        for (int x = roi.x0 + xs.lo; x < roi.x0 + xs.hi; ++x) row[x] += share;
      }
    }
  }
  return grad;
}

}  // namespace rfcn
