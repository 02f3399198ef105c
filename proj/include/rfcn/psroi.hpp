#pragma once

// Position-sensitive RoI pooling.
//
// A score-map bank holds k*k maps per output group (C+1 classes, or the 4 box
// deltas). Bin (i, j) of an RoI averages only over the map dedicated to that
// bin. Index i runs along x (width), j along y (height):
//
//   bin(i, j) = [x0 + floor(i*w/k), x0 + ceil((i+1)*w/k))
//             x [y0 + floor(j*h/k), y0 + ceil((j+1)*h/k))
//
// Channel layout of a bank is bin-major, then group:
//
//   channel(i, j, g) = (i*k + j) * groups + g
//
// Adjacent bins may overlap by one pixel when k does not divide the extent;
// the backward pass accumulates both contributions.

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "rfcn/box.hpp"
#include "rfcn/tensor.hpp"

namespace rfcn {

// Integer RoI in feature-map coordinates.
struct RoI {
  std::size_t batch_index = 0;
  int x0 = 0;
  int y0 = 0;
  int w = 1;
  int h = 1;
  bool operator==(const RoI&) const = default;
};

enum class MapKind { classification, regression };

struct PsRoiConfig {
  int k = 3;
  int num_classes = 1;  // C, background excluded
  MapKind kind = MapKind::classification;

  int groups() const { return kind == MapKind::classification ? num_classes + 1 : 4; }
  std::size_t channels() const {
    return static_cast<std::size_t>(k) * static_cast<std::size_t>(k) *
           static_cast<std::size_t>(groups());
  }
  std::size_t channel(int i, int j, int g) const {
    return static_cast<std::size_t>((i * k + j) * groups() + g);
  }
  void validate() const;
};

// Pooled responses r_g(i, j) for every RoI, stored (roi, group, i, j).
class PooledBins {
 public:
  PooledBins() = default;
  PooledBins(std::size_t num_rois, int groups, int k, double fill = 0.0);

  std::size_t num_rois() const { return num_rois_; }
  int groups() const { return groups_; }
  int k() const { return k_; }

  double& at(std::size_t r, int g, int i, int j) { return values_[offset(r, g, i, j)]; }
  double at(std::size_t r, int g, int i, int j) const { return values_[offset(r, g, i, j)]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  bool same_layout(const PooledBins& o) const {
    return num_rois_ == o.num_rois_ && groups_ == o.groups_ && k_ == o.k_;
  }
  bool operator==(const PooledBins&) const = default;

 private:
  std::size_t offset(std::size_t r, int g, int i, int j) const {
    return ((r * static_cast<std::size_t>(groups_) + static_cast<std::size_t>(g)) *
                static_cast<std::size_t>(k_) +
            static_cast<std::size_t>(i)) *
               static_cast<std::size_t>(k_) +
           static_cast<std::size_t>(j);
  }

  std::size_t num_rois_ = 0;
  int groups_ = 0;
  int k_ = 0;
  std::vector<double> values_;
};

struct Span {
  int lo;
  int hi;  // exclusive
  bool operator==(const Span&) const = default;
};

// [floor(index*extent/k), ceil((index+1)*extent/k)); throws std::out_of_range
// for index outside [0, k) and std::invalid_argument for extent < 1 or k < 1.
Span bin_span(int index, int extent, int k);

// Clip an RoI to a feature map of the given height/width. The result always
// keeps at least one pixel.
RoI clip_roi(const RoI& roi, std::size_t height, std::size_t width);

// Image-space box to feature-map RoI: x0 = round(x/stride), w = max(1, round(w/stride)),
// then clipped.
RoI project_box(const Box& box, int stride, const Shape& feature_shape,
                std::size_t batch_index = 0);

PooledBins psroi_pool_forward(const Tensor& maps, std::span<const RoI> rois,
                              const PsRoiConfig& cfg, Exec exec = Exec::serial);

Tensor psroi_pool_backward(const Shape& maps_shape, std::span<const RoI> rois,
                           const PsRoiConfig& cfg, const PooledBins& grad_bins,
                           Exec exec = Exec::serial);

}  // namespace rfcn
