#pragma once

// Serial reference kernels: direct loops with no blocking, lowering or
// threading. They define the expected results for the optimized kernels in
// tensor.hpp / psroi.hpp and serve as the baseline in the kernel benchmark.

#include <span>

#include "rfcn/psroi.hpp"
#include "rfcn/tensor.hpp"

namespace rfcn::reference {

// Sliding-window cross-correlation, one output channel and kernel tap at a time.
Tensor conv2d_forward(const Tensor& input, const ConvLayer& layer);
ConvGrads conv2d_backward(const Tensor& input, const ConvLayer& layer, const Tensor& grad_out);

// RoI-major loops; the backward pass scatters each RoI's bins in turn.
PooledBins psroi_pool_forward(const Tensor& maps, std::span<const RoI> rois,
                              const PsRoiConfig& cfg);
Tensor psroi_pool_backward(const Shape& maps_shape, std::span<const RoI> rois,
                           const PsRoiConfig& cfg, const PooledBins& grad_bins);

}  // namespace rfcn::reference
