#include "rfcn/reference.hpp"

#include <algorithm>
#include <stdexcept>

namespace rfcn::reference {

namespace {

// Output rows o with 0 <= o*stride + k - pad < in, as the half-open range [lo, hi).
struct ValidRange {
  std::size_t lo;
  std::size_t hi;
};

ValidRange valid_outputs(std::size_t k, std::size_t pad, std::size_t stride, std::size_t in,
                         std::size_t out) {
  const long kk = static_cast<long>(k);
  const long p = static_cast<long>(pad);
  const long s = static_cast<long>(stride);
  // o*s + kk - p >= 0  ->  o >= ceil((p - kk) / s)
  long lo = 0;
  if (p > kk) lo = (p - kk + s - 1) / s;
  // o*s + kk - p <= in - 1  ->  o <= floor((in - 1 - kk + p) / s)
  const long top = static_cast<long>(in) - 1 - kk + p;
  long hi = top < 0 ? 0 : top / s + 1;
  hi = std::min(hi, static_cast<long>(out));
  if (lo > hi) lo = hi;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const ConvLayer& layer) {
  const Shape in = input.shape();
  const Shape out_shape = layer.output_shape(in);
  Tensor out(out_shape);
  const std::size_t kh = layer.kernel_h();
  const std::size_t kw = layer.kernel_w();
  const std::size_t s = layer.stride;
  const std::size_t p = layer.padding;
  const long out_c = static_cast<long>(out_shape.c);

  for (std::size_t n = 0; n < in.n; ++n) {
    for (long oc = 0; oc < out_c; ++oc) {
      auto dst = out.plane(n, static_cast<std::size_t>(oc));
      std::fill(dst.begin(), dst.end(), layer.bias[static_cast<std::size_t>(oc)]);
      for (std::size_t ic = 0; ic < in.c; ++ic) {
        auto src = input.plane(n, ic);
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const ValidRange rows = valid_outputs(ky, p, s, in.h, out_shape.h);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const ValidRange cols = valid_outputs(kx, p, s, in.w, out_shape.w);
            const double wv = layer.weights.at(static_cast<std::size_t>(oc), ic, ky, kx);
            for (std::size_t oy = rows.lo; oy < rows.hi; ++oy) {
              const std::size_t iy = oy * s + ky - p;
              const double* srow = src.data() + iy * in.w;
              double* drow = dst.data() + oy * out_shape.w;
              for (std::size_t ox = cols.lo; ox < cols.hi; ++ox) {
                drow[ox] += wv * srow[ox * s + kx - p];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, const ConvLayer& layer, const Tensor& grad_out) {
  const Shape in = input.shape();
  const Shape out_shape = layer.output_shape(in);
  if (grad_out.shape() != out_shape) {
    throw std::invalid_argument("conv2d_backward: grad_out shape " + to_string(grad_out.shape()) +
                                " does not match forward output " + to_string(out_shape));
  }
  const std::size_t kh = layer.kernel_h();
  const std::size_t kw = layer.kernel_w();
  const std::size_t s = layer.stride;
  const std::size_t p = layer.padding;

  ConvGrads g{Tensor(in), Tensor(layer.weights.shape()),
              std::vector<double>(layer.out_channels(), 0.0)};

  const long out_c = static_cast<long>(out_shape.c);
  for (long oc_l = 0; oc_l < out_c; ++oc_l) {
    const auto oc = static_cast<std::size_t>(oc_l);
    for (std::size_t n = 0; n < in.n; ++n) {
      auto go = grad_out.plane(n, oc);
      double bsum = 0.0;
      for (double v : go) bsum += v;
      g.bias[oc] += bsum;
      for (std::size_t ic = 0; ic < in.c; ++ic) {
        auto src = input.plane(n, ic);
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const ValidRange rows = valid_outputs(ky, p, s, in.h, out_shape.h);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const ValidRange cols = valid_outputs(kx, p, s, in.w, out_shape.w);
            double acc = 0.0;
            for (std::size_t oy = rows.lo; oy < rows.hi; ++oy) {
              const double* srow = src.data() + (oy * s + ky - p) * in.w;
              const double* grow = go.data() + oy * out_shape.w;
              for (std::size_t ox = cols.lo; ox < cols.hi; ++ox) {
                acc += grow[ox] * srow[ox * s + kx - p];
              }
            }
            g.weights.at(oc, ic, ky, kx) += acc;
          }
        }
      }
    }
  }

  const long in_c = static_cast<long>(in.c);
  for (std::size_t n = 0; n < in.n; ++n) {
    for (long ic_l = 0; ic_l < in_c; ++ic_l) {
      const auto ic = static_cast<std::size_t>(ic_l);
      auto gi = g.input.plane(n, ic);
      for (std::size_t oc = 0; oc < out_shape.c; ++oc) {
        auto go = grad_out.plane(n, oc);
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const ValidRange rows = valid_outputs(ky, p, s, in.h, out_shape.h);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const ValidRange cols = valid_outputs(kx, p, s, in.w, out_shape.w);
            const double wv = layer.weights.at(oc, ic, ky, kx);
            for (std::size_t oy = rows.lo; oy < rows.hi; ++oy) {
              double* irow = gi.data() + (oy * s + ky - p) * in.w;
              const double* grow = go.data() + oy * out_shape.w;
              for (std::size_t ox = cols.lo; ox < cols.hi; ++ox) {
                irow[ox * s + kx - p] += wv * grow[ox];
              }
            }
          }
        }
      }
    }
  }
  return g;
}

}  // namespace rfcn::reference

namespace rfcn::reference {

PooledBins psroi_pool_forward(const Tensor& maps, std::span<const RoI> rois,
                              const PsRoiConfig& cfg) {
  cfg.validate();
  const Shape s = maps.shape();
  if (s.c != cfg.channels()) throw std::invalid_argument("reference psroi: channel mismatch");
  PooledBins out(rois.size(), cfg.groups(), cfg.k);
  for (std::size_t r = 0; r < rois.size(); ++r) {
    if (rois[r].batch_index >= s.n) throw std::invalid_argument("reference psroi: bad batch");
    const RoI roi = clip_roi(rois[r], s.h, s.w);
    for (int g = 0; g < cfg.groups(); ++g) {
      for (int i = 0; i < cfg.k; ++i) {
        for (int j = 0; j < cfg.k; ++j) {
          const Span xs = bin_span(i, roi.w, cfg.k);
          const Span ys = bin_span(j, roi.h, cfg.k);
          const std::size_t ch = cfg.channel(i, j, g);
          double acc = 0.0;
          for (int y = ys.lo; y < ys.hi; ++y) {
            for (int x = xs.lo; x < xs.hi; ++x) {
              acc += maps.at(roi.batch_index, ch, static_cast<std::size_t>(roi.y0 + y),
                             static_cast<std::size_t>(roi.x0 + x));
            }
          }
          out.at(r, g, i, j) = acc / static_cast<double>((xs.hi - xs.lo) * (ys.hi - ys.lo));
        }
      }
    }
  }
  return out;
}

Tensor psroi_pool_backward(const Shape& maps_shape, std::span<const RoI> rois,
                           const PsRoiConfig& cfg, const PooledBins& grad_bins) {
  cfg.validate();
  if (maps_shape.c != cfg.channels() || grad_bins.num_rois() != rois.size() ||
      grad_bins.groups() != cfg.groups() || grad_bins.k() != cfg.k) {
    throw std::invalid_argument("reference psroi backward: layout mismatch");
  }
  Tensor grad(maps_shape);
  for (std::size_t r = 0; r < rois.size(); ++r) {
    if (rois[r].batch_index >= maps_shape.n) {
      throw std::invalid_argument("reference psroi backward: bad batch");
    }
    const RoI roi = clip_roi(rois[r], maps_shape.h, maps_shape.w);
    for (int g = 0; g < cfg.groups(); ++g) {
      for (int i = 0; i < cfg.k; ++i) {
        for (int j = 0; j < cfg.k; ++j) {
          const Span xs = bin_span(i, roi.w, cfg.k);
          const Span ys = bin_span(j, roi.h, cfg.k);
          const double share =
              grad_bins.at(r, g, i, j) / static_cast<double>((xs.hi - xs.lo) * (ys.hi - ys.lo));
          const std::size_t ch = cfg.channel(i, j, g);
          for (int y = ys.lo; y < ys.hi; ++y) {
            for (int x = xs.lo; x < xs.hi; ++x) {
              grad.at(roi.batch_index, ch, static_cast<std::size_t>(roi.y0 + y),
                      static_cast<std::size_t>(roi.x0 + x)) += share;
            }
          }
        }
      }
    }
  }
  return grad;
}

}  // namespace rfcn::reference
