#include "rfcn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace rfcn {

std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << "(" << s.n << ", " << s.c << ", " << s.h << ", " << s.w << ")";
  return os.str();
}

namespace {

void check_dims(const Shape& s) {
  if (s.n == 0 || s.c == 0 || s.h == 0 || s.w == 0) {
    throw std::invalid_argument("tensor dimensions must be >= 1, got " + to_string(s));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(shape) {
  check_dims(shape_);
  data_.assign(shape_.size(), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
  check_dims(shape_);
  if (data_.size() != shape_.size()) {
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + to_string(shape_));
  }
}

Tensor Tensor::random_normal(Shape shape, std::mt19937_64& rng, double stddev) {
  Tensor t(shape);
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data_) v = dist(rng);
  return t;
}

std::span<double> Tensor::plane(std::size_t n, std::size_t c) {
  return std::span<double>(data_).subspan(index(n, c, 0, 0), shape_.plane());
}

std::span<const double> Tensor::plane(std::size_t n, std::size_t c) const {
  return std::span<const double>(data_).subspan(index(n, c, 0, 0), shape_.plane());
}

Tensor Tensor::slice_channels(std::size_t first, std::size_t count) const {
  if (count == 0 || first + count > shape_.c) {
    throw std::invalid_argument("channel slice [" + std::to_string(first) + ", " +
                                std::to_string(first + count) + ") out of range for " +
                                to_string(shape_));
  }
  Tensor out(Shape{shape_.n, count, shape_.h, shape_.w});
  for (std::size_t n = 0; n < shape_.n; ++n) {
    for (std::size_t c = 0; c < count; ++c) {
      auto src = plane(n, first + c);
      std::copy(src.begin(), src.end(), out.plane(n, c).begin());
    }
  }
  return out;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + to_string(a.shape()) +
                                " vs " + to_string(b.shape()));
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  axpy(1.0, b, out);
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

void axpy(double s, const Tensor& b, Tensor& a) {
  require_same_shape(a, b, "axpy");
  auto dst = a.data();
  auto src = b.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double acc = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
  return acc;
}

double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& activation, const Tensor& grad_out) {
  require_same_shape(activation, grad_out, "relu_backward");
  Tensor out = grad_out;
  auto act = activation.data();
  auto g = out.data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(act[i] > 0.0)) g[i] = 0.0;
  }
  return out;
}

ConvLayer::ConvLayer(std::size_t out_c, std::size_t in_c, std::size_t kernel, std::size_t stride_,
                     std::size_t padding_)
    : weights(Shape{out_c, in_c, kernel, kernel}),
      bias(out_c, 0.0),
      stride(stride_),
      padding(padding_) {
  if (stride == 0) throw std::invalid_argument("conv stride must be >= 1");
}

Shape ConvLayer::output_shape(const Shape& input) const {
  if (input.c != in_channels()) {
    throw std::invalid_argument("conv input has " + std::to_string(input.c) +
                                " channels, layer expects " + std::to_string(in_channels()));
  }
  if (bias.size() != out_channels()) {
    throw std::invalid_argument("conv bias length does not match output channels");
  }
  if (stride == 0) throw std::invalid_argument("conv stride must be >= 1");
  const std::size_t ph = input.h + 2 * padding;
  const std::size_t pw = input.w + 2 * padding;
  if (ph < kernel_h() || pw < kernel_w()) {
    throw std::invalid_argument("conv kernel larger than padded input " + to_string(input));
  }
  return Shape{input.n, out_channels(), (ph - kernel_h()) / stride + 1,
               (pw - kernel_w()) / stride + 1};
}

}  // namespace rfcn

namespace rfcn {

namespace {

// Lowered input of one batch item: row (ic, ky, kx), column (oy, ox); taps
// that fall in the zero padding are stored as 0.
std::vector<double> im2col(const Tensor& input, std::size_t n, const ConvLayer& layer,
                           const Shape& out_shape) {
  const Shape in = input.shape();
  const std::size_t kh = layer.kernel_h();
  const std::size_t kw = layer.kernel_w();
  const std::size_t P = out_shape.plane();
  std::vector<double> col(in.c * kh * kw * P, 0.0);
  const long s = static_cast<long>(layer.stride);
  const long pad = static_cast<long>(layer.padding);
  for (std::size_t ic = 0; ic < in.c; ++ic) {
    auto src = input.plane(n, ic);
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        double* row = col.data() + ((ic * kh + ky) * kw + kx) * P;
        for (std::size_t oy = 0; oy < out_shape.h; ++oy) {
          const long iy = static_cast<long>(oy) * s + static_cast<long>(ky) - pad;
          if (iy < 0 || iy >= static_cast<long>(in.h)) continue;
          const double* srow = src.data() + static_cast<std::size_t>(iy) * in.w;
          double* drow = row + oy * out_shape.w;
          for (std::size_t ox = 0; ox < out_shape.w; ++ox) {
            const long ix = static_cast<long>(ox) * s + static_cast<long>(kx) - pad;
            if (ix >= 0 && ix < static_cast<long>(in.w)) drow[ox] = srow[ix];
          }
        }
      }
    }
  }
  return col;
}

bool is_pointwise(const ConvLayer& layer) {
  return layer.kernel_h() == 1 && layer.kernel_w() == 1 && layer.stride == 1 &&
         layer.padding == 0;
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const ConvLayer& layer, Exec exec) {
  const Shape in = input.shape();
  const Shape out_shape = layer.output_shape(in);
  Tensor out(out_shape);
  const std::size_t K = in.c * layer.kernel_h() * layer.kernel_w();
  const std::size_t P = out_shape.plane();
  const double* weights = layer.weights.data().data();
  const long out_c = static_cast<long>(out_shape.c);

  for (std::size_t n = 0; n < in.n; ++n) {
    std::vector<double> lowered;
    const double* col = nullptr;
    if (is_pointwise(layer)) {
      col = input.plane(n, 0).data();
    } else {
      lowered = im2col(input, n, layer, out_shape);
      col = lowered.data();
    }
#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
    for (long oc = 0; oc < out_c; ++oc) {
      double* dst = out.plane(n, static_cast<std::size_t>(oc)).data();
      std::fill(dst, dst + P, layer.bias[static_cast<std::size_t>(oc)]);
      const double* wrow = weights + static_cast<std::size_t>(oc) * K;
      for (std::size_t k = 0; k < K; ++k) {
        const double wv = wrow[k];
        const double* crow = col + k * P;
        for (std::size_t p = 0; p < P; ++p) dst[p] += wv * crow[p];
      }
    }
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, const ConvLayer& layer, const Tensor& grad_out,
                          Exec exec) {
  const Shape in = input.shape();
  const Shape out_shape = layer.output_shape(in);
  if (grad_out.shape() != out_shape) {
    throw std::invalid_argument("conv2d_backward: grad_out shape " + to_string(grad_out.shape()) +
                                " does not match forward output " + to_string(out_shape));
  }
  const std::size_t kh = layer.kernel_h();
  const std::size_t kw = layer.kernel_w();
  const std::size_t K = in.c * kh * kw;
  const std::size_t P = out_shape.plane();
  const bool par = exec == Exec::parallel;
  const bool pointwise = is_pointwise(layer);
  const double* weights = layer.weights.data().data();

  ConvGrads g{Tensor(in), Tensor(layer.weights.shape()),
              std::vector<double>(layer.out_channels(), 0.0)};
  double* gw = g.weights.data().data();
  std::vector<double> grad_col(pointwise ? 0 : K * P);
  const long out_c = static_cast<long>(out_shape.c);
  const long taps = static_cast<long>(K);
  const long in_c = static_cast<long>(in.c);

  for (std::size_t n = 0; n < in.n; ++n) {
    std::vector<double> lowered;
    const double* col = nullptr;
    if (pointwise) {
      col = input.plane(n, 0).data();
    } else {
      lowered = im2col(input, n, layer, out_shape);
      col = lowered.data();
    }
    const double* go = grad_out.plane(n, 0).data();

    // Weight and bias gradients, one output channel per iteration.
#pragma omp parallel for schedule(static) if (par)
    for (long oc = 0; oc < out_c; ++oc) {
      const double* grow = go + static_cast<std::size_t>(oc) * P;
      double bsum = 0.0;
      for (std::size_t p = 0; p < P; ++p) bsum += grow[p];
      g.bias[static_cast<std::size_t>(oc)] += bsum;
      double* gwrow = gw + static_cast<std::size_t>(oc) * K;
      for (std::size_t k = 0; k < K; ++k) {
        const double* crow = col + k * P;
        double acc = 0.0;
        for (std::size_t p = 0; p < P; ++p) acc += grow[p] * crow[p];
        gwrow[k] += acc;
      }
    }

    // Gradient of the lowered input, one tap row per iteration, output
    // channels in fixed order.
    double* gcol = pointwise ? g.input.plane(n, 0).data() : grad_col.data();
#pragma omp parallel for schedule(static) if (par)
    for (long k = 0; k < taps; ++k) {
      double* dst = gcol + static_cast<std::size_t>(k) * P;
      std::fill(dst, dst + P, 0.0);
      for (std::size_t oc = 0; oc < out_shape.c; ++oc) {
        const double wv = weights[oc * K + static_cast<std::size_t>(k)];
        const double* grow = go + oc * P;
        for (std::size_t p = 0; p < P; ++p) dst[p] += wv * grow[p];
      }
    }
    if (pointwise) continue;

    // Scatter back to the input planes; each input channel owns its rows.
    const long s = static_cast<long>(layer.stride);
    const long pad = static_cast<long>(layer.padding);
#pragma omp parallel for schedule(static) if (par)
    for (long ic = 0; ic < in_c; ++ic) {
      double* gi = g.input.plane(n, static_cast<std::size_t>(ic)).data();
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const double* row = grad_col.data() + ((static_cast<std::size_t>(ic) * kh + ky) * kw + kx) * P;
          for (std::size_t oy = 0; oy < out_shape.h; ++oy) {
            const long iy = static_cast<long>(oy) * s + static_cast<long>(ky) - pad;
            if (iy < 0 || iy >= static_cast<long>(in.h)) continue;
            double* irow = gi + static_cast<std::size_t>(iy) * in.w;
            const double* srow = row + oy * out_shape.w;
            for (std::size_t ox = 0; ox < out_shape.w; ++ox) {
              const long ix = static_cast<long>(ox) * s + static_cast<long>(kx) - pad;
              if (ix >= 0 && ix < static_cast<long>(in.w)) irow[ix] += srow[ox];
            }
          }
        }
      }
    }
  }
  return g;
}

}  // namespace rfcn
