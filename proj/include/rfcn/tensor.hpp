#pragma once

// Dense 4-D tensor and the convolution kernels shared by the backbone and the
// benchmark heads.
//
// Layout is fixed: row-major (n, c, h, w), so element (n, c, y, x) lives at
// ((n * C + c) * H + y) * W + x. All indexing goes through Tensor::index().
// There is no broadcasting; every shape mismatch throws std::invalid_argument.

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace rfcn {

struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t size() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

// Selects the serial reference loop or the OpenMP loop for a kernel. Both
// paths perform the same floating-point operations in the same order per
// output element, so results are bit-identical.
enum class Exec { serial, parallel };

class Tensor {
 public:
  Tensor() : Tensor(Shape{}) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor random_normal(Shape shape, std::mt19937_64& rng, double stddev = 1.0);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::size_t index(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  double& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[index(n, c, y, x)];
  }
  double at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[index(n, c, y, x)];
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  // One (n, c) spatial plane, h * w values.
  std::span<double> plane(std::size_t n, std::size_t c);
  std::span<const double> plane(std::size_t n, std::size_t c) const;

  // Channels [first, first + count) of every batch item, as a new tensor.
  Tensor slice_channels(std::size_t first, std::size_t count) const;

  void fill(double v);
  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// a += s * b
void axpy(double s, const Tensor& b, Tensor& a);
double dot(const Tensor& a, const Tensor& b);
double max_abs(const Tensor& a);

Tensor relu(const Tensor& x);
// Gradient of relu given its output (or input; the sign pattern is the same).
Tensor relu_backward(const Tensor& activation, const Tensor& grad_out);

struct ConvLayer {
  Tensor weights;            // (out_c, in_c, kh, kw)
  std::vector<double> bias;  // out_c
  std::size_t stride = 1;
  std::size_t padding = 0;

  ConvLayer() = default;
  ConvLayer(std::size_t out_c, std::size_t in_c, std::size_t kernel, std::size_t stride,
            std::size_t padding);

  std::size_t out_channels() const { return weights.shape().n; }
  std::size_t in_channels() const { return weights.shape().c; }
  std::size_t kernel_h() const { return weights.shape().h; }
  std::size_t kernel_w() const { return weights.shape().w; }

  // floor((in + 2p - k) / s) + 1 on both axes; throws when the kernel does not fit.
  Shape output_shape(const Shape& input) const;

  bool operator==(const ConvLayer&) const = default;
};

Tensor conv2d_forward(const Tensor& input, const ConvLayer& layer, Exec exec = Exec::serial);

struct ConvGrads {
  Tensor input;
  Tensor weights;
  std::vector<double> bias;
};

ConvGrads conv2d_backward(const Tensor& input, const ConvLayer& layer, const Tensor& grad_out,
                          Exec exec = Exec::serial);

}  // namespace rfcn
