#pragma once

// Per-RoI scoring after position-sensitive pooling: voting, softmax
// cross-entropy, smooth-L1 box loss and the center/size box parameterization.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "rfcn/box.hpp"
#include "rfcn/psroi.hpp"

namespace rfcn {

// Dense row-major (rows, cols) array of reals.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<double> row(std::size_t r) { return std::span<double>(data_).subspan(r * cols_, cols_); }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }
  std::span<const double> data() const { return data_; }
  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct BoxDelta {
  double tx = 0.0;
  double ty = 0.0;
  double tw = 0.0;
  double th = 0.0;

  std::array<double, 4> as_array() const { return {tx, ty, tw, th}; }
  static BoxDelta from(std::span<const double> v) { return {v[0], v[1], v[2], v[3]}; }
  bool operator==(const BoxDelta&) const = default;
};

struct LossConfig {
  double lambda = 1.0;
  double smooth_l1_beta = 1.0;
  void validate() const;
};

// logits[r, c] = mean over the k*k bins of bins[r, c, i, j].
Matrix vote(const PooledBins& bins);
// Same average over a 4-group regression bank; rows are (tx, ty, tw, th).
Matrix vote_box(const PooledBins& bins);
// Adjoint of vote: every bin of (r, g) receives grad[r, g] / k^2.
PooledBins vote_backward(const Matrix& grad, int k);

// Max-shifted softmax of one row.
std::vector<double> softmax(std::span<const double> logits);

struct SoftmaxCe {
  std::vector<double> probs;
  double loss = 0.0;
  std::vector<double> grad_logits;  // probs - onehot(label)
};

SoftmaxCe softmax_ce(std::span<const double> logits, int label);

struct SmoothL1 {
  double loss = 0.0;
  BoxDelta grad;
};

SmoothL1 smooth_l1(const BoxDelta& pred, const BoxDelta& target, double beta = 1.0);

struct JointLoss {
  double loss = 0.0;
  double cls_loss = 0.0;
  double reg_loss = 0.0;
  std::vector<double> probs;
  std::vector<double> grad_logits;
  BoxDelta grad_delta;
};

// L = CE(label) + lambda * [label > 0] * smoothL1(pred, target).
// target must be present exactly when label > 0.
JointLoss joint_loss(std::span<const double> logits, const BoxDelta& pred, int label,
                     const std::optional<BoxDelta>& target, const LossConfig& cfg = {});

// tx = (gx - px)/pw, ty = (gy - py)/ph, tw = ln(gw/pw), th = ln(gh/ph) on box centers.
BoxDelta encode_box(const Box& proposal, const Box& gt);
// Inverse of encode_box. tw/th are clamped to +-kMaxLogScale before exponentiation.
Box decode_box(const Box& proposal, const BoxDelta& delta);

inline constexpr double kMaxLogScale = 4.135166556742356;  // ln(1000/16)

}  // namespace rfcn
