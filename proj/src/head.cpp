#include "rfcn/head.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace rfcn {

void LossConfig::validate() const {
  if (!(lambda >= 0.0)) throw std::invalid_argument("loss lambda must be >= 0");
  if (!(smooth_l1_beta > 0.0)) throw std::invalid_argument("smooth_l1 beta must be > 0");
}

namespace {

Matrix average_bins(const PooledBins& bins) {
  const int k = bins.k();
  const double inv = 1.0 / static_cast<double>(k * k);
  Matrix out(bins.num_rois(), static_cast<std::size_t>(bins.groups()));
  for (std::size_t r = 0; r < bins.num_rois(); ++r) {
    for (int g = 0; g < bins.groups(); ++g) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) acc += bins.at(r, g, i, j);
      }
      out(r, static_cast<std::size_t>(g)) = acc * inv;
    }
  }
  return out;
}

}  // namespace

Matrix vote(const PooledBins& bins) { return average_bins(bins); }

Matrix vote_box(const PooledBins& bins) {
  if (bins.groups() != 4) {
    throw std::invalid_argument("vote_box: expected a 4-group regression bank, got " +
                                std::to_string(bins.groups()) + " groups");
  }
  return average_bins(bins);
}

PooledBins vote_backward(const Matrix& grad, int k) {
  PooledBins out(grad.rows(), static_cast<int>(grad.cols()), k);
  const double inv = 1.0 / static_cast<double>(k * k);
  for (std::size_t r = 0; r < grad.rows(); ++r) {
    for (std::size_t g = 0; g < grad.cols(); ++g) {
      const double v = grad(r, g) * inv;
      for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) out.at(r, static_cast<int>(g), i, j) = v;
      }
    }
  }
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty logits");
  double m = logits[0];
  for (double v : logits) {
    if (!std::isfinite(v)) throw std::invalid_argument("softmax: non-finite logit");
    m = std::max(m, v);
  }
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    p[c] = std::exp(logits[c] - m);
    z += p[c];
  }
  for (double& v : p) v /= z;
  return p;
}

SoftmaxCe softmax_ce(std::span<const double> logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw std::invalid_argument("softmax_ce: label " + std::to_string(label) + " out of range");
  }
  SoftmaxCe out;
  out.probs = softmax(logits);
  // -log p[label] computed from the shifted logits so it stays finite when p underflows.
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  double z = 0.0;
  for (double v : logits) z += std::exp(v - m);
  out.loss = std::log(z) - (logits[static_cast<std::size_t>(label)] - m);
  out.grad_logits = out.probs;
  out.grad_logits[static_cast<std::size_t>(label)] -= 1.0;
  return out;
}

SmoothL1 smooth_l1(const BoxDelta& pred, const BoxDelta& target, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("smooth_l1: beta must be > 0");
  const auto p = pred.as_array();
  const auto t = target.as_array();
  std::array<double, 4> g{};
  double loss = 0.0;
  for (int i = 0; i < 4; ++i) {
    const double d = p[i] - t[i];
    if (std::abs(d) < beta) {
      loss += 0.5 * d * d / beta;
      g[i] = d / beta;
    } else {
      loss += std::abs(d) - 0.5 * beta;
      g[i] = d > 0.0 ? 1.0 : -1.0;
    }
  }
  return SmoothL1{loss, BoxDelta::from(g)};
}

JointLoss joint_loss(std::span<const double> logits, const BoxDelta& pred, int label,
                     const std::optional<BoxDelta>& target, const LossConfig& cfg) {
  cfg.validate();
  if (label > 0 && !target) {
    throw std::invalid_argument("joint_loss: positive label without a regression target");
  }
  if (label == 0 && target) {
    throw std::invalid_argument("joint_loss: background label with a regression target");
  }
  SoftmaxCe ce = softmax_ce(logits, label);
  JointLoss out;
  out.cls_loss = ce.loss;
  out.probs = std::move(ce.probs);
  out.grad_logits = std::move(ce.grad_logits);
  if (label > 0) {
    const SmoothL1 reg = smooth_l1(pred, *target, cfg.smooth_l1_beta);
    out.reg_loss = reg.loss;
    out.grad_delta = BoxDelta{cfg.lambda * reg.grad.tx, cfg.lambda * reg.grad.ty,
                              cfg.lambda * reg.grad.tw, cfg.lambda * reg.grad.th};
  }
  out.loss = out.cls_loss + cfg.lambda * out.reg_loss;
  return out;
}

BoxDelta encode_box(const Box& p, const Box& g) {
  if (!(p.w > 0.0 && p.h > 0.0 && g.w > 0.0 && g.h > 0.0)) {
    throw std::invalid_argument("encode_box: boxes must have positive width and height");
  }
  return BoxDelta{(g.cx() - p.cx()) / p.w, (g.cy() - p.cy()) / p.h, std::log(g.w / p.w),
                  std::log(g.h / p.h)};
}

Box decode_box(const Box& p, const BoxDelta& d) {
  if (!(p.w > 0.0 && p.h > 0.0)) {
    throw std::invalid_argument("decode_box: proposal must have positive width and height");
  }
  const double cx = p.cx() + d.tx * p.w;
  const double cy = p.cy() + d.ty * p.h;
  const double w = p.w * std::exp(std::clamp(d.tw, -kMaxLogScale, kMaxLogScale));
  const double h = p.h * std::exp(std::clamp(d.th, -kMaxLogScale, kMaxLogScale));
  return Box{cx - 0.5 * w, cy - 0.5 * h, w, h};
}

}  // namespace rfcn
