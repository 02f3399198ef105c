#pragma once

// Desk-scale fully convolutional detector.
//
// Backbone: a stack of stride-2 3x3 conv + ReLU stages, a 1x1 reduction conv
// + ReLU, then two sibling 1x1 banks computed on the whole image: the
// k^2 (C+1)-channel classification bank and the 4 k^2-channel class-agnostic
// regression bank. Everything per-RoI after that is pooling and averaging,
// with no learnable weights.

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "rfcn/head.hpp"
#include "rfcn/postprocess.hpp"
#include "rfcn/psroi.hpp"
#include "rfcn/sampling.hpp"
#include "rfcn/scene.hpp"
#include "rfcn/tensor.hpp"

namespace rfcn {

struct BackboneConfig {
  int k = 3;
  int num_classes = 3;
  int in_channels = 3;
  std::vector<int> stage_widths{16, 32, 64};  // one stride-2 stage each
  int reduce_width = 64;
  void validate() const;
  bool operator==(const BackboneConfig&) const = default;
};

// Parameters of every conv in forward order: stages, reduce, cls bank, reg bank.
// Gradients and momentum buffers use the same container.
using ParamSet = std::vector<ConvLayer>;

struct ToyBackbone {
  BackboneConfig config;
  ParamSet layers;

  // He-scaled Gaussian for hidden convs, zeros for both banks.
  static ToyBackbone create(const BackboneConfig& cfg, std::mt19937_64& rng);

  std::size_t num_stages() const { return config.stage_widths.size(); }
  std::size_t reduce_index() const { return num_stages(); }
  std::size_t cls_index() const { return num_stages() + 1; }
  std::size_t reg_index() const { return num_stages() + 2; }
  int stride() const { return 1 << num_stages(); }

  PsRoiConfig cls_config() const { return {config.k, config.num_classes, MapKind::classification}; }
  PsRoiConfig reg_config() const { return {config.k, config.num_classes, MapKind::regression}; }

  // Checkpoint order: (weights, bias as (1, out_c, 1, 1)) per layer.
  std::vector<Tensor> to_tensors() const;
  static ToyBackbone from_tensors(const BackboneConfig& cfg, std::span<const Tensor> tensors);
};

ParamSet zeros_like(const ParamSet& p);

// Image-level computation, shared by every RoI.
struct FeatureMaps {
  Tensor input;                     // image - 0.5
  std::vector<Tensor> activations;  // post-ReLU output of each stage, then of the reduce conv
  Tensor cls_maps;
  Tensor reg_maps;
};

struct HeadOutput {
  std::vector<Box> proposals;
  std::vector<RoI> rois;
  PooledBins cls_bins;
  PooledBins reg_bins;
  Matrix logits;  // (R, C+1)
  Matrix probs;   // (R, C+1)
  Matrix deltas;  // (R, 4)
};

struct ForwardResult {
  FeatureMaps features;
  HeadOutput head;
};

FeatureMaps backbone_forward(const ToyBackbone& net, const Tensor& image, Exec exec = Exec::serial);
HeadOutput head_forward(const ToyBackbone& net, const FeatureMaps& features,
                        std::span<const Box> proposals, Exec exec = Exec::serial);
ForwardResult forward_full(const ToyBackbone& net, const Tensor& image,
                           std::span<const Box> proposals, Exec exec = Exec::serial);

// Backpropagates per-RoI logit and delta gradients through pooling and every conv.
ParamSet backward_full(const ToyBackbone& net, const FeatureMaps& features, const HeadOutput& head,
                       const Matrix& grad_logits, const Matrix& grad_deltas,
                       Exec exec = Exec::serial);

struct BatchLoss {
  double loss = 0.0;                  // mean joint loss over the selected RoIs
  std::vector<double> roi_losses;     // joint loss of every RoI
  std::vector<std::size_t> selected;  // RoIs that contribute gradient, ascending
  ParamSet grads;
};

// Joint loss of every labeled RoI; with ohem only the batch_rois highest-loss
// RoIs are backpropagated, otherwise all of them.
BatchLoss loss_and_gradients(const ToyBackbone& net, const Tensor& image,
                             std::span<const LabeledRoI> samples, bool ohem,
                             std::size_t batch_rois, const LossConfig& loss_cfg,
                             Exec exec = Exec::serial);

struct LrPhase {
  std::size_t steps = 0;
  double lr = 0.0;
  bool operator==(const LrPhase&) const = default;
};

struct TrainConfig {
  std::vector<LrPhase> lr_schedule{{2000, 1e-2}, {1000, 1e-3}};
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::size_t batch_rois = 128;
  std::size_t n_proposals = 300;
  int k = 3;
  int num_classes = 3;
  bool ohem = false;
  std::uint64_t seed = 0;
  double lambda = 1.0;

  std::vector<int> stage_widths{16, 32, 64};
  int reduce_width = 64;
  int image_size = 96;
  std::vector<int> multiscale_sizes;  // empty: single scale
  int max_objects = 4;
  double jitter = 0.15;
  int grid_stride = 32;
  double random_fraction = 0.0;
  double random_max_iou = 1.0;

  void validate() const;
  std::size_t total_steps() const;
  BackboneConfig backbone() const;
  SamplerConfig sampler() const;
  SceneConfig scene() const;
  bool operator==(const TrainConfig&) const = default;
};

// Learning rate of the phase containing `step` (0-based); steps past the
// schedule keep the last rate.
double learning_rate(const TrainConfig& cfg, std::size_t step);

struct TrainState {
  ParamSet velocity;
  std::size_t step = 0;
  std::mt19937_64 rng;
};

TrainState init_train_state(const ToyBackbone& net, std::uint64_t seed);

// v <- momentum * v - lr * (g + weight_decay * w); w <- w + v, for every weight and bias.
void sgd_update(ToyBackbone& net, const ParamSet& grads, ParamSet& velocity, double lr,
                double momentum, double weight_decay);

// One image: generate and label proposals, evaluate all N, backprop the
// selected RoIs, update. Throws std::runtime_error on a non-finite loss.
double train_step(ToyBackbone& net, const SyntheticScene& scene, const TrainConfig& cfg,
                  TrainState& state, Exec exec = Exec::serial);

using StepCallback = std::function<void(std::size_t step, double loss, double lr,
                                        const ToyBackbone& net)>;

// Full run from cfg.seed: initialization, scene stream and proposals are all
// derived from it. `steps` overrides cfg.total_steps() when set.
ToyBackbone train(const TrainConfig& cfg, std::optional<std::size_t> steps = std::nullopt,
                  const StepCallback& on_step = {}, Exec exec = Exec::serial);

struct EvalConfig {
  std::size_t n_scenes = 100;
  std::uint64_t seed = 1000003;
  double score_threshold = 0.05;
  double nms_iou = 0.3;
  double ap_iou = 0.5;
};

struct EvalResult {
  ApResult ap;
  std::vector<Detection> detections;
  std::vector<GtRecord> gts;
};

std::vector<SyntheticScene> make_scenes(std::size_t count, std::uint64_t seed, int num_classes,
                                        const SceneConfig& cfg);

// Inference over the scenes (proposals from the generator, seeded per scene),
// then AP at cfg.ap_iou.
EvalResult evaluate(const ToyBackbone& net, std::span<const SyntheticScene> scenes,
                    const SamplerConfig& sampler, const EvalConfig& cfg, Exec exec = Exec::serial);

// Scores every ground truth as a detection with score 1; an upper-bound check
// of the evaluation harness.
EvalResult evaluate_oracle(std::span<const SyntheticScene> scenes, const EvalConfig& cfg);

}  // namespace rfcn
