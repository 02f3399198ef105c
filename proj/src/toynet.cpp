#include "rfcn/toynet.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace rfcn {

void BackboneConfig::validate() const {
  if (k < 1) throw std::invalid_argument("backbone: k must be >= 1");
  if (num_classes < 1) throw std::invalid_argument("backbone: num_classes must be >= 1");
  if (in_channels < 1 || reduce_width < 1) {
    throw std::invalid_argument("backbone: channel counts must be >= 1");
  }
  if (stage_widths.empty()) throw std::invalid_argument("backbone: need at least one stage");
  for (int w : stage_widths) {
    if (w < 1) throw std::invalid_argument("backbone: stage widths must be >= 1");
  }
}

ToyBackbone ToyBackbone::create(const BackboneConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  ToyBackbone net;
  net.config = cfg;
  std::size_t in_c = static_cast<std::size_t>(cfg.in_channels);
  auto he = [&](ConvLayer& layer) {
    const double fan_in = static_cast<double>(layer.in_channels() * layer.kernel_h() *
                                              layer.kernel_w());
    layer.weights = Tensor::random_normal(layer.weights.shape(), rng, std::sqrt(2.0 / fan_in));
  };
  for (int width : cfg.stage_widths) {
    ConvLayer stage(static_cast<std::size_t>(width), in_c, 3, 2, 1);
    he(stage);
    net.layers.push_back(std::move(stage));
    in_c = static_cast<std::size_t>(width);
  }
  ConvLayer reduce(static_cast<std::size_t>(cfg.reduce_width), in_c, 1, 1, 0);
  he(reduce);
  net.layers.push_back(std::move(reduce));
  const auto reduce_c = static_cast<std::size_t>(cfg.reduce_width);
  net.layers.emplace_back(net.cls_config().channels(), reduce_c, 1, 1, 0);
  net.layers.emplace_back(net.reg_config().channels(), reduce_c, 1, 1, 0);
  return net;
}

std::vector<Tensor> ToyBackbone::to_tensors() const {
  std::vector<Tensor> out;
  out.reserve(2 * layers.size());
  for (const ConvLayer& l : layers) {
    out.push_back(l.weights);
    out.emplace_back(Shape{1, l.out_channels(), 1, 1}, l.bias);
  }
  return out;
}

ToyBackbone ToyBackbone::from_tensors(const BackboneConfig& cfg, std::span<const Tensor> tensors) {
  std::mt19937_64 unused(0);
  ToyBackbone net = create(cfg, unused);
  if (tensors.size() != 2 * net.layers.size()) {
    throw std::invalid_argument("checkpoint holds " + std::to_string(tensors.size()) +
                                " tensors, network expects " +
                                std::to_string(2 * net.layers.size()));
  }
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    ConvLayer& l = net.layers[i];
    const Tensor& w = tensors[2 * i];
    const Tensor& b = tensors[2 * i + 1];
    if (w.shape() != l.weights.shape() || b.shape() != Shape{1, l.out_channels(), 1, 1}) {
      throw std::invalid_argument("checkpoint tensor shapes do not match layer " +
                                  std::to_string(i));
    }
    l.weights = w;
    l.bias.assign(b.data().begin(), b.data().end());
  }
  return net;
}

ParamSet zeros_like(const ParamSet& p) {
  ParamSet out = p;
  for (ConvLayer& l : out) {
    l.weights.fill(0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
  return out;
}

FeatureMaps backbone_forward(const ToyBackbone& net, const Tensor& image, Exec exec) {
  FeatureMaps f;
  f.input = image;
  for (double& v : f.input.data()) v -= 0.5;
  const Tensor* x = &f.input;
  for (std::size_t i = 0; i <= net.reduce_index(); ++i) {
    f.activations.push_back(relu(conv2d_forward(*x, net.layers[i], exec)));
    x = &f.activations.back();
  }
  f.cls_maps = conv2d_forward(*x, net.layers[net.cls_index()], exec);
  f.reg_maps = conv2d_forward(*x, net.layers[net.reg_index()], exec);
  return f;
}

HeadOutput head_forward(const ToyBackbone& net, const FeatureMaps& f,
                        std::span<const Box> proposals, Exec exec) {
  HeadOutput h;
  h.proposals.assign(proposals.begin(), proposals.end());
  h.rois.reserve(proposals.size());
  for (const Box& b : proposals) h.rois.push_back(project_box(b, net.stride(), f.cls_maps.shape()));
  h.cls_bins = psroi_pool_forward(f.cls_maps, h.rois, net.cls_config(), exec);
  h.reg_bins = psroi_pool_forward(f.reg_maps, h.rois, net.reg_config(), exec);
  h.logits = vote(h.cls_bins);
  h.deltas = vote_box(h.reg_bins);
  h.probs = Matrix(h.logits.rows(), h.logits.cols());
  for (std::size_t r = 0; r < h.logits.rows(); ++r) {
    const auto p = softmax(h.logits.row(r));
    std::copy(p.begin(), p.end(), h.probs.row(r).begin());
  }
  return h;
}

ForwardResult forward_full(const ToyBackbone& net, const Tensor& image,
                           std::span<const Box> proposals, Exec exec) {
  ForwardResult out;
  out.features = backbone_forward(net, image, exec);
  out.head = head_forward(net, out.features, proposals, exec);
  return out;
}

ParamSet backward_full(const ToyBackbone& net, const FeatureMaps& f, const HeadOutput& h,
                       const Matrix& grad_logits, const Matrix& grad_deltas, Exec exec) {
  ParamSet grads(net.layers.size());
  const PsRoiConfig cls_cfg = net.cls_config();
  const PsRoiConfig reg_cfg = net.reg_config();

  const Tensor g_cls_maps = psroi_pool_backward(
      f.cls_maps.shape(), h.rois, cls_cfg, vote_backward(grad_logits, cls_cfg.k), exec);
  const Tensor g_reg_maps = psroi_pool_backward(
      f.reg_maps.shape(), h.rois, reg_cfg, vote_backward(grad_deltas, reg_cfg.k), exec);

  const Tensor& reduced = f.activations.back();
  auto set_grads = [&](std::size_t idx, ConvGrads& g) {
    grads[idx].weights = std::move(g.weights);
    grads[idx].bias = std::move(g.bias);
    grads[idx].stride = net.layers[idx].stride;
    grads[idx].padding = net.layers[idx].padding;
  };

  ConvGrads gc = conv2d_backward(reduced, net.layers[net.cls_index()], g_cls_maps, exec);
  ConvGrads gr = conv2d_backward(reduced, net.layers[net.reg_index()], g_reg_maps, exec);
  Tensor upstream = add(gc.input, gr.input);
  set_grads(net.cls_index(), gc);
  set_grads(net.reg_index(), gr);

  for (std::size_t i = net.reduce_index() + 1; i-- > 0;) {
    const Tensor pre_grad = relu_backward(f.activations[i], upstream);
    const Tensor& layer_in = i == 0 ? f.input : f.activations[i - 1];
    ConvGrads g = conv2d_backward(layer_in, net.layers[i], pre_grad, exec);
    upstream = std::move(g.input);
    set_grads(i, g);
  }
  return grads;
}

BatchLoss loss_and_gradients(const ToyBackbone& net, const Tensor& image,
                             std::span<const LabeledRoI> samples, bool ohem,
                             std::size_t batch_rois, const LossConfig& loss_cfg, Exec exec) {
  if (samples.empty()) throw std::invalid_argument("loss_and_gradients: no RoIs");
  std::vector<Box> proposals;
  proposals.reserve(samples.size());
  for (const LabeledRoI& s : samples) proposals.push_back(s.roi);
  const ForwardResult fwd = forward_full(net, image, proposals, exec);
  const HeadOutput& h = fwd.head;

  const std::size_t R = samples.size();
  BatchLoss out;
  out.roi_losses.resize(R);
  std::vector<JointLoss> per_roi(R);
  for (std::size_t r = 0; r < R; ++r) {
    per_roi[r] = joint_loss(h.logits.row(r), BoxDelta::from(h.deltas.row(r)), samples[r].label,
                            samples[r].target, loss_cfg);
    out.roi_losses[r] = per_roi[r].loss;
  }

  if (ohem) {
    out.selected = ohem_select(out.roi_losses, batch_rois);
    std::sort(out.selected.begin(), out.selected.end());
  } else {
    out.selected.resize(R);
    for (std::size_t r = 0; r < R; ++r) out.selected[r] = r;
  }

  const double inv = 1.0 / static_cast<double>(out.selected.size());
  Matrix g_logits(R, h.logits.cols());
  Matrix g_deltas(R, 4);
  double total = 0.0;
  for (std::size_t r : out.selected) {
    total += out.roi_losses[r];
    for (std::size_t c = 0; c < h.logits.cols(); ++c) {
      g_logits(r, c) = per_roi[r].grad_logits[c] * inv;
    }
    const auto gd = per_roi[r].grad_delta.as_array();
    for (std::size_t c = 0; c < 4; ++c) g_deltas(r, c) = gd[c] * inv;
  }
  out.loss = total * inv;
  out.grads = backward_full(net, fwd.features, h, g_logits, g_deltas, exec);
  return out;
}

void TrainConfig::validate() const {
  if (lr_schedule.empty()) throw std::invalid_argument("train config: empty lr_schedule");
  for (std::size_t i = 0; i < lr_schedule.size(); ++i) {
    if (!(lr_schedule[i].lr > 0.0)) {
      throw std::invalid_argument("train config: learning rates must be positive");
    }
    if (i > 0 && !(lr_schedule[i].lr < lr_schedule[i - 1].lr)) {
      throw std::invalid_argument("train config: lr_schedule must be decreasing");
    }
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("train config: momentum in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("train config: weight_decay >= 0");
  if (!(lambda >= 0.0)) throw std::invalid_argument("train config: lambda >= 0");
  if (image_size < 16) throw std::invalid_argument("train config: image_size >= 16");
  for (int s : multiscale_sizes) {
    if (s < 16) throw std::invalid_argument("train config: multiscale sizes must be >= 16");
  }
  backbone().validate();
  sampler().validate();
  scene().validate();
}

std::size_t TrainConfig::total_steps() const {
  std::size_t n = 0;
  for (const LrPhase& p : lr_schedule) n += p.steps;
  return n;
}

BackboneConfig TrainConfig::backbone() const {
  BackboneConfig b;
  b.k = k;
  b.num_classes = num_classes;
  b.stage_widths = stage_widths;
  b.reduce_width = reduce_width;
  return b;
}

SamplerConfig TrainConfig::sampler() const {
  SamplerConfig s;
  s.n_proposals = n_proposals;
  s.batch_rois = batch_rois;
  s.jitter = jitter;
  s.grid_stride = grid_stride;
  s.random_fraction = random_fraction;
  s.random_max_iou = random_max_iou;
  return s;
}

SceneConfig TrainConfig::scene() const {
  SceneConfig s;
  s.size = image_size;
  s.max_objects = max_objects;
  return s;
}

double learning_rate(const TrainConfig& cfg, std::size_t step) {
  std::size_t end = 0;
  for (const LrPhase& p : cfg.lr_schedule) {
    end += p.steps;
    if (step < end) return p.lr;
  }
  return cfg.lr_schedule.back().lr;
}

TrainState init_train_state(const ToyBackbone& net, std::uint64_t seed) {
  TrainState s;
  s.velocity = zeros_like(net.layers);
  std::seed_seq seq{seed, std::uint64_t{0x70726f70}};
  s.rng.seed(seq);
  return s;
}

void sgd_update(ToyBackbone& net, const ParamSet& grads, ParamSet& velocity, double lr,
                double momentum, double weight_decay) {
  if (grads.size() != net.layers.size() || velocity.size() != net.layers.size()) {
    throw std::invalid_argument("sgd_update: parameter set size mismatch");
  }
  auto step = [&](std::span<double> w, std::span<const double> g, std::span<double> v) {
    if (w.size() != g.size() || w.size() != v.size()) {
      throw std::invalid_argument("sgd_update: parameter shape mismatch");
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum * v[i] - lr * (g[i] + weight_decay * w[i]);
      w[i] += v[i];
    }
  };
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    step(net.layers[l].weights.data(), grads[l].weights.data(), velocity[l].weights.data());
    step(net.layers[l].bias, grads[l].bias, velocity[l].bias);
  }
}

double train_step(ToyBackbone& net, const SyntheticScene& scene, const TrainConfig& cfg,
                  TrainState& state, Exec exec) {
  const Shape s = scene.image.shape();
  const auto proposals = generate_proposals(scene.gts, static_cast<double>(s.w),
                                            static_cast<double>(s.h), cfg.sampler(), state.rng);
  const auto samples = label_rois(proposals, scene.gts, cfg.sampler().pos_iou);
  const BatchLoss bl = loss_and_gradients(net, scene.image, samples, cfg.ohem, cfg.batch_rois,
                                          LossConfig{cfg.lambda, 1.0}, exec);
  if (!std::isfinite(bl.loss)) {
    std::ostringstream os;
    os << "non-finite loss at step " << state.step << " (lr " << learning_rate(cfg, state.step)
       << ")";
    throw std::runtime_error(os.str());
  }
  sgd_update(net, bl.grads, state.velocity, learning_rate(cfg, state.step), cfg.momentum,
             cfg.weight_decay);
  ++state.step;
  return bl.loss;
}

ToyBackbone train(const TrainConfig& cfg, std::optional<std::size_t> steps,
                  const StepCallback& on_step, Exec exec) {
  cfg.validate();
  std::seed_seq init_seq{cfg.seed, std::uint64_t{0x696e6974}};
  std::mt19937_64 init_rng(init_seq);
  ToyBackbone net = ToyBackbone::create(cfg.backbone(), init_rng);
  TrainState state = init_train_state(net, cfg.seed);
  std::seed_seq scene_seq{cfg.seed, std::uint64_t{0x7363656e}};
  std::mt19937_64 scene_rng(scene_seq);

  const std::size_t n = steps.value_or(cfg.total_steps());
  SceneConfig scene_cfg = cfg.scene();
  for (std::size_t i = 0; i < n; ++i) {
    if (!cfg.multiscale_sizes.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, cfg.multiscale_sizes.size() - 1);
      scene_cfg.size = cfg.multiscale_sizes[pick(scene_rng)];
      scene_cfg.max_object_size = std::min(scene_cfg.max_object_size, scene_cfg.size);
    }
    const SyntheticScene scene = generate_scene(scene_rng, cfg.num_classes, scene_cfg);
    const double lr = learning_rate(cfg, state.step);
    const double loss = train_step(net, scene, cfg, state, exec);
    if (on_step) on_step(i, loss, lr, net);
  }
  return net;
}

std::vector<SyntheticScene> make_scenes(std::size_t count, std::uint64_t seed, int num_classes,
                                        const SceneConfig& cfg) {
  std::seed_seq seq{seed, std::uint64_t{0x6576616c}};
  std::mt19937_64 rng(seq);
  std::vector<SyntheticScene> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_scene(rng, num_classes, cfg));
  return out;
}

namespace {

void collect_gts(std::span<const SyntheticScene> scenes, EvalResult& out) {
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    for (const GroundTruth& g : scenes[i].gts) out.gts.push_back(GtRecord{i, g.box, g.label});
  }
}

}  // namespace

EvalResult evaluate(const ToyBackbone& net, std::span<const SyntheticScene> scenes,
                    const SamplerConfig& sampler, const EvalConfig& cfg, Exec exec) {
  EvalResult out;
  collect_gts(scenes, out);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const SyntheticScene& scene = scenes[i];
    const Shape s = scene.image.shape();
    std::seed_seq seq{cfg.seed, std::uint64_t{i}};
    std::mt19937_64 rng(seq);
    const auto proposals = generate_proposals(scene.gts, static_cast<double>(s.w),
                                              static_cast<double>(s.h), sampler, rng);
    const ForwardResult fwd = forward_full(net, scene.image, proposals, exec);
    AssembleConfig ac;
    ac.score_threshold = cfg.score_threshold;
    ac.nms_iou = cfg.nms_iou;
    ac.image_width = static_cast<double>(s.w);
    ac.image_height = static_cast<double>(s.h);
    const auto dets = assemble_detections(fwd.head.probs, fwd.head.deltas, proposals, i, ac);
    out.detections.insert(out.detections.end(), dets.begin(), dets.end());
  }
  out.ap = average_precision(out.detections, out.gts, cfg.ap_iou);
  return out;
}

EvalResult evaluate_oracle(std::span<const SyntheticScene> scenes, const EvalConfig& cfg) {
  EvalResult out;
  collect_gts(scenes, out);
  for (const GtRecord& g : out.gts) out.detections.push_back(Detection{g.image_id, g.label, 1.0, g.box});
  out.ap = average_precision(out.detections, out.gts, cfg.ap_iou);
  return out;
}

}  // namespace rfcn
