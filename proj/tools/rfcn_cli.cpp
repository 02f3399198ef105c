// rfcn: train, evaluate, benchmark and visualize the toy position-sensitive detector.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rfcn/bench.hpp"
#include "rfcn/checkpoint.hpp"
#include "rfcn/image_io.hpp"
#include "rfcn/toynet.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace rfcn;

namespace {

struct CliError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <class T>
void take(const json& j, const char* key, T& out) {
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw CliError(std::string("config key '") + key + "' has the wrong type");
  }
}

json to_json(const TrainConfig& c) {
  json lr = json::array();
  for (const LrPhase& p : c.lr_schedule) lr.push_back({{"steps", p.steps}, {"lr", p.lr}});
  return json{{"lr_schedule", lr},
              {"momentum", c.momentum},
              {"weight_decay", c.weight_decay},
              {"batch_rois", c.batch_rois},
              {"n_proposals", c.n_proposals},
              {"k", c.k},
              {"num_classes", c.num_classes},
              {"ohem", c.ohem},
              {"seed", c.seed},
              {"lambda", c.lambda},
              {"stage_widths", c.stage_widths},
              {"reduce_width", c.reduce_width},
              {"image_size", c.image_size},
              {"multiscale_sizes", c.multiscale_sizes},
              {"max_objects", c.max_objects},
              {"jitter", c.jitter},
              {"grid_stride", c.grid_stride},
              {"random_fraction", c.random_fraction},
              {"random_max_iou", c.random_max_iou}};
}

// Applies the keys present in j on top of cfg; unknown keys are an error.
void apply_json(const json& j, TrainConfig& c) {
  if (!j.is_object()) throw CliError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "lr_schedule") {
      if (!value.is_array() || value.empty()) throw CliError("config key 'lr_schedule' must be a nonempty array");
      c.lr_schedule.clear();
      for (const json& p : value) {
        if (!p.is_object() || p.size() != 2 || !p.contains("steps") || !p.contains("lr")) {
          throw CliError("lr_schedule entries must be {\"steps\": n, \"lr\": x}");
        }
        LrPhase phase;
        take(p, "steps", phase.steps);
        take(p, "lr", phase.lr);
        c.lr_schedule.push_back(phase);
      }
    } else if (key == "momentum") {
      take(j, "momentum", c.momentum);
    } else if (key == "weight_decay") {
      take(j, "weight_decay", c.weight_decay);
    } else if (key == "batch_rois") {
      take(j, "batch_rois", c.batch_rois);
    } else if (key == "n_proposals") {
      take(j, "n_proposals", c.n_proposals);
    } else if (key == "k") {
      take(j, "k", c.k);
    } else if (key == "num_classes") {
      take(j, "num_classes", c.num_classes);
    } else if (key == "ohem") {
      take(j, "ohem", c.ohem);
    } else if (key == "seed") {
      take(j, "seed", c.seed);
    } else if (key == "lambda") {
      take(j, "lambda", c.lambda);
    } else if (key == "stage_widths") {
      take(j, "stage_widths", c.stage_widths);
    } else if (key == "reduce_width") {
      take(j, "reduce_width", c.reduce_width);
    } else if (key == "image_size") {
      take(j, "image_size", c.image_size);
    } else if (key == "multiscale_sizes") {
      take(j, "multiscale_sizes", c.multiscale_sizes);
    } else if (key == "max_objects") {
      take(j, "max_objects", c.max_objects);
    } else if (key == "jitter") {
      take(j, "jitter", c.jitter);
    } else if (key == "grid_stride") {
      take(j, "grid_stride", c.grid_stride);
    } else if (key == "random_fraction") {
      take(j, "random_fraction", c.random_fraction);
    } else if (key == "random_max_iou") {
      take(j, "random_max_iou", c.random_max_iou);
    } else {
      throw CliError("unknown config key '" + key + "'");
    }
  }
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw CliError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw CliError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw CliError("cannot write " + path.string());
}

void prepare_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw CliError("cannot create output directory " + dir.string() + ": " + ec.message());
  const fs::path probe = dir / ".write_probe";
  {
    std::ofstream out(probe);
    if (!out) throw CliError("output directory " + dir.string() + " is not writable");
  }
  fs::remove(probe, ec);
}

std::vector<std::size_t> parse_counts(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != item.size() || v == 0) throw CliError("bad count '" + item + "' in list");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw CliError("empty count list");
  return out;
}

// Shared flags that shape a TrainConfig.
struct ConfigFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> k;
  std::optional<int> classes;
  std::optional<std::size_t> n_proposals;
  bool ohem = false;

  void add(CLI::App* cmd, bool with_ohem) {
    cmd->add_option("--config", config_path, "JSON file of TrainConfig overrides");
    cmd->add_option("--seed", seed, "random seed");
    cmd->add_option("--k", k, "bin grid size k");
    cmd->add_option("--classes", classes, "number of object classes C");
    cmd->add_option("--n-proposals", n_proposals, "proposals per image N");
    if (with_ohem) cmd->add_flag("--ohem", ohem, "backpropagate only the hardest B RoIs");
  }

  TrainConfig resolve(TrainConfig base = {}) const {
    if (!config_path.empty()) apply_json(read_json(config_path), base);
    if (seed) base.seed = *seed;
    if (k) base.k = *k;
    if (classes) base.num_classes = *classes;
    if (n_proposals) base.n_proposals = *n_proposals;
    if (ohem) base.ohem = true;
    base.validate();
    return base;
  }
};

// A checkpoint's config sidecar lives next to it as config.json.
TrainConfig config_for_checkpoint(const fs::path& checkpoint) {
  const fs::path sidecar = checkpoint.parent_path() / "config.json";
  TrainConfig cfg;
  apply_json(read_json(sidecar), cfg);
  return cfg;
}

ToyBackbone load_network(const fs::path& checkpoint, const TrainConfig& cfg) {
  return ToyBackbone::from_tensors(cfg.backbone(), load_checkpoint(checkpoint));
}

Exec exec_of(bool parallel) { return parallel ? Exec::parallel : Exec::serial; }

struct TrainArgs {
  ConfigFlags flags;
  std::string out = "run";
  std::optional<std::size_t> steps;
  bool parallel = false;
};

void cmd_train(const TrainArgs& a) {
  const TrainConfig cfg = a.flags.resolve();
  const fs::path out(a.out);
  prepare_out_dir(out);
  write_text(out / "config.json", to_json(cfg).dump(2) + "\n");

  const fs::path ckpt = out / "checkpoint.bin";
  std::ofstream log(out / "train_log.csv");
  if (!log) throw CliError("cannot write " + (out / "train_log.csv").string());
  log << "step,loss,lr\n" << std::flush;

  const std::size_t steps = a.steps.value_or(cfg.total_steps());
  if (steps == 0) {
    save_checkpoint(ckpt, train(cfg, 0).to_tensors());
    std::printf("wrote initial checkpoint %s\n", ckpt.string().c_str());
    return;
  }

  char line[128];
  const ToyBackbone net = train(
      cfg, steps,
      [&](std::size_t step, double loss, double lr, const ToyBackbone& current) {
        std::snprintf(line, sizeof(line), "%zu,%.9g,%.9g\n", step, loss, lr);
        log << line << std::flush;
        if ((step + 1) % 500 == 0 && step + 1 < steps) save_checkpoint(ckpt, current.to_tensors());
        if ((step + 1) % 100 == 0) std::printf("step %zu loss %.4f lr %g\n", step + 1, loss, lr);
      },
      exec_of(a.parallel));
  save_checkpoint(ckpt, net.to_tensors());
  std::printf("wrote %s\n", ckpt.string().c_str());
}

struct EvalArgs {
  ConfigFlags flags;
  std::string checkpoint;
  std::string out = "eval";
  std::size_t n_scenes = 100;
  std::uint64_t scene_seed = EvalConfig{}.seed;
  bool oracle = false;
  bool parallel = false;
};

void cmd_eval(const EvalArgs& a) {
  TrainConfig cfg = a.checkpoint.empty() ? a.flags.resolve() : config_for_checkpoint(a.checkpoint);
  if (!a.checkpoint.empty() && (a.flags.k || a.flags.classes || !a.flags.config_path.empty())) {
    throw CliError("--k/--classes/--config conflict with --checkpoint; its config.json is used");
  }
  if (!a.checkpoint.empty() && a.flags.n_proposals) cfg.n_proposals = *a.flags.n_proposals;
  if (a.n_scenes == 0) throw CliError("--n-scenes must be >= 1");
  const fs::path out(a.out);
  prepare_out_dir(out);

  EvalConfig ec;
  ec.n_scenes = a.n_scenes;
  ec.seed = a.scene_seed;
  const auto scenes = make_scenes(ec.n_scenes, ec.seed, cfg.num_classes, cfg.scene());

  EvalResult result;
  std::string mode;
  if (a.oracle) {
    result = evaluate_oracle(scenes, ec);
    mode = "oracle";
  } else {
    ToyBackbone net;
    if (a.checkpoint.empty()) {
      std::seed_seq init_seq{cfg.seed, std::uint64_t{0x696e6974}};
      std::mt19937_64 rng(init_seq);
      net = ToyBackbone::create(cfg.backbone(), rng);
      mode = "untrained";
    } else {
      net = load_network(a.checkpoint, cfg);
      mode = "checkpoint";
    }
    result = evaluate(net, scenes, cfg.sampler(), ec, exec_of(a.parallel));
  }

  json per_class = json::object();
  for (const auto& [c, ap] : result.ap.per_class) per_class[std::to_string(c)] = ap;
  const json metrics{{"mode", mode},
                     {"mean_ap", result.ap.mean_ap},
                     {"per_class_ap", per_class},
                     {"ap_iou", ec.ap_iou},
                     {"n_scenes", ec.n_scenes},
                     {"scene_seed", ec.seed},
                     {"n_detections", result.detections.size()},
                     {"n_ground_truths", result.gts.size()}};
  write_text(out / "metrics.json", metrics.dump(2) + "\n");
  std::ofstream csv(out / "detections.csv");
  write_detections_csv(csv, result.detections);
  if (!csv) throw CliError("cannot write detections.csv");
  std::printf("mAP@%.1f = %.4f over %zu scenes (%s)\n", ec.ap_iou, result.ap.mean_ap, ec.n_scenes,
              mode.c_str());
}

struct VisualizeArgs {
  std::string checkpoint;
  std::string out = "vis";
  std::uint64_t scene_seed = 0;
  std::vector<double> roi;  // x0 y0 w h in image pixels
  std::optional<int> label;
};

RgbImage upscale(const RgbImage& src, int factor) {
  RgbImage img(src.width * factor, src.height * factor);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const auto i = (static_cast<std::size_t>(y / factor) * static_cast<std::size_t>(src.width) +
                      static_cast<std::size_t>(x / factor)) * 3;
      img.set(x, y, src.pixels[i], src.pixels[i + 1], src.pixels[i + 2]);
    }
  }
  return img;
}

void cmd_visualize(const VisualizeArgs& a) {
  if (a.checkpoint.empty()) throw CliError("visualize needs --checkpoint");
  const TrainConfig cfg = config_for_checkpoint(a.checkpoint);
  const ToyBackbone net = load_network(a.checkpoint, cfg);
  const fs::path out(a.out);
  prepare_out_dir(out);

  std::mt19937_64 rng(a.scene_seed);
  const SyntheticScene scene = generate_scene(rng, cfg.num_classes, cfg.scene());
  Box roi;
  int label = 1;
  if (a.roi.empty()) {
    roi = scene.gts.at(0).box;
    label = scene.gts.at(0).label;
  } else {
    if (a.roi.size() != 4 || !(a.roi[2] > 0.0 && a.roi[3] > 0.0)) {
      throw CliError("--roi takes x0 y0 w h with positive w and h");
    }
    roi = Box{a.roi[0], a.roi[1], a.roi[2], a.roi[3]};
  }
  if (a.label) label = *a.label;
  if (label < 0 || label > cfg.num_classes) throw CliError("--class out of range");

  const FeatureMaps maps = backbone_forward(net, scene.image);
  const HeadOutput head = head_forward(net, maps, std::span(&roi, 1));
  const PsRoiConfig pc = net.cls_config();
  const int k = pc.k;

  double scale = 0.0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      scale = std::max(scale, max_abs(maps.cls_maps.slice_channels(pc.channel(i, j, label), 1)));
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      const RgbImage gray = plane_to_gray(maps.cls_maps, 0, pc.channel(i, j, label), scale);
      char name[64];
      std::snprintf(name, sizeof(name), "map_i%d_j%d.ppm", i, j);
      write_ppm(out / name, upscale(gray, net.stride()));
    }
  }

  // Overlay: the scene with every bin of the RoI outlined, bright where the
  // pooled score for the class is high.
  RgbImage overlay = to_rgb(scene.image);
  const RoI& r = head.rois[0];
  const double s = net.stride();
  double bin_scale = 0.0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) bin_scale = std::max(bin_scale, std::abs(head.cls_bins.at(0, label, i, j)));
  json bins = json::array();
  for (int j = 0; j < k; ++j) {
    json row = json::array();
    for (int i = 0; i < k; ++i) {
      const Span xs = bin_span(i, r.w, k);
      const Span ys = bin_span(j, r.h, k);
      const double v = head.cls_bins.at(0, label, i, j);
      const double t = bin_scale > 0.0 ? 0.5 + 0.5 * v / bin_scale : 0.5;
      const auto hi = static_cast<std::uint8_t>(std::lround(255.0 * t));
      const auto lo = static_cast<std::uint8_t>(255 - hi);
      const Box bin{(r.x0 + xs.lo) * s, (r.y0 + ys.lo) * s, (xs.hi - xs.lo) * s, (ys.hi - ys.lo) * s};
      draw_rect(overlay, bin, lo, hi, 0);
      row.push_back(v);
    }
    bins.push_back(row);
  }
  draw_rect(overlay, roi, 255, 255, 255);
  write_ppm(out / "overlay.ppm", overlay);

  const json summary{{"scene_seed", a.scene_seed},
                     {"class", label},
                     {"roi", {roi.x0, roi.y0, roi.w, roi.h}},
                     {"feature_roi", {r.x0, r.y0, r.w, r.h}},
                     {"bins_rows_y_cols_x", bins},
                     {"score", head.probs(0, static_cast<std::size_t>(label))},
                     {"map_scale", scale}};
  write_text(out / "bins.json", summary.dump(2) + "\n");
  std::printf("wrote %d maps and overlay.ppm to %s (class %d score %.4f)\n", k * k,
              out.string().c_str(), label, head.probs(0, static_cast<std::size_t>(label)));
}

struct BenchArgs {
  std::string variant = "all";
  std::string n_values = "300,2000";
  std::size_t reps = 10;
  std::uint64_t seed = 0;
  std::string out = "bench";
  bool parallel = false;
};

void cmd_bench(const BenchArgs& a) {
  std::vector<HeadKind> kinds;
  if (a.variant == "all") {
    kinds = {HeadKind::psroi_head, HeadKind::per_roi_fc_head, HeadKind::per_roi_conv_head};
  } else {
    std::stringstream ss(a.variant);
    std::string item;
    while (std::getline(ss, item, ',')) kinds.push_back(parse_head_kind(item));
  }
  const auto ns = parse_counts(a.n_values);
  const fs::path out(a.out);
  prepare_out_dir(out);
  const BenchReport rep = run_bench(kinds, ns, a.reps, a.seed, BenchParams{}, a.parallel);
  std::ofstream csv(out / "bench.csv");
  write_bench_csv(csv, rep);
  std::ostringstream md;
  write_bench_markdown(md, rep);
  write_text(out / "bench.md", md.str());
  std::cout << md.str();
}

struct ExportArgs {
  ConfigFlags flags;
  std::size_t n_scenes = 10;
  std::string out = "dataset";
};

void cmd_export(const ExportArgs& a) {
  const TrainConfig cfg = a.flags.resolve();
  if (a.n_scenes == 0) throw CliError("--n-scenes must be >= 1");
  const fs::path out(a.out);
  prepare_out_dir(out);
  const auto scenes = make_scenes(a.n_scenes, cfg.seed, cfg.num_classes, cfg.scene());
  std::ofstream gt(out / "ground_truth.csv");
  gt << "image_id,class,x0,y0,w,h\n";
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "scene_%04zu.ppm", i);
    write_ppm(out / name, to_rgb(scenes[i].image));
    for (const GroundTruth& g : scenes[i].gts) {
      gt << i << ',' << g.label << ',' << g.box.x0 << ',' << g.box.y0 << ',' << g.box.w << ','
         << g.box.h << '\n';
    }
  }
  if (!gt) throw CliError("cannot write ground_truth.csv");
  std::printf("wrote %zu scenes to %s\n", scenes.size(), out.string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Position-sensitive RoI detector toolkit"};
  app.require_subcommand(1);

  TrainArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "train a toy detector and write a checkpoint");
  train_args.flags.add(train_cmd, true);
  train_cmd->add_option("--out", train_args.out, "output directory");
  train_cmd->add_option("--steps", train_args.steps, "number of steps (default: whole schedule)");
  train_cmd->add_flag("--parallel", train_args.parallel, "use the OpenMP kernels");

  EvalArgs eval_args;
  CLI::App* eval_cmd = app.add_subcommand("eval", "score synthetic scenes and report mAP");
  eval_args.flags.add(eval_cmd, false);
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "checkpoint.bin (config.json alongside)");
  eval_cmd->add_option("--out", eval_args.out, "output directory");
  eval_cmd->add_option("--n-scenes", eval_args.n_scenes, "number of evaluation scenes");
  eval_cmd->add_option("--scene-seed", eval_args.scene_seed, "seed of the evaluation scenes");
  eval_cmd->add_flag("--oracle", eval_args.oracle, "score the ground truth itself");
  eval_cmd->add_flag("--parallel", eval_args.parallel, "use the OpenMP kernels");

  VisualizeArgs vis_args;
  CLI::App* vis_cmd = app.add_subcommand("visualize", "write the k x k score maps of one class");
  vis_cmd->add_option("--checkpoint", vis_args.checkpoint, "checkpoint.bin (config.json alongside)")
      ->required();
  vis_cmd->add_option("--seed", vis_args.scene_seed, "scene seed");
  vis_cmd->add_option("--roi", vis_args.roi, "x0 y0 w h in pixels (default: first object)")
      ->expected(4);
  vis_cmd->add_option("--class", vis_args.label, "class whose maps are shown");
  vis_cmd->add_option("--out", vis_args.out, "output directory");

  BenchArgs bench_args;
  CLI::App* bench_cmd = app.add_subcommand("bench", "time the heads against the number of RoIs");
  bench_cmd->add_option("--variant", bench_args.variant,
                        "all, or a comma list of psroi_head, per_roi_fc_head, per_roi_conv_head");
  bench_cmd->add_option("--n-values", bench_args.n_values, "comma list of RoI counts");
  bench_cmd->add_option("--reps", bench_args.reps, "timed repetitions (>= 10)");
  bench_cmd->add_option("--seed", bench_args.seed, "seed of features and RoIs");
  bench_cmd->add_option("--out", bench_args.out, "output directory");
  bench_cmd->add_flag("--parallel", bench_args.parallel, "also time the OpenMP path");

  ExportArgs export_args;
  CLI::App* export_cmd = app.add_subcommand("export-dataset", "write synthetic scenes as PPM + CSV");
  export_args.flags.add(export_cmd, false);
  export_cmd->add_option("--n-scenes", export_args.n_scenes, "number of scenes");
  export_cmd->add_option("--out", export_args.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::fprintf(stderr, "error: %s\n", msg.c_str());
    return 2;
  }

  try {
    if (*train_cmd) cmd_train(train_args);
    if (*eval_cmd) cmd_eval(eval_args);
    if (*vis_cmd) cmd_visualize(vis_args);
    if (*bench_cmd) cmd_bench(bench_args);
    if (*export_cmd) cmd_export(export_args);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::fprintf(stderr, "error: %s\n", msg.c_str());
    return 1;
  }
  return 0;
}
