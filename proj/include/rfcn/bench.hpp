#pragma once

// Wall-clock comparison of the position-sensitive head against heads that
// run a learnable subnetwork per RoI. All variants read the same random
// feature map and RoI set and emit (N, C+1) logits plus (N, 4) deltas.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "rfcn/head.hpp"
#include "rfcn/psroi.hpp"
#include "rfcn/tensor.hpp"

namespace rfcn {

enum class HeadKind { psroi_head, per_roi_fc_head, per_roi_conv_head };

std::string to_string(HeadKind kind);
HeadKind parse_head_kind(const std::string& name);

struct BenchParams {
  int feature_channels = 256;
  int feature_size = 38;  // square feature map side (a ~600 px image at stride 16)
  int num_classes = 20;
  int k = 7;
  int pool_size = 7;         // RoI pooling grid of the per-RoI heads
  int conv_head_width = 32;  // channels of the two per-RoI convs
  int min_roi = 2;
  int max_roi = 20;
  std::size_t warmup = 3;
};

// Shared inputs and weights for one benchmark configuration.
class BenchHeads {
 public:
  BenchHeads(const BenchParams& params, std::uint64_t seed);

  const Tensor& features() const { return features_; }
  std::vector<RoI> make_rois(std::size_t n, std::uint64_t seed) const;

  struct Output {
    Matrix logits;
    Matrix deltas;
  };
  Output run(HeadKind kind, std::span<const RoI> rois, Exec exec = Exec::serial) const;

 private:
  Output run_psroi(std::span<const RoI> rois, Exec exec) const;
  Output run_fc(std::span<const RoI> rois, Exec exec) const;
  Output run_conv(std::span<const RoI> rois, Exec exec) const;

  BenchParams params_;
  Tensor features_;
  ConvLayer cls_bank_;
  ConvLayer reg_bank_;
  ConvLayer roi_conv1_;
  ConvLayer roi_conv2_;
  Matrix fc_weights_;       // (C+5, D * P * P)
  Matrix conv_fc_weights_;  // (C+5, W * P * P)
};

// Plain (not position-sensitive) average RoI pooling of every channel to a
// pool x pool grid, with the same floor/ceil bin spans. Output (R, D, pool, pool).
Tensor roi_average_pool(const Tensor& features, std::span<const RoI> rois, int pool,
                        Exec exec = Exec::serial);

struct BenchRow {
  HeadKind variant = HeadKind::psroi_head;
  std::size_t n = 0;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double std_ms = 0.0;
  std::size_t reps = 0;
  bool parallel = false;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  BenchParams params;
  int threads = 1;
  std::string compiler;

  const BenchRow* find(HeadKind kind, std::size_t n, bool parallel = false) const;
};

// Times `reps` forward passes per (variant, N) after params.warmup discarded
// runs. With also_parallel, every row is repeated with Exec::parallel.
BenchReport run_bench(std::span<const HeadKind> variants, std::span<const std::size_t> n_values,
                      std::size_t reps, std::uint64_t seed, const BenchParams& params = {},
                      bool also_parallel = false);

void write_bench_csv(std::ostream& os, const BenchReport& report);
void write_bench_markdown(std::ostream& os, const BenchReport& report);

}  // namespace rfcn
