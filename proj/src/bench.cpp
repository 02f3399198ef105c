#include "rfcn/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>

#include <omp.h>

namespace rfcn {

std::string to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::psroi_head:
      return "psroi_head";
    case HeadKind::per_roi_fc_head:
      return "per_roi_fc_head";
    case HeadKind::per_roi_conv_head:
      return "per_roi_conv_head";
  }
  return "unknown";
}

HeadKind parse_head_kind(const std::string& name) {
  if (name == "psroi_head") return HeadKind::psroi_head;
  if (name == "per_roi_fc_head") return HeadKind::per_roi_fc_head;
  if (name == "per_roi_conv_head") return HeadKind::per_roi_conv_head;
  throw std::invalid_argument("unknown head variant '" + name + "'");
}

Tensor roi_average_pool(const Tensor& features, std::span<const RoI> rois, int pool, Exec exec) {
  if (pool < 1) throw std::invalid_argument("roi_average_pool: pool must be >= 1");
  const Shape s = features.shape();
  const auto P = static_cast<std::size_t>(pool);
  Tensor out(Shape{std::max<std::size_t>(rois.size(), 1), s.c, P, P});
  for (const RoI& r : rois) {
    if (r.batch_index >= s.n) throw std::invalid_argument("roi_average_pool: bad batch index");
  }
  const long n = static_cast<long>(rois.size());
#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
  for (long rl = 0; rl < n; ++rl) {
    const auto r = static_cast<std::size_t>(rl);
    const RoI roi = clip_roi(rois[r], s.h, s.w);
    for (std::size_t c = 0; c < s.c; ++c) {
      auto plane = features.plane(roi.batch_index, c);
      for (int j = 0; j < pool; ++j) {
        const Span ys = bin_span(j, roi.h, pool);
        for (int i = 0; i < pool; ++i) {
          const Span xs = bin_span(i, roi.w, pool);
          double acc = 0.0;
          for (int y = roi.y0 + ys.lo; y < roi.y0 + ys.hi; ++y) {
            const double* row = plane.data() + static_cast<std::size_t>(y) * s.w;
            for (int x = roi.x0 + xs.lo; x < roi.x0 + xs.hi; ++x) acc += row[x];
          }
          out.at(r, c, static_cast<std::size_t>(j), static_cast<std::size_t>(i)) =
              acc / static_cast<double>((xs.hi - xs.lo) * (ys.hi - ys.lo));
        }
      }
    }
  }
  return out;
}

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  Matrix m(rows, cols);
  std::normal_distribution<double> d(0.0, stddev);
  for (std::size_t r = 0; r < rows; ++r) {
    for (double& v : m.row(r)) v = d(rng);
  }
  return m;
}

ConvLayer random_conv(std::size_t out_c, std::size_t in_c, std::size_t kernel, std::size_t pad,
                      std::mt19937_64& rng) {
  ConvLayer l(out_c, in_c, kernel, 1, pad);
  l.weights = Tensor::random_normal(l.weights.shape(), rng,
                                    std::sqrt(2.0 / static_cast<double>(in_c * kernel * kernel)));
  return l;
}

}  // namespace

BenchHeads::BenchHeads(const BenchParams& params, std::uint64_t seed) : params_(params) {
  if (params.feature_channels < 1 || params.feature_size < 1 || params.num_classes < 1 ||
      params.k < 1 || params.pool_size < 1 || params.conv_head_width < 1 ||
      params.min_roi < 1 || params.max_roi < params.min_roi) {
    throw std::invalid_argument("bench: invalid parameters");
  }
  std::mt19937_64 rng(seed);
  const auto D = static_cast<std::size_t>(params.feature_channels);
  const auto S = static_cast<std::size_t>(params.feature_size);
  const auto P = static_cast<std::size_t>(params.pool_size);
  const auto W = static_cast<std::size_t>(params.conv_head_width);
  const auto outputs = static_cast<std::size_t>(params.num_classes + 5);
  features_ = Tensor::random_normal(Shape{1, D, S, S}, rng);
  const PsRoiConfig cls{params.k, params.num_classes, MapKind::classification};
  const PsRoiConfig reg{params.k, params.num_classes, MapKind::regression};
  cls_bank_ = random_conv(cls.channels(), D, 1, 0, rng);
  reg_bank_ = random_conv(reg.channels(), D, 1, 0, rng);
  roi_conv1_ = random_conv(W, D, 3, 1, rng);
  roi_conv2_ = random_conv(W, W, 3, 1, rng);
  fc_weights_ = random_matrix(outputs, D * P * P, 1.0 / std::sqrt(double(D * P * P)), rng);
  conv_fc_weights_ = random_matrix(outputs, W * P * P, 1.0 / std::sqrt(double(W * P * P)), rng);
}

std::vector<RoI> BenchHeads::make_rois(std::size_t n, std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> size(params_.min_roi,
                                          std::min(params_.max_roi, params_.feature_size));
  std::vector<RoI> rois;
  rois.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    RoI r;
    r.w = size(rng);
    r.h = size(rng);
    std::uniform_int_distribution<int> xd(0, params_.feature_size - r.w);
    std::uniform_int_distribution<int> yd(0, params_.feature_size - r.h);
    r.x0 = xd(rng);
    r.y0 = yd(rng);
    rois.push_back(r);
  }
  return rois;
}

BenchHeads::Output BenchHeads::run(HeadKind kind, std::span<const RoI> rois, Exec exec) const {
  switch (kind) {
    case HeadKind::psroi_head:
      return run_psroi(rois, exec);
    case HeadKind::per_roi_fc_head:
      return run_fc(rois, exec);
    case HeadKind::per_roi_conv_head:
      return run_conv(rois, exec);
  }
  throw std::invalid_argument("bench: unknown head");
}

BenchHeads::Output BenchHeads::run_psroi(std::span<const RoI> rois, Exec exec) const {
  const PsRoiConfig cls{params_.k, params_.num_classes, MapKind::classification};
  const PsRoiConfig reg{params_.k, params_.num_classes, MapKind::regression};
  const Tensor cls_maps = conv2d_forward(features_, cls_bank_, exec);
  const Tensor reg_maps = conv2d_forward(features_, reg_bank_, exec);
  return Output{vote(psroi_pool_forward(cls_maps, rois, cls, exec)),
                vote_box(psroi_pool_forward(reg_maps, rois, reg, exec))};
}

namespace {

// Row r of `pooled` (flattened c, y, x) times the fc matrix, split into logits and deltas.
void apply_fc(const Matrix& fc, const Tensor& pooled, std::size_t r, std::size_t classes,
              Matrix& logits, Matrix& deltas) {
  const std::size_t len = pooled.shape().c * pooled.shape().plane();
  const double* x = pooled.data().data() + r * len;
  for (std::size_t o = 0; o < fc.rows(); ++o) {
    const auto w = fc.row(o);
    double acc = 0.0;
    for (std::size_t i = 0; i < len; ++i) acc += w[i] * x[i];
    if (o < classes) {
      logits(r, o) = acc;
    } else {
      deltas(r, o - classes) = acc;
    }
  }
}

}  // namespace

BenchHeads::Output BenchHeads::run_fc(std::span<const RoI> rois, Exec exec) const {
  const Tensor pooled = roi_average_pool(features_, rois, params_.pool_size, exec);
  const auto classes = static_cast<std::size_t>(params_.num_classes + 1);
  Output out{Matrix(rois.size(), classes), Matrix(rois.size(), 4)};
  const long n = static_cast<long>(rois.size());
#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
  for (long r = 0; r < n; ++r) {
    apply_fc(fc_weights_, pooled, static_cast<std::size_t>(r), classes, out.logits, out.deltas);
  }
  return out;
}

BenchHeads::Output BenchHeads::run_conv(std::span<const RoI> rois, Exec exec) const {
  const Tensor pooled = roi_average_pool(features_, rois, params_.pool_size, exec);
  // Per-RoI subnetwork: the convs see the (R, D, P, P) batch one RoI after another.
  const Tensor h1 = relu(conv2d_forward(pooled, roi_conv1_, exec));
  const Tensor h2 = relu(conv2d_forward(h1, roi_conv2_, exec));
  const auto classes = static_cast<std::size_t>(params_.num_classes + 1);
  Output out{Matrix(rois.size(), classes), Matrix(rois.size(), 4)};
  const long n = static_cast<long>(rois.size());
#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
  for (long r = 0; r < n; ++r) {
    apply_fc(conv_fc_weights_, h2, static_cast<std::size_t>(r), classes, out.logits, out.deltas);
  }
  return out;
}

const BenchRow* BenchReport::find(HeadKind kind, std::size_t n, bool parallel) const {
  for (const BenchRow& r : rows) {
    if (r.variant == kind && r.n == n && r.parallel == parallel) return &r;
  }
  return nullptr;
}

BenchReport run_bench(std::span<const HeadKind> variants, std::span<const std::size_t> n_values,
                      std::size_t reps, std::uint64_t seed, const BenchParams& params,
                      bool also_parallel) {
  if (n_values.empty()) throw std::invalid_argument("run_bench: n_values must be nonempty");
  if (reps < 10) throw std::invalid_argument("run_bench: reps must be >= 10");
  BenchReport report;
  report.params = params;
  report.threads = omp_get_max_threads();
#if defined(__clang__)
  report.compiler = "clang " __clang_version__;
#elif defined(__GNUC__)
  report.compiler = "gcc " __VERSION__;
#else
  report.compiler = "unknown";
#endif
  const BenchHeads heads(params, seed);
  std::vector<Exec> modes{Exec::serial};
  if (also_parallel) modes.push_back(Exec::parallel);

  for (Exec exec : modes) {
    for (HeadKind kind : variants) {
      for (std::size_t n : n_values) {
        const auto rois = heads.make_rois(n, seed + n);
        for (std::size_t w = 0; w < params.warmup; ++w) (void)heads.run(kind, rois, exec);
        std::vector<double> ms(reps);
        for (std::size_t i = 0; i < reps; ++i) {
          const auto t0 = std::chrono::steady_clock::now();
          const auto out = heads.run(kind, rois, exec);
          const auto t1 = std::chrono::steady_clock::now();
          if (out.logits.rows() != n) throw std::logic_error("bench: head output size mismatch");
          ms[i] = std::chrono::duration<double, std::milli>(t1 - t0).count();
        }
        BenchRow row;
        row.variant = kind;
        row.n = n;
        row.reps = reps;
        row.parallel = exec == Exec::parallel;
        row.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(reps);
        double var = 0.0;
        for (double v : ms) var += (v - row.mean_ms) * (v - row.mean_ms);
        row.std_ms = std::sqrt(var / static_cast<double>(reps - 1));
        std::sort(ms.begin(), ms.end());
        row.median_ms = reps % 2 == 1 ? ms[reps / 2] : 0.5 * (ms[reps / 2 - 1] + ms[reps / 2]);
        report.rows.push_back(row);
      }
    }
  }
  return report;
}

void write_bench_csv(std::ostream& os, const BenchReport& report) {
  os << "variant,n,mode,mean_ms,median_ms,std_ms,reps,threads\n";
  char buf[256];
  for (const BenchRow& r : report.rows) {
    std::snprintf(buf, sizeof(buf), "%s,%zu,%s,%.4f,%.4f,%.4f,%zu,%d\n",
                  to_string(r.variant).c_str(), r.n, r.parallel ? "parallel" : "serial",
                  r.mean_ms, r.median_ms, r.std_ms, r.reps, report.threads);
    os << buf;
  }
}

void write_bench_markdown(std::ostream& os, const BenchReport& report) {
  const BenchParams& p = report.params;
  os << "# Head forward time\n\n"
     << "features " << p.feature_channels << "x" << p.feature_size << "x" << p.feature_size
     << ", C=" << p.num_classes << ", k=" << p.k << ", pool " << p.pool_size << "x"
     << p.pool_size << ", threads " << report.threads << ", " << report.compiler << "\n\n"
     << "| variant | N | mode | mean ms | median ms | std ms | reps |\n"
     << "|---|---:|---|---:|---:|---:|---:|\n";
  char buf[256];
  for (const BenchRow& r : report.rows) {
    std::snprintf(buf, sizeof(buf), "| %s | %zu | %s | %.3f | %.3f | %.3f | %zu |\n",
                  to_string(r.variant).c_str(), r.n, r.parallel ? "parallel" : "serial",
                  r.mean_ms, r.median_ms, r.std_ms, r.reps);
    os << buf;
  }
}

}  // namespace rfcn
