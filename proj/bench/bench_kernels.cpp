// Reference loops vs the serial and OpenMP kernels.

#include <benchmark/benchmark.h>

#include <random>

#include "rfcn/bench.hpp"
#include "rfcn/psroi.hpp"
#include "rfcn/reference.hpp"
#include "rfcn/tensor.hpp"

using namespace rfcn;

namespace {

enum Path { kReference = 0, kSerial = 1, kParallel = 2 };

struct ConvCase {
  Tensor input;
  ConvLayer layer;
  Tensor grad_out;
};

ConvCase conv_case(std::size_t in_c, std::size_t out_c, std::size_t size, std::size_t kernel,
                   std::size_t stride) {
  std::mt19937_64 rng(1);
  ConvCase c;
  c.input = Tensor::random_normal(Shape{1, in_c, size, size}, rng);
  c.layer = ConvLayer(out_c, in_c, kernel, stride, kernel / 2);
  c.layer.weights = Tensor::random_normal(c.layer.weights.shape(), rng, 0.1);
  c.grad_out = Tensor::random_normal(c.layer.output_shape(c.input.shape()), rng);
  return c;
}

void BM_Conv3x3Forward(benchmark::State& state) {
  const ConvCase c = conv_case(32, 64, 48, 3, 2);
  for (auto _ : state) {
    Tensor out = state.range(0) == kReference
                     ? reference::conv2d_forward(c.input, c.layer)
                     : conv2d_forward(c.input, c.layer,
                                      state.range(0) == kParallel ? Exec::parallel : Exec::serial);
    benchmark::DoNotOptimize(out.data().data());
  }
}
BENCHMARK(BM_Conv3x3Forward)->Arg(kReference)->Arg(kSerial)->Arg(kParallel)->Unit(benchmark::kMillisecond);

void BM_Conv3x3Backward(benchmark::State& state) {
  const ConvCase c = conv_case(32, 64, 48, 3, 2);
  for (auto _ : state) {
    ConvGrads g = state.range(0) == kReference
                      ? reference::conv2d_backward(c.input, c.layer, c.grad_out)
                      : conv2d_backward(c.input, c.layer, c.grad_out,
                                        state.range(0) == kParallel ? Exec::parallel : Exec::serial);
    benchmark::DoNotOptimize(g.weights.data().data());
  }
}
BENCHMARK(BM_Conv3x3Backward)->Arg(kReference)->Arg(kSerial)->Arg(kParallel)->Unit(benchmark::kMillisecond);

void BM_BankConv(benchmark::State& state) {
  const ConvCase c = conv_case(256, 7 * 7 * 21, 38, 1, 1);
  for (auto _ : state) {
    Tensor out = state.range(0) == kReference
                     ? reference::conv2d_forward(c.input, c.layer)
                     : conv2d_forward(c.input, c.layer,
                                      state.range(0) == kParallel ? Exec::parallel : Exec::serial);
    benchmark::DoNotOptimize(out.data().data());
  }
}
BENCHMARK(BM_BankConv)->Arg(kReference)->Arg(kSerial)->Arg(kParallel)->Unit(benchmark::kMillisecond);

struct PoolCase {
  PsRoiConfig cfg{7, 20, MapKind::classification};
  Tensor maps;
  std::vector<RoI> rois;
  PooledBins grad;
};

PoolCase pool_case(std::size_t n) {
  PoolCase c;
  std::mt19937_64 rng(2);
  c.maps = Tensor::random_normal(Shape{1, c.cfg.channels(), 38, 38}, rng);
  c.rois = BenchHeads(BenchParams{}, 3).make_rois(n, 4);
  c.grad = PooledBins(n, c.cfg.groups(), c.cfg.k, 1.0);
  return c;
}

void BM_PsRoiForward(benchmark::State& state) {
  const PoolCase c = pool_case(static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) {
    PooledBins out = state.range(0) == kReference
                         ? reference::psroi_pool_forward(c.maps, c.rois, c.cfg)
                         : psroi_pool_forward(c.maps, c.rois, c.cfg,
                                              state.range(0) == kParallel ? Exec::parallel : Exec::serial);
    benchmark::DoNotOptimize(out.values().data());
  }
}
BENCHMARK(BM_PsRoiForward)
    ->ArgsProduct({{kReference, kSerial, kParallel}, {300, 2000}})
    ->Unit(benchmark::kMillisecond);

void BM_PsRoiBackward(benchmark::State& state) {
  const PoolCase c = pool_case(static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) {
    Tensor g = state.range(0) == kReference
                   ? reference::psroi_pool_backward(c.maps.shape(), c.rois, c.cfg, c.grad)
                   : psroi_pool_backward(c.maps.shape(), c.rois, c.cfg, c.grad,
                                         state.range(0) == kParallel ? Exec::parallel : Exec::serial);
    benchmark::DoNotOptimize(g.data().data());
  }
}
BENCHMARK(BM_PsRoiBackward)
    ->ArgsProduct({{kReference, kSerial, kParallel}, {300, 2000}})
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
