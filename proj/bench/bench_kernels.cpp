#include <benchmark/benchmark.h>

#include "moldgan/dmd.hpp"
#include "moldgan/metrics.hpp"
#include "moldgan/nnet/kernels.hpp"

using namespace moldgan;

namespace {

nnet::Tensor<float> random_tensor(std::vector<int> shape, std::uint64_t seed) {
  Rng rng(seed);
  nnet::Tensor<float> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(-1, 1));
  return t;
}

struct ConvCase {
  nnet::Tensor<float> x = random_tensor({32, 64, 64}, 1);
  nnet::Tensor<float> w = random_tensor({64, 32, 4, 4}, 2);
  nnet::Tensor<float> b = random_tensor({64}, 3);
  nnet::Tensor<float> g = random_tensor({64, 32, 32}, 4);
};

const ConvCase& conv_case() {
  static const ConvCase c;
  return c;
}

const dmd::ModalBasis& basis() {
  static const auto b = dmd::build_basis(128, 128, 100);
  return b;
}

const FloatField& surface() {
  static const FloatField f = [] {
    Rng rng(5);
    FloatField s(128, 128);
    for (auto& v : s.data) v = rng.uniform(-1, 1);
    return s;
  }();
  return f;
}

std::pair<GrayImage, GrayImage> image_pair() {
  Rng rng(6);
  GrayImage a(256, 256), b(256, 256);
  for (auto& v : a.data) v = static_cast<std::uint8_t>(rng.next_below(256));
  for (auto& v : b.data) v = static_cast<std::uint8_t>(rng.next_below(256));
  return {a, b};
}

}  // namespace

static void BM_ConvForward(benchmark::State& s) {
  const auto& c = conv_case();
  for (auto _ : s) benchmark::DoNotOptimize(nnet::conv2d_forward(c.x, c.w, c.b, 2, 1));
}
static void BM_ConvForwardSerial(benchmark::State& s) {
  const auto& c = conv_case();
  for (auto _ : s) benchmark::DoNotOptimize(nnet::serial::conv2d_forward(c.x, c.w, c.b, 2, 1));
}
static void BM_ConvBackward(benchmark::State& s) {
  const auto& c = conv_case();
  for (auto _ : s) benchmark::DoNotOptimize(nnet::conv2d_backward(c.x, c.w, c.g, 2, 1));
}
static void BM_ConvBackwardSerial(benchmark::State& s) {
  const auto& c = conv_case();
  for (auto _ : s) benchmark::DoNotOptimize(nnet::serial::conv2d_backward(c.x, c.w, c.g, 2, 1));
}
static void BM_DeconvForward(benchmark::State& s) {
  const auto& c = conv_case();
  const auto w = random_tensor({64, 32, 4, 4}, 7);
  const auto b = random_tensor({32}, 8);
  for (auto _ : s) benchmark::DoNotOptimize(nnet::deconv2d_forward(c.g, w, b, 2, 1));
}
static void BM_DeconvForwardSerial(benchmark::State& s) {
  const auto& c = conv_case();
  const auto w = random_tensor({64, 32, 4, 4}, 7);
  const auto b = random_tensor({32}, 8);
  for (auto _ : s) benchmark::DoNotOptimize(nnet::serial::deconv2d_forward(c.g, w, b, 2, 1));
}
static void BM_Project(benchmark::State& s) {
  for (auto _ : s) benchmark::DoNotOptimize(dmd::project(surface(), basis()));
}
static void BM_ProjectSerial(benchmark::State& s) {
  for (auto _ : s) benchmark::DoNotOptimize(dmd::serial::project(surface().data, basis()));
}
static void BM_Reconstruct(benchmark::State& s) {
  const auto spec = dmd::project(surface(), basis());
  for (auto _ : s) benchmark::DoNotOptimize(dmd::reconstruct(spec, basis()));
}
static void BM_ReconstructSerial(benchmark::State& s) {
  const auto spec = dmd::project(surface(), basis());
  for (auto _ : s) benchmark::DoNotOptimize(dmd::serial::reconstruct(spec, basis()));
}
static void BM_Ssim(benchmark::State& s) {
  const auto [a, b] = image_pair();
  for (auto _ : s) benchmark::DoNotOptimize(metrics::ssim(a, b));
}
static void BM_SsimSerial(benchmark::State& s) {
  const auto [a, b] = image_pair();
  for (auto _ : s) benchmark::DoNotOptimize(metrics::ssim_serial(a, b));
}

BENCHMARK(BM_ConvForward)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_ConvForwardSerial)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_ConvBackward)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_ConvBackwardSerial)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_DeconvForward)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_DeconvForwardSerial)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Project)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_ProjectSerial)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Reconstruct)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_ReconstructSerial)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Ssim)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_SsimSerial)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
