// Serial reference kernels versus their OpenMP versions on default-model
// layer sizes. Set OMP_NUM_THREADS to choose the thread count.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "coffar/kernels.hpp"
#include "coffar/model.hpp"

using namespace coffar;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(gen);
  return t;
}

// Second conv layer of the default model: 8 -> 16 channels on 10x20 maps.
struct ConvCase {
  Tensor x = random_tensor({8, 10, 20}, 1);
  Tensor k = random_tensor({16, 8, 3, 3}, 2);
  std::vector<double> bias = std::vector<double>(16, 0.1);
  Tensor dy = random_tensor({16, 10, 20}, 3);
};

// First fc layer of the default model: 800 -> 64.
struct DenseCase {
  Tensor w = random_tensor({64, 800}, 4);
  std::vector<double> bias = std::vector<double>(64, 0.1);
  std::vector<double> x = random_tensor({800}, 5).values();
  std::vector<double> dy = random_tensor({64}, 6).values();
};

void conv_forward_reference(benchmark::State& state) {
  const ConvCase c;
  for (auto _ : state) benchmark::DoNotOptimize(kernels::reference::conv_forward(c.x, c.k, c.bias));
}

void conv_forward_parallel(benchmark::State& state) {
  const ConvCase c;
  for (auto _ : state) benchmark::DoNotOptimize(kernels::conv_forward(c.x, c.k, c.bias));
}

void conv_backward_reference(benchmark::State& state) {
  const ConvCase c;
  for (auto _ : state) benchmark::DoNotOptimize(kernels::reference::conv_backward(c.x, c.k, c.dy, true));
}

void conv_backward_parallel(benchmark::State& state) {
  const ConvCase c;
  for (auto _ : state) benchmark::DoNotOptimize(kernels::conv_backward(c.x, c.k, c.dy, true));
}

void dense_forward_reference(benchmark::State& state) {
  const DenseCase c;
  for (auto _ : state) benchmark::DoNotOptimize(kernels::reference::dense_forward(c.w, c.bias, c.x));
}

void dense_forward_parallel(benchmark::State& state) {
  const DenseCase c;
  for (auto _ : state) benchmark::DoNotOptimize(kernels::dense_forward(c.w, c.bias, c.x));
}

void dense_backward_reference(benchmark::State& state) {
  const DenseCase c;
  for (auto _ : state) benchmark::DoNotOptimize(kernels::reference::dense_backward(c.w, c.x, c.dy, true));
}

void dense_backward_parallel(benchmark::State& state) {
  const DenseCase c;
  for (auto _ : state) benchmark::DoNotOptimize(kernels::dense_backward(c.w, c.x, c.dy, true));
}

// One training-step gradient over a batch of 32 pairs.
void batch_gradients(benchmark::State& state) {
  const Model model = init_model(ModelConfig::default_config(1));
  std::vector<Tensor> images;
  std::vector<LabeledPair> batch;
  for (std::uint64_t i = 0; i < 32; ++i) {
    Tensor img = random_tensor({kPairRows, kPairCols}, 10 + i);
    for (double& v : img.data()) v = 0.5 + 0.5 * v;
    images.push_back(std::move(img));
  }
  for (std::size_t i = 0; i < images.size(); ++i)
    batch.push_back({&images[i], i % 2 ? PairLabel::Same : PairLabel::Different});
  for (auto _ : state) benchmark::DoNotOptimize(loss_gradients(model, batch));
}

}  // namespace

BENCHMARK(conv_forward_reference);
BENCHMARK(conv_forward_parallel);
BENCHMARK(conv_backward_reference);
BENCHMARK(conv_backward_parallel);
BENCHMARK(dense_forward_reference);
BENCHMARK(dense_forward_parallel);
BENCHMARK(dense_backward_reference);
BENCHMARK(dense_backward_parallel);
BENCHMARK(batch_gradients)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
