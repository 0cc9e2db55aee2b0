#include <benchmark/benchmark.h>

#include <vector>

#include "blora/adapter.hpp"
#include "blora/complexity.hpp"
#include "blora/ops.hpp"
#include "blora/quantizer.hpp"
#include "blora/rng.hpp"
#include "blora/tensor.hpp"

using namespace blora;

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, Rng& rng, bool grad = false) {
  std::vector<double> data(rows * cols);
  for (double& v : data) v = rng.normal();
  return Tensor({rows, cols}, std::move(data), grad);
}

void BM_Quantize(benchmark::State& state) {
  Rng rng(0);
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_matrix(1, n, rng);
  const QuantizerConfig config;
  QuantizerState q = QuantizerState::make(RangeMode::PerCallMinMax);
  resolve_range(x, q, Mode::Eval);
  const GateDraw gates = eval_gates(q, config);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(quantize(x, q, config, gates));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Quantize)->Arg(1 << 10)->Arg(1 << 14);

void BM_BlockForward(benchmark::State& state) {
  Rng rng(0);
  const auto d = static_cast<std::size_t>(state.range(0));
  const QuantizerConfig config;
  BLoraLinear block(random_matrix(d, d, rng), BLoraOptions{}, &config, rng);
  const Tensor x = random_matrix(16, d, rng);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(block.forward(x, Mode::Eval, rng));
}
BENCHMARK(BM_BlockForward)->Arg(32)->Arg(128);

void BM_BlockTrainStep(benchmark::State& state) {
  Rng rng(0);
  const auto d = static_cast<std::size_t>(state.range(0));
  const QuantizerConfig config;
  BLoraLinear block(random_matrix(d, d, rng), BLoraOptions{}, &config, rng);
  const Tensor x = random_matrix(16, d, rng);
  for (auto _ : state) {
    const Tensor loss = sum(block.forward(x, Mode::Train, rng));
    backward(loss);
  }
}
BENCHMARK(BM_BlockTrainStep)->Arg(32)->Arg(128);

void BM_CountMethod(benchmark::State& state) {
  complexity::ModelDims dims;
  dims.d = 768;
  dims.l_seq = 256;
  dims.h = 12;
  dims.e = 512;
  const complexity::MethodConfig method = *complexity::preset_method("lora_r8");
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        complexity::count_method(dims, complexity::AttentionKind::Disentangled, method));
  }
}
BENCHMARK(BM_CountMethod);

}  // namespace

BENCHMARK_MAIN();
