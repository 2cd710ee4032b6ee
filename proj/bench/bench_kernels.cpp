// Copyright 2026 The FedLeak Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Serial reference kernels against their OpenMP counterparts. Thread count
// follows OMP_NUM_THREADS / FEDLEAK_THREADS.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "fedleak/kernels.hpp"

namespace {

using fedleak::kernels::ConvGeometry;

std::vector<float> Random(std::size_t n) {
  std::mt19937 gen(7);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (float& x : v) x = u(gen);
  return v;
}

// Second block of the desk CNN on a batch of 10: 8 -> 16 channels, 8x8.
ConvGeometry DeskConv(std::size_t batch) {
  ConvGeometry g;
  g.batch = batch;
  g.in_channels = 8;
  g.height = g.width = 8;
  g.out_channels = 16;
  g.kernel = 3;
  g.pad = 1;
  return g;
}

template <auto Kernel>
void BM_Matmul(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const auto a = Random(n * n), b = Random(n * n);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    Kernel(a, b, c, n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
}

template <auto Kernel>
void BM_ConvForward(benchmark::State& state) {
  const ConvGeometry g = DeskConv(static_cast<std::size_t>(state.range(0)));
  const auto x = Random(g.input_size()), w = Random(g.weight_size());
  std::vector<float> y(g.output_size());
  for (auto _ : state) {
    Kernel(g, x, w, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(g.macs()));
}

template <auto Kernel>
void BM_ConvWeightGrad(benchmark::State& state) {
  const ConvGeometry g = DeskConv(static_cast<std::size_t>(state.range(0)));
  const auto x = Random(g.input_size()), gy = Random(g.output_size());
  std::vector<float> gw(g.weight_size());
  for (auto _ : state) {
    Kernel(g, x, gy, gw);
    benchmark::DoNotOptimize(gw.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(g.macs()));
}

namespace k = fedleak::kernels;

BENCHMARK(BM_Matmul<k::serial::Matmul>)->Name("Matmul/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_Matmul<k::parallel::Matmul>)->Name("Matmul/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_ConvForward<k::serial::Conv2dForward>)->Name("ConvForward/serial")->Arg(1)->Arg(10);
BENCHMARK(BM_ConvForward<k::parallel::Conv2dForward>)->Name("ConvForward/parallel")->Arg(1)->Arg(10);
BENCHMARK(BM_ConvWeightGrad<k::serial::Conv2dWeightGrad>)->Name("ConvWeightGrad/serial")->Arg(1)->Arg(10);
BENCHMARK(BM_ConvWeightGrad<k::parallel::Conv2dWeightGrad>)->Name("ConvWeightGrad/parallel")->Arg(1)->Arg(10);

}  // namespace

BENCHMARK_MAIN();
