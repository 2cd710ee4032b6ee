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

#include <vector>

#include "fedleak/kernels.hpp"
#include "fedleak/rng.hpp"
#include "gtest/gtest.h"

namespace fedleak::kernels {
namespace {

std::vector<float> Random(std::size_t n, RngStream& rng) {
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(rng.Uniform(-1.0, 1.0));
  return v;
}

class ThreadScope {
 public:
  explicit ThreadScope(int n) : saved_(MaxThreads()) { SetMaxThreads(n); }
  ~ThreadScope() { SetMaxThreads(saved_); }

 private:
  int saved_;
};

// Geometries on both sides of kParallelThreshold, with padding and stride.
std::vector<ConvGeometry> Geometries() {
  return {
      {1, 1, 5, 5, 2, 3, 1, 1},
      {2, 3, 7, 6, 4, 3, 2, 1},
      {4, 8, 16, 16, 16, 3, 1, 1},
      {3, 2, 9, 9, 5, 5, 1, 2},
      {2, 4, 8, 8, 3, 1, 1, 0},
  };
}

TEST(KernelTest, ConvKernelsAreBitwiseIdentical) {
  ThreadScope threads(4);
  RngStream rng(1, "conv");
  for (const auto& g : Geometries()) {
    const auto x = Random(g.input_size(), rng);
    const auto w = Random(g.weight_size(), rng);
    const auto gy = Random(g.output_size(), rng);
    std::vector<float> a(g.output_size()), b(g.output_size());
    serial::Conv2dForward(g, x, w, a);
    parallel::Conv2dForward(g, x, w, b);
    EXPECT_EQ(a, b);
    std::vector<float> gxa(g.input_size()), gxb(g.input_size());
    serial::Conv2dInputGrad(g, gy, w, gxa);
    parallel::Conv2dInputGrad(g, gy, w, gxb);
    EXPECT_EQ(gxa, gxb);
    std::vector<float> gwa(g.weight_size()), gwb(g.weight_size());
    serial::Conv2dWeightGrad(g, x, gy, gwa);
    parallel::Conv2dWeightGrad(g, x, gy, gwb);
    EXPECT_EQ(gwa, gwb);
  }
}

// <conv(x, w), gy> == <x, input_grad(gy, w)> == <w, weight_grad(x, gy)>
TEST(KernelTest, ConvAdjointIdentity) {
  RngStream rng(2, "adjoint");
  for (const auto& g : Geometries()) {
    const auto x = Random(g.input_size(), rng);
    const auto w = Random(g.weight_size(), rng);
    const auto gy = Random(g.output_size(), rng);
    std::vector<float> y(g.output_size()), gx(g.input_size()), gw(g.weight_size());
    serial::Conv2dForward(g, x, w, y);
    serial::Conv2dInputGrad(g, gy, w, gx);
    serial::Conv2dWeightGrad(g, x, gy, gw);
    double lhs = 0, mid = 0, rhs = 0;
    for (std::size_t i = 0; i < y.size(); ++i) lhs += double(y[i]) * gy[i];
    for (std::size_t i = 0; i < x.size(); ++i) mid += double(x[i]) * gx[i];
    for (std::size_t i = 0; i < w.size(); ++i) rhs += double(w[i]) * gw[i];
    EXPECT_NEAR(lhs, mid, 1e-4 * (1 + std::abs(lhs)));
    EXPECT_NEAR(lhs, rhs, 1e-4 * (1 + std::abs(lhs)));
  }
}

TEST(KernelTest, MatmulIsBitwiseIdentical) {
  ThreadScope threads(4);
  RngStream rng(3, "mm");
  for (auto [m, k, n] : {std::tuple{3, 4, 5}, {64, 64, 64}, {1, 256, 16}, {17, 33, 9}}) {
    const auto a = Random(m * k, rng);
    const auto b = Random(k * n, rng);
    std::vector<float> c1(m * n), c2(m * n);
    serial::Matmul(a, b, c1, m, k, n);
    parallel::Matmul(a, b, c2, m, k, n);
    EXPECT_EQ(c1, c2);
  }
}

TEST(KernelTest, AvgPoolIsBitwiseIdentical) {
  ThreadScope threads(4);
  RngStream rng(4, "pool");
  for (const PoolGeometry g : {PoolGeometry{3, 4, 4, 2}, PoolGeometry{64, 32, 32, 2},
                               PoolGeometry{2, 5, 7, 2}}) {
    const auto x = Random(g.planes * g.height * g.width, rng);
    const auto gy = Random(g.planes * g.out_height() * g.out_width(), rng);
    std::vector<float> y1(gy.size()), y2(gy.size());
    serial::AvgPoolForward(g, x, y1);
    parallel::AvgPoolForward(g, x, y2);
    EXPECT_EQ(y1, y2);
    std::vector<float> g1(x.size()), g2(x.size());
    serial::AvgPoolBackward(g, gy, g1);
    parallel::AvgPoolBackward(g, gy, g2);
    EXPECT_EQ(g1, g2);
  }
}

TEST(KernelTest, ThreadCountDoesNotChangeResults) {
  RngStream rng(5, "threads");
  const ConvGeometry g{8, 8, 16, 16, 16, 3, 1, 1};
  const auto x = Random(g.input_size(), rng);
  const auto w = Random(g.weight_size(), rng);
  std::vector<float> one(g.output_size()), many(g.output_size());
  {
    ThreadScope t(1);
    Conv2dForward(g, x, w, one);
  }
  {
    ThreadScope t(3);
    Conv2dForward(g, x, w, many);
  }
  EXPECT_EQ(one, many);
}

}  // namespace
}  // namespace fedleak::kernels
