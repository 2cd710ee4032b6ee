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

#ifndef FEDLEAK_KERNELS_HPP_
#define FEDLEAK_KERNELS_HPP_

#include <cstddef>
#include <span>

// Dense compute kernels behind the autodiff primitives.
//
// Each kernel has a serial reference (kernels::serial) written straight from
// the definition and an OpenMP version (kernels::parallel). Both accumulate
// every output element over the same index order, so their results are
// bitwise identical; tests assert this and bench/ compares their speed.
// The unqualified entry points dispatch on problem size.

namespace fedleak::kernels {

// NCHW input, [Co, Ci, K, K] weights, square kernel, symmetric zero padding.
struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
  std::size_t input_size() const { return batch * in_channels * height * width; }
  std::size_t weight_size() const { return out_channels * in_channels * kernel * kernel; }
  std::size_t output_size() const { return batch * out_channels * out_height() * out_width(); }
  // Multiply-accumulate count of one forward pass.
  std::size_t macs() const { return output_size() * in_channels * kernel * kernel; }
};

// Non-overlapping k x k average pooling over `planes` H x W planes.
struct PoolGeometry {
  std::size_t planes = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t kernel = 2;

  std::size_t out_height() const { return height / kernel; }
  std::size_t out_width() const { return width / kernel; }
};

namespace serial {
// c[m,n] = a[m,k] * b[k,n]
void Matmul(std::span<const float> a, std::span<const float> b, std::span<float> c,
            std::size_t m, std::size_t k, std::size_t n);
void Conv2dForward(const ConvGeometry& g, std::span<const float> x, std::span<const float> w,
                   std::span<float> y);
void Conv2dInputGrad(const ConvGeometry& g, std::span<const float> gy, std::span<const float> w,
                     std::span<float> gx);
void Conv2dWeightGrad(const ConvGeometry& g, std::span<const float> x, std::span<const float> gy,
                      std::span<float> gw);
void AvgPoolForward(const PoolGeometry& g, std::span<const float> x, std::span<float> y);
void AvgPoolBackward(const PoolGeometry& g, std::span<const float> gy, std::span<float> gx);
}  // namespace serial

namespace parallel {
void Matmul(std::span<const float> a, std::span<const float> b, std::span<float> c,
            std::size_t m, std::size_t k, std::size_t n);
void Conv2dForward(const ConvGeometry& g, std::span<const float> x, std::span<const float> w,
                   std::span<float> y);
void Conv2dInputGrad(const ConvGeometry& g, std::span<const float> gy, std::span<const float> w,
                     std::span<float> gx);
void Conv2dWeightGrad(const ConvGeometry& g, std::span<const float> x, std::span<const float> gy,
                      std::span<float> gw);
void AvgPoolForward(const PoolGeometry& g, std::span<const float> x, std::span<float> y);
void AvgPoolBackward(const PoolGeometry& g, std::span<const float> gy, std::span<float> gx);
}  // namespace parallel

void Matmul(std::span<const float> a, std::span<const float> b, std::span<float> c,
            std::size_t m, std::size_t k, std::size_t n);
void Conv2dForward(const ConvGeometry& g, std::span<const float> x, std::span<const float> w,
                   std::span<float> y);
void Conv2dInputGrad(const ConvGeometry& g, std::span<const float> gy, std::span<const float> w,
                     std::span<float> gx);
void Conv2dWeightGrad(const ConvGeometry& g, std::span<const float> x, std::span<const float> gy,
                      std::span<float> gw);
void AvgPoolForward(const PoolGeometry& g, std::span<const float> x, std::span<float> y);
void AvgPoolBackward(const PoolGeometry& g, std::span<const float> gy, std::span<float> gx);

// Worker cap for OpenMP regions. Initialised from FEDLEAK_THREADS when set.
int MaxThreads();
void SetMaxThreads(int n);

// Work (multiply-accumulates) below which the dispatchers stay serial.
inline constexpr std::size_t kParallelThreshold = 1 << 16;

}  // namespace fedleak::kernels

#endif  // FEDLEAK_KERNELS_HPP_
