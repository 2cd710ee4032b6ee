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

#include "fedleak/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fedleak::kernels {
namespace {

int ThreadsFromEnv() {
  if (const char* env = std::getenv("FEDLEAK_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

std::atomic<int>& ThreadCap() {
  static std::atomic<int> cap{ThreadsFromEnv()};
  return cap;
}

// Signed position of input row/col for output index o and kernel tap k.
inline long InputIndex(std::size_t o, std::size_t k, std::size_t stride, std::size_t pad) {
  return static_cast<long>(o * stride + k) - static_cast<long>(pad);
}

}  // namespace

int MaxThreads() { return ThreadCap().load(); }
void SetMaxThreads(int n) { ThreadCap().store(std::max(1, n)); }

namespace {
bool UseParallel(std::size_t work) { return MaxThreads() > 1 && work >= kParallelThreshold; }
}  // namespace

// ---------------------------------------------------------------------------
// Serial reference kernels: one output element at a time, straight from the
// definitions.

namespace serial {

void Matmul(std::span<const float> a, std::span<const float> b, std::span<float> c,
            std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      float acc = 0.0f;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

void Conv2dForward(const ConvGeometry& g, std::span<const float> x, std::span<const float> w,
                   std::span<float> y) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t oh = 0; oh < ho; ++oh)
        for (std::size_t ow = 0; ow < wo; ++ow) {
          float acc = 0.0f;
          for (std::size_t ci = 0; ci < g.in_channels; ++ci)
            for (std::size_t kh = 0; kh < g.kernel; ++kh)
              for (std::size_t kw = 0; kw < g.kernel; ++kw) {
                const long ih = InputIndex(oh, kh, g.stride, g.pad);
                const long iw = InputIndex(ow, kw, g.stride, g.pad);
                if (ih < 0 || iw < 0 || ih >= static_cast<long>(g.height) ||
                    iw >= static_cast<long>(g.width))
                  continue;
                acc += x[((n * g.in_channels + ci) * g.height + ih) * g.width + iw] *
                       w[((co * g.in_channels + ci) * g.kernel + kh) * g.kernel + kw];
              }
          y[((n * g.out_channels + co) * ho + oh) * wo + ow] = acc;
        }
}

void Conv2dInputGrad(const ConvGeometry& g, std::span<const float> gy, std::span<const float> w,
                     std::span<float> gx) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t ci = 0; ci < g.in_channels; ++ci)
      for (std::size_t ih = 0; ih < g.height; ++ih)
        for (std::size_t iw = 0; iw < g.width; ++iw) {
          float acc = 0.0f;
          for (std::size_t co = 0; co < g.out_channels; ++co)
            for (std::size_t kh = 0; kh < g.kernel; ++kh)
              for (std::size_t kw = 0; kw < g.kernel; ++kw) {
                const long sh = static_cast<long>(ih + g.pad) - static_cast<long>(kh);
                const long sw = static_cast<long>(iw + g.pad) - static_cast<long>(kw);
                if (sh < 0 || sw < 0 || sh % static_cast<long>(g.stride) != 0 ||
                    sw % static_cast<long>(g.stride) != 0)
                  continue;
                const std::size_t oh = static_cast<std::size_t>(sh) / g.stride;
                const std::size_t ow = static_cast<std::size_t>(sw) / g.stride;
                if (oh >= ho || ow >= wo) continue;
                acc += gy[((n * g.out_channels + co) * ho + oh) * wo + ow] *
                       w[((co * g.in_channels + ci) * g.kernel + kh) * g.kernel + kw];
              }
          gx[((n * g.in_channels + ci) * g.height + ih) * g.width + iw] = acc;
        }
}

void Conv2dWeightGrad(const ConvGeometry& g, std::span<const float> x, std::span<const float> gy,
                      std::span<float> gw) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  for (std::size_t co = 0; co < g.out_channels; ++co)
    for (std::size_t ci = 0; ci < g.in_channels; ++ci)
      for (std::size_t kh = 0; kh < g.kernel; ++kh)
        for (std::size_t kw = 0; kw < g.kernel; ++kw) {
          float acc = 0.0f;
          for (std::size_t n = 0; n < g.batch; ++n)
            for (std::size_t oh = 0; oh < ho; ++oh)
              for (std::size_t ow = 0; ow < wo; ++ow) {
                const long ih = InputIndex(oh, kh, g.stride, g.pad);
                const long iw = InputIndex(ow, kw, g.stride, g.pad);
                if (ih < 0 || iw < 0 || ih >= static_cast<long>(g.height) ||
                    iw >= static_cast<long>(g.width))
                  continue;
                acc += x[((n * g.in_channels + ci) * g.height + ih) * g.width + iw] *
                       gy[((n * g.out_channels + co) * ho + oh) * wo + ow];
              }
          gw[((co * g.in_channels + ci) * g.kernel + kh) * g.kernel + kw] = acc;
        }
}

void AvgPoolForward(const PoolGeometry& g, std::span<const float> x, std::span<float> y) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  const float inv = 1.0f / static_cast<float>(g.kernel * g.kernel);
  for (std::size_t p = 0; p < g.planes; ++p)
    for (std::size_t oh = 0; oh < ho; ++oh)
      for (std::size_t ow = 0; ow < wo; ++ow) {
        float acc = 0.0f;
        for (std::size_t kh = 0; kh < g.kernel; ++kh)
          for (std::size_t kw = 0; kw < g.kernel; ++kw)
            acc += x[(p * g.height + oh * g.kernel + kh) * g.width + ow * g.kernel + kw];
        y[(p * ho + oh) * wo + ow] = acc * inv;
      }
}

void AvgPoolBackward(const PoolGeometry& g, std::span<const float> gy, std::span<float> gx) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  const float inv = 1.0f / static_cast<float>(g.kernel * g.kernel);
  for (std::size_t p = 0; p < g.planes; ++p)
    for (std::size_t ih = 0; ih < g.height; ++ih)
      for (std::size_t iw = 0; iw < g.width; ++iw) {
        const std::size_t oh = ih / g.kernel, ow = iw / g.kernel;
        gx[(p * g.height + ih) * g.width + iw] =
            (oh < ho && ow < wo) ? gy[(p * ho + oh) * wo + ow] * inv : 0.0f;
      }
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP kernels. Work is split over independent output planes/rows; inside
// a plane every output element sees the same accumulation order as the
// serial reference.

namespace parallel {

void Matmul(std::span<const float> a, std::span<const float> b, std::span<float> c,
            std::size_t m, std::size_t k, std::size_t n) {
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) num_threads(MaxThreads()) if (UseParallel(m * k * n))
  for (long i = 0; i < rows; ++i) {
    float* crow = c.data() + i * n;
    std::fill(crow, crow + n, 0.0f);
    for (std::size_t p = 0; p < k; ++p) {
      const float aip = a[i * k + p];
      const float* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void Conv2dForward(const ConvGeometry& g, std::span<const float> x, std::span<const float> w,
                   std::span<float> y) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  const long planes = static_cast<long>(g.batch * g.out_channels);
#pragma omp parallel for schedule(static) num_threads(MaxThreads()) if (UseParallel(g.macs()))
  for (long plane = 0; plane < planes; ++plane) {
    const std::size_t n = plane / g.out_channels, co = plane % g.out_channels;
    float* out = y.data() + plane * ho * wo;
    std::fill(out, out + ho * wo, 0.0f);
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
      const float* in = x.data() + (n * g.in_channels + ci) * g.height * g.width;
      for (std::size_t kh = 0; kh < g.kernel; ++kh)
        for (std::size_t kw = 0; kw < g.kernel; ++kw) {
          const float wv = w[((co * g.in_channels + ci) * g.kernel + kh) * g.kernel + kw];
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const long ih = InputIndex(oh, kh, g.stride, g.pad);
            if (ih < 0 || ih >= static_cast<long>(g.height)) continue;
            const float* in_row = in + ih * g.width;
            float* out_row = out + oh * wo;
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const long iw = InputIndex(ow, kw, g.stride, g.pad);
              if (iw < 0 || iw >= static_cast<long>(g.width)) continue;
              out_row[ow] += in_row[iw] * wv;
            }
          }
        }
    }
  }
}

void Conv2dInputGrad(const ConvGeometry& g, std::span<const float> gy, std::span<const float> w,
                     std::span<float> gx) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  const long planes = static_cast<long>(g.batch * g.in_channels);
#pragma omp parallel for schedule(static) num_threads(MaxThreads()) if (UseParallel(g.macs()))
  for (long plane = 0; plane < planes; ++plane) {
    const std::size_t n = plane / g.in_channels, ci = plane % g.in_channels;
    float* out = gx.data() + plane * g.height * g.width;
    std::fill(out, out + g.height * g.width, 0.0f);
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      const float* grad = gy.data() + (n * g.out_channels + co) * ho * wo;
      for (std::size_t kh = 0; kh < g.kernel; ++kh)
        for (std::size_t kw = 0; kw < g.kernel; ++kw) {
          const float wv = w[((co * g.in_channels + ci) * g.kernel + kh) * g.kernel + kw];
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const long ih = InputIndex(oh, kh, g.stride, g.pad);
            if (ih < 0 || ih >= static_cast<long>(g.height)) continue;
            const float* grad_row = grad + oh * wo;
            float* out_row = out + ih * g.width;
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const long iw = InputIndex(ow, kw, g.stride, g.pad);
              if (iw < 0 || iw >= static_cast<long>(g.width)) continue;
              out_row[iw] += grad_row[ow] * wv;
            }
          }
        }
    }
  }
}

void Conv2dWeightGrad(const ConvGeometry& g, std::span<const float> x, std::span<const float> gy,
                      std::span<float> gw) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  const long pairs = static_cast<long>(g.out_channels * g.in_channels);
#pragma omp parallel for schedule(static) num_threads(MaxThreads()) if (UseParallel(g.macs()))
  for (long pair = 0; pair < pairs; ++pair) {
    const std::size_t co = pair / g.in_channels, ci = pair % g.in_channels;
    for (std::size_t kh = 0; kh < g.kernel; ++kh)
      for (std::size_t kw = 0; kw < g.kernel; ++kw) {
        // Valid output range for this tap, so the inner loop needs no bounds checks.
        const std::size_t oh_lo = kh >= g.pad ? 0 : (g.pad - kh + g.stride - 1) / g.stride;
        const std::size_t ow_lo = kw >= g.pad ? 0 : (g.pad - kw + g.stride - 1) / g.stride;
        std::size_t oh_hi = 0, ow_hi = 0;  // exclusive
        while (oh_hi < ho && InputIndex(oh_hi, kh, g.stride, g.pad) < static_cast<long>(g.height)) ++oh_hi;
        while (ow_hi < wo && InputIndex(ow_hi, kw, g.stride, g.pad) < static_cast<long>(g.width)) ++ow_hi;
        float acc = 0.0f;
        for (std::size_t n = 0; n < g.batch; ++n) {
          const float* in = x.data() + (n * g.in_channels + ci) * g.height * g.width;
          const float* grad = gy.data() + (n * g.out_channels + co) * ho * wo;
          for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
            const float* in_row = in + (oh * g.stride + kh - g.pad) * g.width;
            const float* grad_row = grad + oh * wo;
            for (std::size_t ow = ow_lo; ow < ow_hi; ++ow)
              acc += in_row[ow * g.stride + kw - g.pad] * grad_row[ow];
          }
        }
        gw[((co * g.in_channels + ci) * g.kernel + kh) * g.kernel + kw] = acc;
      }
  }
}

void AvgPoolForward(const PoolGeometry& g, std::span<const float> x, std::span<float> y) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  const float inv = 1.0f / static_cast<float>(g.kernel * g.kernel);
  const long planes = static_cast<long>(g.planes);
#pragma omp parallel for schedule(static) num_threads(MaxThreads()) if (UseParallel(g.planes * g.height * g.width))
  for (long p = 0; p < planes; ++p) {
    for (std::size_t oh = 0; oh < ho; ++oh)
      for (std::size_t ow = 0; ow < wo; ++ow) {
        float acc = 0.0f;
        const float* base = x.data() + (p * g.height + oh * g.kernel) * g.width + ow * g.kernel;
        for (std::size_t kh = 0; kh < g.kernel; ++kh)
          for (std::size_t kw = 0; kw < g.kernel; ++kw) acc += base[kh * g.width + kw];
        y[(p * ho + oh) * wo + ow] = acc * inv;
      }
  }
}

void AvgPoolBackward(const PoolGeometry& g, std::span<const float> gy, std::span<float> gx) {
  const std::size_t ho = g.out_height(), wo = g.out_width();
  const float inv = 1.0f / static_cast<float>(g.kernel * g.kernel);
  const long planes = static_cast<long>(g.planes);
#pragma omp parallel for schedule(static) num_threads(MaxThreads()) if (UseParallel(g.planes * g.height * g.width))
  for (long p = 0; p < planes; ++p) {
    float* out = gx.data() + p * g.height * g.width;
    std::fill(out, out + g.height * g.width, 0.0f);
    for (std::size_t oh = 0; oh < ho; ++oh)
      for (std::size_t ow = 0; ow < wo; ++ow) {
        const float v = gy[(p * ho + oh) * wo + ow] * inv;
        for (std::size_t kh = 0; kh < g.kernel; ++kh)
          for (std::size_t kw = 0; kw < g.kernel; ++kw)
            out[(oh * g.kernel + kh) * g.width + ow * g.kernel + kw] = v;
      }
  }
}

}  // namespace parallel

// ---------------------------------------------------------------------------
// Dispatchers. The OpenMP kernels fall back to a single thread below
// kParallelThreshold, so they are also the fast serial path.

void Matmul(std::span<const float> a, std::span<const float> b, std::span<float> c,
            std::size_t m, std::size_t k, std::size_t n) {
  parallel::Matmul(a, b, c, m, k, n);
}

void Conv2dForward(const ConvGeometry& g, std::span<const float> x, std::span<const float> w,
                   std::span<float> y) {
  parallel::Conv2dForward(g, x, w, y);
}
void Conv2dInputGrad(const ConvGeometry& g, std::span<const float> gy, std::span<const float> w,
                     std::span<float> gx) {
  parallel::Conv2dInputGrad(g, gy, w, gx);
}
void Conv2dWeightGrad(const ConvGeometry& g, std::span<const float> x, std::span<const float> gy,
                      std::span<float> gw) {
  parallel::Conv2dWeightGrad(g, x, gy, gw);
}
void AvgPoolForward(const PoolGeometry& g, std::span<const float> x, std::span<float> y) {
  parallel::AvgPoolForward(g, x, y);
}
void AvgPoolBackward(const PoolGeometry& g, std::span<const float> gy, std::span<float> gx) {
  parallel::AvgPoolBackward(g, gy, gx);
}

}  // namespace fedleak::kernels
