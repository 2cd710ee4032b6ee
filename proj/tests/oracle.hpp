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

// Test-only double-precision reference computations. Nothing here calls into
// the autodiff engine, so these serve as independent oracles.

#ifndef FEDLEAK_TESTS_ORACLE_HPP_
#define FEDLEAK_TESTS_ORACLE_HPP_

#include <cmath>
#include <vector>

#include "fedleak/models.hpp"

namespace fedleak::testing {

inline double Softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); }
inline double Sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Mean BCE of `params` (tensor values overridden by `values`, one vector per
// entry) on pixel images [N,S,S] with fixed batch-norm statistics.
inline double ReferenceLoss(const ParamSet& params, const std::vector<std::vector<double>>& values,
                            const std::vector<std::vector<double>>& images,
                            const std::vector<double>& labels,
                            std::vector<char>* relu_pattern = nullptr) {
  if (relu_pattern) relu_pattern->clear();
  const ModelSpec& spec = params.spec();
  const std::size_t s = spec.side;
  double total = 0.0;
  for (std::size_t n = 0; n < images.size(); ++n) {
    std::vector<double> h(s * s);
    for (std::size_t i = 0; i < s * s; ++i) h[i] = (images[n][i] - spec.input_mean) / spec.input_std;
    double logit = 0.0;
    if (spec.architecture == Architecture::kMlp) {
      std::size_t in = s * s;
      for (std::size_t l = 0; l < spec.widths.size(); ++l) {
        const auto& w = values[2 * l];
        const auto& b = values[2 * l + 1];
        const std::size_t out = spec.widths[l];
        std::vector<double> next(out);
        for (std::size_t o = 0; o < out; ++o) {
          double acc = b[o];
          for (std::size_t i = 0; i < in; ++i) acc += w[o * in + i] * h[i];
          if (l + 1 < spec.widths.size()) {
            if (relu_pattern) relu_pattern->push_back(acc > 0.0);
            acc = std::max(acc, 0.0);
          }
          next[o] = acc;
        }
        h = std::move(next);
        in = out;
      }
      logit = h[0];
    } else {
      std::size_t ch = 1, side = s;
      for (std::size_t blk = 0; blk < spec.widths.size(); ++blk) {
        const std::size_t co = spec.widths[blk];
        const auto& w = values[3 * blk];
        const auto& gamma = values[3 * blk + 1];
        const auto& beta = values[3 * blk + 2];
        const auto& stats = params.bn_stats()[blk];
        std::vector<double> conv(co * side * side, 0.0);
        for (std::size_t o = 0; o < co; ++o)
          for (std::size_t y = 0; y < side; ++y)
            for (std::size_t x = 0; x < side; ++x) {
              double acc = 0.0;
              for (std::size_t c = 0; c < ch; ++c)
                for (int ky = 0; ky < 3; ++ky)
                  for (int kx = 0; kx < 3; ++kx) {
                    const long iy = static_cast<long>(y) + ky - 1;
                    const long ix = static_cast<long>(x) + kx - 1;
                    if (iy < 0 || ix < 0 || iy >= static_cast<long>(side) ||
                        ix >= static_cast<long>(side))
                      continue;
                    acc += h[(c * side + iy) * side + ix] * w[((o * ch + c) * 3 + ky) * 3 + kx];
                  }
              const double norm = (acc - stats.mean[o]) / std::sqrt(stats.var[o] + 1e-5);
              const double pre = gamma[o] * norm + beta[o];
              if (relu_pattern) relu_pattern->push_back(pre > 0.0);
              conv[(o * side + y) * side + x] = std::max(pre, 0.0);
            }
        const std::size_t half = side / 2;
        std::vector<double> pooled(co * half * half);
        for (std::size_t o = 0; o < co; ++o)
          for (std::size_t y = 0; y < half; ++y)
            for (std::size_t x = 0; x < half; ++x) {
              double acc = 0.0;
              for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx)
                  acc += conv[(o * side + 2 * y + dy) * side + 2 * x + dx];
              pooled[(o * half + y) * half + x] = acc / 4.0;
            }
        h = std::move(pooled);
        ch = co;
        side = half;
      }
      const std::size_t fc = 3 * spec.widths.size();
      logit = values[fc + 1][0];
      for (std::size_t i = 0; i < h.size(); ++i) logit += values[fc][i] * h[i];
    }
    const double y = labels[n];
    total += y * Softplus(-logit) + (1.0 - y) * Softplus(logit);
  }
  return total / static_cast<double>(images.size());
}

inline std::vector<std::vector<double>> ValuesOf(const ParamSet& params) {
  std::vector<std::vector<double>> v;
  for (const auto& e : params.entries()) v.emplace_back(e.value.vec().begin(), e.value.vec().end());
  return v;
}

// ||a - b|| / ||b|| over concatenated tensors.
inline double RelativeError(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t i = 0; i < a[k].size(); ++i) {
      const double d = static_cast<double>(a[k][i]) - b[k][i];
      num += d * d;
      den += static_cast<double>(b[k][i]) * b[k][i];
    }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

}  // namespace fedleak::testing

#endif  // FEDLEAK_TESTS_ORACLE_HPP_
