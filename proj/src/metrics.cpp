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

#include "fedleak/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedleak/error.hpp"

namespace fedleak::eval {

double Psnr(const Tensor& a, const Tensor& b, double max_i) {
  if (a.shape() != b.shape()) {
    throw ShapeError("psnr: " + ShapeString(a.shape()) + " vs " + ShapeString(b.shape()));
  }
  if (!(max_i > 0.0)) throw InvalidArgument("psnr: max_i must be positive");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrIdentical;
  return 20.0 * std::log10(max_i / std::sqrt(mse));
}

MatchAssignment GreedyMatch(const std::vector<std::vector<double>>& psnr) {
  const std::size_t n = psnr.size();
  if (n == 0) throw InvalidArgument("greedy_match: empty input");
  for (const auto& row : psnr) {
    if (row.size() != n) throw InvalidArgument("greedy_match: count mismatch");
  }
  std::vector<bool> orig_used(n, false), recon_used(n, false);
  MatchAssignment out;
  out.original.assign(n, 0);
  for (std::size_t step = 0; step < n; ++step) {
    std::size_t bo = n, br = n;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t o = 0; o < n; ++o) {
      if (orig_used[o]) continue;
      for (std::size_t r = 0; r < n; ++r) {
        if (recon_used[r]) continue;
        if (bo == n || psnr[o][r] > best) {
          best = psnr[o][r];
          bo = o;
          br = r;
        }
      }
    }
    orig_used[bo] = recon_used[br] = true;
    out.original[br] = bo;
    out.order.push_back(br);
    out.pair_psnr.push_back(best);
  }
  return out;
}

MatchAssignment GreedyMatch(std::span<const Tensor> originals,
                            std::span<const Tensor> reconstructions, double max_i) {
  if (originals.size() != reconstructions.size()) {
    throw InvalidArgument("greedy_match: " + std::to_string(originals.size()) + " originals vs " +
                          std::to_string(reconstructions.size()) + " reconstructions");
  }
  std::vector<std::vector<double>> m(originals.size(),
                                     std::vector<double>(reconstructions.size()));
  for (std::size_t o = 0; o < originals.size(); ++o) {
    for (std::size_t r = 0; r < reconstructions.size(); ++r) {
      m[o][r] = Psnr(originals[o], reconstructions[r], max_i);
    }
  }
  return GreedyMatch(m);
}

double Auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw InvalidArgument("auc: size mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Average ranks over tie groups.
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  double pos = 0, neg = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == 1) {
      pos += 1;
      rank_sum += rank[i];
    } else if (labels[i] == 0) {
      neg += 1;
    } else {
      throw InvalidArgument("auc: labels must be 0 or 1");
    }
  }
  if (pos == 0 || neg == 0) throw InvalidArgument("auc: both classes must be present");
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

double MeanAbsoluteError(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw InvalidArgument("mae: size mismatch or empty");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

std::vector<Tensor> NoiseImages(std::size_t n, const Shape& shape, RngStream& rng) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor t(shape);
    for (float& v : t.vec()) v = static_cast<float>(rng.Uniform());
    out.push_back(std::move(t));
  }
  return out;
}

double RandomBaselinePsnr(std::span<const Tensor> originals, std::size_t draws, RngStream& rng,
                          double max_i) {
  if (originals.empty() || draws == 0) throw InvalidArgument("random baseline: nothing to compare");
  double total = 0;
  for (const Tensor& o : originals) {
    for (const Tensor& noise : NoiseImages(draws, o.shape(), rng)) total += Psnr(o, noise, max_i);
  }
  return total / static_cast<double>(originals.size() * draws);
}

}  // namespace fedleak::eval
