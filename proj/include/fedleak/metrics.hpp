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

#ifndef FEDLEAK_METRICS_HPP_
#define FEDLEAK_METRICS_HPP_

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "fedleak/rng.hpp"
#include "fedleak/tensor.hpp"

namespace fedleak::eval {

// Returned by Psnr for identical images.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

double Psnr(const Tensor& a, const Tensor& b, double max_i = 1.0);

struct MatchAssignment {
  std::vector<std::size_t> original;  // reconstruction i -> original[i]
  std::vector<std::size_t> order;     // reconstruction indices in selection order
  std::vector<double> pair_psnr;      // PSNR of each selected pair, in selection order
};

// Greedy pairing on a PSNR matrix m[orig][recon]: repeatedly takes the
// largest remaining entry. Ties go to the lowest (orig, recon) index.
MatchAssignment GreedyMatch(const std::vector<std::vector<double>>& psnr);
MatchAssignment GreedyMatch(std::span<const Tensor> originals,
                            std::span<const Tensor> reconstructions, double max_i = 1.0);

// Mann-Whitney AUC; ties count one half.
double Auc(std::span<const double> scores, std::span<const int> labels);

double MeanAbsoluteError(std::span<const double> a, std::span<const double> b);

// Mean PSNR of uniform-noise images against the given originals.
double RandomBaselinePsnr(std::span<const Tensor> originals, std::size_t draws, RngStream& rng,
                          double max_i = 1.0);

// Images of i.i.d. uniform [0,1] pixels.
std::vector<Tensor> NoiseImages(std::size_t n, const Shape& shape, RngStream& rng);

}  // namespace fedleak::eval

#endif  // FEDLEAK_METRICS_HPP_
