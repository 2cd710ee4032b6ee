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

#ifndef FEDLEAK_ATTACK_HPP_
#define FEDLEAK_ATTACK_HPP_

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fedleak/autodiff.hpp"
#include "fedleak/models.hpp"
#include "fedleak/rng.hpp"

namespace fedleak::attack {

enum class MatchMode {
  kNormProduct,     // 1 - <g',g> / (|g'| |g|) + tv
  kNormDifference,  // 1 - <g',g> / |g' - g| + tv
  kL2,              // |g' - g|^2
};

std::string ToString(MatchMode m);
MatchMode ParseMatchMode(const std::string& s);

struct AttackConfig {
  std::size_t max_steps = 2000;
  double lr = 0.1;
  double lr_drop = 0.1;
  double tv_weight = 1e-2;
  std::size_t trials = 3;
  MatchMode mode = MatchMode::kNormProduct;
  std::size_t trace_every = 1;  // loss-trace sampling interval

  void Validate() const;
};

// Steps at which the learning rate is multiplied by lr_drop.
std::array<std::size_t, 3> LrDropSteps(std::size_t max_steps);
double LrAtStep(const AttackConfig& cfg, std::size_t step);

// (theta_before - theta_after) / lr over the trainable tensors of `before`.
GradMap InferUpdateGradient(const ParamSet& before, const ParamSet& after, double lr);

// Label of a single sample from the output-bias gradient sigmoid(z) - y.
int RecoverLabel(const Tensor& output_bias_grad);

// Anisotropic total variation, summed over all images of a [N,1,H,W] or
// [H,W] node.
ad::Var Tv(ad::Var image);

ad::Var MatchLoss(std::span<const ad::Var> dummy_grads, std::span<const Tensor> target_grads,
                  ad::Var dummy_image, double tv_weight, MatchMode mode);

struct TracePoint {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrialResult {
  std::vector<TracePoint> trace;
  double final_loss = 0.0;
  bool aborted = false;
  Tensor dummy;  // normalized model-input space, [N,1,S,S]
};

struct ReconstructionResult {
  std::vector<TrialResult> trials;
  std::size_t best_trial = 0;
  double best_loss = 0.0;
  Tensor labels;
  // Best trial mapped back to pixel space, unclamped, [N,1,S,S].
  Tensor best_pixels;
};

// Gradient-matching reconstruction of a batch of `batch` images from
// `target` gradients of `model`'s trainable tensors. Uses only the model,
// the gradients and the labels.
ReconstructionResult RunAttack(const GradMap& target, const ParamSet& model, const Tensor& labels,
                               std::size_t batch, BnMode bn_mode, const AttackConfig& cfg,
                               const RngStream& seeds);

// Per-image [S,S] tensors clamped to [0,1].
std::vector<Tensor> ClampedImages(const Tensor& pixels);

void WriteTraceCsv(const std::filesystem::path& path, const TrialResult& trial);

}  // namespace fedleak::attack

#endif  // FEDLEAK_ATTACK_HPP_
