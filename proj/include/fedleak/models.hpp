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

#ifndef FEDLEAK_MODELS_HPP_
#define FEDLEAK_MODELS_HPP_

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedleak/autodiff.hpp"
#include "fedleak/rng.hpp"
#include "fedleak/tensor.hpp"

namespace fedleak {

enum class Architecture { kMlp, kSmallCnn };
enum class FreezeMode { kNone, kBatchNorm, kAllButLast };
enum class BnMode { kBatchStats, kFixedStats };

std::string ToString(Architecture a);
std::string ToString(FreezeMode m);
Architecture ParseArchitecture(const std::string& s);
FreezeMode ParseFreezeMode(const std::string& s);

struct ModelSpec {
  Architecture architecture = Architecture::kSmallCnn;
  std::size_t side = 16;
  // mlp: layer widths, last entry must be 1. small_cnn: conv channel counts.
  std::vector<std::size_t> widths = {8, 16};
  float input_mean = 0.449f;
  float input_std = 0.226f;

  void Validate() const;
};

struct BnStats {
  std::string layer;
  Tensor mean;
  Tensor var;
  std::size_t count = 0;  // elements per channel the statistics were taken over
};

// Gradients over the trainable tensors of a ParamSet, in parameter order.
using GradMap = std::vector<Tensor>;

// Ordered named parameter tensors, freeze mask and batch-norm running
// statistics. Value type: copies are independent.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    bool trainable = true;
    bool bn_affine = false;
  };

  const ModelSpec& spec() const { return spec_; }
  FreezeMode freeze_mode() const { return freeze_; }

  std::size_t size() const { return entries_.size(); }
  const Entry& entry(std::size_t i) const { return entries_.at(i); }
  Tensor& value(std::size_t i) { return entries_.at(i).value; }
  const Tensor& value(std::size_t i) const { return entries_.at(i).value; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::optional<std::size_t> Find(const std::string& name) const;

  std::vector<std::size_t> TrainableIndices() const;
  std::vector<std::string> TrainableNames() const;
  std::size_t ParameterCount() const;

  std::vector<BnStats>& bn_stats() { return bn_stats_; }
  const std::vector<BnStats>& bn_stats() const { return bn_stats_; }

  // Batch-norm mode for a forward pass on a batch of `batch_size` samples.
  BnMode BnModeFor(std::size_t batch_size) const;

  // Shape/name compatibility (values may differ).
  bool CompatibleWith(const ParamSet& other) const;

  // Applies `step` * g to every trainable tensor: theta -= lr * g.
  void ApplySgdStep(const GradMap& grads, float lr);

  friend bool operator==(const ParamSet& a, const ParamSet& b);

  void Save(const std::filesystem::path& dir) const;
  static ParamSet Load(const std::filesystem::path& dir);

 private:
  friend ParamSet BuildModel(const ModelSpec& spec, RngStream& rng);
  friend ParamSet ApplyFreeze(ParamSet params, FreezeMode mode);

  ModelSpec spec_;
  FreezeMode freeze_ = FreezeMode::kNone;
  std::vector<Entry> entries_;
  std::vector<BnStats> bn_stats_;
};

ParamSet BuildModel(const ModelSpec& spec, RngStream& rng);
ParamSet ApplyFreeze(ParamSet params, FreezeMode mode);

// Pixels in [0,1] -> model input space.
Tensor NormalizeInput(const ModelSpec& spec, const Tensor& pixels);
Tensor DenormalizeInput(const ModelSpec& spec, const Tensor& normalized);

// Forward on an already normalized [N,1,S,S] input. `param_vars` holds one
// node per ParamSet entry. In batch-stats mode the observed per-layer batch
// statistics are written to `observed` when given.
ad::Var ForwardNormalized(const ParamSet& params, std::span<const ad::Var> param_vars,
                          ad::Var input, BnMode mode, std::vector<BnStats>* observed = nullptr);

// Logits [N,1] for pixel images [N,1,S,S] (or [N,S,S]). No gradients.
Tensor Forward(const ParamSet& params, const Tensor& pixels, BnMode mode);

// Mean binary cross-entropy from logits; stable for large |logit|.
ad::Var BceLoss(ad::Var logits, const Tensor& labels);
// Mean squared error between sigmoid(logits) and targets in [0,1].
ad::Var SigmoidMseLoss(ad::Var logits, const Tensor& targets);

enum class LossKind { kBce, kSigmoidMse };

struct BatchGradient {
  float loss = 0.0f;
  GradMap grads;
  std::vector<BnStats> observed;  // batch statistics when mode is batch_stats
};

// Gradient of the mean loss over a pixel batch w.r.t. trainable tensors.
BatchGradient ComputeBatchGradient(const ParamSet& params, const Tensor& pixels,
                                   const Tensor& labels, BnMode mode,
                                   LossKind kind = LossKind::kBce);

// One gradient per sample (fixed batch-norm statistics).
std::vector<GradMap> ComputePerSampleGradients(const ParamSet& params, const Tensor& pixels,
                                               const Tensor& labels,
                                               LossKind kind = LossKind::kBce);

// Folds observed batch statistics into the running statistics (momentum 0.1,
// unbiased variance).
void UpdateRunningStats(ParamSet& params, const std::vector<BnStats>& observed);

double GlobalNorm(const GradMap& grads);

}  // namespace fedleak

#endif  // FEDLEAK_MODELS_HPP_
