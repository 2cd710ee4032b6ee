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

#ifndef FEDLEAK_DP_HPP_
#define FEDLEAK_DP_HPP_

#include <cstddef>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "fedleak/models.hpp"
#include "fedleak/rng.hpp"
#include "json.hpp"

namespace fedleak::dp {

// Clipping bound: one global l2 bound over all trainable tensors, or one
// bound per trainable tensor. An infinite global bound disables clipping.
struct ClipBound {
  double global = 1.0;
  std::vector<double> per_layer;  // non-empty selects layer-wise clipping

  bool layer_wise() const { return !per_layer.empty(); }
  void Validate(std::size_t tensors) const;
};

struct DpConfig {
  double target_epsilon = 0.0;
  double sigma = 1.0;
  ClipBound clip;
  double sample_rate = 1.0;
  double delta = 1e-2;

  void Validate() const;
};

GradMap ClipPerSample(const GradMap& grads, const ClipBound& bound);

// (1/L) * (sum of clipped gradients + N(0, (sigma*C)^2) per coordinate).
// sigma = 0 gives the plain clipped mean. Layer-wise mode scales each
// tensor's noise by its own bound.
GradMap PrivatizeBatch(std::span<const GradMap> per_sample, double sigma, const ClipBound& bound,
                       RngStream& rng);

class AlphaGrid {
 public:
  AlphaGrid();  // [1.1, 10.9] step 0.1 and [12, 63] step 1
  explicit AlphaGrid(std::vector<double> alphas);

  const std::vector<double>& alphas() const { return alphas_; }
  std::size_t size() const { return alphas_.size(); }
  double operator[](std::size_t i) const { return alphas_[i]; }
  friend bool operator==(const AlphaGrid&, const AlphaGrid&) = default;

 private:
  std::vector<double> alphas_;
};

// RDP of one step of the sampled Gaussian mechanism at every grid order.
std::vector<double> RdpStep(double q, double sigma, const AlphaGrid& grid);

// Log of the integer-order moment A_alpha of the Poisson-subsampled Gaussian.
double LogMomentInt(double q, double sigma, int alpha);

struct EpsilonResult {
  double alpha = 0.0;
  double epsilon = 0.0;
};

// Accumulated RDP per grid order. Steps are stored as counts per (q, sigma)
// so composition is exact: merging ledgers of a and b steps gives the same
// values as one ledger of a + b steps.
class PrivacyLedger {
 public:
  explicit PrivacyLedger(AlphaGrid grid = AlphaGrid());

  void Advance(double q, double sigma, std::size_t steps = 1);
  void Merge(const PrivacyLedger& other);

  const AlphaGrid& grid() const { return grid_; }
  std::size_t steps() const;
  std::vector<double> Rdp() const;

  nlohmann::json ToJson(double delta, const DpConfig& config) const;

 private:
  AlphaGrid grid_;
  std::map<std::pair<double, double>, std::size_t> counts_;
};

// min over orders of rdp + ln(1/delta)/(alpha - 1); ties go to the smaller order.
EpsilonResult ToEpsilon(const AlphaGrid& grid, std::span<const double> rdp, double delta);
EpsilonResult ToEpsilon(const PrivacyLedger& ledger, double delta);

double DeltaForClient(std::size_t n_train);

// Smallest sigma in [0.1, 64] (tolerance 1e-3) whose epsilon after
// `total_steps` stays within the target.
double CalibrateSigma(double target_epsilon, double delta, double q, std::size_t total_steps,
                      const AlphaGrid& grid = AlphaGrid());

struct ClipEstimateConfig {
  std::size_t epochs = 3;
  std::size_t batch_size = 10;
  float lr = 1e-2f;
};

// Median of per-sample unclipped global gradient norms over `epochs` epochs of
// plain centralized SGD on the auxiliary data.
double EstimateClipBound(const ParamSet& init, const Tensor& pixels, const Tensor& labels,
                         const ClipEstimateConfig& cfg, RngStream& rng);

double Median(std::vector<double> values);

// Median of observed norms; a zero median (constant loss) is rejected.
double ClipBoundFromNorms(std::vector<double> norms);

}  // namespace fedleak::dp

#endif  // FEDLEAK_DP_HPP_
