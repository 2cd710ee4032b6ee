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

#include "fedleak/dp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fedleak/error.hpp"

namespace fedleak::dp {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double LogAddExp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::fabs(a - b)));
}

void ScaleInPlace(Tensor& t, double s) {
  const float f = static_cast<float>(s);
  for (float& v : t.vec()) v *= f;
}

}  // namespace

void ClipBound::Validate(std::size_t tensors) const {
  if (layer_wise()) {
    if (per_layer.size() != tensors) {
      throw InvalidArgument("layer-wise clip needs one bound per trainable tensor");
    }
    for (double c : per_layer) {
      if (!(c > 0.0)) throw InvalidArgument("clip bounds must be positive");
    }
  } else if (!(global > 0.0)) {
    throw InvalidArgument("clip bound must be positive");
  }
}

void DpConfig::Validate() const {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw InvalidArgument("noise multiplier must be finite and non-negative");
  }
  if (!(sample_rate > 0.0 && sample_rate <= 1.0)) throw InvalidArgument("sample rate must be in (0,1]");
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("delta must be in (0,1)");
  if (!clip.layer_wise() && !(clip.global > 0.0)) throw InvalidArgument("clip bound must be positive");
}

GradMap ClipPerSample(const GradMap& grads, const ClipBound& bound) {
  bound.Validate(grads.size());
  GradMap out = grads;
  if (bound.layer_wise()) {
    for (std::size_t k = 0; k < out.size(); ++k) {
      const double n = std::sqrt(out[k].SquaredNorm());
      if (n > bound.per_layer[k]) ScaleInPlace(out[k], bound.per_layer[k] / n);
    }
    return out;
  }
  const double n = GlobalNorm(out);
  if (n > bound.global) {
    for (Tensor& t : out) ScaleInPlace(t, bound.global / n);
  }
  return out;
}

GradMap PrivatizeBatch(std::span<const GradMap> per_sample, double sigma, const ClipBound& bound,
                       RngStream& rng) {
  if (per_sample.empty()) throw InvalidArgument("privatize_batch: empty batch");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw InvalidArgument("privatize_batch: noise multiplier must be finite and non-negative");
  }
  const std::size_t tensors = per_sample[0].size();
  bound.Validate(tensors);
  if (sigma > 0.0 && !bound.layer_wise() && !std::isfinite(bound.global)) {
    throw InvalidArgument("privatize_batch: noise needs a finite clip bound");
  }
  std::vector<std::vector<double>> sum(tensors);
  for (std::size_t k = 0; k < tensors; ++k) sum[k].assign(per_sample[0][k].size(), 0.0);
  for (const GradMap& g : per_sample) {
    if (g.size() != tensors) throw ShapeError("privatize_batch: ragged gradient maps");
    const GradMap clipped = ClipPerSample(g, bound);
    for (std::size_t k = 0; k < tensors; ++k) {
      if (clipped[k].size() != sum[k].size()) throw ShapeError("privatize_batch: shape mismatch");
      for (std::size_t i = 0; i < sum[k].size(); ++i) sum[k][i] += clipped[k][i];
    }
  }
  const double inv_l = 1.0 / static_cast<double>(per_sample.size());
  GradMap out;
  out.reserve(tensors);
  for (std::size_t k = 0; k < tensors; ++k) {
    const double std_dev = sigma * (bound.layer_wise() ? bound.per_layer[k] : bound.global);
    Tensor t(per_sample[0][k].shape());
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double noise = sigma > 0.0 ? std_dev * rng.Normal() : 0.0;
      t[i] = static_cast<float>((sum[k][i] + noise) * inv_l);
    }
    out.push_back(std::move(t));
  }
  return out;
}

// ---- accounting ---------------------------------------------------------------

AlphaGrid::AlphaGrid() {
  for (int i = 0; i <= 98; ++i) alphas_.push_back((11 + i) / 10.0);
  for (int a = 12; a <= 63; ++a) alphas_.push_back(a);
}

AlphaGrid::AlphaGrid(std::vector<double> alphas) : alphas_(std::move(alphas)) {
  if (alphas_.empty()) throw InvalidArgument("alpha grid is empty");
  for (double a : alphas_) {
    if (!(a > 1.0) || !std::isfinite(a)) throw InvalidArgument("alpha orders must exceed 1");
  }
  if (!std::is_sorted(alphas_.begin(), alphas_.end())) {
    throw InvalidArgument("alpha grid must be ascending");
  }
}

double LogMomentInt(double q, double sigma, int alpha) {
  // A = sum_k C(a,k) (1-q)^(a-k) q^k exp((k^2 - k) / (2 sigma^2))
  double log_a = -kInf;
  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  for (int k = 0; k <= alpha; ++k) {
    const double log_binom =
        std::lgamma(alpha + 1.0) - std::lgamma(k + 1.0) - std::lgamma(alpha - k + 1.0);
    const double term = log_binom + k * log_q + (alpha - k) * log_1mq +
                        (static_cast<double>(k) * k - k) / (2.0 * sigma * sigma);
    log_a = LogAddExp(log_a, term);
  }
  return log_a;
}

std::vector<double> RdpStep(double q, double sigma, const AlphaGrid& grid) {
  if (!(sigma > 0.0)) throw InvalidArgument("rdp_step: sigma must be positive");
  if (!(q >= 0.0 && q <= 1.0)) throw InvalidArgument("rdp_step: q must be in [0,1]");
  std::vector<double> out(grid.size(), 0.0);
  if (q == 0.0) return out;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double alpha = grid[i];
    if (q == 1.0) {
      out[i] = alpha / (2.0 * sigma * sigma);
      continue;
    }
    const int a = static_cast<int>(std::ceil(alpha));
    out[i] = LogMomentInt(q, sigma, a) / (a - 1);
  }
  return out;
}

PrivacyLedger::PrivacyLedger(AlphaGrid grid) : grid_(std::move(grid)) {}

void PrivacyLedger::Advance(double q, double sigma, std::size_t steps) {
  if (!(sigma >= 0.0)) throw InvalidArgument("ledger: sigma must be non-negative");
  if (!(q > 0.0 && q <= 1.0)) throw InvalidArgument("ledger: q must be in (0,1]");
  counts_[{q, sigma}] += steps;
}

void PrivacyLedger::Merge(const PrivacyLedger& other) {
  if (!(grid_ == other.grid_)) throw InvalidArgument("ledger merge: grids differ");
  for (const auto& [key, n] : other.counts_) counts_[key] += n;
}

std::size_t PrivacyLedger::steps() const {
  std::size_t n = 0;
  for (const auto& [key, c] : counts_) n += c;
  return n;
}

std::vector<double> PrivacyLedger::Rdp() const {
  std::vector<double> total(grid_.size(), 0.0);
  for (const auto& [key, count] : counts_) {
    const auto [q, sigma] = key;
    const double t = static_cast<double>(count);
    if (sigma == 0.0) {
      // Noise-free steps carry no privacy guarantee.
      std::fill(total.begin(), total.end(), kInf);
      continue;
    }
    if (q == 1.0) {
      for (std::size_t i = 0; i < grid_.size(); ++i) {
        total[i] += grid_[i] * t / (2.0 * sigma * sigma);
      }
      continue;
    }
    const auto step = RdpStep(q, sigma, grid_);
    for (std::size_t i = 0; i < grid_.size(); ++i) total[i] += t * step[i];
  }
  return total;
}

nlohmann::json PrivacyLedger::ToJson(double delta, const DpConfig& config) const {
  const auto rdp = Rdp();
  nlohmann::json j;
  j["config"] = {{"sigma", config.sigma},
                 {"clip", config.clip.layer_wise() ? nlohmann::json(config.clip.per_layer)
                                                   : nlohmann::json(config.clip.global)},
                 {"sample_rate", config.sample_rate},
                 {"target_epsilon", config.target_epsilon},
                 {"sampling_assumption", "poisson"}};
  j["alphas"] = grid_.alphas();
  j["rdp"] = rdp;
  j["steps"] = steps();
  j["delta"] = delta;
  if (steps() > 0) {
    const auto r = ToEpsilon(grid_, rdp, delta);
    j["alpha_star"] = r.alpha;
    j["epsilon"] = r.epsilon;
  } else {
    j["alpha_star"] = nullptr;
    j["epsilon"] = 0.0;
  }
  return j;
}

EpsilonResult ToEpsilon(const AlphaGrid& grid, std::span<const double> rdp, double delta) {
  if (grid.size() == 0) throw InvalidArgument("to_epsilon: empty grid");
  if (rdp.size() != grid.size()) throw InvalidArgument("to_epsilon: rdp/grid size mismatch");
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("to_epsilon: delta must be in (0,1)");
  EpsilonResult best{grid[0], kInf};
  const double log_inv_delta = std::log(1.0 / delta);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double eps = rdp[i] + log_inv_delta / (grid[i] - 1.0);
    if (eps < best.epsilon) best = {grid[i], eps};
  }
  return best;
}

EpsilonResult ToEpsilon(const PrivacyLedger& ledger, double delta) {
  const auto rdp = ledger.Rdp();
  return ToEpsilon(ledger.grid(), rdp, delta);
}

double DeltaForClient(std::size_t n_train) {
  if (n_train == 0) throw InvalidArgument("delta_for_client: n must be positive");
  return std::min(0.9 / static_cast<double>(n_train), 1e-2);
}

double CalibrateSigma(double target_epsilon, double delta, double q, std::size_t total_steps,
                      const AlphaGrid& grid) {
  if (!(target_epsilon > 0.0)) throw InvalidArgument("calibrate_sigma: target must be positive");
  if (total_steps == 0) throw InvalidArgument("calibrate_sigma: no steps to account");
  auto eps_at = [&](double sigma) {
    auto step = RdpStep(q, sigma, grid);
    for (double& v : step) v *= static_cast<double>(total_steps);
    return ToEpsilon(grid, step, delta).epsilon;
  };
  double lo = 0.1, hi = 64.0;
  if (eps_at(hi) > target_epsilon) {
    throw InvalidArgument("calibrate_sigma: target epsilon unreachable with sigma <= 64");
  }
  if (eps_at(lo) <= target_epsilon) return lo;
  while (hi - lo > 1e-3) {
    const double mid = 0.5 * (lo + hi);
    (eps_at(mid) <= target_epsilon ? hi : lo) = mid;
  }
  return hi;
}

double Median(std::vector<double> values) {
  if (values.empty()) throw InvalidArgument("median of empty set");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + mid);
  return 0.5 * (lower + upper);
}

double ClipBoundFromNorms(std::vector<double> norms) {
  const double bound = Median(std::move(norms));
  if (!(bound > 0.0)) throw NumericError("estimate_clip_bound: median gradient norm is zero");
  return bound;
}

double EstimateClipBound(const ParamSet& init, const Tensor& pixels, const Tensor& labels,
                         const ClipEstimateConfig& cfg, RngStream& rng) {
  const std::size_t n = labels.size();
  if (n == 0) throw InvalidArgument("estimate_clip_bound: empty auxiliary dataset");
  if (cfg.epochs == 0 || cfg.batch_size == 0) throw InvalidArgument("estimate_clip_bound: bad config");
  const std::size_t side = init.spec().side;
  const std::size_t px = side * side;
  if (pixels.size() != n * px) throw ShapeError("estimate_clip_bound: pixel/label count mismatch");
  ParamSet params = init;
  std::vector<double> norms;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = rng.Permutation(n);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, n - start);
      Tensor x({len, 1, side, side});
      Tensor y({len});
      for (std::size_t j = 0; j < len; ++j) {
        const std::size_t src = order[start + j];
        std::copy_n(pixels.data().begin() + src * px, px, x.vec().begin() + j * px);
        y[j] = labels[src];
      }
      for (const GradMap& g : ComputePerSampleGradients(params, x, y)) {
        norms.push_back(GlobalNorm(g));
      }
      const BnMode mode = params.BnModeFor(len);
      const auto step = ComputeBatchGradient(params, x, y, mode);
      params.ApplySgdStep(step.grads, cfg.lr);
      if (mode == BnMode::kBatchStats) UpdateRunningStats(params, step.observed);
    }
  }
  return ClipBoundFromNorms(std::move(norms));
}

}  // namespace fedleak::dp
