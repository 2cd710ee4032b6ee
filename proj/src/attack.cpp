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

#include "fedleak/attack.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "fedleak/error.hpp"
#include "fedleak/kernels.hpp"

namespace fedleak::attack {
namespace {

using ad::Tape;
using ad::Var;

// Flat indices of x[i+di, j+dj] and x[i, j] for every valid neighbor pair.
std::pair<std::shared_ptr<std::vector<std::uint32_t>>, std::shared_ptr<std::vector<std::uint32_t>>>
NeighborIndex(std::size_t planes, std::size_t h, std::size_t w, std::size_t di, std::size_t dj) {
  auto a = std::make_shared<std::vector<std::uint32_t>>();
  auto b = std::make_shared<std::vector<std::uint32_t>>();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i + di < h; ++i) {
      for (std::size_t j = 0; j + dj < w; ++j) {
        a->push_back(static_cast<std::uint32_t>(p * h * w + (i + di) * w + (j + dj)));
        b->push_back(static_cast<std::uint32_t>(p * h * w + i * w + j));
      }
    }
  }
  return {a, b};
}

Var AbsDiffSum(Var x, std::size_t planes, std::size_t h, std::size_t w, std::size_t di,
               std::size_t dj) {
  auto [a, b] = NeighborIndex(planes, h, w, di, dj);
  const std::size_t n = a->size();
  if (n == 0) return x.tape()->Constant(Tensor::Scalar(0.0f));
  return ad::Sum(ad::Abs(ad::Sub(ad::Gather(x, a, {n}), ad::Gather(x, b, {n}))));
}

double ConstantNorm(std::span<const Tensor> g) {
  double s = 0.0;
  for (const Tensor& t : g) s += t.SquaredNorm();
  return std::sqrt(s);
}

}  // namespace

std::string ToString(MatchMode m) {
  switch (m) {
    case MatchMode::kNormProduct: return "norm_product";
    case MatchMode::kNormDifference: return "norm_difference";
    case MatchMode::kL2: return "l2";
  }
  return "norm_product";
}

MatchMode ParseMatchMode(const std::string& s) {
  if (s == "norm_product") return MatchMode::kNormProduct;
  if (s == "norm_difference") return MatchMode::kNormDifference;
  if (s == "l2") return MatchMode::kL2;
  throw InvalidArgument("unknown match mode '" + s + "'");
}

void AttackConfig::Validate() const {
  if (max_steps == 0 || trials == 0 || trace_every == 0) {
    throw InvalidArgument("attack config: steps, trials and trace interval must be positive");
  }
  if (!(lr > 0.0) || !(lr_drop > 0.0) || !(tv_weight >= 0.0)) {
    throw InvalidArgument("attack config: bad learning rate or tv weight");
  }
}

std::array<std::size_t, 3> LrDropSteps(std::size_t max_steps) {
  return {max_steps * 3 / 8, max_steps * 5 / 8, max_steps * 7 / 8};
}

double LrAtStep(const AttackConfig& cfg, std::size_t step) {
  double lr = cfg.lr;
  for (std::size_t drop : LrDropSteps(cfg.max_steps)) {
    if (step >= drop) lr *= cfg.lr_drop;
  }
  return lr;
}

GradMap InferUpdateGradient(const ParamSet& before, const ParamSet& after, double lr) {
  if (!before.CompatibleWith(after)) throw ShapeError("infer_update_gradient: incompatible models");
  if (!(lr > 0.0)) throw InvalidArgument("infer_update_gradient: lr must be positive");
  GradMap out;
  for (std::size_t i : before.TrainableIndices()) {
    const Tensor& a = before.value(i);
    const Tensor& b = after.value(i);
    Tensor g(a.shape());
    for (std::size_t k = 0; k < g.size(); ++k) {
      g[k] = static_cast<float>((static_cast<double>(a[k]) - static_cast<double>(b[k])) / lr);
    }
    out.push_back(std::move(g));
  }
  return out;
}

int RecoverLabel(const Tensor& output_bias_grad) {
  if (output_bias_grad.size() != 1) {
    throw ShapeError("recover_label: expected the single output-bias gradient");
  }
  const float g = output_bias_grad[0];
  if (g == 0.0f || !std::isfinite(g)) throw InvalidArgument("recover_label: ambiguous gradient");
  return g < 0.0f ? 1 : 0;
}

Var Tv(Var image) {
  const Shape& s = image.shape();
  std::size_t planes = 1, h = 0, w = 0;
  if (s.size() == 2) {
    h = s[0];
    w = s[1];
  } else if (s.size() == 4) {
    planes = s[0] * s[1];
    h = s[2];
    w = s[3];
  } else {
    throw ShapeError("tv: expected [H,W] or [N,C,H,W], got " + ShapeString(s));
  }
  return ad::Add(AbsDiffSum(image, planes, h, w, 1, 0), AbsDiffSum(image, planes, h, w, 0, 1));
}

Var MatchLoss(std::span<const Var> dummy_grads, std::span<const Tensor> target_grads,
              Var dummy_image, double tv_weight, MatchMode mode) {
  if (dummy_grads.size() != target_grads.size() || dummy_grads.empty()) {
    throw ShapeError("match_loss: gradient maps are not aligned");
  }
  Tape& tape = *dummy_image.tape();
  const double target_norm = ConstantNorm(target_grads);
  if (!(target_norm > 0.0)) throw InvalidArgument("match_loss: target gradient has zero norm");
  std::vector<Var> targets;
  for (std::size_t k = 0; k < target_grads.size(); ++k) {
    if (dummy_grads[k].shape() != target_grads[k].shape()) {
      throw ShapeError("match_loss: gradient shape mismatch");
    }
    targets.push_back(tape.Constant(target_grads[k]));
  }
  auto sum_over = [&](auto&& term) {
    Var acc = term(0);
    for (std::size_t k = 1; k < targets.size(); ++k) acc = ad::Add(acc, term(k));
    return acc;
  };
  auto diff_sq = [&] {
    return sum_over([&](std::size_t k) {
      Var d = ad::Sub(dummy_grads[k], targets[k]);
      return ad::Dot(d, d);
    });
  };
  if (mode == MatchMode::kL2) return diff_sq();
  Var inner = sum_over([&](std::size_t k) { return ad::Dot(dummy_grads[k], targets[k]); });
  Var denom;
  if (mode == MatchMode::kNormProduct) {
    Var dummy_sq = sum_over([&](std::size_t k) { return ad::Dot(dummy_grads[k], dummy_grads[k]); });
    denom = ad::Scale(ad::Pow(dummy_sq, 0.5f), static_cast<float>(target_norm));
  } else {
    denom = ad::Pow(diff_sq(), 0.5f);
  }
  Var cos = ad::Mul(inner, ad::Pow(denom, -1.0f));
  Var loss = ad::Affine(cos, -1.0f, 1.0f);
  if (tv_weight > 0.0) loss = ad::Add(loss, ad::Scale(Tv(dummy_image), static_cast<float>(tv_weight)));
  return loss;
}

namespace {

// Loss and gradient w.r.t. the dummy batch at `dummy`.
std::pair<double, Tensor> LossAndGrad(const GradMap& target, const ParamSet& model,
                                      const Tensor& labels, BnMode bn_mode,
                                      const AttackConfig& cfg, const Tensor& dummy) {
  Tape tape(true);
  std::vector<Var> vars, trainable;
  for (const auto& e : model.entries()) {
    vars.push_back(e.trainable ? tape.Leaf(e.value) : tape.Constant(e.value));
    if (e.trainable) trainable.push_back(vars.back());
  }
  Var x = tape.Leaf(dummy);
  Var logits = ForwardNormalized(model, vars, x, bn_mode);
  Var loss = BceLoss(logits, labels);
  const auto dummy_grads = tape.Grad(loss, trainable);
  Var match = MatchLoss(dummy_grads, target, x, cfg.tv_weight, cfg.mode);
  const Var wrt[] = {x};
  auto g = tape.GradValues(match, wrt);
  return {match.value()[0], std::move(g[0])};
}

TrialResult RunTrial(const GradMap& target, const ParamSet& model, const Tensor& labels,
                     std::size_t batch, BnMode bn_mode, const AttackConfig& cfg, RngStream rng) {
  const std::size_t side = model.spec().side;
  TrialResult out;
  out.dummy = Tensor({batch, 1, side, side});
  for (float& v : out.dummy.vec()) v = static_cast<float>(rng.Normal());
  const std::size_t n = out.dummy.size();
  std::vector<double> m(n, 0.0), v(n, 0.0);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  double b1 = 1.0, b2 = 1.0;
  try {
    for (std::size_t step = 0; step < cfg.max_steps; ++step) {
      auto [loss, grad] = LossAndGrad(target, model, labels, bn_mode, cfg, out.dummy);
      const double lr = LrAtStep(cfg, step);
      if (step % cfg.trace_every == 0) out.trace.push_back({step, loss, lr});
      b1 *= kBeta1;
      b2 *= kBeta2;
      Tensor next = out.dummy;
      for (std::size_t i = 0; i < n; ++i) {
        const double s = (grad[i] > 0.0f) - (grad[i] < 0.0f);
        m[i] = kBeta1 * m[i] + (1 - kBeta1) * s;
        v[i] = kBeta2 * v[i] + (1 - kBeta2) * s * s;
        const double mh = m[i] / (1 - b1);
        const double vh = v[i] / (1 - b2);
        next[i] = static_cast<float>(next[i] - lr * mh / (std::sqrt(vh) + kEps));
      }
      out.dummy = std::move(next);
    }
    out.final_loss = LossAndGrad(target, model, labels, bn_mode, cfg, out.dummy).first;
    out.trace.push_back({cfg.max_steps, out.final_loss, LrAtStep(cfg, cfg.max_steps)});
  } catch (const NumericError&) {
    out.aborted = true;
    out.final_loss = std::numeric_limits<double>::infinity();
  }
  return out;
}

}  // namespace

ReconstructionResult RunAttack(const GradMap& target, const ParamSet& model, const Tensor& labels,
                               std::size_t batch, BnMode bn_mode, const AttackConfig& cfg,
                               const RngStream& seeds) {
  cfg.Validate();
  if (batch == 0 || labels.size() != batch) throw ShapeError("run_attack: label count mismatch");
  if (target.size() != model.TrainableIndices().size()) {
    throw ShapeError("run_attack: target gradients do not match trainable tensors");
  }
  ReconstructionResult out;
  out.labels = labels.Reshaped({batch, 1});
  out.trials.resize(cfg.trials);
#pragma omp parallel for schedule(dynamic) num_threads(kernels::MaxThreads())
  for (std::size_t t = 0; t < cfg.trials; ++t) {
    out.trials[t] = RunTrial(target, model, out.labels, batch, bn_mode, cfg,
                             seeds.Derive("trial" + std::to_string(t)));
  }
  out.best_trial = 0;
  for (std::size_t t = 1; t < cfg.trials; ++t) {
    if (out.trials[t].final_loss < out.trials[out.best_trial].final_loss) out.best_trial = t;
  }
  out.best_loss = out.trials[out.best_trial].final_loss;
  out.best_pixels = DenormalizeInput(model.spec(), out.trials[out.best_trial].dummy);
  return out;
}

std::vector<Tensor> ClampedImages(const Tensor& pixels) {
  if (pixels.rank() != 4) throw ShapeError("clamped_images: expected [N,1,S,S]");
  const std::size_t n = pixels.dim(0), h = pixels.dim(2), w = pixels.dim(3);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor img({h, w});
    for (std::size_t k = 0; k < h * w; ++k) {
      img[k] = std::clamp(pixels[i * h * w + k], 0.0f, 1.0f);
    }
    out.push_back(std::move(img));
  }
  return out;
}

void WriteTraceCsv(const std::filesystem::path& path, const TrialResult& trial) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,loss,lr\n";
  char buf[96];
  for (const auto& p : trial.trace) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g\n", p.step, p.loss, p.lr);
    out << buf;
  }
}

}  // namespace fedleak::attack
