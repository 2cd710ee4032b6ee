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

#include "fedleak/models.hpp"

#include <cmath>
#include <fstream>

#include "fedleak/error.hpp"
#include "json.hpp"

namespace fedleak {
namespace {

using ad::Var;
using nlohmann::json;

constexpr float kBnEps = 1e-5f;
constexpr float kBnMomentum = 0.1f;
const double kReluGain = std::sqrt(6.0);

// U(-g/sqrt(fan_in), g/sqrt(fan_in)); g = sqrt(6) keeps activation variance
// through ReLU layers, g = 1 for the output layer and biases.
Tensor UniformInit(Shape shape, std::size_t fan_in, RngStream& rng, double gain = 1.0) {
  Tensor t(std::move(shape));
  const double bound = gain / std::sqrt(static_cast<double>(fan_in));
  for (float& v : t.vec()) v = static_cast<float>(rng.Uniform(-bound, bound));
  return t;
}

std::size_t CnnFeatureSide(const ModelSpec& spec) {
  return spec.side >> spec.widths.size();
}

Var Linear(Var x, Var weight, Var bias) {
  Var y = ad::Matmul(x, ad::Transpose(weight));
  return ad::Add(y, ad::ExpandAxis(bias, y.shape(), 1));
}

Var BatchNorm(Var x, Var gamma, Var beta, const BnStats& running, BnMode mode,
              std::vector<BnStats>* observed) {
  ad::Tape& tape = *x.tape();
  const Shape shape = x.shape();
  const std::size_t channels = shape[1];
  if (mode == BnMode::kFixedStats) {
    Tensor inv({channels});
    for (std::size_t c = 0; c < channels; ++c) inv[c] = 1.0f / std::sqrt(running.var[c] + kBnEps);
    Var centered = ad::Sub(x, ad::ExpandAxis(tape.Constant(running.mean), shape, 1));
    Var xhat = ad::Mul(centered, ad::ExpandAxis(tape.Constant(std::move(inv)), shape, 1));
    return ad::Add(ad::Mul(xhat, ad::ExpandAxis(gamma, shape, 1)),
                   ad::ExpandAxis(beta, shape, 1));
  }
  if (shape[0] < 2) {
    throw InvalidArgument("batch-norm batch statistics requested with batch size 1");
  }
  const std::size_t count = NumElements(shape) / channels;
  const float inv_count = 1.0f / static_cast<float>(count);
  Var mean = ad::Scale(ad::ReduceAxis(x, 1), inv_count);
  Var centered = ad::Sub(x, ad::ExpandAxis(mean, shape, 1));
  Var var = ad::Scale(ad::ReduceAxis(ad::Mul(centered, centered), 1), inv_count);
  Var inv_std = ad::Pow(ad::Affine(var, 1.0f, kBnEps), -0.5f);
  Var xhat = ad::Mul(centered, ad::ExpandAxis(inv_std, shape, 1));
  if (observed) observed->push_back({running.layer, mean.value(), var.value(), count});
  return ad::Add(ad::Mul(xhat, ad::ExpandAxis(gamma, shape, 1)), ad::ExpandAxis(beta, shape, 1));
}

Var LossFromLogits(Var logits, const Tensor& labels, LossKind kind) {
  return kind == LossKind::kBce ? BceLoss(logits, labels) : SigmoidMseLoss(logits, labels);
}

}  // namespace

std::string ToString(Architecture a) {
  return a == Architecture::kMlp ? "mlp" : "small_cnn";
}

std::string ToString(FreezeMode m) {
  switch (m) {
    case FreezeMode::kNone: return "none";
    case FreezeMode::kBatchNorm: return "batch_norm";
    case FreezeMode::kAllButLast: return "all_but_last";
  }
  return "none";
}

Architecture ParseArchitecture(const std::string& s) {
  if (s == "mlp") return Architecture::kMlp;
  if (s == "small_cnn") return Architecture::kSmallCnn;
  throw InvalidArgument("unknown architecture '" + s + "'");
}

FreezeMode ParseFreezeMode(const std::string& s) {
  if (s == "none") return FreezeMode::kNone;
  if (s == "batch_norm") return FreezeMode::kBatchNorm;
  if (s == "all_but_last") return FreezeMode::kAllButLast;
  throw InvalidArgument("unknown freeze mode '" + s + "'");
}

void ModelSpec::Validate() const {
  if (side == 0) throw InvalidArgument("model side length must be positive");
  if (!(input_std > 0.0f)) throw InvalidArgument("input_std must be positive");
  for (std::size_t w : widths) {
    if (w == 0) throw InvalidArgument("zero-sized layer in model spec");
  }
  if (architecture == Architecture::kMlp) {
    if (widths.empty() || widths.back() != 1) {
      throw InvalidArgument("mlp widths must end with a single output unit");
    }
  } else {
    if (widths.size() < 2) throw InvalidArgument("small_cnn needs at least two conv blocks");
    if (side % (std::size_t{1} << widths.size()) != 0) {
      throw InvalidArgument("small_cnn side must be divisible by 2^blocks");
    }
  }
}

// ---- ParamSet ---------------------------------------------------------------

std::optional<std::size_t> ParamSet::Find(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  return std::nullopt;
}

std::vector<std::size_t> ParamSet::TrainableIndices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].trainable) out.push_back(i);
  }
  return out;
}

std::vector<std::string> ParamSet::TrainableNames() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) {
    if (e.trainable) out.push_back(e.name);
  }
  return out;
}

std::size_t ParamSet::ParameterCount() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

BnMode ParamSet::BnModeFor(std::size_t batch_size) const {
  return (freeze_ != FreezeMode::kNone || batch_size <= 1) ? BnMode::kFixedStats
                                                           : BnMode::kBatchStats;
}

bool ParamSet::CompatibleWith(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name ||
        entries_[i].value.shape() != other.entries_[i].value.shape())
      return false;
  }
  if (bn_stats_.size() != other.bn_stats_.size()) return false;
  for (std::size_t i = 0; i < bn_stats_.size(); ++i) {
    if (bn_stats_[i].layer != other.bn_stats_[i].layer ||
        bn_stats_[i].mean.shape() != other.bn_stats_[i].mean.shape())
      return false;
  }
  return true;
}

void ParamSet::ApplySgdStep(const GradMap& grads, float lr) {
  const auto idx = TrainableIndices();
  if (grads.size() != idx.size()) throw ShapeError("ApplySgdStep: gradient count mismatch");
  for (std::size_t k = 0; k < idx.size(); ++k) {
    Tensor& p = entries_[idx[k]].value;
    if (grads[k].shape() != p.shape()) throw ShapeError("ApplySgdStep: gradient shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * grads[k][i];
  }
}

bool operator==(const ParamSet& a, const ParamSet& b) {
  if (a.freeze_ != b.freeze_ || !a.CompatibleWith(b)) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    if (a.entries_[i].trainable != b.entries_[i].trainable ||
        !(a.entries_[i].value == b.entries_[i].value))
      return false;
  }
  for (std::size_t i = 0; i < a.bn_stats_.size(); ++i) {
    if (!(a.bn_stats_[i].mean == b.bn_stats_[i].mean) ||
        !(a.bn_stats_[i].var == b.bn_stats_[i].var))
      return false;
  }
  return true;
}

void ParamSet::Save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["architecture"] = ToString(spec_.architecture);
  manifest["side"] = spec_.side;
  manifest["widths"] = spec_.widths;
  manifest["input_mean"] = spec_.input_mean;
  manifest["input_std"] = spec_.input_std;
  manifest["freeze_mode"] = ToString(freeze_);
  json layers = json::array();
  for (const auto& e : entries_) {
    const std::string file = e.name + ".ftn";
    SaveFtn1(dir / file, e.value);
    layers.push_back({{"name", e.name},
                      {"shape", e.value.shape()},
                      {"trainable", e.trainable},
                      {"bn_affine", e.bn_affine},
                      {"file", file}});
  }
  manifest["layers"] = layers;
  json stats = json::array();
  for (const auto& s : bn_stats_) {
    const std::string mean_file = s.layer + ".running_mean.ftn";
    const std::string var_file = s.layer + ".running_var.ftn";
    SaveFtn1(dir / mean_file, s.mean);
    SaveFtn1(dir / var_file, s.var);
    stats.push_back({{"layer", s.layer}, {"mean_file", mean_file}, {"var_file", var_file}});
  }
  manifest["bn_stats"] = stats;
  std::ofstream out(dir / "model.json");
  if (!out) throw IoError("cannot write " + (dir / "model.json").string());
  out << manifest.dump(2) << '\n';
}

ParamSet ParamSet::Load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "model.json");
  if (!in) throw IoError("missing model manifest in " + dir.string());
  json manifest;
  try {
    manifest = json::parse(in);
    ParamSet p;
    p.spec_.architecture = ParseArchitecture(manifest.at("architecture").get<std::string>());
    p.spec_.side = manifest.at("side").get<std::size_t>();
    p.spec_.widths = manifest.at("widths").get<std::vector<std::size_t>>();
    p.spec_.input_mean = manifest.at("input_mean").get<float>();
    p.spec_.input_std = manifest.at("input_std").get<float>();
    p.freeze_ = ParseFreezeMode(manifest.at("freeze_mode").get<std::string>());
    for (const auto& l : manifest.at("layers")) {
      Entry e;
      e.name = l.at("name").get<std::string>();
      e.trainable = l.at("trainable").get<bool>();
      e.bn_affine = l.at("bn_affine").get<bool>();
      e.value = LoadFtn1(dir / l.at("file").get<std::string>());
      if (e.value.shape() != l.at("shape").get<Shape>()) {
        throw IoError("tensor " + e.name + " does not match manifest shape");
      }
      p.entries_.push_back(std::move(e));
    }
    for (const auto& s : manifest.at("bn_stats")) {
      BnStats st;
      st.layer = s.at("layer").get<std::string>();
      st.mean = LoadFtn1(dir / s.at("mean_file").get<std::string>());
      st.var = LoadFtn1(dir / s.at("var_file").get<std::string>());
      p.bn_stats_.push_back(std::move(st));
    }
    return p;
  } catch (const json::exception& e) {
    throw IoError("malformed model manifest: " + std::string(e.what()));
  }
}

// ---- construction -------------------------------------------------------------

ParamSet BuildModel(const ModelSpec& spec, RngStream& rng) {
  spec.Validate();
  ParamSet p;
  p.spec_ = spec;
  auto add = [&](std::string name, Tensor value, bool bn_affine = false) {
    p.entries_.push_back({std::move(name), std::move(value), true, bn_affine});
  };
  if (spec.architecture == Architecture::kMlp) {
    std::size_t fan_in = spec.side * spec.side;
    for (std::size_t l = 0; l < spec.widths.size(); ++l) {
      const std::size_t out = spec.widths[l];
      const std::string prefix = "fc" + std::to_string(l + 1);
      const double gain = l + 1 < spec.widths.size() ? kReluGain : 1.0;
      add(prefix + ".weight", UniformInit({out, fan_in}, fan_in, rng, gain));
      add(prefix + ".bias", UniformInit({out}, fan_in, rng));
      fan_in = out;
    }
  } else {
    std::size_t in_ch = 1;
    for (std::size_t b = 0; b < spec.widths.size(); ++b) {
      const std::size_t out_ch = spec.widths[b];
      const std::string idx = std::to_string(b + 1);
      add("conv" + idx + ".weight", UniformInit({out_ch, in_ch, 3, 3}, in_ch * 9, rng, kReluGain));
      add("bn" + idx + ".weight", Tensor({out_ch}, 1.0f), true);
      add("bn" + idx + ".bias", Tensor({out_ch}, 0.0f), true);
      p.bn_stats_.push_back({"bn" + idx, Tensor({out_ch}, 0.0f), Tensor({out_ch}, 1.0f), 0});
      in_ch = out_ch;
    }
    const std::size_t fs = CnnFeatureSide(spec);
    const std::size_t features = in_ch * fs * fs;
    add("fc.weight", UniformInit({1, features}, features, rng));
    add("fc.bias", UniformInit({1}, features, rng));
  }
  return p;
}

ParamSet ApplyFreeze(ParamSet params, FreezeMode mode) {
  params.freeze_ = mode;
  const std::size_t n = params.entries_.size();
  for (std::size_t i = 0; i < n; ++i) {
    auto& e = params.entries_[i];
    switch (mode) {
      case FreezeMode::kNone:
        e.trainable = true;
        break;
      case FreezeMode::kBatchNorm:
        e.trainable = !e.bn_affine;
        break;
      case FreezeMode::kAllButLast:
        // Final classification layer = last weight and bias entries.
        e.trainable = i + 2 >= n;
        break;
    }
  }
  return params;
}

// ---- forward --------------------------------------------------------------------

Tensor NormalizeInput(const ModelSpec& spec, const Tensor& pixels) {
  Tensor out(pixels.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = (pixels[i] - spec.input_mean) / spec.input_std;
  }
  return out;
}

Tensor DenormalizeInput(const ModelSpec& spec, const Tensor& normalized) {
  Tensor out(normalized.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = normalized[i] * spec.input_std + spec.input_mean;
  }
  return out;
}

Var ForwardNormalized(const ParamSet& params, std::span<const Var> param_vars, Var input,
                      BnMode mode, std::vector<BnStats>* observed) {
  const ModelSpec& spec = params.spec();
  if (param_vars.size() != params.size()) {
    throw ShapeError("forward: expected one node per parameter tensor");
  }
  const Shape& in_shape = input.shape();
  const bool ok_shape = in_shape.size() == 4 && in_shape[1] == 1 && in_shape[2] == spec.side &&
                        in_shape[3] == spec.side;
  if (!ok_shape) {
    throw ShapeError("forward: expected input [N,1," + std::to_string(spec.side) + "," +
                     std::to_string(spec.side) + "], got " + ShapeString(in_shape));
  }
  const std::size_t batch = in_shape[0];
  if (mode == BnMode::kBatchStats && batch < 2 && !params.bn_stats().empty()) {
    throw InvalidArgument("batch-norm batch statistics requested with batch size 1");
  }
  if (spec.architecture == Architecture::kMlp) {
    Var h = ad::Reshape(input, {batch, spec.side * spec.side});
    const std::size_t layers = spec.widths.size();
    for (std::size_t l = 0; l < layers; ++l) {
      h = Linear(h, param_vars[2 * l], param_vars[2 * l + 1]);
      if (l + 1 < layers) h = ad::Relu(h);
    }
    return h;
  }
  Var h = input;
  for (std::size_t b = 0; b < spec.widths.size(); ++b) {
    h = ad::Conv2d(h, param_vars[3 * b], 1, 1);
    h = BatchNorm(h, param_vars[3 * b + 1], param_vars[3 * b + 2], params.bn_stats()[b], mode,
                  observed);
    h = ad::Relu(h);
    h = ad::AvgPool2d(h, 2);
  }
  const Shape& hs = h.shape();
  h = ad::Reshape(h, {batch, hs[1] * hs[2] * hs[3]});
  const std::size_t fc = 3 * spec.widths.size();
  return Linear(h, param_vars[fc], param_vars[fc + 1]);
}

namespace {

Tensor AsImageBatch(const ModelSpec& spec, const Tensor& pixels) {
  if (pixels.rank() == 3) return pixels.Reshaped({pixels.dim(0), 1, spec.side, spec.side});
  return pixels;
}

std::vector<Var> ParamVars(ad::Tape& tape, const ParamSet& params, bool leaves_for_trainable) {
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& e : params.entries()) {
    vars.push_back(leaves_for_trainable && e.trainable ? tape.Leaf(e.value)
                                                       : tape.Constant(e.value));
  }
  return vars;
}

}  // namespace

Tensor Forward(const ParamSet& params, const Tensor& pixels, BnMode mode) {
  ad::Tape tape;
  const auto vars = ParamVars(tape, params, false);
  Var x = tape.Constant(NormalizeInput(params.spec(), AsImageBatch(params.spec(), pixels)));
  return ForwardNormalized(params, vars, x, mode).value();
}

Var BceLoss(Var logits, const Tensor& labels) {
  const Tensor& z = logits.value();
  if (labels.size() != z.size()) {
    throw ShapeError("bce_loss: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(z.size()) + " logits");
  }
  Tensor pos(z.shape()), neg(z.shape());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const float y = labels[i];
    if (y != 0.0f && y != 1.0f) throw InvalidArgument("bce_loss: labels must be 0 or 1");
    pos[i] = y;
    neg[i] = 1.0f - y;
  }
  // y * softplus(-z) + (1 - y) * softplus(z): no cancellation for large |z|.
  Var per_sample = ad::Add(ad::MulConst(ad::Softplus(ad::Neg(logits)), std::move(pos)),
                           ad::MulConst(ad::Softplus(logits), std::move(neg)));
  return ad::Mean(per_sample);
}

Var SigmoidMseLoss(Var logits, const Tensor& targets) {
  if (targets.size() != logits.value().size()) throw ShapeError("mse_loss: size mismatch");
  ad::Tape& tape = *logits.tape();
  Var diff = ad::Sub(ad::Sigmoid(logits), tape.Constant(targets.Reshaped(logits.shape())));
  return ad::Mean(ad::Mul(diff, diff));
}

BatchGradient ComputeBatchGradient(const ParamSet& params, const Tensor& pixels,
                                   const Tensor& labels, BnMode mode, LossKind kind) {
  ad::Tape tape;
  const auto vars = ParamVars(tape, params, true);
  Var x = tape.Constant(NormalizeInput(params.spec(), AsImageBatch(params.spec(), pixels)));
  BatchGradient out;
  Var logits = ForwardNormalized(params, vars, x, mode, &out.observed);
  Var loss = LossFromLogits(logits, labels, kind);
  out.loss = loss.value()[0];
  std::vector<Var> wrt;
  for (std::size_t i : params.TrainableIndices()) wrt.push_back(vars[i]);
  out.grads = tape.GradValues(loss, wrt);
  return out;
}

std::vector<GradMap> ComputePerSampleGradients(const ParamSet& params, const Tensor& pixels,
                                               const Tensor& labels, LossKind kind) {
  const auto trainable = params.TrainableIndices();
  ad::BatchLoss loss;
  loss.fn = [&](ad::Tape& tape, std::span<const Var> train_vars, const Tensor& x,
                const Tensor& y) {
    std::vector<Var> vars;
    std::size_t k = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params.entry(i).trainable) {
        vars.push_back(train_vars[k++]);
      } else {
        vars.push_back(tape.Constant(params.value(i)));
      }
    }
    Var input = tape.Constant(NormalizeInput(params.spec(), x));
    return LossFromLogits(ForwardNormalized(params, vars, input, BnMode::kFixedStats), y, kind);
  };
  loss.decomposable = true;
  std::vector<Tensor> train_values;
  for (std::size_t i : trainable) train_values.push_back(params.value(i));
  const Tensor images = AsImageBatch(params.spec(), pixels);
  const Tensor label_rows = labels.Reshaped({labels.size(), 1});
  return ad::PerSampleGrad(loss, train_values, images, label_rows);
}

void UpdateRunningStats(ParamSet& params, const std::vector<BnStats>& observed) {
  for (const BnStats& obs : observed) {
    for (BnStats& run : params.bn_stats()) {
      if (run.layer != obs.layer) continue;
      const float correction =
          obs.count > 1 ? static_cast<float>(obs.count) / static_cast<float>(obs.count - 1) : 1.0f;
      for (std::size_t c = 0; c < run.mean.size(); ++c) {
        run.mean[c] = (1.0f - kBnMomentum) * run.mean[c] + kBnMomentum * obs.mean[c];
        run.var[c] = (1.0f - kBnMomentum) * run.var[c] + kBnMomentum * obs.var[c] * correction;
      }
    }
  }
}

double GlobalNorm(const GradMap& grads) {
  double s = 0.0;
  for (const Tensor& g : grads) s += g.SquaredNorm();
  return std::sqrt(s);
}

}  // namespace fedleak
