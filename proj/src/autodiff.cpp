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

#include "fedleak/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedleak/error.hpp"

namespace fedleak::ad {
namespace {

using Index = std::shared_ptr<const std::vector<std::uint32_t>>;

// Stride of `axis` and its extent, for ExpandAxis/ReduceAxis.
std::pair<std::size_t, std::size_t> AxisLayout(const Shape& shape, std::size_t axis) {
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  return {inner, shape[axis]};
}

void RequireSameShape(const Tensor& a, const Tensor& b, Op op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(OpName(op)) + ": shape mismatch " + ShapeString(a.shape()) +
                     " vs " + ShapeString(b.shape()));
  }
}

template <typename F>
Tensor Map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

float StableSoftplus(float x) {
  return std::max(x, 0.0f) + std::log1p(std::exp(-std::fabs(x)));
}

float StableSigmoid(float x) {
  if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
  const float e = std::exp(x);
  return e / (1.0f + e);
}

// Forward semantics of every primitive. Shared by Record and Replay.
Tensor Evaluate(Op op, const Attrs& at, const Tensor* a, const Tensor* b) {
  switch (op) {
    case Op::kLeaf:
      throw InvalidArgument("Evaluate: leaf has no forward rule");
    case Op::kAdd: {
      RequireSameShape(*a, *b, op);
      Tensor out(a->shape());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*a)[i] + (*b)[i];
      return out;
    }
    case Op::kSub: {
      RequireSameShape(*a, *b, op);
      Tensor out(a->shape());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*a)[i] - (*b)[i];
      return out;
    }
    case Op::kMul: {
      RequireSameShape(*a, *b, op);
      Tensor out(a->shape());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*a)[i] * (*b)[i];
      return out;
    }
    case Op::kMulConst: {
      RequireSameShape(*a, *at.constant, op);
      Tensor out(a->shape());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*a)[i] * (*at.constant)[i];
      return out;
    }
    case Op::kAffine:
      return Map(*a, [&](float x) { return at.scale * x + at.shift; });
    case Op::kPow:
      return Map(*a, [&](float x) { return std::pow(x, at.scale); });
    case Op::kSigmoid:
      return Map(*a, StableSigmoid);
    case Op::kSoftplus:
      return Map(*a, StableSoftplus);
    case Op::kRelu:
      return Map(*a, [](float x) { return x > 0.0f ? x : 0.0f; });
    case Op::kAbs:
      return Map(*a, [](float x) { return std::fabs(x); });
    case Op::kSum: {
      float s = 0.0f;
      for (float v : a->data()) s += v;
      return Tensor::Scalar(s);
    }
    case Op::kExpandScalar:
      if (a->size() != 1) throw ShapeError("ExpandScalar: input must be [1]");
      return Tensor(at.shape, (*a)[0]);
    case Op::kExpandAxis: {
      const auto [inner, extent] = AxisLayout(at.shape, at.axis);
      if (a->size() != extent) throw ShapeError("ExpandAxis: extent mismatch");
      Tensor out(at.shape);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*a)[(i / inner) % extent];
      return out;
    }
    case Op::kReduceAxis: {
      if (at.axis >= a->rank()) throw ShapeError("ReduceAxis: axis out of range");
      const auto [inner, extent] = AxisLayout(a->shape(), at.axis);
      Tensor out({extent});
      for (std::size_t i = 0; i < a->size(); ++i) out[(i / inner) % extent] += (*a)[i];
      return out;
    }
    case Op::kReshape:
      return a->Reshaped(at.shape);
    case Op::kTranspose: {
      if (a->rank() != 2) throw ShapeError("Transpose: rank-2 input required");
      const std::size_t r = a->dim(0), c = a->dim(1);
      Tensor out({c, r});
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = (*a)[i * c + j];
      return out;
    }
    case Op::kMatmul: {
      if (a->rank() != 2 || b->rank() != 2 || a->dim(1) != b->dim(0)) {
        throw ShapeError("Matmul: incompatible " + ShapeString(a->shape()) + " x " +
                         ShapeString(b->shape()));
      }
      Tensor out({a->dim(0), b->dim(1)});
      kernels::Matmul(a->data(), b->data(), out.data(), a->dim(0), a->dim(1), b->dim(1));
      return out;
    }
    case Op::kConv2d: {
      const auto& g = at.conv;
      if (a->size() != g.input_size() || b->size() != g.weight_size())
        throw ShapeError("Conv2d: operand sizes do not match geometry");
      Tensor out({g.batch, g.out_channels, g.out_height(), g.out_width()});
      kernels::Conv2dForward(g, a->data(), b->data(), out.data());
      return out;
    }
    case Op::kConv2dInputGrad: {
      const auto& g = at.conv;
      if (a->size() != g.output_size() || b->size() != g.weight_size())
        throw ShapeError("Conv2dInputGrad: operand sizes do not match geometry");
      Tensor out({g.batch, g.in_channels, g.height, g.width});
      kernels::Conv2dInputGrad(g, a->data(), b->data(), out.data());
      return out;
    }
    case Op::kConv2dWeightGrad: {
      const auto& g = at.conv;
      if (a->size() != g.input_size() || b->size() != g.output_size())
        throw ShapeError("Conv2dWeightGrad: operand sizes do not match geometry");
      Tensor out({g.out_channels, g.in_channels, g.kernel, g.kernel});
      kernels::Conv2dWeightGrad(g, a->data(), b->data(), out.data());
      return out;
    }
    case Op::kAvgPool: {
      Tensor out(at.shape);
      kernels::AvgPoolForward(at.pool, a->data(), out.data());
      return out;
    }
    case Op::kAvgPoolGrad: {
      Tensor out(at.shape);
      kernels::AvgPoolBackward(at.pool, a->data(), out.data());
      return out;
    }
    case Op::kGather: {
      const auto& idx = *at.index;
      Tensor out(at.shape);
      if (idx.size() != out.size()) throw ShapeError("Gather: index length mismatch");
      for (std::size_t i = 0; i < idx.size(); ++i) out[i] = (*a)[idx[i]];
      return out;
    }
    case Op::kScatterAdd: {
      const auto& idx = *at.index;
      if (idx.size() != a->size()) throw ShapeError("ScatterAdd: index length mismatch");
      Tensor out(at.shape);
      for (std::size_t i = 0; i < idx.size(); ++i) out[idx[i]] += (*a)[i];
      return out;
    }
  }
  throw InvalidArgument("Evaluate: unknown op");
}

Attrs WithShape(Shape shape) {
  Attrs at;
  at.shape = std::move(shape);
  return at;
}

}  // namespace

std::string_view OpName(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kMulConst: return "mul_const";
    case Op::kAffine: return "affine";
    case Op::kPow: return "pow";
    case Op::kSigmoid: return "sigmoid";
    case Op::kSoftplus: return "softplus";
    case Op::kRelu: return "relu";
    case Op::kAbs: return "abs";
    case Op::kSum: return "sum";
    case Op::kExpandScalar: return "expand_scalar";
    case Op::kExpandAxis: return "expand_axis";
    case Op::kReduceAxis: return "reduce_axis";
    case Op::kReshape: return "reshape";
    case Op::kTranspose: return "transpose";
    case Op::kMatmul: return "matmul";
    case Op::kConv2d: return "conv2d";
    case Op::kConv2dInputGrad: return "conv2d_input_grad";
    case Op::kConv2dWeightGrad: return "conv2d_weight_grad";
    case Op::kAvgPool: return "avg_pool";
    case Op::kAvgPoolGrad: return "avg_pool_grad";
    case Op::kGather: return "gather";
    case Op::kScatterAdd: return "scatter_add";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (!valid()) throw InvalidArgument("use of an invalid Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return valid() && tape_->requires_grad(id_); }

// ---- Tape -----------------------------------------------------------------

Var Tape::Leaf(Tensor value) {
  if (!value.AllFinite()) throw NumericError("leaf: non-finite value");
  Node n;
  n.requires_grad = true;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::Constant(Tensor value) {
  if (!value.AllFinite()) throw NumericError("constant: non-finite value");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::Adopt(Var v) const {
  if (v.tape() != this || v.id() < 0 || static_cast<std::size_t>(v.id()) >= nodes_.size()) {
    throw InvalidArgument("node does not belong to this tape");
  }
  return v;
}

Var Tape::Record(Op op, std::initializer_list<Var> inputs, Attrs attrs) {
  const Var* in = inputs.begin();
  const std::size_t arity = inputs.size();
  for (std::size_t i = 0; i < arity; ++i) Adopt(in[i]);
  const Tensor* a = arity > 0 ? &nodes_[in[0].id()].value : nullptr;
  const Tensor* b = arity > 1 ? &nodes_[in[1].id()].value : nullptr;
  Tensor value = Evaluate(op, attrs, a, b);
  if (!value.AllFinite()) {
    throw NumericError(std::string(OpName(op)) + ": non-finite output");
  }
  Node n;
  n.value = std::move(value);
  if (recording_) {
    n.op = op;
    n.in0 = arity > 0 ? in[0].id() : -1;
    n.in1 = arity > 1 ? in[1].id() : -1;
    n.requires_grad = (arity > 0 && nodes_[n.in0].requires_grad) ||
                      (arity > 1 && nodes_[n.in1].requires_grad);
    n.attrs = std::move(attrs);
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

std::vector<Var> Tape::Backward(int id, Var gy) {
  const Node& node = nodes_[id];
  const Op op = node.op;
  const Attrs at = node.attrs;
  const Var a(this, node.in0);
  const Var b(this, node.in1);
  const Var self(this, id);
  switch (op) {
    case Op::kLeaf:
      return {};
    case Op::kAdd:
      return {gy, gy};
    case Op::kSub:
      return {gy, Neg(gy)};
    case Op::kMul:
      return {Mul(gy, b), Mul(gy, a)};
    case Op::kMulConst:
      return {MulConst(gy, *at.constant)};
    case Op::kAffine:
      return {Scale(gy, at.scale)};
    case Op::kPow:
      return {Mul(gy, Scale(Pow(a, at.scale - 1.0f), at.scale))};
    case Op::kSigmoid:
      return {Mul(gy, Mul(self, Affine(self, -1.0f, 1.0f)))};
    case Op::kSoftplus:
      return {Mul(gy, Sigmoid(a))};
    case Op::kRelu: {
      // Subgradient at 0 is 0.
      Tensor mask = Map(a.value(), [](float x) { return x > 0.0f ? 1.0f : 0.0f; });
      return {MulConst(gy, std::move(mask))};
    }
    case Op::kAbs: {
      Tensor sign = Map(a.value(), [](float x) {
        return x > 0.0f ? 1.0f : (x < 0.0f ? -1.0f : 0.0f);
      });
      return {MulConst(gy, std::move(sign))};
    }
    case Op::kSum:
      return {ExpandScalar(gy, a.shape())};
    case Op::kExpandScalar:
      return {Sum(gy)};
    case Op::kExpandAxis:
      return {ReduceAxis(gy, at.axis)};
    case Op::kReduceAxis:
      return {ExpandAxis(gy, a.shape(), at.axis)};
    case Op::kReshape:
      return {Reshape(gy, a.shape())};
    case Op::kTranspose:
      return {Transpose(gy)};
    case Op::kMatmul:
      return {Matmul(gy, Transpose(b)), Matmul(Transpose(a), gy)};
    case Op::kConv2d: {
      const Var gx = Record(Op::kConv2dInputGrad, {gy, b}, at);
      const Var gw = Record(Op::kConv2dWeightGrad, {a, gy}, at);
      return {gx, gw};
    }
    case Op::kConv2dInputGrad: {
      // out = T_w(g): adjoint of conv in x. Inputs (g, w).
      const Var gg = Record(Op::kConv2d, {gy, b}, at);
      const Var gw = Record(Op::kConv2dWeightGrad, {gy, a}, at);
      return {gg, gw};
    }
    case Op::kConv2dWeightGrad: {
      // out = sum_x x (*) g. Inputs (x, g).
      const Var gx = Record(Op::kConv2dInputGrad, {b, gy}, at);
      const Var gg = Record(Op::kConv2d, {a, gy}, at);
      return {gx, gg};
    }
    case Op::kAvgPool: {
      Attrs back = at;
      back.shape = a.shape();
      return {Record(Op::kAvgPoolGrad, {gy}, std::move(back))};
    }
    case Op::kAvgPoolGrad: {
      Attrs fwd = at;
      fwd.shape = a.shape();
      return {Record(Op::kAvgPool, {gy}, std::move(fwd))};
    }
    case Op::kGather:
      return {ScatterAdd(gy, at.index, a.shape())};
    case Op::kScatterAdd:
      return {Gather(gy, at.index, a.shape())};
  }
  throw InvalidArgument("Backward: unknown op");
}

std::vector<Var> Tape::Grad(Var scalar, std::span<const Var> wrt) {
  Adopt(scalar);
  if (scalar.value().size() != 1) {
    throw ShapeError("Grad: output must be a single-element tensor, got " +
                     ShapeString(scalar.shape()));
  }
  for (const Var& w : wrt) Adopt(w);

  const std::size_t end = static_cast<std::size_t>(scalar.id()) + 1;
  // needs[i]: node i lies on a path from some wrt node.
  std::vector<char> needs(end, 0);
  for (const Var& w : wrt) {
    if (static_cast<std::size_t>(w.id()) < end) needs[w.id()] = 1;
  }
  for (std::size_t i = 0; i < end; ++i) {
    const Node& n = nodes_[i];
    if (needs[i] || n.op == Op::kLeaf) continue;
    if ((n.in0 >= 0 && needs[n.in0]) || (n.in1 >= 0 && needs[n.in1])) needs[i] = 1;
  }

  const bool saved = recording_;
  recording_ = higher_order_ && saved;
  std::vector<Var> grads(end);
  try {
    if (needs[scalar.id()]) grads[scalar.id()] = Constant(Tensor(scalar.shape(), 1.0f));
    for (int id = static_cast<int>(end) - 1; id >= 0; --id) {
      if (!grads[id].valid() || nodes_[id].op == Op::kLeaf) continue;
      const int in0 = nodes_[id].in0;
      const int in1 = nodes_[id].in1;
      const bool want0 = in0 >= 0 && needs[in0];
      const bool want1 = in1 >= 0 && needs[in1];
      if (!want0 && !want1) continue;
      std::vector<Var> local = Backward(id, grads[id]);
      const int ins[2] = {in0, in1};
      const bool want[2] = {want0, want1};
      for (std::size_t k = 0; k < local.size() && k < 2; ++k) {
        if (!want[k]) continue;
        Var& slot = grads[ins[k]];
        slot = slot.valid() ? Add(slot, local[k]) : local[k];
      }
    }
  } catch (...) {
    recording_ = saved;
    throw;
  }
  recording_ = saved;

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (static_cast<std::size_t>(w.id()) < end && grads[w.id()].valid()) {
      out.push_back(grads[w.id()]);
    } else {
      out.push_back(Constant(Tensor(w.shape())));
    }
  }
  return out;
}

std::vector<Tensor> Tape::GradValues(Var scalar, std::span<const Var> wrt) {
  std::vector<Tensor> out;
  for (const Var& g : Grad(scalar, wrt)) out.push_back(g.value());
  return out;
}

bool Tape::Replay() const {
  for (const Node& n : nodes_) {
    if (n.op == Op::kLeaf) continue;
    const Tensor* a = n.in0 >= 0 ? &nodes_[n.in0].value : nullptr;
    const Tensor* b = n.in1 >= 0 ? &nodes_[n.in1].value : nullptr;
    if (!(Evaluate(n.op, n.attrs, a, b) == n.value)) return false;
  }
  return true;
}

// ---- primitives -----------------------------------------------------------

namespace {
Tape& TapeOf(Var a) {
  if (!a.valid()) throw InvalidArgument("primitive applied to an invalid Var");
  return *a.tape();
}
}  // namespace

Var Add(Var a, Var b) { return TapeOf(a).Record(Op::kAdd, {a, b}, {}); }
Var Sub(Var a, Var b) { return TapeOf(a).Record(Op::kSub, {a, b}, {}); }
Var Mul(Var a, Var b) { return TapeOf(a).Record(Op::kMul, {a, b}, {}); }

Var MulConst(Var a, Tensor c) {
  Attrs at;
  at.constant = std::make_shared<const Tensor>(std::move(c));
  return TapeOf(a).Record(Op::kMulConst, {a}, std::move(at));
}

Var Affine(Var a, float scale, float shift) {
  Attrs at;
  at.scale = scale;
  at.shift = shift;
  return TapeOf(a).Record(Op::kAffine, {a}, std::move(at));
}

Var Pow(Var a, float p) {
  Attrs at;
  at.scale = p;
  return TapeOf(a).Record(Op::kPow, {a}, std::move(at));
}

Var Sigmoid(Var a) { return TapeOf(a).Record(Op::kSigmoid, {a}, {}); }
Var Softplus(Var a) { return TapeOf(a).Record(Op::kSoftplus, {a}, {}); }
Var Relu(Var a) { return TapeOf(a).Record(Op::kRelu, {a}, {}); }
Var Abs(Var a) { return TapeOf(a).Record(Op::kAbs, {a}, {}); }
Var Sum(Var a) { return TapeOf(a).Record(Op::kSum, {a}, {}); }

Var Mean(Var a) {
  return Scale(Sum(a), 1.0f / static_cast<float>(a.value().size()));
}

Var ExpandScalar(Var a, Shape shape) {
  return TapeOf(a).Record(Op::kExpandScalar, {a}, WithShape(std::move(shape)));
}

Var ExpandAxis(Var a, Shape shape, std::size_t axis) {
  if (axis >= shape.size()) throw ShapeError("ExpandAxis: axis out of range");
  Attrs at = WithShape(std::move(shape));
  at.axis = axis;
  return TapeOf(a).Record(Op::kExpandAxis, {a}, std::move(at));
}

Var ReduceAxis(Var a, std::size_t axis) {
  Attrs at;
  at.axis = axis;
  return TapeOf(a).Record(Op::kReduceAxis, {a}, std::move(at));
}

Var Reshape(Var a, Shape shape) {
  return TapeOf(a).Record(Op::kReshape, {a}, WithShape(std::move(shape)));
}

Var Transpose(Var a) { return TapeOf(a).Record(Op::kTranspose, {a}, {}); }
Var Matmul(Var a, Var b) { return TapeOf(a).Record(Op::kMatmul, {a, b}, {}); }

Var Conv2d(Var x, Var w, std::size_t stride, std::size_t pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1] || ws[2] != ws[3]) {
    throw ShapeError("Conv2d: expected x [N,C,H,W] and w [Co,C,K,K], got " + ShapeString(xs) +
                     " and " + ShapeString(ws));
  }
  if (stride == 0) throw InvalidArgument("Conv2d: stride must be positive");
  Attrs at;
  at.conv = {xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], stride, pad};
  if (xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[2]) {
    throw ShapeError("Conv2d: kernel larger than padded input");
  }
  return TapeOf(x).Record(Op::kConv2d, {x, w}, std::move(at));
}

Var AvgPool2d(Var x, std::size_t kernel) {
  const Shape& s = x.shape();
  if (s.size() != 4 || kernel == 0 || s[2] < kernel || s[3] < kernel) {
    throw ShapeError("AvgPool2d: expected [N,C,H,W] at least kernel-sized");
  }
  Attrs at;
  at.pool = {s[0] * s[1], s[2], s[3], kernel};
  at.shape = {s[0], s[1], s[2] / kernel, s[3] / kernel};
  return TapeOf(x).Record(Op::kAvgPool, {x}, std::move(at));
}

Var MaxPool2d(Var x, std::size_t kernel) {
  const Shape& s = x.shape();
  if (s.size() != 4 || kernel == 0 || s[2] < kernel || s[3] < kernel) {
    throw ShapeError("MaxPool2d: expected [N,C,H,W] at least kernel-sized");
  }
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
  const std::size_t ho = h / kernel, wo = w / kernel;
  auto index = std::make_shared<std::vector<std::uint32_t>>(planes * ho * wo);
  const Tensor& v = x.value();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t oh = 0; oh < ho; ++oh)
      for (std::size_t ow = 0; ow < wo; ++ow) {
        std::size_t best = (p * h + oh * kernel) * w + ow * kernel;
        // Window scanned in increasing flat index; strict '>' keeps the first max.
        for (std::size_t kh = 0; kh < kernel; ++kh)
          for (std::size_t kw = 0; kw < kernel; ++kw) {
            const std::size_t f = (p * h + oh * kernel + kh) * w + ow * kernel + kw;
            if (v[f] > v[best]) best = f;
          }
        (*index)[(p * ho + oh) * wo + ow] = static_cast<std::uint32_t>(best);
      }
  return Gather(x, std::move(index), {s[0], s[1], ho, wo});
}

Var Gather(Var a, Index index, Shape out_shape) {
  Attrs at = WithShape(std::move(out_shape));
  at.index = std::move(index);
  return TapeOf(a).Record(Op::kGather, {a}, std::move(at));
}

Var ScatterAdd(Var a, Index index, Shape out_shape) {
  Attrs at = WithShape(std::move(out_shape));
  at.index = std::move(index);
  return TapeOf(a).Record(Op::kScatterAdd, {a}, std::move(at));
}

Var Dot(Var a, Var b) { return Sum(Mul(a, b)); }

// ---- helpers ----------------------------------------------------------------

Tensor SliceBatch(const Tensor& t, std::size_t begin, std::size_t end) {
  if (t.rank() == 0 || begin >= end || end > t.dim(0)) {
    throw ShapeError("SliceBatch: bad range for " + ShapeString(t.shape()));
  }
  const std::size_t row = t.size() / t.dim(0);
  Shape shape = t.shape();
  shape[0] = end - begin;
  std::vector<float> data(t.vec().begin() + begin * row, t.vec().begin() + end * row);
  return Tensor(std::move(shape), std::move(data));
}

std::vector<std::vector<Tensor>> PerSampleGrad(const BatchLoss& loss,
                                               std::span<const Tensor> params,
                                               const Tensor& inputs, const Tensor& labels) {
  if (!loss.decomposable) {
    throw InvalidArgument("PerSampleGrad: loss is not a mean of independent per-sample losses");
  }
  if (inputs.rank() == 0 || inputs.dim(0) == 0) throw ShapeError("PerSampleGrad: empty batch");
  const std::size_t batch = inputs.dim(0);
  if (labels.rank() == 0 || labels.dim(0) != batch) {
    throw ShapeError("PerSampleGrad: labels do not match batch size");
  }
  std::vector<std::vector<Tensor>> out;
  out.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const Tensor& p : params) vars.push_back(tape.Leaf(p));
    Var l = loss.fn(tape, vars, SliceBatch(inputs, i, i + 1), SliceBatch(labels, i, i + 1));
    out.push_back(tape.GradValues(l, vars));
  }
  return out;
}

Tensor FiniteDifference(const std::function<double(std::span<const double>)>& f,
                        std::span<const double> point, const Shape& shape, double h) {
  if (!(h > 0.0)) throw InvalidArgument("FiniteDifference: h must be positive");
  if (NumElements(shape) != point.size()) throw ShapeError("FiniteDifference: shape mismatch");
  std::vector<double> x(point.begin(), point.end());
  Tensor out(shape);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double fp = f(x);
    x[i] = saved - h;
    const double fm = f(x);
    x[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("FiniteDifference: non-finite evaluation at coordinate " +
                         std::to_string(i));
    }
    out[i] = static_cast<float>((fp - fm) / (2.0 * h));
  }
  return out;
}

}  // namespace fedleak::ad
