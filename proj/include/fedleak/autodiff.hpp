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

#ifndef FEDLEAK_AUTODIFF_HPP_
#define FEDLEAK_AUTODIFF_HPP_

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "fedleak/kernels.hpp"
#include "fedleak/tensor.hpp"

// Tape-based reverse-mode differentiation.
//
// Every primitive's backward rule is written in terms of other primitives.
// With a higher-order tape those backward primitives are recorded like any
// forward op, so gradients are themselves differentiable (double backprop).
// The gradient-matching attack depends on this: its loss is a function of
// parameter gradients and is differentiated again with respect to the input.

namespace fedleak::ad {

enum class Op : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kMulConst,  // x * c, c a saved constant tensor (masks, signs)
  kAffine,    // scale * x + shift, scalar constants
  kPow,
  kSigmoid,
  kSoftplus,
  kRelu,
  kAbs,
  kSum,           // all elements -> [1]
  kExpandScalar,  // [1] -> shape
  kExpandAxis,    // [d] -> shape, broadcast along every axis but `axis`
  kReduceAxis,    // shape -> [d], sum over every axis but `axis`
  kReshape,
  kTranspose,  // rank-2
  kMatmul,
  kConv2d,
  kConv2dInputGrad,
  kConv2dWeightGrad,
  kAvgPool,
  kAvgPoolGrad,
  kGather,
  kScatterAdd,
};

std::string_view OpName(Op op);

// Per-node constant attributes. Shared so that replay and backward rules can
// reuse them without copies.
struct Attrs {
  float scale = 1.0f;
  float shift = 0.0f;
  std::size_t axis = 0;
  Shape shape;
  kernels::ConvGeometry conv;
  kernels::PoolGeometry pool;
  std::shared_ptr<const std::vector<std::uint32_t>> index;
  std::shared_ptr<const Tensor> constant;
};

class Tape;

// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr && id_ >= 0; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  // A higher-order tape records the backward pass so Grad() results can be
  // differentiated again.
  explicit Tape(bool higher_order = false) : higher_order_(higher_order) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var Leaf(Tensor value);
  Var Constant(Tensor value);

  // Reverse-mode gradients of `scalar` (shape [1]) with respect to `wrt`.
  // Nodes in `wrt` that do not influence `scalar` get zero gradients.
  std::vector<Var> Grad(Var scalar, std::span<const Var> wrt);
  std::vector<Tensor> GradValues(Var scalar, std::span<const Var> wrt);

  bool higher_order() const { return higher_order_; }
  std::size_t size() const { return nodes_.size(); }

  // Re-executes every recorded primitive from its inputs and reports whether
  // all outputs match the recorded values bitwise.
  bool Replay() const;

  // Internal: used by the primitive functions.
  Var Record(Op op, std::initializer_list<Var> inputs, Attrs attrs);
  const Tensor& value(int id) const { return nodes_.at(id).value; }
  bool requires_grad(int id) const { return nodes_.at(id).requires_grad; }

 private:
  struct Node {
    Op op = Op::kLeaf;
    int in0 = -1;
    int in1 = -1;
    bool requires_grad = false;
    Attrs attrs;
    Tensor value;
  };

  std::vector<Var> Backward(int id, Var gy);
  Var Adopt(Var v) const;

  bool higher_order_;
  // Recording is switched off while running a first-order backward pass, so
  // gradient nodes become plain constants.
  bool recording_ = true;
  // deque: references to existing nodes survive appends during backward.
  std::deque<Node> nodes_;
};

// ---- primitives -----------------------------------------------------------

Var Add(Var a, Var b);
Var Sub(Var a, Var b);
Var Mul(Var a, Var b);
Var MulConst(Var a, Tensor c);
Var Affine(Var a, float scale, float shift);
inline Var Scale(Var a, float s) { return Affine(a, s, 0.0f); }
inline Var Neg(Var a) { return Affine(a, -1.0f, 0.0f); }
Var Pow(Var a, float p);
Var Sigmoid(Var a);
Var Softplus(Var a);
Var Relu(Var a);
Var Abs(Var a);
Var Sum(Var a);
Var Mean(Var a);
Var ExpandScalar(Var a, Shape shape);
Var ExpandAxis(Var a, Shape shape, std::size_t axis);
Var ReduceAxis(Var a, std::size_t axis);
Var Reshape(Var a, Shape shape);
Var Transpose(Var a);
Var Matmul(Var a, Var b);
// x: [N,Ci,H,W], w: [Co,Ci,K,K]
Var Conv2d(Var x, Var w, std::size_t stride, std::size_t pad);
Var AvgPool2d(Var x, std::size_t kernel);
// Non-overlapping max pooling; ties go to the lowest flat index.
Var MaxPool2d(Var x, std::size_t kernel);
Var Gather(Var a, std::shared_ptr<const std::vector<std::uint32_t>> index, Shape out_shape);
Var ScatterAdd(Var a, std::shared_ptr<const std::vector<std::uint32_t>> index, Shape out_shape);

// Sum of elementwise products of two equally shaped nodes.
Var Dot(Var a, Var b);

// ---- higher-level helpers -------------------------------------------------

// Loss over a batch as a function of parameter nodes. `decomposable` asserts
// the loss is the mean of independent per-sample losses.
struct BatchLoss {
  std::function<Var(Tape& tape, std::span<const Var> params, const Tensor& inputs,
                    const Tensor& labels)>
      fn;
  bool decomposable = true;
};

// Gradient of the loss on each sample alone, by microbatch-of-one replay.
// Returns one gradient list (aligned with `params`) per sample.
std::vector<std::vector<Tensor>> PerSampleGrad(const BatchLoss& loss,
                                               std::span<const Tensor> params,
                                               const Tensor& inputs, const Tensor& labels);

// Rows [begin, end) of the leading dimension.
Tensor SliceBatch(const Tensor& t, std::size_t begin, std::size_t end);

// Central-difference gradient of a double-precision function. Test oracle.
Tensor FiniteDifference(const std::function<double(std::span<const double>)>& f,
                        std::span<const double> point, const Shape& shape, double h);

}  // namespace fedleak::ad

#endif  // FEDLEAK_AUTODIFF_HPP_
