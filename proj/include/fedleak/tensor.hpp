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

#ifndef FEDLEAK_TENSOR_HPP_
#define FEDLEAK_TENSOR_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace fedleak {

using Shape = std::vector<std::size_t>;

std::size_t NumElements(const Shape& shape);
std::string ShapeString(const Shape& shape);

// Dense row-major float32 array. Plain value type; the autodiff tape keeps
// its own node handles (see autodiff.hpp).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor Scalar(float v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::vector<float>& vec() { return data_; }
  const std::vector<float>& vec() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // Same data, new shape. Throws ShapeError when element counts differ.
  Tensor Reshaped(Shape shape) const;

  bool AllFinite() const;
  double SquaredNorm() const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

// FTN1 binary format: "FTN1", u8 rank, rank x u32 LE dims, f32 LE payload.
void WriteFtn1(std::ostream& out, const Tensor& t);
Tensor ReadFtn1(std::istream& in);
void SaveFtn1(const std::filesystem::path& path, const Tensor& t);
Tensor LoadFtn1(const std::filesystem::path& path);

}  // namespace fedleak

#endif  // FEDLEAK_TENSOR_HPP_
