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

#include "fedleak/tensor.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "fedleak/error.hpp"

namespace fedleak {
namespace {

static_assert(std::endian::native == std::endian::little,
              "FTN1 I/O assumes a little-endian host");

constexpr std::array<char, 4> kFtn1Magic = {'F', 'T', 'N', '1'};

template <typename T>
void WriteRaw(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T ReadRaw(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("FTN1: truncated stream");
  return v;
}

}  // namespace

std::size_t NumElements(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string ShapeString(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(NumElements(shape_), fill) {
  for (std::size_t d : shape_) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive: " + ShapeString(shape_));
  }
}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t d : shape_) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive: " + ShapeString(shape_));
  }
  if (data_.size() != NumElements(shape_)) {
    throw ShapeError("data length " + std::to_string(data_.size()) +
                     " does not match shape " + ShapeString(shape_));
  }
}

Tensor Tensor::Reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

bool Tensor::AllFinite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor::SquaredNorm() const {
  double s = 0.0;
  for (float v : data_) s += static_cast<double>(v) * v;
  return s;
}

void WriteFtn1(std::ostream& out, const Tensor& t) {
  if (t.rank() > 255) throw ShapeError("FTN1: rank exceeds 255");
  out.write(kFtn1Magic.data(), kFtn1Magic.size());
  WriteRaw<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) {
    if (d > 0xFFFFFFFFu) throw ShapeError("FTN1: dimension exceeds u32");
    WriteRaw<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  }
  out.write(reinterpret_cast<const char*>(t.data().data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!out) throw IoError("FTN1: write failed");
}

Tensor ReadFtn1(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kFtn1Magic) throw IoError("FTN1: bad magic");
  const auto rank = ReadRaw<std::uint8_t>(in);
  Shape shape(rank);
  for (auto& d : shape) d = ReadRaw<std::uint32_t>(in);
  std::vector<float> data(NumElements(shape));
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!in) throw IoError("FTN1: truncated payload");
  return Tensor(std::move(shape), std::move(data));
}

void SaveFtn1(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  WriteFtn1(out, t);
}

Tensor LoadFtn1(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return ReadFtn1(in);
}

}  // namespace fedleak
