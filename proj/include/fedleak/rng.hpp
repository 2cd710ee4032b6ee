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

#ifndef FEDLEAK_RNG_HPP_
#define FEDLEAK_RNG_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace fedleak {

// Counter-based random stream keyed by (seed, label). Two streams with the
// same key produce the same sequence no matter how calls to other streams
// interleave, so components can be seeded independently of thread schedule.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string label);

  // Child stream keyed by (seed, label + "/" + child).
  RngStream Derive(const std::string& child) const;

  std::uint64_t NextU64();
  // Uniform in [0, 1) with 53 random bits.
  double Uniform();
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }
  // Standard normal via Box-Muller.
  double Normal();
  bool Bernoulli(double p) { return Uniform() < p; }
  // Uniform integer in [0, n).
  std::uint64_t Below(std::uint64_t n);

  // Fisher-Yates permutation of [0, n).
  std::vector<std::size_t> Permutation(std::size_t n);

  std::uint64_t seed() const { return seed_; }
  const std::string& label() const { return label_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::string label_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fedleak

#endif  // FEDLEAK_RNG_HPP_
