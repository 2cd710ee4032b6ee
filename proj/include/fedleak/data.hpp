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

#ifndef FEDLEAK_DATA_HPP_
#define FEDLEAK_DATA_HPP_

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedleak/rng.hpp"
#include "fedleak/tensor.hpp"
#include "json.hpp"

namespace fedleak::data {

struct Attributes {
  int binary = 0;       // stand-in for a two-valued demographic attribute
  float scalar = 0.0f;  // stand-in for a continuous one, in [0,1]
};

struct LabeledImage {
  Tensor image;  // [S,S], pixels in [0,1]
  int label = 0;
  std::optional<Attributes> attributes;
};

using Dataset = std::vector<LabeledImage>;

Dataset GenerateSynthetic(std::size_t n, std::size_t side, double class_balance, RngStream& rng);

struct SplitSizes {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
  friend bool operator==(const SplitSizes&, const SplitSizes&) = default;
};

SplitSizes SplitSizesFor(std::size_t n);

struct ClientSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

// Splits an ordered list of image indices: leading entries go to train, then
// val, then test.
ClientSplit SplitClient(std::span<const std::size_t> indices);

struct ScheduleEntry {
  std::size_t count = 0;
  std::size_t images = 0;
  std::string source;
};

using ClientSchedule = std::vector<ScheduleEntry>;

ClientSchedule LargeSourceSchedule(std::size_t images_per_client = 270);
ClientSchedule SmallSourceSchedule();
ClientSchedule TinySourceSchedule();
// Large, small and tiny sources together: 36 clients.
ClientSchedule DefaultSchedule();

std::size_t ScheduleClients(const ClientSchedule& schedule);
std::size_t ScheduleImages(const ClientSchedule& schedule);

struct ClientPartition {
  std::size_t id = 0;
  std::string source;
  ClientSplit split;

  std::size_t size() const { return split.train.size() + split.val.size() + split.test.size(); }
};

// Draws images without replacement in schedule order. Client ids are 0-based
// in schedule order.
std::vector<ClientPartition> Partition(std::size_t dataset_size, const ClientSchedule& schedule,
                                       RngStream& rng);

nlohmann::json PartitionToJson(const std::vector<ClientPartition>& clients,
                               std::size_t dataset_size);
std::vector<ClientPartition> PartitionFromJson(const nlohmann::json& j);

// [N,1,S,S] pixels and [N] labels for the given indices.
struct Batch {
  Tensor pixels;
  Tensor labels;
};
Batch Gather(const Dataset& data, std::span<const std::size_t> indices);

// ---- PGM P5 and labels CSV --------------------------------------------------

void WritePgm(const std::filesystem::path& path, const Tensor& image);
Tensor ReadPgm(const std::filesystem::path& path);

// Writes one PGM per image plus labels.csv (filename,label[,attr_binary,attr_scalar]).
void ExportGrayscaleDir(const Dataset& data, const std::filesystem::path& dir);
Dataset ImportGrayscaleDir(const std::filesystem::path& dir, const std::filesystem::path& labels_csv);

}  // namespace fedleak::data

#endif  // FEDLEAK_DATA_HPP_
