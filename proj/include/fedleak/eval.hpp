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

#ifndef FEDLEAK_EVAL_HPP_
#define FEDLEAK_EVAL_HPP_

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "fedleak/data.hpp"
#include "fedleak/fed.hpp"
#include "fedleak/metrics.hpp"
#include "fedleak/models.hpp"
#include "json.hpp"

namespace fedleak::eval {

enum class ProbeTask { kBinaryAuc, kScalarMae };

struct ProbeConfig {
  ModelSpec spec;
  std::size_t epochs = 10;
  std::size_t batch_size = 10;
  float lr = 1e-2f;
};

struct ProbeReport {
  ProbeTask task = ProbeTask::kBinaryAuc;
  double score_original = 0.0;
  double score_reconstruction = 0.0;
  std::size_t samples = 0;
};

// Trains a probe on `train` originals to predict one attribute, then scores
// it on originals and reconstructions at the same indices. Reconstructions
// are [S,S] images; `attributes` are the true attributes of the originals.
struct TrainedProbe {
  ProbeTask task;
  ParamSet model;
};
TrainedProbe TrainProbe(const data::Dataset& train, ProbeTask task, const ProbeConfig& cfg,
                        RngStream& rng);
double ProbeScore(const TrainedProbe& probe, const std::vector<Tensor>& images,
                  const std::vector<data::Attributes>& attributes);
ProbeReport AttributeProbe(const data::Dataset& train, const std::vector<Tensor>& originals,
                           const std::vector<Tensor>& reconstructions,
                           const std::vector<data::Attributes>& attributes, ProbeTask task,
                           const ProbeConfig& cfg, RngStream& rng);

nlohmann::json ProbeReportToJson(const ProbeReport& r);
std::string ToString(ProbeTask t);

struct NormSummaryRow {
  std::size_t round = 0;
  std::vector<double> layer_means;  // mean over participating clients of layer medians
  double overall = 0.0;             // mean over layers
};

std::vector<NormSummaryRow> NormSummary(const std::vector<fed::RoundReport>& reports);

struct MetricRow {
  std::string experiment;
  std::string metric;
  std::string reduction;
  double value = 0.0;
};

void WriteMetricCsv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);
std::vector<MetricRow> ReadMetricCsv(const std::filesystem::path& path);

}  // namespace fedleak::eval

#endif  // FEDLEAK_EVAL_HPP_
