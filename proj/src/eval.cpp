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

#include "fedleak/eval.hpp"

#include <fstream>
#include <sstream>

#include "fedleak/error.hpp"

namespace fedleak::eval {
namespace {

Tensor StackImages(const std::vector<Tensor>& images) {
  if (images.empty()) throw InvalidArgument("probe: no images");
  const std::size_t h = images[0].dim(0), w = images[0].dim(1);
  Tensor out({images.size(), 1, h, w});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != images[0].shape()) throw ShapeError("probe: mixed image sizes");
    std::copy(images[i].data().begin(), images[i].data().end(), out.vec().begin() + i * h * w);
  }
  return out;
}

}  // namespace

std::string ToString(ProbeTask t) { return t == ProbeTask::kBinaryAuc ? "attr_binary" : "attr_scalar"; }

TrainedProbe TrainProbe(const data::Dataset& train, ProbeTask task, const ProbeConfig& cfg,
                        RngStream& rng) {
  if (train.empty()) throw InvalidArgument("probe: empty training set");
  std::vector<Tensor> images;
  Tensor targets({train.size()});
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (!train[i].attributes) throw InvalidArgument("probe: training image without attributes");
    images.push_back(train[i].image);
    targets[i] = task == ProbeTask::kBinaryAuc ? static_cast<float>(train[i].attributes->binary)
                                               : train[i].attributes->scalar;
  }
  RngStream init_rng = rng.Derive("init");
  TrainedProbe probe{task, ApplyFreeze(BuildModel(cfg.spec, init_rng), FreezeMode::kNone)};
  fed::TrainConfig tc;
  tc.batch_size = cfg.batch_size;
  tc.freeze_mode = FreezeMode::kNone;
  tc.loss = task == ProbeTask::kBinaryAuc ? LossKind::kBce : LossKind::kSigmoidMse;
  const data::Batch batch{StackImages(images), targets};
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    RngStream epoch_rng = rng.Derive("epoch" + std::to_string(e));
    probe.model = fed::LocalTrain(batch, probe.model, tc, cfg.lr, epoch_rng).params;
  }
  return probe;
}

double ProbeScore(const TrainedProbe& probe, const std::vector<Tensor>& images,
                  const std::vector<data::Attributes>& attributes) {
  if (images.size() != attributes.size()) throw InvalidArgument("probe: attribute count mismatch");
  const auto scores = fed::PredictScores(probe.model, StackImages(images));
  if (probe.task == ProbeTask::kBinaryAuc) {
    std::vector<int> labels;
    for (const auto& a : attributes) labels.push_back(a.binary);
    return Auc(scores, labels);
  }
  std::vector<double> truth;
  for (const auto& a : attributes) truth.push_back(a.scalar);
  return MeanAbsoluteError(scores, truth);
}

ProbeReport AttributeProbe(const data::Dataset& train, const std::vector<Tensor>& originals,
                           const std::vector<Tensor>& reconstructions,
                           const std::vector<data::Attributes>& attributes, ProbeTask task,
                           const ProbeConfig& cfg, RngStream& rng) {
  if (originals.size() != reconstructions.size()) {
    throw InvalidArgument("probe: originals and reconstructions differ in count");
  }
  const TrainedProbe probe = TrainProbe(train, task, cfg, rng);
  return {task, ProbeScore(probe, originals, attributes),
          ProbeScore(probe, reconstructions, attributes), originals.size()};
}

nlohmann::json ProbeReportToJson(const ProbeReport& r) {
  return {{"task", ToString(r.task)},
          {"metric", r.task == ProbeTask::kBinaryAuc ? "auc" : "mae"},
          {"score_original", r.score_original},
          {"score_reconstruction", r.score_reconstruction},
          {"samples", r.samples}};
}

std::vector<NormSummaryRow> NormSummary(const std::vector<fed::RoundReport>& reports) {
  std::vector<NormSummaryRow> out;
  for (const auto& r : reports) {
    NormSummaryRow row;
    row.round = r.round;
    std::size_t clients = 0;
    for (const auto& c : r.clients) {
      if (!c.participated || c.median_layer_norms.empty()) continue;
      if (row.layer_means.empty()) row.layer_means.assign(c.median_layer_norms.size(), 0.0);
      for (std::size_t k = 0; k < row.layer_means.size(); ++k) {
        row.layer_means[k] += c.median_layer_norms.at(k);
      }
      ++clients;
    }
    for (double& v : row.layer_means) v /= static_cast<double>(clients);
    for (double v : row.layer_means) row.overall += v;
    if (!row.layer_means.empty()) row.overall /= static_cast<double>(row.layer_means.size());
    out.push_back(std::move(row));
  }
  return out;
}

void WriteMetricCsv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "experiment,metric,reduction,value\n";
  char buf[32];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.value);
    out << r.experiment << ',' << r.metric << ',' << r.reduction << ',' << buf << '\n';
  }
}

std::vector<MetricRow> ReadMetricCsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    MetricRow r;
    std::string value;
    std::getline(ss, r.experiment, ',');
    std::getline(ss, r.metric, ',');
    std::getline(ss, r.reduction, ',');
    std::getline(ss, value, ',');
    try {
      r.value = std::stod(value);
    } catch (const std::exception&) {
      throw IoError("bad metric value in " + path.string() + ": " + line);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace fedleak::eval
