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

#ifndef FEDLEAK_FED_HPP_
#define FEDLEAK_FED_HPP_

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fedleak/data.hpp"
#include "fedleak/dp.hpp"
#include "fedleak/models.hpp"
#include "fedleak/rng.hpp"

namespace fedleak::fed {

struct DpTraining {
  // Per-client sigma is calibrated to this target unless `sigma` is given.
  double target_epsilon = 10.0;
  std::optional<double> sigma;
  dp::ClipBound clip;
  dp::AlphaGrid grid;
};

struct SubsampleConfig {
  double fraction = 1.0;
  std::size_t per_client_round_cap = 0;  // 0 = uncapped
};

struct TrainConfig {
  std::size_t max_rounds = 20;
  std::size_t local_epochs = 1;
  std::size_t batch_size = 10;
  float lr = 1e-2f;
  float lr_plateau_factor = 0.1f;
  std::size_t lr_patience = 3;
  std::size_t early_stop_patience = 5;
  FreezeMode freeze_mode = FreezeMode::kBatchNorm;
  std::optional<DpTraining> dp;
  std::optional<SubsampleConfig> subsample;
  LossKind loss = LossKind::kBce;

  // max_rounds defaults to 10 when dp is set.
  static TrainConfig Defaults(bool with_dp);
  void Validate() const;
};

struct ClientData {
  std::size_t id = 0;
  data::Batch train;
  std::optional<data::Batch> val;
};

// Builds per-client tensors from a partition.
std::vector<ClientData> MaterializeClients(const data::Dataset& dataset,
                                           const std::vector<data::ClientPartition>& partition);

struct LocalResult {
  ParamSet params;
  std::size_t steps = 0;
  std::size_t batch_size = 0;
  float lr = 0.0f;
  // Per trainable tensor: gradient l2 norm at every step (before any
  // clipping or noise).
  std::vector<std::vector<double>> layer_norms;
};

struct DpState {
  double sigma = 0.0;
  dp::PrivacyLedger* ledger = nullptr;
};

LocalResult LocalTrain(const data::Batch& train, const ParamSet& global, const TrainConfig& cfg,
                       float lr, RngStream& rng, const DpState* dp_state = nullptr);

// Weighted mean with weights n_k / sum(n). Also averages batch-norm running
// statistics. Sums in the given (ascending client id) order.
ParamSet Aggregate(const std::vector<std::pair<const ParamSet*, std::size_t>>& updates);

// round(fraction * n) clients, half-up, drawn uniformly among clients whose
// participation count is below the cap. Returned ids are ascending.
std::vector<std::size_t> ClientSubsample(std::size_t n_clients, const SubsampleConfig& cfg,
                                         const std::vector<std::size_t>& participation,
                                         RngStream& rng);

struct ClientRound {
  std::size_t client_id = 0;
  std::size_t n_train = 0;
  bool participated = false;
  std::optional<double> val_auc;            // global model after aggregation
  std::vector<double> median_layer_norms;  // empty when not participating
};

struct RoundReport {
  std::size_t round = 0;  // 1-based
  double lr = 0.0;
  std::optional<double> mean_val_auc;
  std::vector<std::size_t> selected;
  std::vector<ClientRound> clients;  // every client, ascending id
};

struct ClientPrivacy {
  std::size_t client_id = 0;
  std::size_t n_train = 0;
  double sigma = 0.0;
  double sample_rate = 0.0;
  double delta = 0.0;
  std::size_t planned_steps = 0;
  dp::PrivacyLedger ledger;
};

struct FederationHistory {
  std::vector<RoundReport> reports;
  ParamSet best;
  std::size_t best_round = 0;
  ParamSet final_model;
  std::vector<std::string> layer_names;  // trainable tensors, for norm columns
  std::vector<ClientPrivacy> privacy;    // filled when dp is set
};

// Called after local training of a client in a round with the global model
// the client started from and its returned local model.
using SnapshotHook = std::function<void(std::size_t round, std::size_t client_id,
                                        const ParamSet& before, const LocalResult& after)>;

FederationHistory RunFederation(const std::vector<ClientData>& clients, const ParamSet& init,
                                const TrainConfig& cfg, const RngStream& seeds,
                                const SnapshotHook& on_local = nullptr);

// Validation AUC of a model on a batch, if both classes are present.
std::optional<double> ValidationAuc(const ParamSet& params, const data::Batch& val);

// Scores sigmoid(logit) for every image of a batch, fixed statistics.
std::vector<double> PredictScores(const ParamSet& params, const Tensor& pixels);

void WriteRoundCsv(const std::filesystem::path& path, const FederationHistory& history);

}  // namespace fedleak::fed

#endif  // FEDLEAK_FED_HPP_
