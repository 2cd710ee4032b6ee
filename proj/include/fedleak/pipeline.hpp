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

#ifndef FEDLEAK_PIPELINE_HPP_
#define FEDLEAK_PIPELINE_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedleak/attack.hpp"
#include "fedleak/config.hpp"
#include "fedleak/data.hpp"
#include "fedleak/eval.hpp"
#include "fedleak/fed.hpp"

// Config-driven experiment commands shared by the fedleak tool and the
// acceptance suite. Every command reads and writes one run directory and
// refreshes its manifest.json.
namespace fedleak::pipeline {

struct DataSection {
  std::string source = "synthetic";  // synthetic | import
  std::size_t images = 2000;
  std::size_t side = 16;
  double balance = 0.5;
  std::string import_dir;
  std::string import_labels;
  data::ClientSchedule schedule;
};

struct DpSection {
  bool enabled = false;
  double target_epsilon = 10.0;
  std::optional<double> sigma;
  std::optional<double> clip;  // estimated from auxiliary images when absent
  std::vector<double> clip_per_layer;
  std::size_t clip_aux_images = 600;
  std::vector<double> account_targets = {1, 3, 6, 10};
};

struct AttackSection {
  std::vector<std::size_t> clients;
  std::size_t round = 5;
  attack::AttackConfig cfg;
};

struct EvalSection {
  bool probe = false;
  eval::ProbeTask probe_task = eval::ProbeTask::kBinaryAuc;
  std::size_t probe_train_images = 600;
  std::size_t probe_epochs = 10;
  std::size_t baseline_draws = 100;
};

struct ExperimentConfig {
  std::string name = "run";
  std::uint64_t seed = 0;
  DataSection data;
  ModelSpec model;
  fed::TrainConfig train;
  std::vector<std::size_t> attackable;
  std::vector<std::size_t> snapshot_rounds;  // empty = every round
  DpSection dp;
  bool has_dp_section = false;
  AttackSection attack;
  EvalSection eval;
  std::vector<std::string> report_runs;
  std::string hash;

  static ExperimentConfig FromConfig(config::Config cfg,
                                     std::optional<std::uint64_t> seed_override = std::nullopt);
  static ExperimentConfig FromFile(const std::filesystem::path& path,
                                   std::optional<std::uint64_t> seed_override = std::nullopt);
};

// "default", "large", "small", "tiny" or comma-separated "COUNTxIMAGES:SOURCE".
data::ClientSchedule ParseSchedule(const std::vector<std::string>& items);

void CmdPartition(const ExperimentConfig& cfg, const std::filesystem::path& out);
void CmdTrain(const ExperimentConfig& cfg, const std::filesystem::path& out);
void CmdAttack(const ExperimentConfig& cfg, const std::filesystem::path& out);
void CmdAccount(const ExperimentConfig& cfg, const std::filesystem::path& out);
void CmdEvaluate(const ExperimentConfig& cfg, const std::filesystem::path& out);
void CmdReport(const ExperimentConfig& cfg, const std::filesystem::path& out);

// Runs one named command.
void RunCommand(const std::string& command, const ExperimentConfig& cfg,
                const std::filesystem::path& out);

// Relative directory of an attack target inside a run directory.
std::filesystem::path AttackDir(std::size_t client_id, std::size_t round);

}  // namespace fedleak::pipeline

#endif  // FEDLEAK_PIPELINE_HPP_
