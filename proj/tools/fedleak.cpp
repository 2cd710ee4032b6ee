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

// fedleak: config-driven federated training, gradient-inversion attacks
// and privacy accounting.
//
// Exit codes: 0 success, 1 usage or config error, 2 runtime error.

#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "fedleak/error.hpp"
#include "fedleak/pipeline.hpp"

namespace {

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

bool ValidThreadsEnv() {
  const char* env = std::getenv("FEDLEAK_THREADS");
  if (env == nullptr) return true;
  const std::string s(env);
  return !s.empty() && s.find_first_not_of("0123456789") == std::string::npos && std::atoi(env) > 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedleak: federated learning leakage experiments"};
  app.require_subcommand(1);
  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  const char* const commands[][2] = {
      {"partition", "Split the dataset into clients and write partition.json"},
      {"train", "Run federated training; writes rounds, models, snapshots, ledgers"},
      {"attack", "Reconstruct client images from stored update snapshots"},
      {"account", "Tabulate calibrated noise and privacy per client and target epsilon"},
      {"evaluate", "Random baselines and attribute probes on reconstructions"},
      {"report", "Merge run metrics into comparison tables"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "Experiment config file")->required();
    sub->add_option("--out", out_dir, "Run directory")->required();
    sub->add_option("--seed", seed, "Override the master seed");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kUsageError;
  }
  if (!ValidThreadsEnv()) {
    std::cerr << "error: FEDLEAK_THREADS must be a positive integer\n";
    return kUsageError;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  const bool seed_given = app.get_subcommands().front()->count("--seed") > 0;
  try {
    const auto cfg = fedleak::pipeline::ExperimentConfig::FromFile(
        config_path, seed_given ? std::optional<std::uint64_t>(seed) : std::nullopt);
    fedleak::pipeline::RunCommand(command, cfg, out_dir);
  } catch (const fedleak::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return 0;
}
