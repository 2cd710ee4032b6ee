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

#include "fedleak/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "fedleak/error.hpp"
#include "fedleak/hash.hpp"
#include "fedleak/metrics.hpp"
#include "json.hpp"

namespace fedleak::pipeline {
namespace fs = std::filesystem;
using nlohmann::json;
using config::Type;

namespace {

constexpr const char* kVersion = "0.1.0";
const char* const kModules[] = {"tensor_autodiff", "models",  "datakit", "fedcore",
                                "dpcore",          "attackkit", "evalkit", "cli"};
// Component stream labels; each is RngStream(master seed, label).
const char* const kComponents[] = {"data", "partition", "model", "federation",
                                   "clip", "attack",    "baseline", "probe"};

const std::map<std::pair<std::string, std::string>, Type>& Schema() {
  static const std::map<std::pair<std::string, std::string>, Type> kSchema = {
      {{"run", "name"}, Type::kString},
      {{"seeds", "master"}, Type::kU64},
      {{"data", "source"}, Type::kString},
      {{"data", "images"}, Type::kInt},
      {{"data", "side"}, Type::kInt},
      {{"data", "balance"}, Type::kFloat},
      {{"data", "import_dir"}, Type::kString},
      {{"data", "import_labels"}, Type::kString},
      {{"data", "schedule"}, Type::kStringList},
      {{"model", "architecture"}, Type::kString},
      {{"model", "widths"}, Type::kIntList},
      {{"model", "freeze"}, Type::kString},
      {{"model", "input_mean"}, Type::kFloat},
      {{"model", "input_std"}, Type::kFloat},
      {{"train", "max_rounds"}, Type::kInt},
      {{"train", "local_epochs"}, Type::kInt},
      {{"train", "batch_size"}, Type::kInt},
      {{"train", "lr"}, Type::kFloat},
      {{"train", "lr_plateau_factor"}, Type::kFloat},
      {{"train", "lr_patience"}, Type::kInt},
      {{"train", "early_stop_patience"}, Type::kInt},
      {{"train", "subsample_fraction"}, Type::kFloat},
      {{"train", "subsample_cap"}, Type::kInt},
      {{"train", "attackable"}, Type::kIntList},
      {{"train", "snapshot_rounds"}, Type::kIntList},
      {{"dp", "enabled"}, Type::kBool},
      {{"dp", "target_epsilon"}, Type::kFloat},
      {{"dp", "sigma"}, Type::kFloat},
      {{"dp", "clip"}, Type::kFloat},
      {{"dp", "clip_per_layer"}, Type::kFloatList},
      {{"dp", "clip_aux_images"}, Type::kInt},
      {{"dp", "account_targets"}, Type::kFloatList},
      {{"attack", "clients"}, Type::kIntList},
      {{"attack", "round"}, Type::kInt},
      {{"attack", "max_steps"}, Type::kInt},
      {{"attack", "lr"}, Type::kFloat},
      {{"attack", "lr_drop"}, Type::kFloat},
      {{"attack", "tv_weight"}, Type::kFloat},
      {{"attack", "trials"}, Type::kInt},
      {{"attack", "mode"}, Type::kString},
      {{"attack", "trace_every"}, Type::kInt},
      {{"eval", "probe"}, Type::kBool},
      {{"eval", "probe_task"}, Type::kString},
      {{"eval", "probe_train_images"}, Type::kInt},
      {{"eval", "probe_epochs"}, Type::kInt},
      {{"eval", "baseline_draws"}, Type::kInt},
      {{"report", "runs"}, Type::kStringList},
  };
  return kSchema;
}

std::size_t Count(const config::Config& c, const std::string& s, const std::string& k,
                  std::size_t fallback) {
  const std::int64_t v = c.Int(s, k, static_cast<std::int64_t>(fallback));
  if (v < 0) throw ConfigError(s + "." + k + " must be non-negative");
  return static_cast<std::size_t>(v);
}

std::vector<std::size_t> Counts(const config::Config& c, const std::string& s,
                                const std::string& k) {
  std::vector<std::size_t> out;
  for (std::int64_t v : c.IntList(s, k, {})) {
    if (v < 0) throw ConfigError(s + "." + k + " entries must be non-negative");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::string Fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void WriteJson(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json ReadJson(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("missing " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("malformed " + path.string() + ": " + e.what());
  }
}

data::Dataset LoadDataset(const ExperimentConfig& cfg) {
  if (cfg.data.source == "import") {
    return data::ImportGrayscaleDir(cfg.data.import_dir, cfg.data.import_labels);
  }
  RngStream rng(cfg.seed, "data");
  return data::GenerateSynthetic(cfg.data.images, cfg.data.side, cfg.data.balance, rng);
}

std::vector<data::ClientPartition> LoadPartition(const fs::path& out) {
  const fs::path p = out / "partition.json";
  if (!fs::exists(p)) throw IoError("no partition manifest in " + out.string() + "; run partition");
  return data::PartitionFromJson(ReadJson(p));
}

// Dataset indices not assigned to any client, ascending.
std::vector<std::size_t> AuxIndices(std::size_t dataset_size,
                                    const std::vector<data::ClientPartition>& parts) {
  std::vector<char> used(dataset_size, 0);
  for (const auto& c : parts) {
    for (const auto* s : {&c.split.train, &c.split.val, &c.split.test}) {
      for (std::size_t i : *s) used.at(i) = 1;
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < dataset_size; ++i) {
    if (!used[i]) out.push_back(i);
  }
  return out;
}

const data::ClientPartition& FindClient(const std::vector<data::ClientPartition>& parts,
                                        std::size_t id) {
  for (const auto& c : parts) {
    if (c.id == id) return c;
  }
  throw InvalidArgument("unknown client id " + std::to_string(id));
}

ParamSet InitialModel(const ExperimentConfig& cfg) {
  RngStream rng(cfg.seed, "model");
  return ApplyFreeze(BuildModel(cfg.model, rng), cfg.train.freeze_mode);
}

void UpdateManifest(const ExperimentConfig& cfg, const fs::path& out, const std::string& command,
                    double seconds) {
  const fs::path path = out / "manifest.json";
  json m = fs::exists(path) ? ReadJson(path) : json::object();
  m["config_hash"] = cfg.hash;
  m["master_seed"] = cfg.seed;
  json seeds = json::object();
  for (const char* c : kComponents) seeds[c] = {{"seed", cfg.seed}, {"label", c}};
  m["component_seeds"] = seeds;
  json versions = json::object();
  for (const char* mod : kModules) versions[mod] = kVersion;
  m["module_versions"] = versions;
  if (!m.contains("commands")) m["commands"] = json::array();
  m["commands"].push_back(
      {{"command", command}, {"config_hash", cfg.hash}, {"wall_clock_seconds", seconds}});
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(out)) {
    if (e.is_regular_file() && e.path() != path) files.push_back(fs::relative(e.path(), out));
  }
  std::sort(files.begin(), files.end());
  json inventory = json::array();
  for (const auto& f : files) {
    inventory.push_back({{"path", f.generic_string()},
                         {"bytes", fs::file_size(out / f)},
                         {"sha256", Sha256File(out / f)}});
  }
  m["inventory"] = inventory;
  WriteJson(path, m);
}

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double Seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

std::vector<Tensor> ImagesAt(const data::Dataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<Tensor> out;
  for (std::size_t i : idx) out.push_back(ds.at(i).image);
  return out;
}

// Index of the output-layer bias among the trainable tensors, if trainable.
std::optional<std::size_t> OutputBias(const ParamSet& p) {
  const auto idx = p.TrainableIndices();
  for (std::size_t k = idx.size(); k-- > 0;) {
    const auto& e = p.entry(idx[k]);
    if (e.name.size() > 5 && e.name.compare(e.name.size() - 5, 5, ".bias") == 0 &&
        e.value.shape() == Shape{1}) {
      return k;
    }
  }
  return std::nullopt;
}

}  // namespace

data::ClientSchedule ParseSchedule(const std::vector<std::string>& items) {
  if (items.size() == 1) {
    if (items[0] == "default") return data::DefaultSchedule();
    if (items[0] == "large") return data::LargeSourceSchedule();
    if (items[0] == "small") return data::SmallSourceSchedule();
    if (items[0] == "tiny") return data::TinySourceSchedule();
  }
  data::ClientSchedule out;
  for (const std::string& item : items) {
    const auto x = item.find('x');
    const auto colon = item.find(':');
    if (x == std::string::npos || colon == std::string::npos || colon < x) {
      throw ConfigError("schedule entry '" + item + "' is not COUNTxIMAGES:SOURCE");
    }
    try {
      std::size_t used = 0;
      const std::string count = item.substr(0, x), images = item.substr(x + 1, colon - x - 1);
      const auto c = std::stoull(count, &used);
      if (used != count.size()) throw std::invalid_argument(count);
      const auto n = std::stoull(images, &used);
      if (used != images.size()) throw std::invalid_argument(images);
      out.push_back({c, n, item.substr(colon + 1)});
    } catch (const std::logic_error&) {
      throw ConfigError("schedule entry '" + item + "' is not COUNTxIMAGES:SOURCE");
    }
  }
  if (out.empty()) throw ConfigError("empty schedule");
  return out;
}

ExperimentConfig ExperimentConfig::FromConfig(config::Config c,
                                              std::optional<std::uint64_t> seed_override) {
  c.Validate(Schema());
  if (seed_override) c.Set("seeds", "master", Type::kU64, std::to_string(*seed_override));
  ExperimentConfig e;
  try {
    e.name = c.String("run", "name", "run");
    e.seed = c.U64("seeds", "master", 0);

    e.data.source = c.String("data", "source", "synthetic");
    if (e.data.source != "synthetic" && e.data.source != "import") {
      throw ConfigError("data.source must be synthetic or import");
    }
    e.data.images = Count(c, "data", "images", 2000);
    e.data.side = Count(c, "data", "side", 16);
    e.data.balance = c.Float("data", "balance", 0.5);
    e.data.import_dir = c.String("data", "import_dir", "");
    e.data.import_labels = c.String("data", "import_labels", "");
    if (e.data.source == "import" && (e.data.import_dir.empty() || e.data.import_labels.empty())) {
      throw ConfigError("data.source import needs data.import_dir and data.import_labels");
    }
    e.data.schedule = ParseSchedule(c.StringList("data", "schedule", {"default"}));

    e.model.architecture = ParseArchitecture(c.String("model", "architecture", "small_cnn"));
    e.model.side = e.data.side;
    if (c.Has("model", "widths")) e.model.widths = Counts(c, "model", "widths");
    e.model.input_mean = static_cast<float>(c.Float("model", "input_mean", e.model.input_mean));
    e.model.input_std = static_cast<float>(c.Float("model", "input_std", e.model.input_std));
    e.model.Validate();

    e.has_dp_section = false;
    for (const auto& [k, v] : c.entries()) e.has_dp_section |= k.first == "dp";
    e.dp.enabled = c.Bool("dp", "enabled", false);
    e.dp.target_epsilon = c.Float("dp", "target_epsilon", 10.0);
    if (c.Has("dp", "sigma")) e.dp.sigma = c.Float("dp", "sigma", 0.0);
    if (c.Has("dp", "clip")) e.dp.clip = c.Float("dp", "clip", 1.0);
    e.dp.clip_per_layer = c.FloatList("dp", "clip_per_layer", {});
    e.dp.clip_aux_images = Count(c, "dp", "clip_aux_images", 600);
    e.dp.account_targets = c.FloatList("dp", "account_targets", {1, 3, 6, 10});
    for (double t : e.dp.account_targets) {
      if (!(t > 0)) throw ConfigError("dp.account_targets must be positive");
    }

    fed::TrainConfig& t = e.train;
    t = fed::TrainConfig::Defaults(e.dp.enabled);
    t.max_rounds = Count(c, "train", "max_rounds", t.max_rounds);
    t.local_epochs = Count(c, "train", "local_epochs", t.local_epochs);
    t.batch_size = Count(c, "train", "batch_size", t.batch_size);
    t.lr = static_cast<float>(c.Float("train", "lr", t.lr));
    t.lr_plateau_factor = static_cast<float>(c.Float("train", "lr_plateau_factor", t.lr_plateau_factor));
    t.lr_patience = Count(c, "train", "lr_patience", t.lr_patience);
    t.early_stop_patience = Count(c, "train", "early_stop_patience", t.early_stop_patience);
    t.freeze_mode = ParseFreezeMode(c.String("model", "freeze", "batch_norm"));
    if (c.Has("train", "subsample_fraction") || c.Has("train", "subsample_cap")) {
      t.subsample = fed::SubsampleConfig{c.Float("train", "subsample_fraction", 1.0),
                                         Count(c, "train", "subsample_cap", 0)};
    }
    if (e.dp.enabled) {
      t.dp->target_epsilon = e.dp.target_epsilon;
      t.dp->sigma = e.dp.sigma;
      if (e.dp.sigma && *e.dp.sigma < 0) throw ConfigError("dp.sigma must be non-negative");
      if (e.dp.clip) t.dp->clip.global = *e.dp.clip;
      t.dp->clip.per_layer = e.dp.clip_per_layer;
    } else {
      t.dp.reset();
    }
    t.Validate();
    e.attackable = Counts(c, "train", "attackable");
    e.snapshot_rounds = Counts(c, "train", "snapshot_rounds");

    e.attack.clients = Counts(c, "attack", "clients");
    e.attack.round = Count(c, "attack", "round", 5);
    attack::AttackConfig& a = e.attack.cfg;
    a.max_steps = Count(c, "attack", "max_steps", a.max_steps);
    a.lr = c.Float("attack", "lr", a.lr);
    a.lr_drop = c.Float("attack", "lr_drop", a.lr_drop);
    a.tv_weight = c.Float("attack", "tv_weight", a.tv_weight);
    a.trials = Count(c, "attack", "trials", a.trials);
    a.mode = attack::ParseMatchMode(c.String("attack", "mode", attack::ToString(a.mode)));
    a.trace_every = Count(c, "attack", "trace_every", a.trace_every);
    a.Validate();

    e.eval.probe = c.Bool("eval", "probe", false);
    const std::string task = c.String("eval", "probe_task", "attr_binary");
    if (task == "attr_binary") {
      e.eval.probe_task = eval::ProbeTask::kBinaryAuc;
    } else if (task == "attr_scalar") {
      e.eval.probe_task = eval::ProbeTask::kScalarMae;
    } else {
      throw ConfigError("eval.probe_task must be attr_binary or attr_scalar");
    }
    e.eval.probe_train_images = Count(c, "eval", "probe_train_images", 600);
    e.eval.probe_epochs = Count(c, "eval", "probe_epochs", 10);
    e.eval.baseline_draws = Count(c, "eval", "baseline_draws", 100);
    if (e.eval.baseline_draws == 0) throw ConfigError("eval.baseline_draws must be positive");
    e.report_runs = c.StringList("report", "runs", {});
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& err) {
    throw ConfigError(err.what());
  }
  e.hash = c.Hash();
  return e;
}

ExperimentConfig ExperimentConfig::FromFile(const fs::path& path,
                                            std::optional<std::uint64_t> seed_override) {
  return FromConfig(config::Config::Load(path), seed_override);
}

fs::path AttackDir(std::size_t client_id, std::size_t round) {
  return fs::path("attack") / ("client_" + std::to_string(client_id) + "_round_" + std::to_string(round));
}

void CmdPartition(const ExperimentConfig& cfg, const fs::path& out) {
  Timer timer;
  fs::create_directories(out);
  const data::Dataset ds = LoadDataset(cfg);
  RngStream rng(cfg.seed, "partition");
  const auto parts = data::Partition(ds.size(), cfg.data.schedule, rng);
  json j = data::PartitionToJson(parts, ds.size());
  j["config_hash"] = cfg.hash;
  j["data_source"] = cfg.data.source;
  WriteJson(out / "partition.json", j);
  UpdateManifest(cfg, out, "partition", timer.Seconds());
}

void CmdTrain(const ExperimentConfig& cfg, const fs::path& out) {
  Timer timer;
  const auto parts = LoadPartition(out);
  const data::Dataset ds = LoadDataset(cfg);
  const auto clients = fed::MaterializeClients(ds, parts);
  const ParamSet init = InitialModel(cfg);
  fed::TrainConfig tc = cfg.train;

  std::string clip_source = "none";
  if (tc.dp) {
    if (cfg.dp.clip || !cfg.dp.clip_per_layer.empty()) {
      clip_source = "config";
    } else {
      auto aux = AuxIndices(ds.size(), parts);
      if (aux.empty()) throw InvalidArgument("clip estimation needs images outside the partition");
      aux.resize(std::min(aux.size(), cfg.dp.clip_aux_images));
      const data::Batch b = data::Gather(ds, aux);
      RngStream rng(cfg.seed, "clip");
      tc.dp->clip.global = dp::EstimateClipBound(init, b.pixels, b.labels, dp::ClipEstimateConfig{}, rng);
      clip_source = "estimated";
    }
  }

  const std::set<std::size_t> attackable(cfg.attackable.begin(), cfg.attackable.end());
  const std::set<std::size_t> rounds(cfg.snapshot_rounds.begin(), cfg.snapshot_rounds.end());
  auto hook = [&](std::size_t round, std::size_t id, const ParamSet& before,
                  const fed::LocalResult& after) {
    if (!attackable.count(id) || (!rounds.empty() && !rounds.count(round))) return;
    const fs::path dir = out / "snapshots" / ("round_" + std::to_string(round));
    if (!fs::exists(dir / "global" / "model.json")) before.Save(dir / "global");
    const fs::path cdir = dir / ("client_" + std::to_string(id));
    after.params.Save(cdir / "model");
    WriteJson(cdir / "update.json", {{"config_hash", cfg.hash},
                                     {"round", round},
                                     {"client_id", id},
                                     {"lr", after.lr},
                                     {"steps", after.steps},
                                     {"batch_size", after.batch_size},
                                     {"private", tc.dp.has_value()}});
  };
  const auto hist = fed::RunFederation(clients, init, tc, RngStream(cfg.seed, "federation"), hook);

  fed::WriteRoundCsv(out / "rounds.csv", hist);
  hist.best.Save(out / "best_model");
  hist.final_model.Save(out / "final_model");

  std::vector<eval::MetricRow> metrics;
  const auto norms = eval::NormSummary(hist.reports);
  {
    std::ofstream f(out / "norm_summary.csv");
    f << "round";
    for (const auto& n : hist.layer_names) f << ',' << n;
    f << ",overall\n";
    for (const auto& r : norms) {
      f << r.round;
      for (double v : r.layer_means) f << ',' << Fmt(v);
      f << ',' << Fmt(r.overall) << '\n';
      metrics.push_back({cfg.name, "grad_norm_overall", "round" + std::to_string(r.round), r.overall});
    }
  }
  json aucs = json::array();
  for (const auto& r : hist.reports) {
    aucs.push_back(r.mean_val_auc ? json(*r.mean_val_auc) : json(nullptr));
  }
  const auto& best_report = hist.reports.at(hist.best_round - 1);
  if (best_report.mean_val_auc) {
    metrics.push_back({cfg.name, "val_auc", "best_mean", *best_report.mean_val_auc});
  }
  if (hist.reports.back().mean_val_auc) {
    metrics.push_back({cfg.name, "val_auc", "final_mean", *hist.reports.back().mean_val_auc});
  }
  metrics.push_back({cfg.name, "rounds_run", "count", static_cast<double>(hist.reports.size())});

  json dpj = {{"enabled", tc.dp.has_value()}};
  if (tc.dp) {
    dpj["target_epsilon"] = tc.dp->target_epsilon;
    dpj["clip"] = tc.dp->clip.global;
    dpj["clip_per_layer"] = tc.dp->clip.per_layer;
    dpj["clip_source"] = clip_source;
    for (const auto& p : hist.privacy) {
      dp::DpConfig dc{tc.dp->target_epsilon, p.sigma, tc.dp->clip, p.sample_rate, p.delta};
      json lj = p.ledger.ToJson(p.delta, dc);
      lj["client_id"] = p.client_id;
      lj["n_train"] = p.n_train;
      lj["planned_steps"] = p.planned_steps;
      lj["config_hash"] = cfg.hash;
      WriteJson(out / "ledgers" / ("client_" + std::to_string(p.client_id) + ".json"), lj);
    }
  }
  WriteJson(out / "train.json", {{"config_hash", cfg.hash},
                                 {"name", cfg.name},
                                 {"freeze", ToString(tc.freeze_mode)},
                                 {"batch_size", tc.batch_size},
                                 {"dp", dpj},
                                 {"best_round", hist.best_round},
                                 {"rounds_run", hist.reports.size()},
                                 {"layer_names", hist.layer_names},
                                 {"mean_val_auc", aucs}});
  eval::WriteMetricCsv(out / "train_metrics.csv", metrics);
  UpdateManifest(cfg, out, "train", timer.Seconds());
}

void CmdAttack(const ExperimentConfig& cfg, const fs::path& out) {
  Timer timer;
  if (cfg.attack.clients.empty()) throw ConfigError("attack.clients is empty");
  const auto parts = LoadPartition(out);
  const data::Dataset ds = LoadDataset(cfg);
  std::vector<eval::MetricRow> metrics;
  for (std::size_t id : cfg.attack.clients) {
    const std::size_t round = cfg.attack.round;
    const fs::path snap = out / "snapshots" / ("round_" + std::to_string(round));
    const fs::path cdir = snap / ("client_" + std::to_string(id));
    if (!fs::exists(cdir / "update.json")) {
      throw IoError("missing snapshot for client " + std::to_string(id) + " round " +
                    std::to_string(round));
    }
    const json upd = ReadJson(cdir / "update.json");
    const ParamSet before = ParamSet::Load(snap / "global");
    const ParamSet after = ParamSet::Load(cdir / "model");
    const double lr = upd.at("lr").get<double>();
    const std::size_t steps = upd.at("steps").get<std::size_t>();
    const std::size_t batch = upd.at("batch_size").get<std::size_t>();
    const bool priv = upd.at("private").get<bool>();
    if (steps != 1) {
      throw InvalidArgument("client " + std::to_string(id) + " took " + std::to_string(steps) +
                            " local steps; only single-step updates are attacked");
    }
    const GradMap target = attack::InferUpdateGradient(before, after, lr);

    // Labels: analytic for a single sample, supplied otherwise.
    const auto& client = FindClient(parts, id);
    Tensor labels({batch});
    std::string label_source = "supplied";
    const auto bias = OutputBias(before);
    if (batch == 1 && bias) {
      labels[0] = static_cast<float>(attack::RecoverLabel(target[*bias]));
      label_source = "recovered";
    } else {
      for (std::size_t i = 0; i < batch; ++i) labels[i] = static_cast<float>(ds.at(client.split.train.at(i)).label);
    }
    const BnMode mode = priv ? BnMode::kFixedStats : before.BnModeFor(batch);
    const RngStream seeds = RngStream(cfg.seed, "attack")
                                .Derive("client" + std::to_string(id) + "/round" + std::to_string(round));
    const auto res = attack::RunAttack(target, before, labels, batch, mode, cfg.attack.cfg, seeds);

    // Evaluation against the client's true training images.
    const std::vector<Tensor> originals = ImagesAt(ds, client.split.train);
    const fs::path adir = out / AttackDir(id, round);
    fs::create_directories(adir);
    SaveFtn1(adir / "reconstruction.ftn", res.best_pixels);
    const auto best_images = attack::ClampedImages(res.best_pixels);
    for (std::size_t i = 0; i < best_images.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "recon_%03zu.pgm", i);
      data::WritePgm(adir / name, best_images[i]);
    }
    json trials = json::array();
    double all_sum = 0.0;
    eval::MatchAssignment best_match;
    for (std::size_t t = 0; t < res.trials.size(); ++t) {
      const auto& tr = res.trials[t];
      attack::WriteTraceCsv(adir / ("trial_" + std::to_string(t) + "_trace.csv"), tr);
      const auto imgs = attack::ClampedImages(DenormalizeInput(before.spec(), tr.dummy));
      const auto m = eval::GreedyMatch(originals, imgs);
      double mean = 0.0;
      for (double p : m.pair_psnr) mean += p;
      mean /= static_cast<double>(m.pair_psnr.size());
      all_sum += mean;
      if (t == res.best_trial) best_match = m;
      trials.push_back({{"trial", t},
                        {"final_loss", std::isfinite(tr.final_loss) ? json(tr.final_loss) : json(nullptr)},
                        {"aborted", tr.aborted},
                        {"mean_psnr", mean},
                        {"best", t == res.best_trial}});
    }
    json pairs = json::array();
    double best_mean = 0.0, best_image = -std::numeric_limits<double>::infinity();
    {
      std::ofstream f(adir / "psnr.csv");
      f << "reconstruction,original,dataset_index,psnr\n";
      for (std::size_t k = 0; k < best_match.order.size(); ++k) {
        const std::size_t r = best_match.order[k];
        const std::size_t o = best_match.original[r];
        const double p = best_match.pair_psnr[k];
        f << r << ',' << o << ',' << client.split.train[o] << ',' << Fmt(p) << '\n';
        pairs.push_back({{"reconstruction", r}, {"original", o},
                         {"dataset_index", client.split.train[o]}, {"psnr", p}});
        best_mean += p;
        best_image = std::max(best_image, p);
      }
    }
    best_mean /= static_cast<double>(best_match.order.size());
    std::vector<float> label_values(labels.data().begin(), labels.data().end());
    WriteJson(adir / "result.json", {{"config_hash", cfg.hash},
                                     {"client_id", id},
                                     {"round", round},
                                     {"batch", batch},
                                     {"labels", label_values},
                                     {"label_source", label_source},
                                     {"bn_mode", mode == BnMode::kFixedStats ? "fixed_stats" : "batch_stats"},
                                     {"match_mode", attack::ToString(cfg.attack.cfg.mode)},
                                     {"max_i", 1.0},
                                     {"best_trial", res.best_trial},
                                     {"trials", trials},
                                     {"pairs", pairs}});
    const std::string metric = "psnr/client" + std::to_string(id);
    metrics.push_back({cfg.name, metric, "best_trial_mean", best_mean});
    metrics.push_back({cfg.name, metric, "best_image", best_image});
    metrics.push_back({cfg.name, metric, "all_mean", all_sum / static_cast<double>(res.trials.size())});
    metrics.push_back({cfg.name, "batch/client" + std::to_string(id), "value", static_cast<double>(batch)});
  }
  eval::WriteMetricCsv(out / "attack_metrics.csv", metrics);
  UpdateManifest(cfg, out, "attack", timer.Seconds());
}

void CmdAccount(const ExperimentConfig& cfg, const fs::path& out) {
  Timer timer;
  if (!cfg.has_dp_section) throw ConfigError("account needs a [dp] section");
  const auto parts = LoadPartition(out);
  const fed::TrainConfig& tc = cfg.train;
  const std::size_t budget = tc.subsample && tc.subsample->per_client_round_cap > 0
                                 ? std::min(tc.max_rounds, tc.subsample->per_client_round_cap)
                                 : tc.max_rounds;
  const dp::AlphaGrid grid;
  std::ofstream f(out / "account.csv");
  if (!f) throw IoError("cannot write account.csv");
  f << "target_epsilon,client_id,n_train,sample_rate,steps,delta,sigma,alpha_star,epsilon\n";
  for (double target : cfg.dp.account_targets) {
    // Clients with equal (n, steps, q) share one calibration.
    std::map<std::size_t, std::pair<double, dp::EpsilonResult>> cache;
    for (const auto& c : parts) {
      const std::size_t n = c.split.train.size();
      const std::size_t b = std::min(tc.batch_size, n);
      const double q = static_cast<double>(b) / static_cast<double>(n);
      const std::size_t steps = budget * tc.local_epochs * ((n + b - 1) / b);
      const double delta = dp::DeltaForClient(n);
      auto it = cache.find(n);
      if (it == cache.end()) {
        const double sigma = dp::CalibrateSigma(target, delta, q, steps, grid);
        dp::PrivacyLedger ledger(grid);
        ledger.Advance(q, sigma, steps);
        it = cache.emplace(n, std::make_pair(sigma, dp::ToEpsilon(ledger, delta))).first;
      }
      const auto& [sigma, eps] = it->second;
      f << Fmt(target) << ',' << c.id << ',' << n << ',' << Fmt(q) << ',' << steps << ','
        << Fmt(delta) << ',' << Fmt(sigma) << ',' << Fmt(eps.alpha) << ',' << Fmt(eps.epsilon)
        << '\n';
    }
  }
  f.close();
  UpdateManifest(cfg, out, "account", timer.Seconds());
}

namespace {

struct AttackRecord {
  std::size_t client_id = 0;
  std::vector<std::size_t> dataset_index;  // per reconstruction, matched original
  std::vector<Tensor> reconstructions;
};

std::vector<AttackRecord> CollectAttacks(const fs::path& out) {
  std::vector<AttackRecord> recs;
  const fs::path root = out / "attack";
  if (!fs::exists(root)) return recs;
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && fs::exists(e.path() / "result.json")) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) {
    const json r = ReadJson(d / "result.json");
    AttackRecord rec;
    rec.client_id = r.at("client_id").get<std::size_t>();
    const auto images = attack::ClampedImages(LoadFtn1(d / "reconstruction.ftn"));
    for (const auto& p : r.at("pairs")) {
      rec.reconstructions.push_back(images.at(p.at("reconstruction").get<std::size_t>()));
      rec.dataset_index.push_back(p.at("dataset_index").get<std::size_t>());
    }
    recs.push_back(std::move(rec));
  }
  return recs;
}

}  // namespace

void CmdEvaluate(const ExperimentConfig& cfg, const fs::path& out) {
  Timer timer;
  const auto parts = LoadPartition(out);
  const data::Dataset ds = LoadDataset(cfg);
  const auto recs = CollectAttacks(out);
  if (recs.empty()) throw IoError("no attack results in " + out.string() + "; run attack");
  std::vector<eval::MetricRow> metrics;
  std::vector<Tensor> originals, recon;
  std::vector<data::Attributes> attrs;
  bool have_attrs = true;
  double baseline_sum = 0.0;
  const RngStream base(cfg.seed, "baseline");
  for (const auto& r : recs) {
    const auto orig = ImagesAt(ds, r.dataset_index);
    RngStream rng = base.Derive("client" + std::to_string(r.client_id));
    const double b = eval::RandomBaselinePsnr(orig, cfg.eval.baseline_draws, rng);
    metrics.push_back({cfg.name, "baseline_psnr/client" + std::to_string(r.client_id), "mean", b});
    baseline_sum += b;
    for (std::size_t i = 0; i < r.dataset_index.size(); ++i) {
      const auto& item = ds.at(r.dataset_index[i]);
      originals.push_back(item.image);
      recon.push_back(r.reconstructions[i]);
      if (item.attributes) {
        attrs.push_back(*item.attributes);
      } else {
        have_attrs = false;
      }
    }
  }
  metrics.push_back({cfg.name, "baseline_psnr", "mean", baseline_sum / static_cast<double>(recs.size())});

  // AUC is undefined when the attacked images carry one attribute value only.
  bool both_classes = false;
  for (const auto& a : attrs) both_classes |= a.binary != attrs.front().binary;
  if (cfg.eval.probe && cfg.eval.probe_task == eval::ProbeTask::kBinaryAuc && have_attrs &&
      !both_classes) {
    std::fprintf(stderr, "evaluate: probe skipped, attacked images have one attribute value\n");
    WriteJson(out / "probe.json", {{"skipped", "attacked images have one attribute value"},
                                   {"samples", originals.size()},
                                   {"config_hash", cfg.hash}});
  } else if (cfg.eval.probe) {
    if (!have_attrs) throw InvalidArgument("probe: evaluated images lack attributes");
    auto aux = AuxIndices(ds.size(), parts);
    aux.resize(std::min(aux.size(), cfg.eval.probe_train_images));
    if (aux.empty()) throw InvalidArgument("probe needs images outside the partition");
    data::Dataset train;
    for (std::size_t i : aux) train.push_back(ds[i]);
    eval::ProbeConfig pc;
    pc.spec = cfg.model;
    pc.epochs = cfg.eval.probe_epochs;
    RngStream prng(cfg.seed, "probe");
    const auto probe = eval::TrainProbe(train, cfg.eval.probe_task, pc, prng);
    RngStream nrng = prng.Derive("noise");
    const auto noise = eval::NoiseImages(originals.size(), originals[0].shape(), nrng);
    const eval::ProbeReport report{cfg.eval.probe_task, eval::ProbeScore(probe, originals, attrs),
                                   eval::ProbeScore(probe, recon, attrs), originals.size()};
    const double noise_score = eval::ProbeScore(probe, noise, attrs);
    json j = eval::ProbeReportToJson(report);
    j["score_noise"] = noise_score;
    j["probe_train_images"] = train.size();
    j["config_hash"] = cfg.hash;
    WriteJson(out / "probe.json", j);
    const std::string m = report.task == eval::ProbeTask::kBinaryAuc ? "probe_auc" : "probe_mae";
    metrics.push_back({cfg.name, m, "original", report.score_original});
    metrics.push_back({cfg.name, m, "reconstruction", report.score_reconstruction});
    metrics.push_back({cfg.name, m, "noise", noise_score});
  }
  eval::WriteMetricCsv(out / "evaluate_metrics.csv", metrics);
  UpdateManifest(cfg, out, "evaluate", timer.Seconds());
}

namespace {

struct RunSummary {
  std::string run;
  std::string freeze = "";
  std::string epsilon = "";
  std::map<std::string, double> metrics;  // "metric|reduction"
};

RunSummary Summarize(const fs::path& dir) {
  RunSummary s;
  s.run = dir.filename().string();
  if (fs::exists(dir / "train.json")) {
    const json t = ReadJson(dir / "train.json");
    s.run = t.value("name", s.run);
    s.freeze = t.at("freeze").get<std::string>();
    const json& d = t.at("dp");
    s.epsilon = d.at("enabled").get<bool>() ? Fmt(d.at("target_epsilon").get<double>()) : "none";
  }
  for (const char* f : {"train_metrics.csv", "attack_metrics.csv", "evaluate_metrics.csv"}) {
    if (!fs::exists(dir / f)) continue;
    for (const auto& r : eval::ReadMetricCsv(dir / f)) s.metrics[r.metric + "|" + r.reduction] = r.value;
  }
  return s;
}

std::optional<double> Get(const RunSummary& s, const std::string& key) {
  const auto it = s.metrics.find(key);
  if (it == s.metrics.end()) return std::nullopt;
  return it->second;
}

// Writes `key_name,<columns>` with one row per (run, client) that has any
// column; columns with no value anywhere are dropped.
void WriteTable(const fs::path& path, const std::vector<RunSummary>& runs,
                const std::string& key_name,
                const std::function<std::string(const RunSummary&)>& key, bool per_client,
                const std::vector<std::pair<std::string, std::string>>& columns) {
  struct Row {
    std::string run, key, client;
    std::vector<std::optional<double>> cells;
  };
  std::vector<Row> rows;
  for (const auto& s : runs) {
    std::vector<std::string> clients = {""};
    if (per_client) {
      clients.clear();
      for (const auto& [k, v] : s.metrics) {
        if (k.rfind("batch/client", 0) == 0) {
          clients.push_back(k.substr(12, k.find('|') - 12));
        }
      }
    }
    for (const auto& c : clients) {
      Row row{s.run, key(s), c, {}};
      bool any = false;
      for (const auto& [name, metric] : columns) {
        std::string m = metric;
        const auto at = m.find("{c}");
        if (at != std::string::npos) m.replace(at, 3, c);
        row.cells.push_back(Get(s, m));
        any |= row.cells.back().has_value();
      }
      if (any) rows.push_back(std::move(row));
    }
  }
  std::vector<bool> keep(columns.size(), false);
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < columns.size(); ++i) keep[i] = keep[i] || r.cells[i].has_value();
  }
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << "run," << key_name << (per_client ? ",client" : "");
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (keep[i]) f << ',' << columns[i].first;
  }
  f << '\n';
  for (const auto& r : rows) {
    f << r.run << ',' << r.key << (per_client ? "," + r.client : "");
    for (std::size_t i = 0; i < columns.size(); ++i) {
      if (!keep[i]) continue;
      f << ',';
      if (r.cells[i]) f << Fmt(*r.cells[i]);
    }
    f << '\n';
  }
}

}  // namespace

void CmdReport(const ExperimentConfig& cfg, const fs::path& out) {
  Timer timer;
  fs::create_directories(out);
  std::vector<fs::path> dirs;
  if (fs::exists(out / "train.json") || fs::exists(out / "attack_metrics.csv")) dirs.push_back(out);
  for (const auto& r : cfg.report_runs) dirs.emplace_back(r);
  if (dirs.empty()) throw IoError("report: no completed runs");
  std::vector<RunSummary> runs;
  for (const auto& d : dirs) runs.push_back(Summarize(d));

  const fs::path rep = out / "report";
  fs::create_directories(rep);
  auto freeze = [](const RunSummary& s) { return s.freeze; };
  auto epsilon = [](const RunSummary& s) { return s.epsilon; };
  const std::vector<std::pair<std::string, std::string>> auc = {
      {"val_auc_best", "val_auc|best_mean"}, {"val_auc_final", "val_auc|final_mean"}};
  const std::vector<std::pair<std::string, std::string>> psnr = {
      {"batch", "batch/client{c}|value"},
      {"psnr_best_trial_mean", "psnr/client{c}|best_trial_mean"},
      {"psnr_best_image", "psnr/client{c}|best_image"},
      {"psnr_all_mean", "psnr/client{c}|all_mean"},
      {"baseline_psnr", "baseline_psnr/client{c}|mean"}};
  WriteTable(rep / "freeze_auc.csv", runs, "freeze", freeze, false, auc);
  WriteTable(rep / "freeze_psnr.csv", runs, "freeze", freeze, true, psnr);
  WriteTable(rep / "batch_psnr.csv", runs, "freeze", freeze, true, psnr);
  WriteTable(rep / "epsilon_auc.csv", runs, "epsilon", epsilon, false, auc);
  WriteTable(rep / "epsilon_psnr.csv", runs, "epsilon", epsilon, true, psnr);
  WriteTable(rep / "probe.csv", runs, "epsilon", epsilon, false,
             {{"auc_original", "probe_auc|original"},
              {"auc_reconstruction", "probe_auc|reconstruction"},
              {"auc_noise", "probe_auc|noise"},
              {"mae_original", "probe_mae|original"},
              {"mae_reconstruction", "probe_mae|reconstruction"},
              {"mae_noise", "probe_mae|noise"}});
  UpdateManifest(cfg, out, "report", timer.Seconds());
}

void RunCommand(const std::string& command, const ExperimentConfig& cfg, const fs::path& out) {
  if (command == "partition") return CmdPartition(cfg, out);
  if (command == "train") return CmdTrain(cfg, out);
  if (command == "attack") return CmdAttack(cfg, out);
  if (command == "account") return CmdAccount(cfg, out);
  if (command == "evaluate") return CmdEvaluate(cfg, out);
  if (command == "report") return CmdReport(cfg, out);
  throw ConfigError("unknown command '" + command + "'");
}

}  // namespace fedleak::pipeline
