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

#include "fedleak/fed.hpp"

#include <cmath>
#include <exception>
#include <fstream>
#include <limits>

#include "fedleak/error.hpp"
#include "fedleak/kernels.hpp"
#include "fedleak/metrics.hpp"
#include "json.hpp"

namespace fedleak::fed {
namespace {

data::Batch Slice(const data::Batch& b, std::span<const std::size_t> order, std::size_t start,
                  std::size_t len) {
  const Shape& s = b.pixels.shape();
  const std::size_t px = s[2] * s[3];
  data::Batch out{Tensor({len, 1, s[2], s[3]}), Tensor({len})};
  for (std::size_t j = 0; j < len; ++j) {
    const std::size_t src = order[start + j];
    std::copy_n(b.pixels.data().begin() + src * px, px, out.pixels.vec().begin() + j * px);
    out.labels[j] = b.labels[src];
  }
  return out;
}

std::size_t StepsPerRound(std::size_t n, std::size_t batch, std::size_t epochs) {
  return epochs * ((n + batch - 1) / batch);
}

std::string CsvQuote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string FormatDouble(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

TrainConfig TrainConfig::Defaults(bool with_dp) {
  TrainConfig c;
  if (with_dp) {
    c.max_rounds = 10;
    c.dp = DpTraining{};
  }
  return c;
}

void TrainConfig::Validate() const {
  if (max_rounds == 0 || local_epochs == 0 || batch_size == 0) {
    throw InvalidArgument("train config: rounds, epochs and batch size must be positive");
  }
  if (!(lr > 0.0f) || !(lr_plateau_factor > 0.0f && lr_plateau_factor <= 1.0f)) {
    throw InvalidArgument("train config: bad learning rate or plateau factor");
  }
  if (dp && freeze_mode == FreezeMode::kNone) {
    throw InvalidArgument(
        "dp training needs frozen batch-norm statistics (freeze mode batch_norm or all_but_last)");
  }
  if (subsample && !(subsample->fraction > 0.0 && subsample->fraction <= 1.0)) {
    throw InvalidArgument("subsample fraction must be in (0,1]");
  }
}

std::vector<ClientData> MaterializeClients(const data::Dataset& dataset,
                                           const std::vector<data::ClientPartition>& partition) {
  std::vector<ClientData> out;
  for (const auto& p : partition) {
    ClientData c;
    c.id = p.id;
    c.train = data::Gather(dataset, p.split.train);
    if (!p.split.val.empty()) c.val = data::Gather(dataset, p.split.val);
    out.push_back(std::move(c));
  }
  return out;
}

LocalResult LocalTrain(const data::Batch& train, const ParamSet& global, const TrainConfig& cfg,
                       float lr, RngStream& rng, const DpState* dp_state) {
  const std::size_t n = train.labels.size();
  if (n == 0) throw InvalidArgument("local_train: empty training set");
  const bool private_training = dp_state != nullptr;
  if (private_training && (!cfg.dp || global.freeze_mode() == FreezeMode::kNone)) {
    throw InvalidArgument("local_train: dp needs a dp config and frozen batch-norm statistics");
  }
  LocalResult out{global, 0, std::min(cfg.batch_size, n), lr, {}};
  ParamSet& params = out.params;
  out.layer_norms.resize(params.TrainableIndices().size());
  RngStream noise = rng.Derive("dp_noise");
  const double q = static_cast<double>(out.batch_size) / static_cast<double>(n);
  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    const auto order = rng.Permutation(n);
    for (std::size_t start = 0; start < n; start += out.batch_size) {
      const std::size_t len = std::min(out.batch_size, n - start);
      const data::Batch b = Slice(train, order, start, len);
      GradMap step;
      if (private_training) {
        const auto per_sample = ComputePerSampleGradients(params, b.pixels, b.labels, cfg.loss);
        for (std::size_t k = 0; k < out.layer_norms.size(); ++k) {
          std::vector<double> mean(per_sample[0][k].size(), 0.0);
          for (const GradMap& g : per_sample) {
            for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += g[k][i];
          }
          double sq = 0.0;
          for (double v : mean) sq += (v / len) * (v / len);
          out.layer_norms[k].push_back(std::sqrt(sq));
        }
        step = dp::PrivatizeBatch(per_sample, dp_state->sigma, cfg.dp->clip, noise);
        if (dp_state->ledger) dp_state->ledger->Advance(q, dp_state->sigma);
      } else {
        const BnMode mode = params.BnModeFor(len);
        auto g = ComputeBatchGradient(params, b.pixels, b.labels, mode, cfg.loss);
        if (mode == BnMode::kBatchStats) UpdateRunningStats(params, g.observed);
        for (std::size_t k = 0; k < out.layer_norms.size(); ++k) {
          out.layer_norms[k].push_back(std::sqrt(g.grads[k].SquaredNorm()));
        }
        step = std::move(g.grads);
      }
      params.ApplySgdStep(step, lr);
      ++out.steps;
    }
  }
  return out;
}

ParamSet Aggregate(const std::vector<std::pair<const ParamSet*, std::size_t>>& updates) {
  if (updates.empty()) throw InvalidArgument("aggregate: no updates");
  const ParamSet& ref = *updates[0].first;
  double total = 0.0;
  for (const auto& [p, n] : updates) {
    if (n == 0) throw InvalidArgument("aggregate: client weight must be positive");
    if (!p->CompatibleWith(ref)) throw ShapeError("aggregate: incompatible parameter sets");
    total += static_cast<double>(n);
  }
  // ref + sum_k w_k (theta_k - ref): identical inputs come back bitwise.
  auto mix = [&](auto&& get, Tensor& dst) {
    std::vector<double> acc(dst.size(), 0.0);
    for (const auto& [p, n] : updates) {
      const double w = static_cast<double>(n) / total;
      const Tensor& src = get(*p);
      for (std::size_t i = 0; i < acc.size(); ++i) {
        acc[i] += w * (static_cast<double>(src[i]) - static_cast<double>(dst[i]));
      }
    }
    for (std::size_t i = 0; i < acc.size(); ++i) {
      dst[i] = static_cast<float>(static_cast<double>(dst[i]) + acc[i]);
    }
  };
  ParamSet out = ref;
  for (std::size_t t = 0; t < out.size(); ++t) {
    mix([t](const ParamSet& p) -> const Tensor& { return p.value(t); }, out.value(t));
  }
  for (std::size_t s = 0; s < out.bn_stats().size(); ++s) {
    mix([s](const ParamSet& p) -> const Tensor& { return p.bn_stats()[s].mean; },
        out.bn_stats()[s].mean);
    mix([s](const ParamSet& p) -> const Tensor& { return p.bn_stats()[s].var; },
        out.bn_stats()[s].var);
  }
  return out;
}

std::vector<std::size_t> ClientSubsample(std::size_t n_clients, const SubsampleConfig& cfg,
                                         const std::vector<std::size_t>& participation,
                                         RngStream& rng) {
  if (!(cfg.fraction > 0.0 && cfg.fraction <= 1.0)) {
    throw InvalidArgument("client_subsample: fraction must be in (0,1]");
  }
  if (participation.size() != n_clients) throw InvalidArgument("client_subsample: size mismatch");
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < n_clients; ++i) {
    if (cfg.per_client_round_cap == 0 || participation[i] < cfg.per_client_round_cap) {
      eligible.push_back(i);
    }
  }
  if (eligible.empty()) throw InvalidArgument("client_subsample: every client reached its cap");
  const auto want = static_cast<std::size_t>(
      std::floor(cfg.fraction * static_cast<double>(n_clients) + 0.5));
  const std::size_t k = std::min(std::max<std::size_t>(want, 1), eligible.size());
  const auto perm = rng.Permutation(eligible.size());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(eligible[perm[i]]);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<double> PredictScores(const ParamSet& params, const Tensor& pixels) {
  const Tensor logits = Forward(params, pixels, BnMode::kFixedStats);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-double(logits[i])));
  return out;
}

std::optional<double> ValidationAuc(const ParamSet& params, const data::Batch& val) {
  std::vector<int> labels(val.labels.size());
  bool pos = false, neg = false;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = val.labels[i] == 1.0f;
    (labels[i] ? pos : neg) = true;
  }
  if (!pos || !neg) return std::nullopt;
  const auto scores = PredictScores(params, val.pixels);
  return eval::Auc(scores, labels);
}

FederationHistory RunFederation(const std::vector<ClientData>& clients, const ParamSet& init,
                                const TrainConfig& cfg, const RngStream& seeds,
                                const SnapshotHook& on_local) {
  cfg.Validate();
  if (clients.empty()) throw InvalidArgument("run_federation: no clients");
  for (std::size_t i = 1; i < clients.size(); ++i) {
    if (clients[i].id <= clients[i - 1].id) {
      throw InvalidArgument("run_federation: clients must be sorted by ascending id");
    }
  }
  FederationHistory hist;
  ParamSet global = ApplyFreeze(init, cfg.freeze_mode);
  hist.layer_names = global.TrainableNames();

  const std::size_t round_budget =
      cfg.subsample && cfg.subsample->per_client_round_cap > 0
          ? std::min(cfg.max_rounds, cfg.subsample->per_client_round_cap)
          : cfg.max_rounds;
  if (cfg.dp) {
    for (const auto& c : clients) {
      const std::size_t n = c.train.labels.size();
      const std::size_t b = std::min(cfg.batch_size, n);
      ClientPrivacy cp{c.id, n, 0.0, static_cast<double>(b) / static_cast<double>(n),
                       dp::DeltaForClient(n),
                       round_budget * StepsPerRound(n, b, cfg.local_epochs),
                       dp::PrivacyLedger(cfg.dp->grid)};
      cp.sigma = cfg.dp->sigma ? *cfg.dp->sigma
                               : dp::CalibrateSigma(cfg.dp->target_epsilon, cp.delta,
                                                    cp.sample_rate, cp.planned_steps, cfg.dp->grid);
      hist.privacy.push_back(std::move(cp));
    }
  }

  std::vector<std::size_t> participation(clients.size(), 0);
  float lr = cfg.lr;
  double best_auc = -std::numeric_limits<double>::infinity();
  std::size_t since_best = 0, plateau = 0;
  RngStream subsample_rng = seeds.Derive("subsample");

  for (std::size_t round = 1; round <= cfg.max_rounds; ++round) {
    std::vector<std::size_t> selected;
    if (cfg.subsample) {
      selected = ClientSubsample(clients.size(), *cfg.subsample, participation, subsample_rng);
    } else {
      for (std::size_t i = 0; i < clients.size(); ++i) selected.push_back(i);
    }
    std::vector<std::optional<LocalResult>> results(selected.size());
    std::vector<std::exception_ptr> errors(selected.size());
    const ParamSet& start = global;
#pragma omp parallel for schedule(dynamic) num_threads(kernels::MaxThreads())
    for (std::size_t s = 0; s < selected.size(); ++s) {
      try {
        const ClientData& c = clients[selected[s]];
        RngStream rng =
            seeds.Derive("round" + std::to_string(round) + "/client" + std::to_string(c.id));
        DpState state;
        if (cfg.dp) {
          state.sigma = hist.privacy[selected[s]].sigma;
          state.ledger = &hist.privacy[selected[s]].ledger;
        }
        results[s] = LocalTrain(c.train, start, cfg, lr, rng, cfg.dp ? &state : nullptr);
      } catch (...) {
        errors[s] = std::current_exception();
      }
    }
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    std::vector<std::pair<const ParamSet*, std::size_t>> updates;
    for (std::size_t s = 0; s < selected.size(); ++s) {
      const ClientData& c = clients[selected[s]];
      if (on_local) on_local(round, c.id, start, *results[s]);
      updates.emplace_back(&results[s]->params, c.train.labels.size());
      ++participation[selected[s]];
    }
    ParamSet next = Aggregate(updates);

    RoundReport report;
    report.round = round;
    report.lr = lr;
    for (std::size_t s : selected) report.selected.push_back(clients[s].id);
    double auc_sum = 0.0;
    std::size_t auc_count = 0;
    std::size_t s = 0;
    for (std::size_t i = 0; i < clients.size(); ++i) {
      ClientRound cr;
      cr.client_id = clients[i].id;
      cr.n_train = clients[i].train.labels.size();
      if (s < selected.size() && selected[s] == i) {
        cr.participated = true;
        for (const auto& norms : results[s]->layer_norms) {
          cr.median_layer_norms.push_back(dp::Median(norms));
        }
        ++s;
      }
      if (clients[i].val) cr.val_auc = ValidationAuc(next, *clients[i].val);
      if (cr.val_auc) {
        auc_sum += *cr.val_auc;
        ++auc_count;
      }
      report.clients.push_back(std::move(cr));
    }
    if (auc_count > 0) report.mean_val_auc = auc_sum / static_cast<double>(auc_count);
    global = std::move(next);
    hist.reports.push_back(std::move(report));

    const auto& mean = hist.reports.back().mean_val_auc;
    if ((mean && *mean > best_auc) || hist.best_round == 0) {
      if (mean) best_auc = *mean;
      hist.best = global;
      hist.best_round = round;
      since_best = 0;
      plateau = 0;
    } else {
      ++since_best;
      if (++plateau >= cfg.lr_patience) {
        lr *= cfg.lr_plateau_factor;
        plateau = 0;
      }
      if (since_best >= cfg.early_stop_patience) break;
    }
  }
  hist.final_model = global;
  return hist;
}

void WriteRoundCsv(const std::filesystem::path& path, const FederationHistory& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "round,client_id,n_train,val_auc,lr,median_grad_norm_per_layer\n";
  for (const auto& r : history.reports) {
    std::size_t total = 0;
    for (const auto& c : r.clients) {
      total += c.n_train;
      nlohmann::ordered_json norms = nlohmann::ordered_json::object();
      for (std::size_t k = 0; k < c.median_layer_norms.size(); ++k) {
        norms[history.layer_names.at(k)] = c.median_layer_norms[k];
      }
      out << r.round << ',' << c.client_id << ',' << c.n_train << ','
          << (c.val_auc ? FormatDouble(*c.val_auc) : "") << ',' << FormatDouble(r.lr) << ','
          << CsvQuote(c.participated ? norms.dump() : "null") << '\n';
    }
    out << r.round << ",mean," << total << ','
        << (r.mean_val_auc ? FormatDouble(*r.mean_val_auc) : "") << ',' << FormatDouble(r.lr)
        << ",\n";
  }
}

}  // namespace fedleak::fed
