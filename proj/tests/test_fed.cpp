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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <limits>
#include <set>

#include "fedleak/error.hpp"
#include "fedleak/fed.hpp"
#include "fedleak/kernels.hpp"
#include "gtest/gtest.h"

namespace fedleak::fed {
namespace {

class ThreadScope {
 public:
  explicit ThreadScope(int n) : saved_(kernels::MaxThreads()) { kernels::SetMaxThreads(n); }
  ~ThreadScope() { kernels::SetMaxThreads(saved_); }

 private:
  int saved_;
};

ModelSpec SmallSpec() { return ModelSpec{Architecture::kSmallCnn, 8, {4, 8}}; }

ParamSet Init(std::uint64_t seed) {
  RngStream rng(seed, "model");
  return BuildModel(SmallSpec(), rng);
}

ParamSet Filled(const ParamSet& like, float v) {
  ParamSet p = like;
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (float& x : p.value(i).vec()) x = v;
  }
  return p;
}

// Clients of sizes `sizes` drawn from one synthetic set.
std::vector<ClientData> MakeClients(const std::vector<std::size_t>& sizes, std::uint64_t seed) {
  std::size_t total = 0;
  for (std::size_t s : sizes) total += s;
  RngStream drng(seed, "data");
  const data::Dataset ds = data::GenerateSynthetic(total, 8, 0.5, drng);
  data::ClientSchedule schedule;
  for (std::size_t s : sizes) schedule.push_back({1, s, "src"});
  RngStream prng(seed, "partition");
  return MaterializeClients(ds, data::Partition(total, schedule, prng));
}

TEST(AggregateTest, WeightedMean) {
  const ParamSet base = Init(1);
  const ParamSet a = Filled(base, 0.0f);
  const ParamSet b = Filled(base, 4.0f);
  const ParamSet m = Aggregate({{&a, 1}, {&b, 3}});
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (float v : m.value(i).data()) EXPECT_FLOAT_EQ(v, 3.0f);
  }
}

TEST(AggregateTest, IdenticalInputsAreBitwiseFixedPoint) {
  const ParamSet a = Init(2);
  const ParamSet b = a, c = a;
  EXPECT_TRUE(Aggregate({{&a, 7}, {&b, 1}, {&c, 300}}) == a);
  EXPECT_TRUE(Aggregate({{&a, 5}}) == a);
}

// Equal constant inputs reproduce the constant for any weights, which holds
// only if the weights sum to one.
TEST(AggregateTest, WeightsSumToOne) {
  const ParamSet base = Init(3);
  RngStream rng(3, "w");
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<ParamSet> sets;
    for (int k = 0; k < 4; ++k) sets.push_back(Filled(base, 2.5f));
    std::vector<std::pair<const ParamSet*, std::size_t>> upd;
    for (auto& s : sets) upd.emplace_back(&s, 1 + rng.Below(500));
    const ParamSet m = Aggregate(upd);
    for (std::size_t i = 0; i < m.size(); ++i) {
      for (float v : m.value(i).data()) EXPECT_FLOAT_EQ(v, 2.5f);
    }
  }
}

TEST(AggregateTest, AveragesRunningStatistics) {
  ParamSet a = Init(4), b = Init(4);
  ASSERT_FALSE(a.bn_stats().empty());
  for (auto& s : a.bn_stats()) {
    std::fill(s.mean.vec().begin(), s.mean.vec().end(), 1.0f);
    std::fill(s.var.vec().begin(), s.var.vec().end(), 2.0f);
  }
  for (auto& s : b.bn_stats()) {
    std::fill(s.mean.vec().begin(), s.mean.vec().end(), 3.0f);
    std::fill(s.var.vec().begin(), s.var.vec().end(), 4.0f);
  }
  const ParamSet m = Aggregate({{&a, 1}, {&b, 1}});
  for (const auto& s : m.bn_stats()) {
    for (float v : s.mean.data()) EXPECT_FLOAT_EQ(v, 2.0f);
    for (float v : s.var.data()) EXPECT_FLOAT_EQ(v, 3.0f);
  }
}

TEST(AggregateTest, Errors) {
  const ParamSet a = Init(5);
  RngStream rng(5, "mlp");
  const ParamSet mlp = BuildModel(ModelSpec{Architecture::kMlp, 8, {4, 1}}, rng);
  EXPECT_THROW(Aggregate({}), InvalidArgument);
  EXPECT_THROW(Aggregate({{&a, 0}}), InvalidArgument);
  EXPECT_THROW(Aggregate({{&a, 1}, {&mlp, 1}}), ShapeError);
}

TEST(SubsampleTest, CountAndOrder) {
  RngStream rng(6, "sub");
  const std::vector<std::size_t> none(36, 0);
  const auto ids = ClientSubsample(36, SubsampleConfig{0.3, 0}, none, rng);
  EXPECT_EQ(ids.size(), 11u);
  EXPECT_TRUE(std::is_sorted(ids.begin(), ids.end()));
  EXPECT_EQ(std::set<std::size_t>(ids.begin(), ids.end()).size(), ids.size());
  EXPECT_EQ(ClientSubsample(36, SubsampleConfig{0.001, 0}, none, rng).size(), 1u);
  EXPECT_EQ(ClientSubsample(36, SubsampleConfig{1.0, 0}, none, rng).size(), 36u);
  EXPECT_THROW(ClientSubsample(36, SubsampleConfig{0.0, 0}, none, rng), InvalidArgument);
}

TEST(SubsampleTest, CapIsRespected) {
  RngStream rng(7, "cap");
  std::vector<std::size_t> part(10, 0);
  const SubsampleConfig cfg{0.5, 3};
  int rounds = 0;
  while (std::accumulate(part.begin(), part.end(), std::size_t{0}) < 30) {
    const auto ids = ClientSubsample(10, cfg, part, rng);
    EXPECT_LE(ids.size(), 5u);
    for (std::size_t id : ids) ++part[id];
    for (std::size_t p : part) ASSERT_LE(p, 3u);
    ASSERT_LT(++rounds, 30);
  }
  EXPECT_THROW(ClientSubsample(10, cfg, part, rng), InvalidArgument);
}

TEST(TrainConfigTest, DefaultsAndValidation) {
  EXPECT_EQ(TrainConfig::Defaults(false).max_rounds, 20u);
  const TrainConfig dp = TrainConfig::Defaults(true);
  EXPECT_EQ(dp.max_rounds, 10u);
  ASSERT_TRUE(dp.dp.has_value());
  TrainConfig bad = dp;
  bad.freeze_mode = FreezeMode::kNone;
  EXPECT_THROW(bad.Validate(), InvalidArgument);
  TrainConfig zero = TrainConfig::Defaults(false);
  zero.batch_size = 0;
  EXPECT_THROW(zero.Validate(), InvalidArgument);
}

// One client and one round is plain local training from the same stream.
TEST(FederationTest, SingleClientEqualsLocalTraining) {
  const auto clients = MakeClients({40}, 8);
  const ParamSet init = Init(8);
  TrainConfig cfg;
  cfg.max_rounds = 1;
  const RngStream seeds(8, "fed");
  const auto hist = RunFederation(clients, init, cfg, seeds);
  RngStream rng = seeds.Derive("round1/client" + std::to_string(clients[0].id));
  const auto local =
      LocalTrain(clients[0].train, ApplyFreeze(init, cfg.freeze_mode), cfg, cfg.lr, rng);
  EXPECT_TRUE(hist.final_model == local.params);
  EXPECT_EQ(local.steps, 2u);  // 14 training images in batches of 10
}

TEST(FederationTest, EarlyStopAndPlateau) {
  // A learning rate far below one ulp of any weight leaves the model and the
  // validation AUC unchanged, so round 1 stays best.
  const auto clients = MakeClients({30, 30}, 9);
  TrainConfig cfg;
  cfg.lr = 1e-30f;
  const auto hist = RunFederation(clients, Init(9), cfg, RngStream(9, "fed"));
  ASSERT_EQ(hist.reports.size(), 1u + cfg.early_stop_patience);
  EXPECT_EQ(hist.best_round, 1u);
  EXPECT_FLOAT_EQ(static_cast<float>(hist.reports[3].lr), 1e-30f);
  EXPECT_FLOAT_EQ(static_cast<float>(hist.reports[4].lr), 1e-31f);
  for (const auto& r : hist.reports) {
    ASSERT_TRUE(r.mean_val_auc.has_value());
    EXPECT_EQ(*r.mean_val_auc, *hist.reports[0].mean_val_auc);
  }
}

TEST(FederationTest, ReportsEveryClientAndSkipsValLessInMean) {
  const auto clients = MakeClients({30, 30, 5}, 10);
  ASSERT_FALSE(clients[2].val.has_value());
  TrainConfig cfg;
  cfg.max_rounds = 2;
  const auto hist = RunFederation(clients, Init(10), cfg, RngStream(10, "fed"));
  for (const auto& r : hist.reports) {
    ASSERT_EQ(r.clients.size(), 3u);
    EXPECT_FALSE(r.clients[2].val_auc.has_value());
    ASSERT_TRUE(r.clients[0].val_auc && r.clients[1].val_auc);
    EXPECT_DOUBLE_EQ(*r.mean_val_auc, (*r.clients[0].val_auc + *r.clients[1].val_auc) / 2.0);
    for (const auto& c : r.clients) {
      EXPECT_EQ(c.median_layer_norms.size(), hist.layer_names.size());
    }
  }
}

TEST(FederationTest, IndependentOfThreadCount) {
  const auto clients = MakeClients({30, 20, 10, 1, 1}, 11);
  TrainConfig cfg;
  cfg.max_rounds = 2;
  std::vector<ParamSet> finals;
  for (int t : {1, 3}) {
    ThreadScope scope(t);
    finals.push_back(RunFederation(clients, Init(11), cfg, RngStream(11, "fed")).final_model);
  }
  EXPECT_TRUE(finals[0] == finals[1]);
}

TEST(FederationTest, SnapshotHookSeesEveryLocalUpdate) {
  const auto clients = MakeClients({30, 10}, 12);
  TrainConfig cfg;
  cfg.max_rounds = 2;
  std::vector<std::pair<std::size_t, std::size_t>> seen;
  const auto hist = RunFederation(clients, Init(12), cfg, RngStream(12, "fed"),
                                  [&](std::size_t r, std::size_t id, const ParamSet& before,
                                      const LocalResult& after) {
                                    EXPECT_TRUE(before.CompatibleWith(after.params));
                                    seen.emplace_back(r, id);
                                  });
  EXPECT_EQ(seen.size(), 4u);
  EXPECT_EQ(seen.front().first, 1u);
  EXPECT_EQ(seen.back().first, 2u);
}

// Zero noise and an infinite clip bound reduce private training to the
// plain update up to summation order.
TEST(FederationTest, ZeroNoiseUnclippedDpMatchesPlainTraining) {
  const auto clients = MakeClients({30, 10}, 13);
  TrainConfig plain;
  plain.max_rounds = 2;
  TrainConfig priv = plain;
  priv.dp = DpTraining{};
  priv.dp->sigma = 0.0;
  priv.dp->clip.global = std::numeric_limits<double>::infinity();
  const auto a = RunFederation(clients, Init(13), plain, RngStream(13, "fed"));
  const auto b = RunFederation(clients, Init(13), priv, RngStream(13, "fed"));
  for (std::size_t i = 0; i < a.final_model.size(); ++i) {
    const auto& x = a.final_model.value(i);
    const auto& y = b.final_model.value(i);
    for (std::size_t k = 0; k < x.size(); ++k) EXPECT_NEAR(x[k], y[k], 1e-5);
  }
}

TEST(FederationTest, PrivacyLedgerCountsLocalSteps) {
  const auto clients = MakeClients({30, 10}, 14);
  TrainConfig cfg = TrainConfig::Defaults(true);
  cfg.max_rounds = 3;
  cfg.dp->target_epsilon = 6.0;
  cfg.dp->clip.global = 3.0;
  const auto hist = RunFederation(clients, Init(14), cfg, RngStream(14, "fed"));
  ASSERT_EQ(hist.privacy.size(), 2u);
  for (const auto& p : hist.privacy) {
    const std::size_t per_round = (p.n_train + cfg.batch_size - 1) / cfg.batch_size;
    EXPECT_EQ(p.planned_steps, 3 * per_round);
    EXPECT_EQ(p.ledger.steps(), hist.reports.size() * per_round);
    const double eps = dp::ToEpsilon(p.ledger, p.delta).epsilon;
    EXPECT_LE(eps, 6.0 + 1e-9);
    EXPECT_GT(p.sigma, 0.0);
  }
}

TEST(FederationTest, RoundCsvLayout) {
  const auto clients = MakeClients({30, 5}, 15);
  TrainConfig cfg;
  cfg.max_rounds = 1;
  const auto hist = RunFederation(clients, Init(15), cfg, RngStream(15, "fed"));
  const auto path = std::filesystem::temp_directory_path() / "fedleak_rounds.csv";
  WriteRoundCsv(path, hist);
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  std::filesystem::remove(path);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0], "round,client_id,n_train,val_auc,lr,median_grad_norm_per_layer");
  EXPECT_EQ(lines[1].rfind("1,0,10,", 0), 0u);
  EXPECT_NE(lines[1].find("\"{\"\""), std::string::npos);
  EXPECT_EQ(lines[2].rfind("1,1,5,,", 0), 0u);
  EXPECT_EQ(lines[3].rfind("1,mean,15,", 0), 0u);
}

}  // namespace
}  // namespace fedleak::fed
