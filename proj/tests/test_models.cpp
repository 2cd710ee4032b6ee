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

#include <cmath>
#include <filesystem>

#include "fedleak/error.hpp"
#include "fedleak/models.hpp"
#include "gtest/gtest.h"
#include "oracle.hpp"

namespace fedleak {
namespace {

using ad::Tape;
using ad::Var;

Tensor RandomPixels(std::size_t n, std::size_t side, RngStream& rng) {
  Tensor t({n, 1, side, side});
  for (float& v : t.vec()) v = static_cast<float>(rng.Uniform());
  return t;
}

ModelSpec CnnSpec() { return ModelSpec{Architecture::kSmallCnn, 16, {8, 16}}; }

TEST(BuildModelTest, DeterministicForSameSeed) {
  RngStream a(5, "model"), b(5, "model");
  EXPECT_EQ(BuildModel(CnnSpec(), a), BuildModel(CnnSpec(), b));
  RngStream c(6, "model");
  RngStream d(5, "model");
  EXPECT_FALSE(BuildModel(CnnSpec(), c) == BuildModel(CnnSpec(), d));
}

TEST(BuildModelTest, MlpParameterCount) {
  RngStream rng(1, "mlp");
  const ParamSet p = BuildModel(ModelSpec{Architecture::kMlp, 16, {16, 8, 1}}, rng);
  EXPECT_EQ(p.ParameterCount(), 16u * 256 + 16 + 8 * 16 + 8 + 1 * 8 + 1);
  EXPECT_EQ(p.ParameterCount(), 4257u);
}

TEST(BuildModelTest, SmallCnnFiniteWithUnitVariance) {
  RngStream rng(2, "cnn");
  const ParamSet p = BuildModel(CnnSpec(), rng);
  for (const auto& e : p.entries()) EXPECT_TRUE(e.value.AllFinite()) << e.name;
  ASSERT_EQ(p.bn_stats().size(), 2u);
  for (const auto& s : p.bn_stats()) {
    for (float v : s.var.data()) EXPECT_EQ(v, 1.0f);
    for (float m : s.mean.data()) EXPECT_EQ(m, 0.0f);
  }
  EXPECT_EQ(p.value(*p.Find("fc.weight")).shape(), (Shape{1, 16 * 4 * 4}));
}

TEST(BuildModelTest, RejectsInvalidSpecs) {
  RngStream rng(3, "bad");
  EXPECT_THROW(BuildModel(ModelSpec{Architecture::kMlp, 16, {8, 0, 1}}, rng), InvalidArgument);
  EXPECT_THROW(BuildModel(ModelSpec{Architecture::kMlp, 16, {8, 2}}, rng), InvalidArgument);
  EXPECT_THROW(BuildModel(ModelSpec{Architecture::kSmallCnn, 16, {8}}, rng), InvalidArgument);
  EXPECT_THROW(BuildModel(ModelSpec{Architecture::kSmallCnn, 10, {8, 16}}, rng), InvalidArgument);
}

TEST(ForwardTest, ZeroWeightsGiveZeroLogits) {
  RngStream rng(4, "zero");
  ParamSet p = BuildModel(CnnSpec(), rng);
  for (std::size_t i = 0; i < p.size(); ++i) p.value(i) = Tensor(p.value(i).shape(), 0.0f);
  const Tensor logits = Forward(p, RandomPixels(3, 16, rng), BnMode::kFixedStats);
  EXPECT_EQ(logits.shape(), (Shape{3, 1}));
  for (float z : logits.data()) {
    EXPECT_EQ(z, 0.0f);
    EXPECT_EQ(testing::Sigmoid(z), 0.5);
  }
}

TEST(ForwardTest, FixedStatsRowsAreSampleIndependent) {
  RngStream rng(5, "indep");
  const ParamSet p = BuildModel(CnnSpec(), rng);
  const Tensor batch = RandomPixels(2, 16, rng);
  const Tensor both = Forward(p, batch, BnMode::kFixedStats);
  const std::size_t px = 16 * 16;
  for (std::size_t i = 0; i < 2; ++i) {
    Tensor one({1, 1, 16, 16});
    std::copy_n(batch.data().begin() + i * px, px, one.vec().begin());
    EXPECT_EQ(Forward(p, one, BnMode::kFixedStats)[0], both[i]);
  }
}

TEST(ForwardTest, BatchAndFixedStatsDiffer) {
  RngStream rng(6, "modes");
  const ParamSet p = BuildModel(CnnSpec(), rng);
  const Tensor batch = RandomPixels(4, 16, rng);
  const Tensor a = Forward(p, batch, BnMode::kBatchStats);
  const Tensor b = Forward(p, batch, BnMode::kFixedStats);
  double diff = 0;
  for (std::size_t i = 0; i < 4; ++i) diff += std::fabs(a[i] - b[i]);
  EXPECT_GT(diff, 1e-3);
}

TEST(ForwardTest, BatchStatsRejectsSingleSample) {
  RngStream rng(7, "single");
  const ParamSet p = BuildModel(CnnSpec(), rng);
  EXPECT_THROW(Forward(p, RandomPixels(1, 16, rng), BnMode::kBatchStats), InvalidArgument);
  EXPECT_THROW(Forward(p, RandomPixels(1, 8, rng), BnMode::kFixedStats), ShapeError);
}

TEST(ForwardTest, MatchesDoublePrecisionOracle) {
  RngStream rng(8, "oracle");
  for (const ModelSpec& spec :
       {CnnSpec(), ModelSpec{Architecture::kMlp, 16, {16, 8, 1}}}) {
    const ParamSet p = BuildModel(spec, rng);
    const Tensor pixels = RandomPixels(1, 16, rng);
    const std::vector<double> img(pixels.data().begin(), pixels.data().end());
    const Tensor z = Forward(p, pixels, BnMode::kFixedStats);
    for (double y : {0.0, 1.0}) {
      const double expected = testing::ReferenceLoss(p, testing::ValuesOf(p), {img}, {y});
      const double got = y == 1.0 ? testing::Softplus(-z[0]) : testing::Softplus(z[0]);
      EXPECT_NEAR(got, expected, 1e-5 * (1 + expected));
    }
  }
}

float BceOf(std::vector<float> logits, std::vector<float> labels) {
  Tape tape;
  const std::size_t n = logits.size();
  Var z = tape.Constant(Tensor({n, 1}, std::move(logits)));
  return BceLoss(z, Tensor({n, 1}, std::move(labels))).value()[0];
}

TEST(BceLossTest, KnownValues) {
  EXPECT_NEAR(BceOf({0.0f}, {1.0f}), std::log(2.0), 1e-6);
  EXPECT_NEAR(BceOf({0.0f, 0.0f}, {0.0f, 1.0f}), std::log(2.0), 1e-6);
  const float tail = BceOf({30.0f}, {1.0f});
  EXPECT_TRUE(std::isfinite(tail));
  EXPECT_NEAR(tail, 9.36e-14, 0.01e-14);
  EXPECT_TRUE(std::isfinite(BceOf({-30.0f}, {1.0f})));
  EXPECT_NEAR(BceOf({-30.0f}, {1.0f}), 30.0, 1e-5);
}

TEST(BceLossTest, RejectsInvalidLabels) {
  EXPECT_THROW(BceOf({0.0f}, {0.5f}), InvalidArgument);
  EXPECT_THROW(BceOf({0.0f, 1.0f}, {1.0f}), ShapeError);
}

TEST(FreezeTest, NoneTrainsEverything) {
  RngStream rng(9, "freeze");
  const ParamSet p = ApplyFreeze(BuildModel(CnnSpec(), rng), FreezeMode::kNone);
  EXPECT_EQ(p.TrainableIndices().size(), p.size());
  EXPECT_EQ(p.BnModeFor(4), BnMode::kBatchStats);
  EXPECT_EQ(p.BnModeFor(1), BnMode::kFixedStats);
}

TEST(FreezeTest, AllButLastLeavesHeadOnly) {
  RngStream rng(10, "freeze");
  const ParamSet p = ApplyFreeze(BuildModel(CnnSpec(), rng), FreezeMode::kAllButLast);
  EXPECT_EQ(p.TrainableNames(), (std::vector<std::string>{"fc.weight", "fc.bias"}));
  EXPECT_EQ(p.BnModeFor(10), BnMode::kFixedStats);
}

TEST(FreezeTest, BatchNormFreezesAffineOnly) {
  RngStream rng(11, "freeze");
  const ParamSet built = BuildModel(CnnSpec(), rng);
  std::size_t bn_tensors = 0;
  for (const auto& e : built.entries()) {
    if (e.name.rfind("bn", 0) == 0) ++bn_tensors;
  }
  const ParamSet p = ApplyFreeze(built, FreezeMode::kBatchNorm);
  EXPECT_EQ(bn_tensors, 4u);
  EXPECT_EQ(p.TrainableIndices().size(), built.size() - bn_tensors);
  EXPECT_EQ(p.BnModeFor(10), BnMode::kFixedStats);
}

TEST(FreezeTest, FrozenTensorsUnchangedBySgd) {
  RngStream rng(12, "sgd");
  for (FreezeMode mode : {FreezeMode::kBatchNorm, FreezeMode::kAllButLast}) {
    ParamSet p = ApplyFreeze(BuildModel(CnnSpec(), rng), mode);
    const ParamSet before = p;
    const Tensor pixels = RandomPixels(4, 16, rng);
    const Tensor labels({4}, {0, 1, 1, 0});
    for (int step = 0; step < 3; ++step) {
      const auto g = ComputeBatchGradient(p, pixels, labels, p.BnModeFor(4));
      p.ApplySgdStep(g.grads, 0.1f);
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!p.entry(i).trainable) EXPECT_EQ(p.value(i), before.value(i)) << p.entry(i).name;
    }
    EXPECT_FALSE(p == before);
  }
}

TEST(PerSampleTest, FixedStatsPerSampleEqualsSingletonGrad) {
  RngStream rng(13, "persample");
  const ParamSet p = ApplyFreeze(BuildModel(CnnSpec(), rng), FreezeMode::kBatchNorm);
  const Tensor pixels = RandomPixels(4, 16, rng);
  const Tensor labels({4}, {1, 0, 0, 1});
  const auto per_sample = ComputePerSampleGradients(p, pixels, labels);
  ASSERT_EQ(per_sample.size(), 4u);
  const std::size_t px = 16 * 16;
  for (std::size_t i = 0; i < 4; ++i) {
    Tensor one({1, 1, 16, 16});
    std::copy_n(pixels.data().begin() + i * px, px, one.vec().begin());
    const auto single = ComputeBatchGradient(p, one, Tensor({1}, {labels[i]}),
                                             BnMode::kFixedStats);
    double num = 0, den = 0;
    for (std::size_t k = 0; k < single.grads.size(); ++k) {
      for (std::size_t j = 0; j < single.grads[k].size(); ++j) {
        const double d = per_sample[i][k][j] - single.grads[k][j];
        num += d * d;
        den += double(single.grads[k][j]) * single.grads[k][j];
      }
    }
    EXPECT_LT(std::sqrt(num / den), 1e-5);
  }
}

TEST(RunningStatsTest, MomentumUpdateWithUnbiasedVariance) {
  RngStream rng(14, "stats");
  ParamSet p = BuildModel(CnnSpec(), rng);
  BnStats obs{"bn1", Tensor({8}, 2.0f), Tensor({8}, 3.0f), 4};
  UpdateRunningStats(p, {obs});
  EXPECT_FLOAT_EQ(p.bn_stats()[0].mean[0], 0.2f);
  EXPECT_FLOAT_EQ(p.bn_stats()[0].var[0], 0.9f + 0.1f * 3.0f * 4.0f / 3.0f);
  EXPECT_EQ(p.bn_stats()[1].mean[0], 0.0f);
}

TEST(ParamSetTest, SaveLoadRoundTrip) {
  RngStream rng(15, "io");
  ParamSet p = ApplyFreeze(BuildModel(CnnSpec(), rng), FreezeMode::kBatchNorm);
  p.bn_stats()[0].mean[3] = 0.25f;
  const auto dir = std::filesystem::temp_directory_path() / "fedleak_paramset_test";
  std::filesystem::remove_all(dir);
  p.Save(dir);
  const ParamSet q = ParamSet::Load(dir);
  EXPECT_EQ(p, q);
  EXPECT_EQ(q.freeze_mode(), FreezeMode::kBatchNorm);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(ParamSet::Load(dir), IoError);
}

}  // namespace
}  // namespace fedleak
