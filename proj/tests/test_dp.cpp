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
#include <limits>

#include "fedleak/dp.hpp"
#include "fedleak/error.hpp"
#include "gtest/gtest.h"
#include "rdp_oracle.hpp"

namespace fedleak::dp {
namespace {

using fedleak::testing::QuadratureRdp;

TEST(QuadratureOracleTest, ClosedFormAtFullSampling) {
  // With q = 1 the mixture is N(1, s^2) and the divergence is alpha / (2 s^2).
  for (int alpha : {2, 5, 20}) {
    EXPECT_NEAR(QuadratureRdp(1.0 - 1e-15, 1.3, alpha), alpha / (2 * 1.3 * 1.3), 1e-8);
  }
}

TEST(RdpStepTest, FullSamplingClosedForm) {
  const AlphaGrid one({2.0});
  EXPECT_EQ(RdpStep(1.0, 1.0, one)[0], 1.0);
  PrivacyLedger ledger(AlphaGrid({3.0}));
  ledger.Advance(1.0, 2.0, 10);
  EXPECT_EQ(ledger.Rdp()[0], 3.75);
}

TEST(RdpStepTest, FullSamplingExactOnEveryGridOrder) {
  const AlphaGrid grid;
  for (double sigma : {0.7, 1.0, 3.3}) {
    for (std::size_t t : {1u, 7u, 270u}) {
      PrivacyLedger ledger(grid);
      ledger.Advance(1.0, sigma, t);
      const auto rdp = ledger.Rdp();
      for (std::size_t i = 0; i < grid.size(); ++i) {
        EXPECT_EQ(rdp[i], grid[i] * static_cast<double>(t) / (2.0 * sigma * sigma));
      }
    }
  }
}

TEST(RdpStepTest, SubsampledMatchesQuadratureOracle) {
  const AlphaGrid grid;
  for (double sigma : {1.0, 2.5}) {
    const auto rdp = RdpStep(0.1, sigma, grid);
    int checked = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double a = grid[i];
      if (std::fabs(a - std::round(a)) > 1e-9) continue;
      const double oracle = QuadratureRdp(0.1, sigma, static_cast<int>(std::round(a)));
      EXPECT_NEAR(rdp[i], oracle, 1e-6) << "alpha " << a << " sigma " << sigma;
      ++checked;
    }
    EXPECT_EQ(checked, 9 + 52);
  }
}

TEST(RdpStepTest, FractionalOrderUsesCeiling) {
  const auto frac = RdpStep(0.1, 1.0, AlphaGrid({2.4}));
  const auto ceil = RdpStep(0.1, 1.0, AlphaGrid({3.0}));
  EXPECT_EQ(frac[0], ceil[0]);
  EXPECT_THROW(RdpStep(0.1, 0.0, AlphaGrid()), InvalidArgument);
}

TEST(AlphaGridTest, DefaultLayout) {
  const AlphaGrid grid;
  ASSERT_EQ(grid.size(), 99u + 52u);
  EXPECT_DOUBLE_EQ(grid[0], 1.1);
  EXPECT_DOUBLE_EQ(grid[98], 10.9);
  EXPECT_EQ(grid[99], 12.0);
  EXPECT_EQ(grid[grid.size() - 1], 63.0);
  for (double a : grid.alphas()) EXPECT_GT(a, 1.0);
  EXPECT_THROW(AlphaGrid(std::vector<double>{}), InvalidArgument);
  EXPECT_THROW(AlphaGrid({1.0}), InvalidArgument);
}

TEST(LedgerTest, CompositionIsExact) {
  for (double q : {1.0, 0.04, 0.37}) {
    PrivacyLedger a, b, ab;
    a.Advance(q, 1.1, 13);
    b.Advance(q, 1.1, 29);
    ab.Advance(q, 1.1, 42);
    a.Merge(b);
    EXPECT_EQ(a.Rdp(), ab.Rdp());
    EXPECT_EQ(a.steps(), 42u);
  }
}

TEST(LedgerTest, AccumulationIsMonotone) {
  PrivacyLedger ledger;
  auto prev = ledger.Rdp();
  for (int step = 0; step < 5; ++step) {
    ledger.Advance(0.2, 1.5);
    const auto cur = ledger.Rdp();
    for (std::size_t i = 0; i < cur.size(); ++i) EXPECT_GE(cur[i], prev[i]);
    prev = cur;
  }
}

TEST(ToEpsilonTest, FormulaArithmetic) {
  const AlphaGrid grid({3.0});
  const std::vector<double> rdp{3.75};
  const auto r = ToEpsilon(grid, rdp, 1e-2);
  EXPECT_EQ(r.alpha, 3.0);
  EXPECT_NEAR(r.epsilon, 3.75 + std::log(100.0) / 2.0, 1e-12);
  EXPECT_NEAR(r.epsilon, 6.0526, 1e-4);
}

TEST(ToEpsilonTest, ZeroRdpPicksLargestOrder) {
  const AlphaGrid grid;
  const std::vector<double> zeros(grid.size(), 0.0);
  const auto r = ToEpsilon(grid, zeros, 1e-3);
  EXPECT_EQ(r.alpha, 63.0);
  EXPECT_DOUBLE_EQ(r.epsilon, std::log(1e3) / 62.0);
}

TEST(ToEpsilonTest, TiesGoToSmallerOrder) {
  // eps(2) = 1 + ln(1/d), eps(3) = 1 + ln(1/d)/2 + ln(1/d)/2 = same value.
  const double d = std::exp(-2.0);
  const auto r = ToEpsilon(AlphaGrid({2.0, 3.0}), std::vector<double>{1.0, 2.0}, d);
  EXPECT_EQ(r.alpha, 2.0);
}

TEST(ToEpsilonTest, MatchesBruteForceScanOnRandomLedgers) {
  RngStream rng(17, "ledger");
  const AlphaGrid grid;
  for (int trial = 0; trial < 50; ++trial) {
    PrivacyLedger ledger(grid);
    ledger.Advance(rng.Uniform(0.01, 1.0), rng.Uniform(0.5, 5.0), 1 + rng.Below(500));
    const double delta = rng.Uniform(1e-6, 0.5);
    const auto rdp = ledger.Rdp();
    double best = std::numeric_limits<double>::infinity(), arg = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double e = rdp[i] + std::log(1.0 / delta) / (grid[i] - 1.0);
      if (e < best) best = e, arg = grid[i];
    }
    const auto r = ToEpsilon(ledger, delta);
    EXPECT_EQ(r.epsilon, best);
    EXPECT_EQ(r.alpha, arg);
  }
}

TEST(DeltaTest, CappedPolicy) {
  EXPECT_DOUBLE_EQ(DeltaForClient(350), 0.9 / 350);
  EXPECT_NEAR(DeltaForClient(350), 2.5714e-3, 1e-7);
  EXPECT_EQ(DeltaForClient(1), 1e-2);
  EXPECT_EQ(DeltaForClient(90), 1e-2);
  EXPECT_EQ(DeltaForClient(27325), 0.9 / 27325);
  EXPECT_THROW(DeltaForClient(0), InvalidArgument);
}

struct CalibrationCase {
  double q;
  std::size_t steps;
  double delta;
};

TEST(CalibrateSigmaTest, RoundTripWithinFivePercent) {
  for (const auto& c : {CalibrationCase{1.0, 10, 1e-2}, CalibrationCase{10.0 / 189, 190, 0.9 / 189},
                        CalibrationCase{0.5, 20, 1e-2}}) {
    for (double target : {1.0, 3.0, 6.0, 10.0}) {
      const double sigma = CalibrateSigma(target, c.delta, c.q, c.steps);
      PrivacyLedger ledger;
      ledger.Advance(c.q, sigma, c.steps);
      const double eps = ToEpsilon(ledger, c.delta).epsilon;
      EXPECT_LE(eps, target);
      EXPECT_GE(eps, 0.95 * target) << "q " << c.q << " target " << target;
    }
  }
}

TEST(CalibrateSigmaTest, Monotonicity) {
  const double base = CalibrateSigma(3.0, 1e-3, 0.1, 100);
  EXPECT_GE(CalibrateSigma(3.0, 1e-3, 0.1, 200), base);
  EXPECT_LT(CalibrateSigma(10.0, 1e-3, 0.1, 100), CalibrateSigma(1.0, 1e-3, 0.1, 100));
  EXPECT_THROW(CalibrateSigma(1e-4, 1e-5, 1.0, 1000), InvalidArgument);
  EXPECT_THROW(CalibrateSigma(0.0, 1e-3, 0.1, 10), InvalidArgument);
}

Tensor Vec(std::vector<float> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

TEST(ClipTest, GlobalRescale) {
  const GradMap g{Vec({3, 4})};
  const auto c = ClipPerSample(g, ClipBound{1.0, {}});
  EXPECT_FLOAT_EQ(c[0][0], 0.6f);
  EXPECT_FLOAT_EQ(c[0][1], 0.8f);
  EXPECT_EQ(ClipPerSample(g, ClipBound{5.0, {}})[0], g[0]);
  EXPECT_EQ(ClipPerSample(g, ClipBound{7.0, {}})[0], g[0]);
}

TEST(ClipTest, GlobalNormSpansAllTensors) {
  const GradMap g{Vec({3}), Vec({4})};
  const auto c = ClipPerSample(g, ClipBound{1.0, {}});
  EXPECT_FLOAT_EQ(c[0][0], 0.6f);
  EXPECT_FLOAT_EQ(c[1][0], 0.8f);
  const auto l = ClipPerSample(g, ClipBound{0.0, {1.0, 1.0}});
  EXPECT_FLOAT_EQ(l[0][0], 1.0f);
  EXPECT_FLOAT_EQ(l[1][0], 1.0f);
}

TEST(ClipTest, LayerWiseEqualsGlobalOnSingleTensor) {
  RngStream rng(3, "clip");
  GradMap g{Tensor({5})};
  for (float& v : g[0].vec()) v = static_cast<float>(rng.Normal());
  EXPECT_EQ(ClipPerSample(g, ClipBound{0.42, {}}), ClipPerSample(g, ClipBound{0.0, {0.42}}));
}

TEST(ClipTest, RejectsNonPositiveBounds) {
  const GradMap g{Vec({1})};
  EXPECT_THROW(ClipPerSample(g, ClipBound{0.0, {}}), InvalidArgument);
  EXPECT_THROW(ClipPerSample(g, ClipBound{1.0, {-1.0}}), InvalidArgument);
  EXPECT_THROW(ClipPerSample(g, ClipBound{1.0, {1.0, 1.0}}), InvalidArgument);
}

double NoiseStd(std::size_t batch, int draws) {
  RngStream rng(99, "noise");
  const std::vector<GradMap> zeros(batch, GradMap{Vec({0})});
  double sq = 0;
  for (int i = 0; i < draws; ++i) {
    const double v = PrivatizeBatch(zeros, 1.0, ClipBound{1.0, {}}, rng)[0][0];
    sq += v * v;
  }
  return std::sqrt(sq / draws);
}

TEST(PrivatizeTest, NoiseHasUnitStd) {
  const double s = NoiseStd(1, 10000);
  EXPECT_GE(s, 0.97);
  EXPECT_LE(s, 1.03);
}

TEST(PrivatizeTest, BatchOfTwoHalvesNoise) {
  EXPECT_NEAR(NoiseStd(2, 10000), 0.5, 0.015);
}

TEST(PrivatizeTest, ZeroSigmaIsClippedMean) {
  RngStream rng(1, "zero");
  const std::vector<GradMap> batch{{Vec({3, 4})}, {Vec({0.3f, 0.4f})}};
  const auto out = PrivatizeBatch(batch, 0.0, ClipBound{1.0, {}}, rng);
  EXPECT_FLOAT_EQ(out[0][0], 0.45f);
  EXPECT_FLOAT_EQ(out[0][1], 0.6f);
  const double inf = std::numeric_limits<double>::infinity();
  const auto raw = PrivatizeBatch(batch, 0.0, ClipBound{inf, {}}, rng);
  EXPECT_FLOAT_EQ(raw[0][0], 1.65f);
  EXPECT_THROW(PrivatizeBatch(batch, 1.0, ClipBound{inf, {}}, rng), InvalidArgument);
  EXPECT_THROW(PrivatizeBatch(batch, -1.0, ClipBound{1.0, {}}, rng), InvalidArgument);
  EXPECT_THROW(PrivatizeBatch({}, 1.0, ClipBound{1.0, {}}, rng), InvalidArgument);
}

TEST(ClipEstimateTest, MedianAndDegenerateCase) {
  EXPECT_EQ(Median({3, 1, 2}), 2.0);
  EXPECT_EQ(Median({4, 1, 2, 3}), 2.5);
  EXPECT_THROW(ClipBoundFromNorms({0, 0, 0}), NumericError);
  EXPECT_THROW(Median({}), InvalidArgument);
}

TEST(ClipEstimateTest, ReproducibleWithFixedSeed) {
  RngStream data_rng(4, "aux");
  const std::size_t n = 20;
  Tensor pixels({n, 1, 8, 8});
  for (float& v : pixels.vec()) v = static_cast<float>(data_rng.Uniform());
  Tensor labels({n});
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<float>(i % 2);
  RngStream model_rng(4, "model");
  const ParamSet init = ApplyFreeze(
      BuildModel(ModelSpec{Architecture::kSmallCnn, 8, {4, 4}}, model_rng), FreezeMode::kBatchNorm);
  ClipEstimateConfig cfg;
  RngStream r1(8, "clip"), r2(8, "clip");
  const double a = EstimateClipBound(init, pixels, labels, cfg, r1);
  const double b = EstimateClipBound(init, pixels, labels, cfg, r2);
  EXPECT_GT(a, 0.0);
  EXPECT_NEAR(a, b, 5e-4);
  EXPECT_THROW(EstimateClipBound(init, Tensor({1}), Tensor({1}), cfg, r1), ShapeError);
}

}  // namespace
}  // namespace fedleak::dp
