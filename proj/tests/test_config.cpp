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

#include "fedleak/config.hpp"
#include "fedleak/error.hpp"
#include "fedleak/pipeline.hpp"
#include "gtest/gtest.h"

namespace fedleak::config {
namespace {

TEST(ConfigParseTest, TypedValues) {
  const Config c = Config::Parse(R"(
# leading comment
[train]
max_rounds:int = 20   # trailing comment
lr:float = 1e-2
[seeds]
master:u64 = 18446744073709551615
[dp]
enabled:bool = true
account_targets:float[] = 1, 3,6 , 10
[data]
schedule:string[] = 3x200:A_large, 2x1:B
source:string = "synthetic"
)");
  EXPECT_EQ(c.Int("train", "max_rounds", 0), 20);
  EXPECT_DOUBLE_EQ(c.Float("train", "lr", 0), 0.01);
  EXPECT_EQ(c.U64("seeds", "master", 0), 18446744073709551615ull);
  EXPECT_TRUE(c.Bool("dp", "enabled", false));
  EXPECT_EQ(c.FloatList("dp", "account_targets", {}), (std::vector<double>{1, 3, 6, 10}));
  EXPECT_EQ(c.StringList("data", "schedule", {}),
            (std::vector<std::string>{"3x200:A_large", "2x1:B"}));
  EXPECT_EQ(c.String("data", "source", ""), "synthetic");
  EXPECT_EQ(c.Int("train", "absent", 7), 7);
}

TEST(ConfigParseTest, Errors) {
  EXPECT_THROW(Config::Parse("x:int = 1"), ConfigError);                 // outside section
  EXPECT_THROW(Config::Parse("[a]\nx = 1"), ConfigError);                // no type
  EXPECT_THROW(Config::Parse("[a]\nx:number = 1"), ConfigError);         // unknown type
  EXPECT_THROW(Config::Parse("[a]\nx:int = 1.5"), ConfigError);          // bad int
  EXPECT_THROW(Config::Parse("[a]\nx:float = nan"), ConfigError);        // non-finite
  EXPECT_THROW(Config::Parse("[a]\nx:bool = yes"), ConfigError);         // bad bool
  EXPECT_THROW(Config::Parse("[a]\nx:int = 1\nx:int = 2"), ConfigError); // duplicate
  EXPECT_THROW(Config::Parse("[a\nx:int = 1"), ConfigError);             // bad header
  EXPECT_THROW(Config::Parse("[a]\nx:int[] = 1, b"), ConfigError);       // bad list item
  const Config c = Config::Parse("[a]\nx:int = 1");
  EXPECT_THROW(c.Float("a", "x", 0.0), ConfigError);  // type mismatch on read
}

TEST(ConfigParseTest, ValidateRejectsUnknownAndMistyped) {
  const std::map<std::pair<std::string, std::string>, Type> schema = {{{"a", "x"}, Type::kInt}};
  EXPECT_NO_THROW(Config::Parse("[a]\nx:int = 1").Validate(schema));
  EXPECT_THROW(Config::Parse("[a]\ny:int = 1").Validate(schema), ConfigError);
  EXPECT_THROW(Config::Parse("[a]\nx:float = 1").Validate(schema), ConfigError);
}

TEST(ConfigHashTest, IndependentOfLayoutSensitiveToValues) {
  const Config a = Config::Parse("[b]\ny:float = 0.5\n[a]\nx:int = 1\n");
  const Config b = Config::Parse("# same content\n[a]\nx:int   =   1\n\n[b]\ny:float = 5e-1\n");
  const Config c = Config::Parse("[a]\nx:int = 2\n[b]\ny:float = 0.5\n");
  EXPECT_EQ(a.Hash(), b.Hash());
  EXPECT_NE(a.Hash(), c.Hash());
  EXPECT_EQ(a.Hash().size(), 64u);
}

// Known SHA-256 vectors.
TEST(ConfigHashTest, Sha256Vectors) {
  const Config empty = Config::Parse("");
  EXPECT_EQ(empty.Hash(), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

}  // namespace
}  // namespace fedleak::config

namespace fedleak::pipeline {
namespace {

TEST(ExperimentConfigTest, DefaultsAndOverrides) {
  const auto e = ExperimentConfig::FromConfig(config::Config::Parse(""));
  EXPECT_EQ(e.data.schedule.size(), data::DefaultSchedule().size());
  EXPECT_EQ(e.train.max_rounds, 20u);
  EXPECT_FALSE(e.train.dp.has_value());
  const auto d = ExperimentConfig::FromConfig(config::Config::Parse("[dp]\nenabled:bool = true\n"));
  EXPECT_EQ(d.train.max_rounds, 10u);
  ASSERT_TRUE(d.train.dp.has_value());
  const auto s = ExperimentConfig::FromConfig(config::Config::Parse(""), 42);
  EXPECT_EQ(s.seed, 42u);
  EXPECT_NE(s.hash, e.hash);
}

TEST(ExperimentConfigTest, RejectsInvalidSettings) {
  auto parse = [](const std::string& text) {
    return ExperimentConfig::FromConfig(config::Config::Parse(text));
  };
  EXPECT_THROW(parse("[train]\nunknown:int = 1\n"), ConfigError);
  EXPECT_THROW(parse("[train]\nmax_rounds:int = -1\n"), ConfigError);
  EXPECT_THROW(parse("[train]\nbatch_size:int = 0\n"), ConfigError);
  EXPECT_THROW(parse("[model]\nfreeze:string = some\n"), ConfigError);
  EXPECT_THROW(parse("[model]\nfreeze:string = none\n[dp]\nenabled:bool = true\n"), ConfigError);
  EXPECT_THROW(parse("[attack]\nmode:string = cosine\n"), ConfigError);
  EXPECT_THROW(parse("[data]\nschedule:string[] = 3-200\n"), ConfigError);
  EXPECT_THROW(parse("[data]\nsource:string = import\n"), ConfigError);
}

TEST(ScheduleParseTest, PresetsAndEntries) {
  EXPECT_EQ(data::ScheduleClients(ParseSchedule({"default"})), 36u);
  EXPECT_EQ(data::ScheduleImages(ParseSchedule({"small"})), 1686u);
  const auto s = ParseSchedule({"3x200:A_large", "2x1:B_small_2"});
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].count, 3u);
  EXPECT_EQ(s[0].images, 200u);
  EXPECT_EQ(s[1].source, "B_small_2");
  EXPECT_THROW(ParseSchedule({"x200:A"}), ConfigError);
  EXPECT_THROW(ParseSchedule({"3x:A"}), ConfigError);
}

}  // namespace
}  // namespace fedleak::pipeline
