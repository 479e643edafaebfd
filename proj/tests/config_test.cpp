#include <gtest/gtest.h>

#include "isggen/config.hpp"
#include "isggen/error.hpp"
#include "isggen/image_io.hpp"
#include "support.hpp"

TEST(Config, DefaultsAreValidAndHashStable) {
  isg::RunConfig a, b;
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.hash().size(), 16u);
  EXPECT_NO_THROW(a.model.validate());
  EXPECT_NO_THROW(a.train.validate());
  EXPECT_EQ(isg::parse_config(a.to_json()).to_json(), a.to_json());
}

TEST(Config, PathsDoNotAffectHashButContentDoes) {
  isg::RunConfig a, b;
  b.paths.out = "/elsewhere";
  b.paths.dataset = "d";
  EXPECT_EQ(a.hash(), b.hash());
  b.train.seed = 3;
  EXPECT_NE(a.hash(), b.hash());
}

TEST(Config, LayeringOrder) {
  isg::testing::TempDir tmp("cfg");
  isg::write_text_file(tmp / "c.json", R"({"train": {"iterations": 10, "batch_size": 4}, "data": {"count": 5}})");
  const std::map<std::string, std::string> env = {{"ISGGEN_TRAIN__ITERATIONS", "20"}, {"ISGGEN_DATA__SEED", "9"}};
  auto cfg = isg::resolve_config((tmp / "c.json").string(), {"train.iterations=30"}, env);
  EXPECT_EQ(cfg.train.iterations, 30);  // override beats env beats file
  EXPECT_EQ(cfg.train.batch_size, 4);   // file beats default
  EXPECT_EQ(cfg.data.seed, 9u);         // env beats default
  EXPECT_EQ(cfg.data.count, 5);
  auto no_override = isg::resolve_config((tmp / "c.json").string(), {}, env);
  EXPECT_EQ(no_override.train.iterations, 20);
}

TEST(Config, OverrideValueTypes) {
  auto cfg = isg::resolve_config("", {"train.weights.perceptual=0", "model.crn_channels=[16,8,8,4]", "eval.independent=true",
                                      "paths.out=run dir"},
                                 {});
  EXPECT_EQ(cfg.train.weights.perceptual, 0.0);
  EXPECT_EQ(cfg.model.crn_channels, (std::vector<int>{16, 8, 8, 4}));
  EXPECT_TRUE(cfg.eval.independent);
  EXPECT_EQ(cfg.paths.out, "run dir");
}

TEST(Config, UnknownOrInvalidKeysAreConfigErrors) {
  auto expect_config_error = [](const std::vector<std::string>& ov) {
    try {
      isg::resolve_config("", ov, {});
      ADD_FAILURE() << ov.front();
    } catch (const isg::Error& e) {
      EXPECT_EQ(e.kind(), isg::ErrorKind::kConfig) << ov.front();
    }
  };
  expect_config_error({"train.iteratons=3"});
  expect_config_error({"nosection.key=1"});
  expect_config_error({"train.iterations"});
  expect_config_error({"train.batch_size=0"});
  expect_config_error({"train.weights.gan=-1"});
  expect_config_error({"model.noise_channels=2"});
  expect_config_error({"train.iterations=abc"});
  try {
    isg::resolve_config("", {}, {{"ISGGEN_TRAIN__NOPE", "1"}});
    ADD_FAILURE();
  } catch (const isg::Error& e) {
    EXPECT_EQ(e.kind(), isg::ErrorKind::kConfig);
  }
  EXPECT_THROW(isg::resolve_config("/nonexistent/config.json", {}, {}), isg::Error);
}

TEST(Config, Fnv1aReferenceVectors) {
  EXPECT_EQ(isg::fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(isg::fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(isg::hex64(0xabcULL), "0000000000000abc");
}
