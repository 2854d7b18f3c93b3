#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "csad/config.hpp"

using namespace csad;
using nlohmann::json;
namespace fs = std::filesystem;

TEST(RunConfig, EmptyObjectGivesDefaults) {
  const RunConfig c = parse_run_config(json::object());
  EXPECT_EQ(c.net.stages, 5u);
  EXPECT_EQ(c.net.input_h, 64u);
  EXPECT_EQ(c.net.scheme, Scheme::ILC);
  EXPECT_EQ(c.train.batch_size, 2u);
  EXPECT_EQ(c.train.epochs, 100u);
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 0.05);
  EXPECT_DOUBLE_EQ(c.train.loss.lambda, 0.95);
  EXPECT_DOUBLE_EQ(c.train.loss.beta, 0.1);
}

TEST(RunConfig, ParsesEveryField) {
  const json j = json::parse(R"({
    "net": {"input_size": [32, 48], "stages": 3, "base_channels": 4, "proj_channels": 6,
            "scheme": "PLC", "fusion": "concat", "distill_gradient_mode": "student_only",
            "threshold": 0.4},
    "train": {"epochs": 3, "batch_size": 1, "learning_rate": 0.01, "seed": 9, "augment": true,
              "loss": {"alpha": 0.5, "beta": 0.2, "sigma": 2.0, "lambda": 0.9}}})");
  const RunConfig c = parse_run_config(j);
  EXPECT_EQ(c.net.input_h, 32u);
  EXPECT_EQ(c.net.input_w, 48u);
  EXPECT_EQ(c.net.fusion, Fusion::Concat);
  EXPECT_EQ(c.net.distill_gradient, DistillGradient::StudentOnly);
  EXPECT_EQ(c.train.seed, 9u);
  EXPECT_TRUE(c.train.augment);
  EXPECT_DOUBLE_EQ(c.train.loss.sigma, 2.0);
  EXPECT_EQ(parse_run_config(to_json(c)).net.proj_channels, 6u);
  EXPECT_EQ(to_json(parse_run_config(to_json(c))), to_json(c));
}

TEST(RunConfig, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(parse_run_config(json::parse(R"({"nett": {}})")), ConfigError);
  EXPECT_THROW(parse_run_config(json::parse(R"({"net": {"stage": 3}})")), ConfigError);
  EXPECT_THROW(parse_run_config(json::parse(R"({"train": {"loss": {"gamma": 1}}})")), ConfigError);
  EXPECT_THROW(parse_run_config(json::parse(R"({"net": {"scheme": "XLC"}})")), ConfigError);
  EXPECT_THROW(parse_run_config(json::parse(R"({"net": {"stages": "5"}})")), ConfigError);
  EXPECT_THROW(parse_run_config(json::parse(R"({"net": {"input_size": [60, 64]}})")), ConfigError);
  EXPECT_THROW(parse_run_config(json::parse(R"({"train": {"batch_size": 0}})")), ConfigError);
  EXPECT_THROW(parse_run_config(json::parse(R"({"train": {"loss": {"lambda": 1.5}}})")), ConfigError);
  EXPECT_THROW(parse_run_config(json::parse(R"([1, 2])")), ConfigError);
}

TEST(RunConfig, FileErrors) {
  const fs::path p = fs::temp_directory_path() / "csad_test_bad.json";
  std::ofstream(p) << "{ not json";
  EXPECT_THROW(load_run_config(p), ConfigError);
  EXPECT_THROW(load_run_config(p.string() + ".missing"), ConfigError);
}

TEST(Checkpoint, RoundTripIsLossless) {
  NetConfig n;
  n.input_h = n.input_w = 16;
  n.stages = 3;
  n.base_channels = 2;
  ModelState m = init_model(n, 4);
  m.params.at("head.w")[0] = 0.1 + 1e-17;  // not representable in short decimal
  m.params.at("head.b")[0] = -1.0 / 3.0;
  TrainConfig t;
  t.seed = 77;
  const fs::path p = fs::temp_directory_path() / "csad_test.ckpt";
  save_checkpoint(p, m, t);
  const Checkpoint ck = load_checkpoint(p);
  EXPECT_EQ(ck.model, m);
  EXPECT_EQ(ck.model.config.stages, 3u);
  EXPECT_EQ(ck.train.seed, 77u);
}

TEST(Checkpoint, RejectsCorruption) {
  NetConfig n;
  n.input_h = n.input_w = 16;
  n.stages = 3;
  n.base_channels = 2;
  const fs::path p = fs::temp_directory_path() / "csad_test_trunc.ckpt";
  save_checkpoint(p, init_model(n, 1), TrainConfig{});
  fs::resize_file(p, fs::file_size(p) - 9);
  EXPECT_THROW(load_checkpoint(p), std::runtime_error);
  std::ofstream(p) << "garbage\n";
  EXPECT_THROW(load_checkpoint(p), std::runtime_error);
}
