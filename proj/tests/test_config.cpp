#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace flextrain;
using nlohmann::json;

namespace {

json base() {
  return json::parse(R"({"seed": 7, "model": {"input_dim": 2, "hidden_dim": 32, "num_classes": 3, "K": 6}})");
}

}  // namespace

TEST(Config, DefaultsAndSeeds) {
  const RunConfig cfg = parse_run_config(base());
  EXPECT_EQ(cfg.seed, 7u);
  EXPECT_EQ(cfg.model, (NetShape{2, 32, 3, 6}));
  EXPECT_EQ(cfg.train.distill_mode, DistillMode::kCentralizedNext);
  ASSERT_TRUE(cfg.train.pi.has_value());
  EXPECT_EQ(cfg.train.pi->support(), (std::vector<std::size_t>{6}));
  EXPECT_EQ(cfg.train_stream_seed(), derive_seed(7, 1));
  EXPECT_EQ(cfg.test_data_seed(), derive_seed(7, 3));
  EXPECT_FALSE(cfg.federation.has_value());
  EXPECT_DOUBLE_EQ(cfg.data.turns, kSpiralTurns);
}

TEST(Config, UnknownKeysRejected) {
  for (const char* path : {"/extra", "/model/width", "/data/colour", "/train/learning_rate", "/output/verbose"}) {
    json j = base();
    j["data"] = json::object();
    j["train"] = json::object();
    j["output"] = json::object();
    j[json::json_pointer(path)] = 1;
    EXPECT_THROW(parse_run_config(j), ConfigError) << path;
  }
}

TEST(Config, WrongTypesRejected) {
  json j = base();
  j["train"] = {{"lr", "fast"}};
  EXPECT_THROW(parse_run_config(j), ConfigError);
  j = base();
  j["model"]["K"] = -1;
  EXPECT_THROW(parse_run_config(j), ConfigError);
  j = base();
  j["train"] = {{"distill_mode", "sideways"}};
  EXPECT_THROW(parse_run_config(j), ConfigError);
  j = base();
  j.erase("model");
  EXPECT_THROW(parse_run_config(j), ConfigError);
}

TEST(Config, PiByDepthAndFraction) {
  json j = base();
  j["train"] = {{"pi", json::array({{{"depth", 2}, {"probability", 0.25}},
                                    {{"fraction", 1.0}, {"probability", 0.5}},
                                    {{"depth", 4}, {"probability", 0.25}}})}};
  const RunConfig cfg = parse_run_config(j);
  EXPECT_EQ(cfg.train.pi->support(), (std::vector<std::size_t>{2, 4, 6}));
  EXPECT_DOUBLE_EQ(cfg.train.pi->prob(6), 0.5);

  const NetShape s{2, 32, 3, 6};
  const double f3 = static_cast<double>(prefix_param_count(s, 3)) / static_cast<double>(prefix_param_count(s, 6));
  j["train"] = {{"pi", json::array({{{"fraction", f3 + 1e-6}, {"probability", 1.0}}})}};
  EXPECT_EQ(parse_run_config(j).train.pi->support(), (std::vector<std::size_t>{3}));
}

TEST(Config, InvalidPiRejected) {
  json j = base();
  j["train"] = {{"pi", json::array({{{"depth", 2}, {"probability", 0.5}}})}};
  EXPECT_THROW(parse_run_config(j), ConfigError);
  j["train"] = {{"pi", json::array({{{"depth", 7}, {"probability", 1.0}}})}};
  EXPECT_THROW(parse_run_config(j), ConfigError);
  j["train"] = {{"pi", json::array({{{"depth", 2}, {"fraction", 0.5}, {"probability", 1.0}}})}};
  EXPECT_THROW(parse_run_config(j), ConfigError);
}

TEST(Config, CostTableDrivesPiLength) {
  json j = base();
  j["cost"] = {{"prefix_fractions", {0.15, 0.35, 1.0}}};
  j["train"] = {{"pi", json::array({{{"fraction", 0.2}, {"probability", 0.5}},
                                    {{"fraction", 1.0}, {"probability", 0.5}}})}};
  const RunConfig cfg = parse_run_config(j);
  const auto pi = resolve_pi(cfg);
  EXPECT_EQ(pi.depth(), 3u);
  EXPECT_EQ(pi.support(), (std::vector<std::size_t>{1, 3}));
  j["cost"] = {{"prefix_fractions", {0.5, 0.35, 1.0}}};
  EXPECT_THROW(parse_run_config(j), ConfigError);
  j["cost"] = {{"prefix_fractions", {0.5, 0.9}}};
  EXPECT_THROW(parse_run_config(j), ConfigError);
}

TEST(Config, FederationSection) {
  json j = base();
  j["federation"] = {{"num_devices", 4}, {"rounds", 3}, {"aggregation", "padded-average"},
                     {"weighting", "dataset-size"}, {"capacities", {0.1, 0.5, 1.0, 1.0}}};
  const RunConfig cfg = parse_run_config(j);
  ASSERT_TRUE(cfg.federation.has_value());
  EXPECT_EQ(cfg.federation->num_devices, 4u);
  EXPECT_EQ(cfg.federation->aggregation, AggregationMode::kPaddedAverage);
  EXPECT_EQ(cfg.federation->weighting, Weighting::kDatasetSize);
  j["federation"]["capacities"] = {0.1, 0.5};
  EXPECT_THROW(parse_run_config(j), ConfigError);
  j["federation"]["capacities"] = {0.0, 0.5, 1.0, 1.0};
  EXPECT_THROW(parse_run_config(j), ConfigError);
}

TEST(Config, LoadFromFile) {
  ft_test::TempDir dir;
  {
    std::ofstream os(dir.file("c.json"));
    os << base().dump();
  }
  EXPECT_EQ(load_run_config(dir.file("c.json")).seed, 7u);
  {
    std::ofstream os(dir.file("bad.json"));
    os << "{ not json";
  }
  EXPECT_THROW(load_run_config(dir.file("bad.json")), ConfigError);
  EXPECT_THROW(load_run_config(dir.file("missing.json")), ConfigError);
}
