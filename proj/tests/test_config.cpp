#include <gtest/gtest.h>

#include <filesystem>

#include "regraph/config.hpp"
#include "regraph/pipeline.hpp"

using namespace regraph;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_run_config(text, "cfg.json");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(RunConfig, EmptyDocumentGivesDefaults) {
  const auto c = parse_run_config("{}");
  EXPECT_EQ(c.model.architecture, Architecture::RegTGCN);
  EXPECT_EQ(c.model.connectivity, Connectivity::Regional);
  EXPECT_EQ(c.model.hidden_size(), 256u);
  EXPECT_EQ(c.model.lags, 6u);
  EXPECT_EQ(c.train.learning_rate, 1e-3);
  EXPECT_EQ(c.train.weight_decay, 1e-4);
  EXPECT_EQ(c.train.decay_rate, 0.99);
  EXPECT_EQ(c.train.patience, 20u);
  EXPECT_EQ(c.train.clip_norm, 5.0);
  EXPECT_EQ(c.graph.options.threshold_miles, 40.0);
  EXPECT_EQ(c.graph.options.sigma_miles, 20.0);
  EXPECT_EQ(c.eval.q95_min_observations, 20u);
  EXPECT_FALSE(c.data.synthetic.has_value());
}

TEST(RunConfig, ConnectivityFollowsArchitecture) {
  EXPECT_EQ(parse_run_config(R"({"model": {"architecture": "TGCN"}})").model.connectivity, Connectivity::Connected);
  EXPECT_EQ(parse_run_config(R"({"model": {"architecture": "TGCN"}})").model.hidden_size(), 512u);
  EXPECT_EQ(parse_run_config(R"({"model": {"architecture": "RanTGCN"}})").model.connectivity, Connectivity::Random);
  EXPECT_NE(error_of(R"({"model": {"architecture": "TGCN", "connectivity": "regional"}})").find("requires"),
            std::string::npos);
}

TEST(RunConfig, UnknownKeyReportsLine) {
  const std::string text = "{\n  \"model\": {\n    \"hidden\": 8,\n    \"hiden\": 9\n  }\n}\n";
  EXPECT_EQ(error_of(text), "cfg.json:4: model.hiden: unknown key");
  EXPECT_EQ(error_of("{\n\n \"modle\": {}\n}"), "cfg.json:3: modle: unknown key");
}

TEST(RunConfig, TypeErrorsReportLine) {
  EXPECT_EQ(error_of("{\"train\": {\n\"epochs\": -3}}"), "cfg.json:2: train.epochs: expected a non-negative integer");
  EXPECT_EQ(error_of("{\"train\": {\"shuffle\": 1}}"), "cfg.json:1: train.shuffle: expected true or false");
  EXPECT_EQ(error_of("{\"model\": {\"horizons\": \"1\"}}"), "cfg.json:1: model.horizons: has the wrong type");
  EXPECT_NE(error_of("{\"graph\": {\"weights\": \"cubic\"}}").find("cfg.json:1: graph.weights:"), std::string::npos);
  EXPECT_NE(error_of("{\"data\": {\"synthetic\": {\"n_sites\": 10, \"colour\": 1}}}").find("data.synthetic.colour: unknown key"),
            std::string::npos);
}

TEST(RunConfig, InvalidJsonReportsLine) {
  EXPECT_EQ(error_of("{\n\"a\": 1,\n}").rfind("cfg.json:3: invalid JSON", 0), 0u);
}

TEST(RunConfig, SemanticChecks) {
  EXPECT_NE(error_of(R"({"train": {"decay_rate": 1.5}})"), "");
  EXPECT_NE(error_of(R"({"model": {"lags": 0}})"), "");
  EXPECT_NE(error_of(R"({"data": {"train_weeks": [1, 2], "test_weeks": [2]}})").find("week 2"), std::string::npos);
  EXPECT_NE(error_of(R"({"data": {"train_weeks": [1]}})"), "");
  EXPECT_NE(error_of(R"({"data": {"train_weeks": [1], "test_weeks": [60]}})"), "");
  EXPECT_NE(error_of(R"({"graph": {"threshold_miles": 0}})"), "");
}

TEST(RunConfig, ResolvedEchoParsesBackIdentically) {
  const auto c = parse_run_config(R"({
    "data": {"synthetic": {"n_sites": 20, "n_regions": 4, "coupling": 0.8}, "train_weeks": [1], "test_weeks": [2]},
    "graph": {"weights": "binary", "random_groups": 3, "random_wiring": "complete"},
    "model": {"architecture": "RanTGCN", "hidden": 16, "horizons": [1, 3]},
    "train": {"epochs": 7, "stop_below_val_rmse": 0.1},
    "eval": {"literal_metrics": true}
  })");
  const auto echoed = to_json(c).dump();
  EXPECT_EQ(to_json(parse_run_config(echoed)).dump(), echoed);
  EXPECT_EQ(c.model.regions, 3u);
  EXPECT_EQ(c.graph.random_wiring, RandomEdges::Complete);
  EXPECT_EQ(*c.train.stop_below_val_rmse, 0.1);
}

TEST(RunConfig, MissingFileIsConfigError) {
  EXPECT_THROW(load_run_config("/nonexistent/cfg.json"), ConfigError);
}

TEST(WeekSplit, DefaultHoldsOutLastWeek) {
  std::vector<FeatureFrame> frames(3);
  frames[0].time = timeutil::parse_iso8601("2024-01-02T00:00:00Z");
  frames[1].time = timeutil::parse_iso8601("2024-01-09T00:00:00Z");
  frames[2].time = timeutil::parse_iso8601("2024-01-16T00:00:00Z");
  for (auto& f : frames) f.valid = true;
  const auto w = resolve_weeks(DataConfig{}, frames);
  EXPECT_EQ(w.train, (std::set<int>{1, 2}));
  EXPECT_EQ(w.test, (std::set<int>{3}));
  EXPECT_TRUE(w.generality.empty());
  frames.resize(1);
  EXPECT_THROW(resolve_weeks(DataConfig{}, frames), DataError);
}

TEST(RunConfig, ShippedConfigsLoad) {
  std::size_t count = 0;
  for (const auto& entry : std::filesystem::directory_iterator(REGRAPH_CONFIG_DIR)) {
    if (entry.path().extension() != ".json") continue;
    SCOPED_TRACE(entry.path().string());
    EXPECT_NO_THROW(load_run_config(entry.path().string()));
    ++count;
  }
  EXPECT_GE(count, 1u);
}
