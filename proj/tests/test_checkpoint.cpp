#include <gtest/gtest.h>

#include <filesystem>

#include "fixtures.hpp"
#include "regraph/serialize.hpp"
#include "regraph/training.hpp"

using namespace regraph;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "regraph-test-checkpoint";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitIdentical) {
  auto toy = fixture::toy_graph(6, 2, 11);
  auto g = fixture::build(toy);
  for (auto a : fixture::all_architectures()) {
    auto ctx = fixture::context_for(a, g);
    ForecastModel model(fixture::small_spec(a, 8, 3, {1, 2}), ctx.region_labels());
    const nlohmann::json meta{{"note", "x"}};
    const auto bytes = encode_checkpoint(model, meta);
    const auto ck = decode_checkpoint(bytes);
    EXPECT_EQ(ck.header.at("meta"), meta);
    const auto loaded = model_from_checkpoint(ck);
    EXPECT_EQ(encode_checkpoint(loaded, meta), bytes) << to_string(a);
  }
}

TEST(Checkpoint, ValidationRmseSurvivesSaveLoad) {
  auto toy = fixture::toy_graph(6, 2, 11);
  auto g = fixture::build(toy);
  auto ctx = fixture::context_for(Architecture::RegTGCN, g);
  SplitMix64 rng(21);
  auto windows = make_windows(fixture::random_store(30, 6, rng), 3, {1, 2});
  auto [tr, val] = holdout_tail(windows, 0.3);
  ForecastModel model(fixture::small_spec(Architecture::RegTGCN, 8, 3, {1, 2}), ctx.region_labels());
  TrainConfig cfg;
  cfg.epochs = 3;
  train(model, tr, val, ctx, cfg);
  const auto path = scratch("rmse.bin");
  save_checkpoint(path.string(), model, {});
  EXPECT_FALSE(std::filesystem::exists(path.string() + ".tmp"));
  const auto loaded = model_from_checkpoint(load_checkpoint(path.string()));
  EXPECT_EQ(rmse_per_horizon(model, val, ctx), rmse_per_horizon(loaded, val, ctx));
}

TEST(Checkpoint, HeaderLayout) {
  auto toy = fixture::toy_graph(4, 2, 1);
  auto g = fixture::build(toy);
  ForecastModel model(fixture::small_spec(Architecture::TGCN, 4, 2, {1}), {});
  const auto bytes = encode_checkpoint(model, {});
  EXPECT_EQ(bytes.substr(0, 8), std::string("RGRCKPT\n"));
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 1u);
  EXPECT_EQ(bytes[9], 0);
  std::uint64_t header_len = 0;
  for (int k = 7; k >= 0; --k) header_len = (header_len << 8) | static_cast<unsigned char>(bytes[12 + static_cast<std::size_t>(k)]);
  const auto header = nlohmann::json::parse(bytes.substr(20, header_len));
  std::size_t values = 0;
  for (const auto& t : header.at("tensors")) values += shape_size(t.at("shape").get<Shape>());
  EXPECT_EQ(bytes.size(), 20 + header_len + 8 * values);
  EXPECT_EQ(header.at("format_version"), 1);
}

TEST(Checkpoint, CorruptInputsRaiseDataError) {
  ForecastModel model(fixture::small_spec(Architecture::TGCN, 4, 2, {1}), {});
  const auto bytes = encode_checkpoint(model, {});
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), DataError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), DataError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, 14)), DataError);
  EXPECT_THROW(decode_checkpoint(bytes + "xx"), DataError);
  auto bad_version = bytes;
  bad_version[8] = 9;
  EXPECT_THROW(decode_checkpoint(bad_version), DataError);
  auto bad_json = bytes;
  bad_json[20] = '#';
  EXPECT_THROW(decode_checkpoint(bad_json), DataError);
  EXPECT_THROW(decode_checkpoint(""), DataError);
}

TEST(Checkpoint, MissingFileRaisesIoError) {
  EXPECT_THROW(load_checkpoint("/nonexistent-dir/ck.bin"), IoError);
}

TEST(Checkpoint, MismatchedWeightsRejected) {
  ForecastModel a(fixture::small_spec(Architecture::TGCN, 4, 2, {1}), {});
  auto ck = decode_checkpoint(encode_checkpoint(a, {}));
  ck.header["model"]["hidden"] = 5;
  EXPECT_ANY_THROW(model_from_checkpoint(ck));
}

TEST(GraphJson, RoundTripsEveryConnectivity) {
  auto toy = fixture::toy_graph(9, 3, 4);
  auto g = fixture::build(toy);
  std::vector<GraphBundle> bundles;
  bundles.push_back({g, Connectivity::Connected, std::nullopt, {{"strategy", "connected"}}});
  bundles.push_back({g, Connectivity::Regional, decompose_regional(g), {{"strategy", "regional"}}});
  bundles.push_back({g, Connectivity::Random, decompose_random(g, 3, 7), {{"strategy", "random"}, {"seed", 7}}});
  for (const auto& b : bundles) {
    const auto j = to_json(b);
    const auto back = graph_bundle_from_json(nlohmann::json::parse(j.dump()));
    EXPECT_EQ(to_json(back), j);
    EXPECT_TRUE(back.graph.normalized() == b.graph.normalized());
    if (b.partition) {
      EXPECT_TRUE(audit_partition(g, *back.partition).ok());
      EXPECT_EQ(overlap_cost(*back.partition), overlap_cost(*b.partition));
    }
  }
  const auto path = scratch("graph.json");
  write_graph_json(path.string(), bundles[1]);
  EXPECT_EQ(to_json(read_graph_json(path.string())), to_json(bundles[1]));
}

TEST(GraphJson, MalformedRaisesDataError) {
  auto toy = fixture::toy_graph(5, 2, 4);
  auto g = fixture::build(toy);
  const auto good = to_json(GraphBundle{g, Connectivity::Regional, decompose_regional(g), {}});
  auto j = good;
  j["format"] = "other";
  EXPECT_THROW(graph_bundle_from_json(j), DataError);
  j = good;
  j["partition"] = nullptr;
  EXPECT_THROW(graph_bundle_from_json(j), DataError);
  j = good;
  j["edges"][0][0] = 99;
  EXPECT_ANY_THROW(graph_bundle_from_json(j));
  j = good;
  j.erase("sites");
  EXPECT_THROW(graph_bundle_from_json(j), DataError);
  const auto path = scratch("bad.json");
  write_file_atomic(path, "{not json");
  EXPECT_THROW(read_graph_json(path.string()), DataError);
}

TEST(ScalerJson, RoundTrip) {
  FeatureScaler s;
  for (std::size_t c = 0; c < kFeatureCount; ++c) {
    s.lo[c] = -0.5 * static_cast<double>(c);
    s.hi[c] = 0.1 + static_cast<double>(c) / 3.0;
  }
  const auto back = scaler_from_json(nlohmann::json::parse(to_json(s).dump()));
  EXPECT_EQ(back.lo, s.lo);
  EXPECT_EQ(back.hi, s.hi);
}
