#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "regraph/models.hpp"

using namespace regraph;
using fixture::random_matrix;

namespace {

DiffTensor from(const Matrix& m, bool grad = false) {
  auto t = DiffTensor::from_matrix(m);
  t.set_requires_grad(grad);
  return t;
}

std::vector<double> vec(const DiffTensor& t) { return oracle::to_vec(t); }

oracle::GradCheck check(const ParameterList& params, const std::function<DiffTensor()>& loss) {
  auto r = oracle::check_gradients(params, loss);
  EXPECT_EQ(r.failed, 0u) << "worst " << r.worst << " at " << r.worst_name;
  EXPECT_GT(r.checked, 0u);
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// GCN layer

TEST(GcnForward, IdentityCase) {
  SplitMix64 rng(1);
  GcnLayer layer(3, 3, Activation::Identity, rng);
  layer.weight = from(Matrix::Identity(3, 3), true);
  layer.bias = DiffTensor::zeros({3}, true);
  auto h = random_matrix(4, 3, rng);
  auto out = gcn_forward(layer, from(Matrix::Identity(4, 4)), from(h));
  EXPECT_TRUE(out.to_matrix() == h);
}

TEST(GcnForward, TwoNodeCompleteGraphAverages) {
  SplitMix64 rng(1);
  GcnLayer layer(2, 2, Activation::Identity, rng);
  layer.weight = from(Matrix::Identity(2, 2), true);
  layer.bias = DiffTensor::zeros({2}, true);
  Matrix n = Matrix::Constant(2, 2, 0.5);
  auto out = gcn_forward(layer, from(n), DiffTensor::matrix({{1, 0}, {0, 1}}));
  EXPECT_EQ(vec(out), (std::vector<double>{0.5, 0.5, 0.5, 0.5}));
}

TEST(GcnForward, LoopOracleRandomGraphs) {
  SplitMix64 rng(77);
  double worst = 0.0;
  for (int trial = 0; trial < 120; ++trial) {
    auto toy = fixture::toy_graph(6, 2, rng.next());
    auto g = fixture::build(toy);
    const auto act = trial % 3 == 0 ? Activation::Relu : trial % 3 == 1 ? Activation::Tanh : Activation::Identity;
    GcnLayer layer(5, 4, act, rng);
    auto h = random_matrix(6, 5, rng);
    auto out = gcn_forward(layer, from(g.normalized()), from(h));
    std::function<double(double)> f = [&](double x) {
      return act == Activation::Relu ? std::max(0.0, x) : act == Activation::Tanh ? std::tanh(x) : x;
    };
    auto expect = oracle::gcn(oracle::to_grid(g.normalized()), oracle::to_grid(h), oracle::to_grid(layer.weight),
                              vec(layer.bias), f);
    worst = std::max(worst, oracle::max_abs_diff(oracle::to_grid(out), expect));
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(GcnForward, ShapeErrors) {
  SplitMix64 rng(1);
  GcnLayer layer(3, 2, Activation::Relu, rng);
  EXPECT_THROW(gcn_forward(layer, from(Matrix::Identity(4, 4)), DiffTensor::zeros({4, 2})), ShapeError);
  EXPECT_THROW(gcn_forward(layer, from(Matrix::Identity(3, 3)), DiffTensor::zeros({4, 3})), ShapeError);
}

TEST(GcnForward, Gradients) {
  SplitMix64 rng(5);
  auto toy = fixture::toy_graph(5, 1, 9);
  auto g = fixture::build(toy);
  for (auto act : {Activation::Tanh, Activation::Sigmoid, Activation::Identity}) {
    GcnLayer layer(3, 4, act, rng);
    auto x = from(random_matrix(5, 3, rng), true);
    auto probe = from(random_matrix(5, 4, rng));
    ParameterList params{{"w", layer.weight}, {"b", layer.bias}, {"x", x}};
    check(params, [&] { return sum(mul(gcn_forward(layer, from(g.normalized()), x), probe)); });
  }
}

// ---------------------------------------------------------------------------
// Structural convolution

TEST(StructuralConv, NoNeighboursAndZeroWeight) {
  SplitMix64 rng(2);
  StructuralConv conv(3, 2, rng);
  auto v = random_matrix(3, 3, rng);
  auto out = structural_conv(conv, from(Matrix::Identity(3, 3)), from(v));
  auto expect = oracle::row_times(oracle::to_grid(v), oracle::to_grid(conv.weight));
  for (auto& row : expect)
    for (auto& x : row) x = oracle::sig(x);
  EXPECT_LE(oracle::max_abs_diff(oracle::to_grid(out), expect), 1e-15);

  conv.weight = DiffTensor::zeros({3, 2}, true);
  for (double x : vec(structural_conv(conv, from(Matrix::Identity(3, 3) + Matrix::Ones(3, 3)), from(v)))) EXPECT_EQ(x, 0.5);
}

TEST(StructuralConv, PathGraphAndRandomOracle) {
  SplitMix64 rng(31);
  double worst = 0.0;
  for (int trial = 0; trial < 120; ++trial) {
    auto toy = trial == 0 ? fixture::ToyGraph{} : fixture::toy_graph(4 + trial % 5, 2, rng.next());
    if (trial == 0) {
      for (int i = 0; i < 4; ++i) toy.sites.push_back(fixture::site("p" + std::to_string(i), "R"));
      toy.distances.set("p0", "p1", 5);
      toy.distances.set("p1", "p2", 5);
      toy.distances.set("p2", "p3", 5);
    }
    auto g = fixture::build(toy);
    const auto n = g.size();
    StructuralConv conv(3, 5, rng);
    auto v = random_matrix(n, 3, rng);
    Matrix op = Matrix::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)) + g.binary_adjacency();
    auto out = structural_conv(conv, from(op), from(v));
    auto expect = oracle::structural(oracle::to_grid(g.binary_adjacency()), oracle::to_grid(v), oracle::to_grid(conv.weight));
    worst = std::max(worst, oracle::max_abs_diff(oracle::to_grid(out), expect));
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(StructuralConv, Gradients) {
  SplitMix64 rng(6);
  auto toy = fixture::toy_graph(5, 1, 10);
  auto g = fixture::build(toy);
  StructuralConv conv(3, 2, rng);
  auto v = from(random_matrix(5, 3, rng), true);
  Matrix op = Matrix::Identity(5, 5) + g.binary_adjacency();
  auto probe = from(random_matrix(5, 2, rng));
  check({{"w", conv.weight}, {"v", v}}, [&] { return sum(mul(structural_conv(conv, from(op), v), probe)); });
}

// ---------------------------------------------------------------------------
// GRU

TEST(GruStep, ZeroWeightsHalveState) {
  SplitMix64 rng(3);
  GruCell cell(2, 3, rng);
  for (auto* w : {&cell.w_update, &cell.w_reset, &cell.w_candidate}) *w = DiffTensor::zeros({5, 3}, true);
  auto h = random_matrix(4, 3, rng);
  auto out = gru_step(cell, from(random_matrix(4, 2, rng)), from(h));
  EXPECT_LE((out.to_matrix() - 0.5 * h).cwiseAbs().maxCoeff(), 0.0);
}

TEST(GruStep, SaturatedUpdateGateTakesCandidate) {
  SplitMix64 rng(3);
  GruCell cell(2, 2, rng);
  Matrix wz = Matrix::Zero(4, 2);
  wz.topRows(2).setConstant(200.0);
  cell.w_update = from(wz, true);
  Matrix x = Matrix::Constant(3, 2, 1.0);
  auto out = gru_step(cell, from(x), DiffTensor::zeros({3, 2})).to_matrix();
  Matrix cand = (x * cell.w_candidate.to_matrix().topRows(2)).array().tanh().matrix();
  EXPECT_LE((out - cand).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(GruStep, ScalarOracle) {
  SplitMix64 rng(44);
  double worst = 0.0;
  for (int trial = 0; trial < 150; ++trial) {
    const std::size_t in = 1 + rng.below(4), hid = 1 + rng.below(4), n = 1 + rng.below(5);
    GruCell cell(in, hid, rng);
    auto x = random_matrix(n, in, rng), h = random_matrix(n, hid, rng);
    auto out = oracle::to_grid(gru_step(cell, from(x), from(h)));
    const auto gx = oracle::to_grid(x), gh = oracle::to_grid(h);
    for (std::size_t i = 0; i < n; ++i) {
      auto row = oracle::gru_row(gx[i], gh[i], oracle::to_grid(cell.w_update), oracle::to_grid(cell.w_reset),
                                 oracle::to_grid(cell.w_candidate));
      for (std::size_t c = 0; c < hid; ++c) worst = std::max(worst, std::abs(row[c] - out[i][c]));
    }
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(GruStep, StateBoundProperty) {
  SplitMix64 rng(45);
  for (int trial = 0; trial < 200; ++trial) {
    GruCell cell(3, 4, rng);
    auto h = random_matrix(5, 4, rng, -3.0, 3.0);
    auto out = gru_step(cell, from(random_matrix(5, 3, rng, -5, 5)), from(h)).to_matrix();
    EXPECT_LE(out.cwiseAbs().maxCoeff(), std::max(h.cwiseAbs().maxCoeff(), 1.0) + 1e-15);
  }
}

TEST(GruStep, Gradients) {
  SplitMix64 rng(7);
  GruCell cell(2, 3, rng);
  auto x = from(random_matrix(4, 2, rng), true);
  auto h = from(random_matrix(4, 3, rng), true);
  auto probe = from(random_matrix(4, 3, rng));
  check({{"wz", cell.w_update}, {"wr", cell.w_reset}, {"wc", cell.w_candidate}, {"x", x}, {"h", h}},
        [&] { return sum(mul(gru_step(cell, x, h), probe)); });
}

TEST(GcnGruCell, Gradients) {
  SplitMix64 rng(8);
  auto toy = fixture::toy_graph(4, 1, 12);
  auto g = fixture::build(toy);
  GcnGruCell cell(3, 2, rng);
  ParameterList params;
  cell.collect("cell", params);
  auto v = from(random_matrix(4, 3, rng));
  auto h = from(random_matrix(4, 2, rng));
  Matrix op = Matrix::Identity(4, 4) + g.binary_adjacency();
  auto probe = from(random_matrix(4, 2, rng));
  check(params, [&] { return sum(mul(cell.step(from(op), v, cell.step(from(op), v, h)), probe)); });
}

// ---------------------------------------------------------------------------
// Attention

TEST(Attention, SingleLagAndEqualScores) {
  SplitMix64 rng(9);
  AttentionAggregator one(1);
  auto s = from(random_matrix(3, 2, rng));
  std::vector<DiffTensor> states{s};
  EXPECT_TRUE(attention_aggregate(one, states).to_matrix() == s.to_matrix());

  AttentionAggregator agg(4);
  std::vector<DiffTensor> many;
  Matrix mean = Matrix::Zero(3, 2);
  for (int k = 0; k < 4; ++k) {
    many.push_back(from(random_matrix(3, 2, rng)));
    mean += many.back().to_matrix() / 4.0;
  }
  EXPECT_LE((attention_aggregate(agg, many).to_matrix() - mean).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_THROW(attention_aggregate(agg, states), ShapeError);
}

TEST(Attention, ExplicitSumOracleAndNormalization) {
  SplitMix64 rng(10);
  double worst = 0.0;
  for (int trial = 0; trial < 150; ++trial) {
    const std::size_t k = 1 + rng.below(6);
    AttentionAggregator agg(k);
    for (auto& s : agg.scores.mutable_values()) s = rng.uniform(-3, 3);
    std::vector<DiffTensor> states;
    std::vector<oracle::Grid> grids;
    for (std::size_t i = 0; i < k; ++i) {
      states.push_back(from(random_matrix(4, 3, rng)));
      grids.push_back(oracle::to_grid(states.back()));
    }
    auto out = attention_aggregate(agg, states);
    worst = std::max(worst, oracle::max_abs_diff(oracle::to_grid(out), oracle::weighted_states(vec(agg.scores), grids)));
    double total = 0.0;
    for (double w : vec(agg.weights())) total += w;
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(Attention, Gradients) {
  SplitMix64 rng(11);
  AttentionAggregator agg(3);
  for (auto& s : agg.scores.mutable_values()) s = rng.uniform(-1, 1);
  std::vector<DiffTensor> states;
  for (int k = 0; k < 3; ++k) states.push_back(from(random_matrix(2, 2, rng), true));
  auto probe = from(random_matrix(2, 2, rng));
  check({{"a", agg.scores}, {"s0", states[0]}, {"s1", states[1]}, {"s2", states[2]}},
        [&] { return sum(mul(attention_aggregate(agg, states), probe)); });
}

// ---------------------------------------------------------------------------
// Decoder and linear

TEST(Decoder, MatchesHandComposition) {
  SplitMix64 rng(12);
  Decoder dec(3, 4, 2, rng);
  auto h = random_matrix(5, 3, rng);
  Matrix hidden = (h * dec.hidden_layer.weight.to_matrix()).rowwise() +
                  Eigen::Map<const Eigen::RowVectorXd>(dec.hidden_layer.bias.values().data(), 4);
  hidden = hidden.cwiseMax(0.0);
  Matrix expect = (hidden * dec.output_layer.weight.to_matrix()).rowwise() +
                  Eigen::Map<const Eigen::RowVectorXd>(dec.output_layer.bias.values().data(), 2);
  EXPECT_LE((dec.forward(from(h)).to_matrix() - expect).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Decoder, Gradients) {
  SplitMix64 rng(13);
  Decoder dec(3, 4, 2, rng);
  ParameterList params;
  dec.collect("decoder", params);
  auto h = from(random_matrix(5, 3, rng, 0.1, 1.0));
  auto probe = from(random_matrix(5, 2, rng));
  check(params, [&] { return sum(mul(dec.forward(h), probe)); });
}

// ---------------------------------------------------------------------------
// Regional path

TEST(RegionalForward, SingleRegionIsOneGcnPlusMixer) {
  SplitMix64 rng(14);
  auto toy = fixture::toy_graph(6, 1, 3);
  auto g = fixture::build(toy);
  auto p = single_region(g);
  auto ctx = GraphContext::build(g, &p);
  std::vector<GcnLayer> gcns{GcnLayer(8, 4, Activation::Tanh, rng)};
  Linear mixer(4, 4, rng);
  auto x = from(random_matrix(6, 8, rng));
  auto gamma = regional_forward(ctx, x, gcns, mixer).to_matrix();
  auto direct = mixer.forward(gcns[0].forward(ctx.normalized, x)).to_matrix();
  EXPECT_TRUE(gamma == direct);
}

TEST(RegionalForward, ZeroMixerGivesZero) {
  SplitMix64 rng(15);
  auto toy = fixture::toy_graph(6, 2, 3);
  auto g = fixture::build(toy);
  auto p = decompose_regional(g);
  auto ctx = GraphContext::build(g, &p);
  std::vector<GcnLayer> gcns{GcnLayer(8, 3, Activation::Tanh, rng), GcnLayer(8, 3, Activation::Tanh, rng)};
  Linear mixer(3, 3, rng);
  mixer.weight = DiffTensor::zeros({3, 3}, true);
  mixer.bias = DiffTensor::zeros({3}, true);
  for (int trial = 0; trial < 5; ++trial)
    EXPECT_EQ(regional_forward(ctx, from(random_matrix(6, 8, rng)), gcns, mixer).to_matrix().cwiseAbs().maxCoeff(), 0.0);
}

TEST(RegionalForward, CrossRegionIsolation) {
  SplitMix64 rng(16);
  auto toy = fixture::toy_graph(9, 3, 21, 0.9);
  auto g = fixture::build(toy);
  auto p = decompose_regional(g);
  auto ctx = GraphContext::build(g, &p);
  std::vector<GcnLayer> gcns;
  for (int r = 0; r < 3; ++r) gcns.emplace_back(8, 4, Activation::Tanh, rng);
  Linear mixer(4, 4, rng);
  auto x = random_matrix(9, 8, rng);
  auto base = regional_forward(ctx, from(x), gcns, mixer).to_matrix();
  Matrix perturbed = x;
  for (std::size_t i = 0; i < 9; ++i)
    if (g.nodes()[i].region == "R1") perturbed.row(static_cast<Eigen::Index>(i)).setConstant(7.0);
  auto moved = regional_forward(ctx, from(perturbed), gcns, mixer).to_matrix();
  for (std::size_t i = 0; i < 9; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    if (g.nodes()[i].region == "R1") EXPECT_FALSE(base.row(row) == moved.row(row));
    else EXPECT_TRUE(base.row(row) == moved.row(row));
  }
}

TEST(RegionalForward, RegionCountMismatch) {
  SplitMix64 rng(17);
  auto toy = fixture::toy_graph(4, 2, 3);
  auto g = fixture::build(toy);
  auto p = decompose_regional(g);
  auto ctx = GraphContext::build(g, &p);
  std::vector<GcnLayer> gcns{GcnLayer(8, 3, Activation::Tanh, rng)};
  EXPECT_THROW(regional_forward(ctx, from(random_matrix(4, 8, rng)), gcns, Linear(3, 3, rng)), UsageError);
}

// ---------------------------------------------------------------------------
// Composed architectures

TEST(ForecastModel, OutputShapesAndParameterNames) {
  SplitMix64 rng(18);
  auto toy = fixture::toy_graph(6, 2, 4);
  auto g = fixture::build(toy);
  for (auto arch : fixture::all_architectures()) {
    auto ctx = fixture::context_for(arch, g);
    ForecastModel model(fixture::small_spec(arch, 4, 3, {1, 3}), ctx.region_labels());
    auto out = model.forward(fixture::random_frames(3, 6, 8, rng), ctx);
    EXPECT_EQ(out.shape(), (Shape{6, 2})) << to_string(arch);
    std::set<std::string> names;
    for (const auto& [name, t] : model.parameters()) EXPECT_TRUE(names.insert(name).second) << name;
    EXPECT_EQ(names.count("attention.scores"), model.uses_attention() ? 1u : 0u);
  }
}

TEST(ForecastModel, DefaultHiddenSizes) {
  EXPECT_EQ(default_hidden(Architecture::TGCN), 512u);
  for (auto a : {Architecture::StackedGRU, Architecture::StackedGCN, Architecture::CSTGCN, Architecture::RanTGCN,
                 Architecture::RegTGCN})
    EXPECT_EQ(default_hidden(a), 256u);
  ModelSpec s;
  s.architecture = Architecture::CSTGCN;
  s.connectivity = Connectivity::Connected;
  EXPECT_EQ(s.hidden_size(), 256u);
  EXPECT_EQ(s.cst_depth, 5u);
}

TEST(ForecastModel, ConnectivityMismatchIsConfigError) {
  auto spec = fixture::small_spec(Architecture::RegTGCN, 4, 3, {1});
  spec.connectivity = Connectivity::Connected;
  EXPECT_THROW(ForecastModel(spec, {"a"}), ConfigError);
  auto tgcn = fixture::small_spec(Architecture::TGCN, 4, 3, {1});
  tgcn.connectivity = Connectivity::Regional;
  EXPECT_THROW(ForecastModel{tgcn}, ConfigError);
  EXPECT_THROW(ForecastModel(fixture::small_spec(Architecture::RegTGCN, 4, 3, {1})), ConfigError);

  auto toy = fixture::toy_graph(6, 3, 4);
  auto g = fixture::build(toy);
  auto ctx = fixture::context_for(Architecture::RegTGCN, g);
  ForecastModel model(fixture::small_spec(Architecture::RegTGCN, 4, 3, {1}), {"R0", "R1"});
  SplitMix64 rng(1);
  EXPECT_THROW(model.forward(fixture::random_frames(3, 6, 8, rng), ctx), ConfigError);
}

TEST(ForecastModel, WrongLagCountOrWidth) {
  auto toy = fixture::toy_graph(4, 1, 4);
  auto g = fixture::build(toy);
  auto ctx = GraphContext::build(g);
  ForecastModel model(fixture::small_spec(Architecture::TGCN, 4, 3, {1}));
  SplitMix64 rng(2);
  EXPECT_THROW(model.forward(fixture::random_frames(2, 4, 8, rng), ctx), UsageError);
  EXPECT_THROW(model.forward(fixture::random_frames(3, 4, 7, rng), ctx), ShapeError);
}

TEST(ForecastModel, StackedGruIgnoresAdjacency) {
  SplitMix64 rng(19);
  auto a = fixture::toy_graph(6, 2, 4, 0.2);
  auto b = fixture::toy_graph(6, 2, 99, 0.9);
  auto ga = fixture::build(a), gb = fixture::build(b);
  ASSERT_NE(ga.edges().size(), gb.edges().size());
  ForecastModel model(fixture::small_spec(Architecture::StackedGRU, 4, 3, {1, 2}));
  auto frames = fixture::random_frames(3, 6, 8, rng);
  EXPECT_TRUE(model.forward(frames, GraphContext::build(ga)).to_matrix() ==
              model.forward(frames, GraphContext::build(gb)).to_matrix());
}

TEST(ForecastModel, CstDepthOneMatchesTgcnSpatialPath) {
  SplitMix64 rng(20);
  auto toy = fixture::toy_graph(5, 1, 8);
  auto g = fixture::build(toy);
  auto ctx = GraphContext::build(g);
  ForecastModel tgcn(fixture::small_spec(Architecture::TGCN, 4, 3, {1, 2}, 1));
  auto cst_spec = fixture::small_spec(Architecture::CSTGCN, 4, 3, {1, 2}, 2);
  cst_spec.cst_depth = 1;
  ForecastModel cst(cst_spec);
  std::map<std::string, std::pair<Shape, std::vector<double>>> tied;
  for (const auto& [name, t] : tgcn.parameters()) {
    const std::string target = name.rfind("structural.", 0) == 0 ? "gcn0." + name.substr(11) : name;
    tied[target] = {t.shape(), vec(t)};
  }
  cst.load_weights(tied);
  auto frames = fixture::random_frames(3, 5, 8, rng);
  EXPECT_TRUE(cst.forward(frames, ctx).to_matrix() == tgcn.forward(frames, ctx).to_matrix());
}

TEST(ForecastModel, SingleRegionRegTgcnMatchesHandComposition) {
  SplitMix64 rng(21);
  auto toy = fixture::toy_graph(5, 1, 8);
  auto g = fixture::build(toy);
  auto p = single_region(g, "R0");
  auto ctx = GraphContext::build(g, &p);
  ForecastModel model(fixture::small_spec(Architecture::RegTGCN, 3, 3, {1}), {"R0"});
  auto frames = fixture::random_frames(3, 5, 8, rng);
  std::vector<DiffTensor> states;
  DiffTensor h;
  for (std::size_t k = 0; k < 3; ++k) {
    auto x = from(frames[k]);
    auto structure = model.structural().forward(ctx.normalized, x);
    auto gamma = model.mixer().forward(model.region_gcns()[0].forward(ctx.normalized, x));
    if (k == 0) h = gamma;
    h = model.cell().step(ctx.conv_operator, concat({structure, gamma}, 1), h);
    states.push_back(h);
  }
  auto expect = model.decoder().forward(model.attention().forward(states)).to_matrix();
  EXPECT_TRUE(model.forward(frames, ctx).to_matrix() == expect);
}

TEST(ForecastModel, PermutationEquivarianceAllArchitectures) {
  SplitMix64 rng(22);
  for (int trial = 0; trial < 5; ++trial) {
    auto toy = fixture::toy_graph(7, 3, rng.next(), 0.5);
    auto g = fixture::build(toy);
    std::vector<std::size_t> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (auto arch : fixture::all_architectures()) {
      auto sites = toy.sites;
      if (arch == Architecture::RanTGCN) {
        // carry the random groups over as labels so both orders share them
        auto rp = decompose_random(g, 2, 5);
        for (std::size_t i = 0; i < sites.size(); ++i) sites[i].region = rp.region_of[i];
      }
      std::vector<SiteMeta> permuted;
      for (auto q : perm) permuted.push_back(sites[q]);
      auto g1 = build_connected(sites, toy.distances);
      auto g2 = build_connected(permuted, toy.distances);
      auto p1 = decompose_regional(g1), p2 = decompose_regional(g2);
      const bool partitioned = required_connectivity(arch) != Connectivity::Connected;
      auto c1 = partitioned ? GraphContext::build(g1, &p1) : GraphContext::build(g1);
      auto c2 = partitioned ? GraphContext::build(g2, &p2) : GraphContext::build(g2);
      ForecastModel model(fixture::small_spec(arch, 4, 3, {1, 2}), c1.region_labels());
      auto frames = fixture::random_frames(3, 7, 8, rng);
      std::vector<Matrix> moved;
      for (const auto& f : frames) {
        Matrix m(7, 8);
        for (std::size_t i = 0; i < 7; ++i) m.row(static_cast<Eigen::Index>(i)) = f.row(static_cast<Eigen::Index>(perm[i]));
        moved.push_back(m);
      }
      auto y1 = model.forward(frames, c1).to_matrix();
      auto y2 = model.forward(moved, c2).to_matrix();
      double worst = 0.0;
      for (std::size_t i = 0; i < 7; ++i)
        worst = std::max(worst, (y2.row(static_cast<Eigen::Index>(i)) - y1.row(static_cast<Eigen::Index>(perm[i])))
                                    .cwiseAbs()
                                    .maxCoeff());
      EXPECT_LE(worst, 1e-12) << to_string(arch);
    }
  }
}

TEST(ForecastModel, GradientsEveryArchitecture) {
  SplitMix64 rng(23);
  auto toy = fixture::toy_graph(4, 2, 6, 0.7);
  auto g = fixture::build(toy);
  for (auto arch : fixture::all_architectures()) {
    auto ctx = fixture::context_for(arch, g);
    auto spec = fixture::small_spec(arch, 3, 3, {1, 2});
    spec.cst_depth = 2;
    ForecastModel model(spec, ctx.region_labels());
    // break the zero-init symmetry of the attention scores
    for (auto& s : model.attention().scores.mutable_values()) s = rng.uniform(-0.5, 0.5);
    auto frames = fixture::random_frames(3, 4, 8, rng);
    auto target = from(random_matrix(4, 2, rng, 0.0, 1.0));
    SCOPED_TRACE(to_string(arch));
    check(model.parameters(), [&] {
      auto d = sub(model.forward(frames, ctx), target);
      return mean(mul(d, d));
    });
  }
}

TEST(ForecastModel, CopiesShareWeightsAndLoadWeightsValidates) {
  ForecastModel model(fixture::small_spec(Architecture::TGCN, 3, 2, {1}));
  ForecastModel copy = model;
  auto first = model.parameters()[0].second;
  first.mutable_values()[0] = 42.0;
  EXPECT_EQ(copy.parameters()[0].second.values()[0], 42.0);

  std::map<std::string, std::pair<Shape, std::vector<double>>> weights;
  for (const auto& [name, t] : model.parameters()) weights[name] = {t.shape(), vec(t)};
  auto missing = weights;
  missing.erase(missing.begin());
  EXPECT_THROW(model.load_weights(missing), DataError);
  auto wrong = weights;
  wrong.begin()->second.first = {1, 1};
  EXPECT_THROW(model.load_weights(wrong), DataError);
  auto extra = weights;
  extra["bogus"] = {{1}, {0.0}};
  EXPECT_THROW(model.load_weights(extra), DataError);
  EXPECT_NO_THROW(model.load_weights(weights));
}

TEST(ModelSpec, JsonRoundTrip) {
  auto s = fixture::small_spec(Architecture::RanTGCN, 16, 4, {1, 3, 12});
  s.regions = 5;
  auto back = model_spec_from_json(to_json(s));
  EXPECT_EQ(to_json(back), to_json(s));
  EXPECT_THROW(parse_architecture("LSTM"), ConfigError);
  EXPECT_EQ(parse_architecture(to_string(Architecture::StackedGCN)), Architecture::StackedGCN);
}
