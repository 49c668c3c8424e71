#pragma once

// Layers and the six forecasting architectures: Stacked GRU, Stacked GCN,
// T-GCN, CST-GCN, RanT-GCN and RegT-GCN.
//
// Node features are rows: every tensor that flows through a model is
// [nodes x channels], and all weights are shared across nodes, so every
// graph architecture is equivariant under node relabeling.

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "regraph/data.hpp"
#include "regraph/errors.hpp"
#include "regraph/graph.hpp"
#include "regraph/numerics.hpp"

namespace regraph {

enum class Architecture { StackedGRU, StackedGCN, TGCN, CSTGCN, RanTGCN, RegTGCN };
enum class Connectivity { Connected, Random, Regional };

inline std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::StackedGRU: return "StackedGRU";
    case Architecture::StackedGCN: return "StackedGCN";
    case Architecture::TGCN: return "TGCN";
    case Architecture::CSTGCN: return "CSTGCN";
    case Architecture::RanTGCN: return "RanTGCN";
    case Architecture::RegTGCN: return "RegTGCN";
  }
  return "?";
}

inline Architecture parse_architecture(const std::string& s) {
  for (auto a : {Architecture::StackedGRU, Architecture::StackedGCN, Architecture::TGCN, Architecture::CSTGCN,
                 Architecture::RanTGCN, Architecture::RegTGCN}) {
    if (to_string(a) == s) return a;
  }
  throw ConfigError("unknown architecture '" + s +
                    "' (expected StackedGRU, StackedGCN, TGCN, CSTGCN, RanTGCN or RegTGCN)");
}

inline std::string to_string(Connectivity c) {
  switch (c) {
    case Connectivity::Connected: return "connected";
    case Connectivity::Random: return "random";
    case Connectivity::Regional: return "regional";
  }
  return "?";
}

inline Connectivity parse_connectivity(const std::string& s) {
  if (s == "connected") return Connectivity::Connected;
  if (s == "random") return Connectivity::Random;
  if (s == "regional") return Connectivity::Regional;
  throw ConfigError("unknown connectivity '" + s + "' (expected connected, random or regional)");
}

inline Connectivity required_connectivity(Architecture a) {
  switch (a) {
    case Architecture::RegTGCN: return Connectivity::Regional;
    case Architecture::RanTGCN: return Connectivity::Random;
    default: return Connectivity::Connected;
  }
}

inline std::size_t default_hidden(Architecture a) { return a == Architecture::TGCN ? 512 : 256; }

struct ModelSpec {
  Architecture architecture = Architecture::RegTGCN;
  std::size_t hidden = 0;  // 0 selects the architecture default
  std::size_t input_features = kFeatureCount;
  std::size_t lags = 6;
  std::vector<std::size_t> horizons{1, 3, 12, 36};
  Connectivity connectivity = Connectivity::Regional;
  std::size_t regions = 8;  // group count for random connectivity
  std::size_t cst_depth = 5;
  std::uint64_t seed = 1;

  std::size_t hidden_size() const { return hidden ? hidden : default_hidden(architecture); }
};

inline void validate(const ModelSpec& s) {
  if (s.connectivity != required_connectivity(s.architecture)) {
    throw ConfigError(to_string(s.architecture) + " requires connectivity '" +
                      to_string(required_connectivity(s.architecture)) + "', got '" + to_string(s.connectivity) + "'");
  }
  if (s.lags < 1) throw ConfigError("model: K (lags) must be >= 1");
  if (s.horizons.empty()) throw ConfigError("model: at least one horizon is required");
  for (auto h : s.horizons)
    if (h < 1) throw ConfigError("model: horizons must be >= 1");
  if (s.input_features < 1) throw ConfigError("model: input_features must be >= 1");
  if (s.architecture == Architecture::CSTGCN && s.cst_depth < 1) throw ConfigError("model: cst_depth must be >= 1");
  if (s.connectivity == Connectivity::Random && s.regions < 1) throw ConfigError("model: regions must be >= 1");
}

inline nlohmann::json to_json(const ModelSpec& s) {
  return {{"architecture", to_string(s.architecture)},
          {"hidden", s.hidden_size()},
          {"input_features", s.input_features},
          {"lags", s.lags},
          {"horizons", s.horizons},
          {"connectivity", to_string(s.connectivity)},
          {"regions", s.regions},
          {"cst_depth", s.cst_depth},
          {"seed", s.seed}};
}

inline ModelSpec model_spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  s.architecture = parse_architecture(j.at("architecture").get<std::string>());
  s.hidden = j.at("hidden").get<std::size_t>();
  s.input_features = j.at("input_features").get<std::size_t>();
  s.lags = j.at("lags").get<std::size_t>();
  s.horizons = j.at("horizons").get<std::vector<std::size_t>>();
  s.connectivity = parse_connectivity(j.at("connectivity").get<std::string>());
  s.regions = j.at("regions").get<std::size_t>();
  s.cst_depth = j.at("cst_depth").get<std::size_t>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

// ---------------------------------------------------------------------------
// Graph operators consumed by the layers

struct GraphContext {
  struct Region {
    std::string label;
    std::vector<std::size_t> nodes;  // global indices
    DiffTensor normalized;           // local normalized operator
  };

  std::size_t nodes = 0;
  DiffTensor normalized;     // D^-1/2 (A + I) D^-1/2 of the full graph
  DiffTensor conv_operator;  // I + binary adjacency: self term plus neighbour sum
  std::vector<Region> regions;
  std::vector<std::size_t> scatter;  // global node -> row in the stacked region outputs

  static GraphContext build(const SiteGraph& g, const RegionalPartition* partition = nullptr) {
    GraphContext ctx;
    ctx.nodes = g.size();
    ctx.normalized = DiffTensor::from_matrix(g.normalized());
    const auto n = static_cast<Eigen::Index>(g.size());
    ctx.conv_operator = DiffTensor::from_matrix(Matrix::Identity(n, n) + g.binary_adjacency());
    if (partition) {
      if (partition->node_count() != g.size()) throw UsageError("partition does not match graph size");
      ctx.scatter.assign(g.size(), static_cast<std::size_t>(-1));
      std::size_t row = 0;
      for (const auto& s : partition->subgraphs) {
        for (auto node : s.nodes) {
          if (node >= g.size() || ctx.scatter[node] != static_cast<std::size_t>(-1)) {
            throw UsageError("partition invariant violated: node " + std::to_string(node) + " covered twice or out of range");
          }
          ctx.scatter[node] = row++;
        }
        ctx.regions.push_back({s.label, s.nodes, DiffTensor::from_matrix(s.graph.normalized())});
      }
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (ctx.scatter[i] == static_cast<std::size_t>(-1)) {
          throw UsageError("partition invariant violated: node " + std::to_string(i) + " not covered");
        }
      }
    }
    return ctx;
  }

  std::vector<std::string> region_labels() const {
    std::vector<std::string> out;
    for (const auto& r : regions) out.push_back(r.label);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Layers

using ParameterList = std::vector<std::pair<std::string, DiffTensor>>;

enum class Activation { Identity, Sigmoid, Tanh, Relu };

inline DiffTensor activate(Activation a, const DiffTensor& x) {
  switch (a) {
    case Activation::Identity: return x;
    case Activation::Sigmoid: return sigmoid(x);
    case Activation::Tanh: return tanh(x);
    case Activation::Relu: return relu(x);
  }
  return x;
}

inline void check_width(const DiffTensor& x, std::size_t width, const char* layer) {
  if (x.rank() != 2 || x.cols() != width) {
    throw ShapeError(std::string(layer) + ": expected [n x " + std::to_string(width) + "] input, got " +
                     shape_string(x.shape()));
  }
}

struct Linear {
  DiffTensor weight;  // [in x out]
  DiffTensor bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, SplitMix64& rng)
      : weight(init_uniform({in, out}, in, rng)), bias(init_uniform({out}, in, rng)) {}

  DiffTensor forward(const DiffTensor& x) const {
    check_width(x, weight.rows(), "linear");
    return add_bias(matmul(x, weight), bias);
  }

  void collect(const std::string& prefix, ParameterList& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

// act(N . H . W + b) with N a precomputed normalized adjacency operator.
struct GcnLayer {
  DiffTensor weight;  // [in x out]
  DiffTensor bias;    // [out]
  Activation activation = Activation::Relu;

  GcnLayer() = default;
  GcnLayer(std::size_t in, std::size_t out, Activation act, SplitMix64& rng)
      : weight(init_uniform({in, out}, in, rng)), bias(init_uniform({out}, in, rng)), activation(act) {}

  DiffTensor forward(const DiffTensor& normalized, const DiffTensor& h) const {
    check_width(h, weight.rows(), "gcn");
    if (normalized.rank() != 2 || normalized.rows() != h.rows() || normalized.cols() != h.rows()) {
      throw ShapeError("gcn: adjacency " + shape_string(normalized.shape()) + " does not match features " +
                       shape_string(h.shape()));
    }
    return activate(activation, add_bias(matmul(normalized, matmul(h, weight)), bias));
  }

  void collect(const std::string& prefix, ParameterList& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

inline DiffTensor gcn_forward(const GcnLayer& layer, const DiffTensor& normalized, const DiffTensor& h) {
  return layer.forward(normalized, h);
}

// sigmoid(W eta_i + W sum_{k in N(i)} eta_k): one weight shared by the self
// term and the neighbour sum, i.e. sigmoid(((I + B) V) W).
struct StructuralConv {
  DiffTensor weight;  // [in x out]

  StructuralConv() = default;
  StructuralConv(std::size_t in, std::size_t out, SplitMix64& rng) : weight(init_uniform({in, out}, in, rng)) {}

  DiffTensor forward(const DiffTensor& conv_operator, const DiffTensor& v) const {
    check_width(v, weight.rows(), "structural_conv");
    if (conv_operator.rank() != 2 || conv_operator.rows() != v.rows() || conv_operator.cols() != v.rows()) {
      throw ShapeError("structural_conv: adjacency " + shape_string(conv_operator.shape()) + " does not match " +
                       shape_string(v.shape()));
    }
    return sigmoid(matmul(conv_operator, matmul(v, weight)));
  }

  void collect(const std::string& prefix, ParameterList& out) const { out.emplace_back(prefix + ".weight", weight); }
};

inline DiffTensor structural_conv(const StructuralConv& conv, const DiffTensor& conv_operator, const DiffTensor& v) {
  return conv.forward(conv_operator, v);
}

// Gated recurrent update on [n x in] inputs and [n x hidden] state:
//   z = sigmoid([x, h] Wz), r = sigmoid([x, h] Wr)
//   h~ = tanh([x, h * r] W), h' = (1 - z) * h + z * h~
struct GruCell {
  DiffTensor w_update;  // [(in + hidden) x hidden]
  DiffTensor w_reset;
  DiffTensor w_candidate;
  std::size_t input_width = 0;
  std::size_t hidden = 0;

  GruCell() = default;
  GruCell(std::size_t in, std::size_t hid, SplitMix64& rng)
      : w_update(init_uniform({in + hid, hid}, in + hid, rng)),
        w_reset(init_uniform({in + hid, hid}, in + hid, rng)),
        w_candidate(init_uniform({in + hid, hid}, in + hid, rng)),
        input_width(in),
        hidden(hid) {}

  DiffTensor step(const DiffTensor& x, const DiffTensor& h) const {
    check_width(x, input_width, "gru input");
    check_width(h, hidden, "gru state");
    if (x.rows() != h.rows()) throw ShapeError("gru: input and state row counts differ");
    const auto xh = concat({x, h}, 1);
    const auto z = sigmoid(matmul(xh, w_update));
    const auto r = sigmoid(matmul(xh, w_reset));
    const auto candidate = tanh(matmul(concat({x, mul(h, r)}, 1), w_candidate));
    return add(mul(one_minus(z), h), mul(z, candidate));
  }

  void collect(const std::string& prefix, ParameterList& out) const {
    out.emplace_back(prefix + ".w_update", w_update);
    out.emplace_back(prefix + ".w_reset", w_reset);
    out.emplace_back(prefix + ".w_candidate", w_candidate);
  }
};

inline DiffTensor gru_step(const GruCell& cell, const DiffTensor& conv_out, const DiffTensor& h_prev) {
  return cell.step(conv_out, h_prev);
}

// GRU whose input transformation is the structural graph convolution.
struct GcnGruCell {
  StructuralConv conv;
  GruCell gru;

  GcnGruCell() = default;
  GcnGruCell(std::size_t in, std::size_t hid, SplitMix64& rng) : conv(in, hid, rng), gru(hid, hid, rng) {}

  DiffTensor step(const DiffTensor& conv_operator, const DiffTensor& v, const DiffTensor& h) const {
    return gru.step(conv.forward(conv_operator, v), h);
  }

  void collect(const std::string& prefix, ParameterList& out) const {
    conv.collect(prefix + ".conv", out);
    gru.collect(prefix + ".gru", out);
  }
};

// Softmax over learnable per-lag scores, then the weighted sum of states.
struct AttentionAggregator {
  DiffTensor scores;  // [K]

  AttentionAggregator() = default;
  explicit AttentionAggregator(std::size_t lags) : scores(DiffTensor::zeros({lags}, true)) {}

  DiffTensor weights() const { return softmax(scores); }

  DiffTensor forward(std::span<const DiffTensor> states) const {
    if (states.size() != scores.size()) {
      throw ShapeError("attention: " + std::to_string(states.size()) + " states for " + std::to_string(scores.size()) +
                       " scores");
    }
    const auto w = weights();
    DiffTensor out = mul(element(w, 0), states[0]);
    for (std::size_t k = 1; k < states.size(); ++k) out = add(out, mul(element(w, k), states[k]));
    return out;
  }

  void collect(const std::string& prefix, ParameterList& out) const { out.emplace_back(prefix + ".scores", scores); }
};

inline DiffTensor attention_aggregate(const AttentionAggregator& agg, std::span<const DiffTensor> states) {
  return agg.forward(states);
}

// ReLU(H W0 + b0) W1 + b1; no activation on the output.
struct Decoder {
  Linear hidden_layer;
  Linear output_layer;

  Decoder() = default;
  Decoder(std::size_t in, std::size_t hid, std::size_t out, SplitMix64& rng)
      : hidden_layer(in, hid, rng), output_layer(hid, out, rng) {}

  DiffTensor forward(const DiffTensor& h) const { return output_layer.forward(relu(hidden_layer.forward(h))); }

  void collect(const std::string& prefix, ParameterList& out) const {
    hidden_layer.collect(prefix + ".0", out);
    output_layer.collect(prefix + ".1", out);
  }
};

// Per-region GCNs on their subgraphs, node embeddings scattered back into
// global order, then one node-shared affine mixer.
inline DiffTensor regional_forward(const GraphContext& ctx, const DiffTensor& x, std::span<const GcnLayer> region_gcns,
                                   const Linear& mixer) {
  if (ctx.regions.size() != region_gcns.size()) {
    throw UsageError("regional_forward: " + std::to_string(region_gcns.size()) + " region GCNs for " +
                     std::to_string(ctx.regions.size()) + " regions");
  }
  if (ctx.scatter.size() != x.rows()) throw UsageError("regional_forward: partition does not cover every node");
  std::vector<DiffTensor> parts;
  parts.reserve(ctx.regions.size());
  for (std::size_t r = 0; r < ctx.regions.size(); ++r) {
    const auto& region = ctx.regions[r];
    parts.push_back(region_gcns[r].forward(region.normalized, index_rows(x, region.nodes)));
  }
  return mixer.forward(index_rows(concat(parts, 0), ctx.scatter));
}

// ---------------------------------------------------------------------------
// Architectures

class ForecastModel {
 public:
  // `region_labels` fixes the regional GCN set for RegT-GCN/RanT-GCN and must
  // match the GraphContext used at forward time.
  explicit ForecastModel(ModelSpec spec, std::vector<std::string> region_labels = {})
      : spec_(std::move(spec)), region_labels_(std::move(region_labels)) {
    validate(spec_);
    const auto hid = spec_.hidden_size();
    const auto in = spec_.input_features;
    const auto out = spec_.horizons.size();
    SplitMix64 rng(spec_.seed);
    switch (spec_.architecture) {
      case Architecture::StackedGRU:
        gru_layers_.emplace_back(in, hid, rng);
        gru_layers_.emplace_back(hid, hid, rng);
        break;
      case Architecture::StackedGCN:
        gcn_stack_.emplace_back(in * spec_.lags, hid, Activation::Relu, rng);
        gcn_stack_.emplace_back(hid, hid, Activation::Relu, rng);
        break;
      case Architecture::TGCN:
        structural_ = GcnLayer(in, hid, Activation::Tanh, rng);
        cell_ = GcnGruCell(hid, hid, rng);
        break;
      case Architecture::CSTGCN:
        for (std::size_t d = 0; d < spec_.cst_depth; ++d)
          gcn_stack_.emplace_back(d == 0 ? in : hid, hid, Activation::Tanh, rng);
        cell_ = GcnGruCell(hid, hid, rng);
        break;
      case Architecture::RanTGCN:
      case Architecture::RegTGCN:
        if (region_labels_.empty()) throw ConfigError(to_string(spec_.architecture) + " needs at least one region");
        structural_ = GcnLayer(in, hid, Activation::Tanh, rng);
        for (std::size_t r = 0; r < region_labels_.size(); ++r)
          region_gcns_.emplace_back(in, hid, Activation::Tanh, rng);
        mixer_ = Linear(hid, hid, rng);
        cell_ = GcnGruCell(2 * hid, hid, rng);
        break;
    }
    attention_ = AttentionAggregator(spec_.lags);
    decoder_ = Decoder(hid, hid, out, rng);
    collect_parameters();
  }

  const ModelSpec& spec() const { return spec_; }
  const std::vector<std::string>& region_labels() const { return region_labels_; }
  const ParameterList& parameters() const { return parameters_; }

  std::vector<DiffTensor> parameter_tensors() const {
    std::vector<DiffTensor> out;
    for (const auto& [name, t] : parameters_) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto& [name, t] : parameters_) total += t.size();
    return total;
  }

  bool uses_attention() const {
    return spec_.architecture != Architecture::StackedGRU && spec_.architecture != Architecture::StackedGCN;
  }

  // Predictions [n x |horizons|] for K input frames (oldest first).
  DiffTensor forward(std::span<const Matrix> frames, const GraphContext& ctx) const {
    if (frames.size() != spec_.lags) {
      throw UsageError("forward: model expects K=" + std::to_string(spec_.lags) + " frames, got " +
                       std::to_string(frames.size()));
    }
    std::vector<DiffTensor> xs;
    for (const auto& f : frames) {
      if (static_cast<std::size_t>(f.cols()) != spec_.input_features) {
        throw ShapeError("forward: frame has " + std::to_string(f.cols()) + " features, model expects " +
                         std::to_string(spec_.input_features));
      }
      if (static_cast<std::size_t>(f.rows()) != ctx.nodes) throw ShapeError("forward: frame rows do not match graph");
      xs.push_back(DiffTensor::from_matrix(f));
    }
    const std::size_t n = ctx.nodes;
    const std::size_t hid = spec_.hidden_size();

    switch (spec_.architecture) {
      case Architecture::StackedGRU: {
        DiffTensor h1 = DiffTensor::zeros({n, hid});
        DiffTensor h2 = DiffTensor::zeros({n, hid});
        for (const auto& x : xs) {
          h1 = gru_layers_[0].step(x, h1);
          h2 = gru_layers_[1].step(h1, h2);
        }
        return decoder_.forward(h2);
      }
      case Architecture::StackedGCN: {
        DiffTensor h = concat(xs, 1);
        for (const auto& layer : gcn_stack_) h = layer.forward(ctx.normalized, h);
        return decoder_.forward(h);
      }
      default: break;
    }

    const bool regional = spec_.architecture == Architecture::RegTGCN || spec_.architecture == Architecture::RanTGCN;
    if (regional && ctx.region_labels() != region_labels_) {
      throw ConfigError("forward: graph partition regions do not match the model's regions");
    }
    std::vector<DiffTensor> states;
    DiffTensor h = DiffTensor::zeros({n, hid});
    for (std::size_t k = 0; k < xs.size(); ++k) {
      DiffTensor v;
      switch (spec_.architecture) {
        case Architecture::TGCN:
          v = structural_.forward(ctx.normalized, xs[k]);
          break;
        case Architecture::CSTGCN:
          v = xs[k];
          for (const auto& layer : gcn_stack_) v = layer.forward(ctx.normalized, v);
          break;
        default: {
          const auto structure = structural_.forward(ctx.normalized, xs[k]);
          const auto gamma = regional_forward(ctx, xs[k], region_gcns_, mixer_);
          if (k == 0) h = gamma;  // h_0 = gamma_0
          v = concat({structure, gamma}, 1);
          break;
        }
      }
      h = cell_.step(ctx.conv_operator, v, h);
      states.push_back(h);
    }
    return decoder_.forward(attention_.forward(states));
  }

  DiffTensor forward(const WindowSample& w, const GraphContext& ctx) const {
    std::vector<Matrix> frames;
    frames.reserve(w.lags);
    for (std::size_t k = 0; k < w.lags; ++k) frames.push_back(w.input(k));
    return forward(frames, ctx);
  }

  // Gradient-free inference.
  Matrix predict(const WindowSample& w, const GraphContext& ctx) const {
    NoGradGuard guard;
    return forward(w, ctx).to_matrix();
  }

  // Copies weight values by name; every parameter must be present with the
  // same shape.
  void load_weights(const std::map<std::string, std::pair<Shape, std::vector<double>>>& weights) {
    for (auto& [name, t] : parameters_) {
      auto it = weights.find(name);
      if (it == weights.end()) throw DataError("checkpoint is missing weight " + name);
      if (it->second.first != t.shape()) {
        throw DataError("weight " + name + " has shape " + shape_string(it->second.first) + ", model expects " +
                        shape_string(t.shape()));
      }
      std::copy(it->second.second.begin(), it->second.second.end(), t.mutable_values().begin());
    }
    if (weights.size() != parameters_.size()) throw DataError("checkpoint carries weights the model does not define");
  }

  // Layer access for tests and weight tying.
  GcnLayer& structural() { return structural_; }
  std::vector<GcnLayer>& gcn_stack() { return gcn_stack_; }
  std::vector<GcnLayer>& region_gcns() { return region_gcns_; }
  Linear& mixer() { return mixer_; }
  GcnGruCell& cell() { return cell_; }
  std::vector<GruCell>& gru_layers() { return gru_layers_; }
  AttentionAggregator& attention() { return attention_; }
  Decoder& decoder() { return decoder_; }

 private:
  void collect_parameters() {
    parameters_.clear();
    for (std::size_t i = 0; i < gru_layers_.size(); ++i) gru_layers_[i].collect("gru" + std::to_string(i), parameters_);
    const bool temporal = uses_attention();
    for (std::size_t i = 0; i < gcn_stack_.size(); ++i) gcn_stack_[i].collect("gcn" + std::to_string(i), parameters_);
    if (spec_.architecture == Architecture::TGCN || spec_.architecture == Architecture::RegTGCN ||
        spec_.architecture == Architecture::RanTGCN) {
      structural_.collect("structural", parameters_);
    }
    for (std::size_t r = 0; r < region_gcns_.size(); ++r) region_gcns_[r].collect("region." + region_labels_[r], parameters_);
    if (!region_gcns_.empty()) mixer_.collect("mixer", parameters_);
    if (temporal) {
      cell_.collect("cell", parameters_);
      attention_.collect("attention", parameters_);
    }
    decoder_.collect("decoder", parameters_);
  }

  ModelSpec spec_;
  std::vector<std::string> region_labels_;
  std::vector<GruCell> gru_layers_;
  std::vector<GcnLayer> gcn_stack_;
  GcnLayer structural_;
  std::vector<GcnLayer> region_gcns_;
  Linear mixer_;
  GcnGruCell cell_;
  AttentionAggregator attention_;
  Decoder decoder_;
  ParameterList parameters_;
};

}  // namespace regraph
