#pragma once

// Run configuration: a JSON document with sections {data, graph, model,
// train, eval}. Every key is optional; unknown keys and mistyped values are
// rejected with the line they appear on.

#include <algorithm>
#include <cctype>
#include <tuple>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "regraph/errors.hpp"
#include "regraph/graph.hpp"
#include "regraph/models.hpp"
#include "regraph/serialize.hpp"
#include "regraph/synthetic.hpp"
#include "regraph/training.hpp"

namespace regraph {

struct DataConfig {
  std::optional<std::string> dir;
  std::optional<SyntheticConfig> synthetic;
  std::int64_t grid_minutes = 10;
  std::size_t max_gap = 6;
  // ISO week numbers; when all three are empty the last week is the test
  // split and the rest are training weeks.
  std::set<int> train_weeks;
  std::set<int> test_weeks;
  std::set<int> generality_weeks;
};

struct GraphConfig {
  GraphOptions options;
  std::size_t random_groups = 8;
  std::uint64_t random_seed = 1;
  RandomEdges random_wiring = RandomEdges::Induced;
  std::optional<std::string> distance_cache;  // REGRAPH_DISTANCE_CACHE overrides
  std::optional<std::string> routing_url;     // REGRAPH_ROUTING_URL overrides
};

struct EvalConfig {
  std::size_t q95_min_observations = 20;
  bool literal_metrics = false;  // headline MAE/MAPE use the squared-error readings
};

struct RunConfig {
  DataConfig data;
  GraphConfig graph;
  ModelSpec model;
  TrainConfig train;
  EvalConfig eval;
};

namespace detail {

// Walks a parsed document, reporting problems as "<source>:<line>: <path>: <what>".
class ConfigReader {
 public:
  ConfigReader(std::string text, std::string source) : text_(std::move(text)), source_(std::move(source)) {}

  [[noreturn]] void fail(const std::vector<std::string>& path, const std::string& what) const {
    std::string dotted;
    for (const auto& p : path) dotted += (dotted.empty() ? "" : ".") + p;
    throw ConfigError(source_ + ":" + std::to_string(line_of(path)) + ": " + (dotted.empty() ? "" : dotted + ": ") + what);
  }

  void require_object(const nlohmann::json& j, const std::vector<std::string>& path) const {
    if (!j.is_object()) fail(path, "expected an object");
  }

  void allow_keys(const nlohmann::json& j, const std::vector<std::string>& path, const std::set<std::string>& keys) const {
    require_object(j, path);
    for (const auto& [key, value] : j.items()) {
      if (!keys.count(key)) {
        auto p = path;
        p.push_back(key);
        fail(p, "unknown key");
      }
    }
  }

  template <typename T>
  void read(const nlohmann::json& obj, std::vector<std::string> path, const std::string& key, T& out) const {
    if (!obj.contains(key)) return;
    path.push_back(key);
    const auto& v = obj.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(path, "expected true or false");
      out = v.get<bool>();
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) fail(path, "expected a non-negative integer");
      out = v.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) fail(path, "expected an integer");
      out = v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) fail(path, "expected a number");
      out = v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail(path, "expected a string");
      out = v.get<std::string>();
    } else {
      try {
        out = v.get<T>();
      } catch (const nlohmann::json::exception&) {
        fail(path, "has the wrong type");
      }
    }
  }

  template <typename T>
  void read_optional(const nlohmann::json& obj, const std::vector<std::string>& path, const std::string& key,
                     std::optional<T>& out) const {
    if (!obj.contains(key) || obj.at(key).is_null()) return;
    T value{};
    read(obj, path, key, value);
    out = value;
  }

  // Wraps a parse helper that throws ConfigError so the message gains a line.
  template <typename F>
  auto parse_enum(const nlohmann::json& obj, std::vector<std::string> path, const std::string& key, F parse) const {
    std::string s;
    read(obj, path, key, s);
    path.push_back(key);
    try {
      return parse(s);
    } catch (const ConfigError& e) {
      fail(path, e.what());
    }
  }

  std::size_t line_of(const std::vector<std::string>& path) const {
    std::size_t pos = 0;
    for (const auto& key : path) {
      const std::string quoted = "\"" + key + "\"";
      std::size_t at = pos;
      while (true) {
        at = text_.find(quoted, at);
        if (at == std::string::npos) return line_at(pos);
        std::size_t after = at + quoted.size();
        while (after < text_.size() && std::isspace(static_cast<unsigned char>(text_[after]))) ++after;
        if (after < text_.size() && text_[after] == ':') break;
        at += quoted.size();
      }
      pos = at;
    }
    return line_at(pos);
  }

 private:
  std::size_t line_at(std::size_t pos) const {
    return 1 + static_cast<std::size_t>(std::count(text_.begin(), text_.begin() + static_cast<std::ptrdiff_t>(std::min(pos, text_.size())), '\n'));
  }

  std::string text_;
  std::string source_;
};

inline void read_week_set(const ConfigReader& r, const nlohmann::json& obj, const std::vector<std::string>& path,
                          const std::string& key, std::set<int>& out) {
  std::vector<int> weeks;
  r.read(obj, path, key, weeks);
  auto p = path;
  p.push_back(key);
  for (int w : weeks)
    if (w < 1 || w > 53) r.fail(p, "ISO week numbers lie in 1..53");
  out = {weeks.begin(), weeks.end()};
}

inline SyntheticConfig read_synthetic(const ConfigReader& r, const nlohmann::json& j, const std::vector<std::string>& path) {
  SyntheticConfig c;
  std::set<std::string> keys;
  const auto defaults = to_json(c);
  for (const auto& [k, v] : defaults.items()) keys.insert(k);
  r.allow_keys(j, path, keys);
  r.read(j, path, "n_sites", c.n_sites);
  r.read(j, path, "n_regions", c.n_regions);
  r.read(j, path, "days", c.days);
  r.read(j, path, "seed", c.seed);
  r.read(j, path, "start", c.start);
  r.read(j, path, "step_minutes", c.step_minutes);
  r.read(j, path, "base_range", c.base_range);
  r.read(j, path, "amplitude_range", c.amplitude_range);
  r.read(j, path, "peak_hour_range", c.peak_hour_range);
  r.read(j, path, "weekend_factor", c.weekend_factor);
  r.read(j, path, "noise_level", c.noise_level);
  r.read(j, path, "noise_persistence", c.noise_persistence);
  r.read(j, path, "coupling", c.coupling);
  r.read(j, path, "region_spread_deg", c.region_spread_deg);
  r.read(j, path, "corridor_fraction", c.corridor_fraction);
  r.read(j, path, "peak_jitter_hours", c.peak_jitter_hours);
  r.read(j, path, "missing_rate", c.missing_rate);
  r.read(j, path, "fast_site_fraction", c.fast_site_fraction);
  r.read(j, path, "force_full_level", c.force_full_level);
  r.read_optional(j, path, "force_full_site", c.force_full_site);
  try {
    validate(c);
  } catch (const ConfigError& e) {
    r.fail(path, e.what());
  }
  return c;
}

}  // namespace detail

// Parses and validates a run configuration. `source` names the document in
// error messages.
inline RunConfig parse_run_config(const std::string& text, const std::string& source = "config") {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const std::size_t line = 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(e.byte ? e.byte - 1 : 0, text.size())), '\n'));
    throw ConfigError(source + ":" + std::to_string(line) + ": invalid JSON: " + e.what());
  }
  const detail::ConfigReader r(text, source);
  RunConfig cfg;
  r.allow_keys(root, {}, {"data", "graph", "model", "train", "eval"});

  if (root.contains("data")) {
    const auto& j = root["data"];
    const std::vector<std::string> p{"data"};
    r.allow_keys(j, p, {"dir", "synthetic", "grid_minutes", "max_gap", "train_weeks", "test_weeks", "generality_weeks"});
    r.read_optional(j, p, "dir", cfg.data.dir);
    if (j.contains("synthetic") && !j["synthetic"].is_null()) cfg.data.synthetic = detail::read_synthetic(r, j["synthetic"], {"data", "synthetic"});
    r.read(j, p, "grid_minutes", cfg.data.grid_minutes);
    if (cfg.data.grid_minutes < 1) r.fail({"data", "grid_minutes"}, "must be >= 1");
    r.read(j, p, "max_gap", cfg.data.max_gap);
    detail::read_week_set(r, j, p, "train_weeks", cfg.data.train_weeks);
    detail::read_week_set(r, j, p, "test_weeks", cfg.data.test_weeks);
    detail::read_week_set(r, j, p, "generality_weeks", cfg.data.generality_weeks);
    const auto& d = cfg.data;
    for (const auto& [a, b, an, bn] : {std::tuple{&d.train_weeks, &d.test_weeks, "train_weeks", "test_weeks"},
                                      std::tuple{&d.train_weeks, &d.generality_weeks, "train_weeks", "generality_weeks"},
                                      std::tuple{&d.test_weeks, &d.generality_weeks, "test_weeks", "generality_weeks"}}) {
      for (int w : *a)
        if (b->count(w)) r.fail({"data", bn}, "week " + std::to_string(w) + " also appears in " + an);
    }
    if (d.test_weeks.empty() != d.train_weeks.empty()) {
      r.fail({"data", d.train_weeks.empty() ? "test_weeks" : "train_weeks"}, "train_weeks and test_weeks must be given together");
    }
  }

  if (root.contains("graph")) {
    const auto& j = root["graph"];
    const std::vector<std::string> p{"graph"};
    r.allow_keys(j, p, {"threshold_miles", "weights", "sigma_miles", "random_groups", "random_seed", "random_wiring",
                        "distance_cache", "routing_url"});
    r.read(j, p, "threshold_miles", cfg.graph.options.threshold_miles);
    if (j.contains("weights")) cfg.graph.options.weights = r.parse_enum(j, p, "weights", [](const std::string& s) {
      return parse_adjacency_weights(s);
    });
    r.read(j, p, "sigma_miles", cfg.graph.options.sigma_miles);
    r.read(j, p, "random_groups", cfg.graph.random_groups);
    r.read(j, p, "random_seed", cfg.graph.random_seed);
    if (j.contains("random_wiring")) cfg.graph.random_wiring = r.parse_enum(j, p, "random_wiring", parse_random_edges);
    r.read_optional(j, p, "distance_cache", cfg.graph.distance_cache);
    r.read_optional(j, p, "routing_url", cfg.graph.routing_url);
    if (!(cfg.graph.options.threshold_miles > 0.0)) r.fail({"graph", "threshold_miles"}, "must be > 0");
    if (!(cfg.graph.options.sigma_miles > 0.0)) r.fail({"graph", "sigma_miles"}, "must be > 0");
    if (cfg.graph.random_groups < 1) r.fail({"graph", "random_groups"}, "must be >= 1");
  }

  bool connectivity_given = false;
  if (root.contains("model")) {
    const auto& j = root["model"];
    const std::vector<std::string> p{"model"};
    r.allow_keys(j, p, {"architecture", "connectivity", "hidden", "lags", "horizons", "cst_depth", "seed"});
    if (j.contains("architecture")) cfg.model.architecture = r.parse_enum(j, p, "architecture", parse_architecture);
    if (j.contains("connectivity")) {
      cfg.model.connectivity = r.parse_enum(j, p, "connectivity", parse_connectivity);
      connectivity_given = true;
    }
    r.read(j, p, "hidden", cfg.model.hidden);
    r.read(j, p, "lags", cfg.model.lags);
    r.read(j, p, "horizons", cfg.model.horizons);
    r.read(j, p, "cst_depth", cfg.model.cst_depth);
    r.read(j, p, "seed", cfg.model.seed);
  }
  if (!connectivity_given) cfg.model.connectivity = required_connectivity(cfg.model.architecture);
  cfg.model.regions = cfg.graph.random_groups;
  try {
    validate(cfg.model);
  } catch (const ConfigError& e) {
    r.fail({"model"}, e.what());
  }

  if (root.contains("train")) {
    const auto& j = root["train"];
    const std::vector<std::string> p{"train"};
    r.allow_keys(j, p, {"epochs", "learning_rate", "weight_decay", "decay_rate", "smoothing", "seed", "shuffle",
                        "patience", "checkpoint_every", "clip_norm", "validation_fraction", "stop_below_val_rmse",
                        "stop_below_train_loss"});
    auto& t = cfg.train;
    r.read(j, p, "epochs", t.epochs);
    r.read(j, p, "learning_rate", t.learning_rate);
    r.read(j, p, "weight_decay", t.weight_decay);
    r.read(j, p, "decay_rate", t.decay_rate);
    r.read(j, p, "smoothing", t.smoothing);
    r.read(j, p, "seed", t.seed);
    r.read(j, p, "shuffle", t.shuffle);
    r.read(j, p, "patience", t.patience);
    r.read(j, p, "checkpoint_every", t.checkpoint_every);
    r.read(j, p, "clip_norm", t.clip_norm);
    r.read(j, p, "validation_fraction", t.validation_fraction);
    r.read_optional(j, p, "stop_below_val_rmse", t.stop_below_val_rmse);
    r.read_optional(j, p, "stop_below_train_loss", t.stop_below_train_loss);
  }
  try {
    validate(cfg.train);
  } catch (const ConfigError& e) {
    r.fail({"train"}, e.what());
  }

  if (root.contains("eval")) {
    const auto& j = root["eval"];
    const std::vector<std::string> p{"eval"};
    r.allow_keys(j, p, {"q95_min_observations", "literal_metrics"});
    r.read(j, p, "q95_min_observations", cfg.eval.q95_min_observations);
    r.read(j, p, "literal_metrics", cfg.eval.literal_metrics);
  }
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return parse_run_config(text, path);
}

// Fully resolved form, echoed into every output directory.
inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json data{{"grid_minutes", c.data.grid_minutes},
                      {"max_gap", c.data.max_gap},
                      {"train_weeks", c.data.train_weeks},
                      {"test_weeks", c.data.test_weeks},
                      {"generality_weeks", c.data.generality_weeks}};
  data["dir"] = c.data.dir ? nlohmann::json(*c.data.dir) : nlohmann::json(nullptr);
  data["synthetic"] = c.data.synthetic ? to_json(*c.data.synthetic) : nlohmann::json(nullptr);
  nlohmann::json graph{{"threshold_miles", c.graph.options.threshold_miles},
                       {"weights", to_string(c.graph.options.weights)},
                       {"sigma_miles", c.graph.options.sigma_miles},
                       {"random_groups", c.graph.random_groups},
                       {"random_seed", c.graph.random_seed},
                       {"random_wiring", to_string(c.graph.random_wiring)}};
  graph["distance_cache"] = c.graph.distance_cache ? nlohmann::json(*c.graph.distance_cache) : nlohmann::json(nullptr);
  graph["routing_url"] = c.graph.routing_url ? nlohmann::json(*c.graph.routing_url) : nlohmann::json(nullptr);
  nlohmann::json model{{"architecture", to_string(c.model.architecture)},
                       {"connectivity", to_string(c.model.connectivity)},
                       {"hidden", c.model.hidden_size()},
                       {"lags", c.model.lags},
                       {"horizons", c.model.horizons},
                       {"cst_depth", c.model.cst_depth},
                       {"seed", c.model.seed}};
  return {{"data", data},
          {"graph", graph},
          {"model", model},
          {"train", to_json(c.train)},
          {"eval", {{"q95_min_observations", c.eval.q95_min_observations}, {"literal_metrics", c.eval.literal_metrics}}}};
}

}  // namespace regraph
