#pragma once

// End-to-end steps shared by the command-line tool and the acceptance
// harness: graph construction, data preparation, training runs with their
// on-disk artifacts, and evaluation of finished runs.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "regraph/config.hpp"
#include "regraph/data.hpp"
#include "regraph/evaluation.hpp"
#include "regraph/graph.hpp"
#include "regraph/models.hpp"
#include "regraph/routing.hpp"
#include "regraph/serialize.hpp"
#include "regraph/training.hpp"

namespace regraph {

// ---------------------------------------------------------------------------
// Graphs

inline std::shared_ptr<DistanceProvider> make_distance_provider(const GraphConfig& cfg) {
  auto env = [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    return v && *v ? std::optional<std::string>(v) : std::nullopt;
  };
  const auto url = env("REGRAPH_ROUTING_URL") ? env("REGRAPH_ROUTING_URL") : cfg.routing_url;
  const auto cache = env("REGRAPH_DISTANCE_CACHE") ? env("REGRAPH_DISTANCE_CACHE") : cfg.distance_cache;
  std::shared_ptr<DistanceProvider> base;
  if (url) base = std::make_shared<HttpDistanceProvider>(*url);
  else base = std::make_shared<HaversineProvider>();
  if (cache) return std::make_shared<CachedDistanceProvider>(base, *cache);
  return base;
}

inline GraphBundle build_graph_bundle(const std::vector<SiteMeta>& sites, Connectivity strategy, const GraphConfig& cfg,
                                      DistanceProvider& distances) {
  GraphBundle b;
  b.graph = build_connected(sites, distances, cfg.options);
  b.connectivity = strategy;
  b.provenance = {{"strategy", to_string(strategy)}};
  if (strategy == Connectivity::Regional) {
    b.partition = decompose_regional(b.graph);
  } else if (strategy == Connectivity::Random) {
    if (cfg.random_groups < 1 || cfg.random_groups > sites.size()) {
      throw ConfigError("random strategy needs 1 <= regions <= " + std::to_string(sites.size()));
    }
    b.partition = decompose_random(b.graph, cfg.random_groups, cfg.random_seed, cfg.random_wiring);
    b.provenance["regions"] = cfg.random_groups;
    b.provenance["seed"] = cfg.random_seed;
    b.provenance["wiring"] = to_string(cfg.random_wiring);
  }
  return b;
}

inline double bundle_overlap_cost(const GraphBundle& b) {
  return b.partition ? overlap_cost(*b.partition) : overlap_cost(b.graph);
}

// ---------------------------------------------------------------------------
// Data

// Reorders site metadata to the graph's node order; both must list the same ids.
inline Dataset align_to_graph(Dataset ds, const SiteGraph& g) {
  std::map<std::string, SiteMeta> by_id;
  for (auto& s : ds.sites) by_id.emplace(s.site_id, s);
  if (by_id.size() != g.size()) {
    throw DataError("data has " + std::to_string(by_id.size()) + " sites, graph has " + std::to_string(g.size()));
  }
  std::vector<SiteMeta> ordered;
  for (const auto& node : g.nodes()) {
    auto it = by_id.find(node.site_id);
    if (it == by_id.end()) throw DataError("graph site " + node.site_id + " is missing from the data");
    ordered.push_back(it->second);
  }
  ds.sites = std::move(ordered);
  return ds;
}

struct WeekSplit {
  std::set<int> train, test, generality;
};

inline nlohmann::json to_json(const WeekSplit& w) {
  return {{"train_weeks", w.train}, {"test_weeks", w.test}, {"generality_weeks", w.generality}};
}

inline WeekSplit week_split_from_json(const nlohmann::json& j) {
  return {j.at("train_weeks").get<std::set<int>>(), j.at("test_weeks").get<std::set<int>>(),
          j.at("generality_weeks").get<std::set<int>>()};
}

// Configured weeks, or every week but the last for training and the last for test.
inline WeekSplit resolve_weeks(const DataConfig& cfg, const std::vector<FeatureFrame>& frames) {
  if (!cfg.train_weeks.empty()) return {cfg.train_weeks, cfg.test_weeks, cfg.generality_weeks};
  std::vector<int> seen;
  for (const auto& f : frames) {
    if (!f.valid) continue;
    const int w = timeutil::iso_week(f.time);
    if (seen.empty() || seen.back() != w) seen.push_back(w);
  }
  std::set<int> distinct(seen.begin(), seen.end());
  if (distinct.size() < 2) throw DataError("data spans fewer than two ISO weeks; set data.train_weeks and data.test_weeks");
  if (distinct.size() != seen.size()) throw DataError("ISO week numbers repeat (data spans a year boundary); set the week splits explicitly");
  WeekSplit w;
  w.test = {seen.back()};
  w.train = {seen.begin(), seen.end() - 1};
  return w;
}

struct PreparedData {
  std::vector<std::string> site_ids;  // graph node order
  FeatureScaler scaler;
  WeekSplit weeks;
  std::int64_t step_seconds = 600;
  std::shared_ptr<const FrameStore> frames;  // scaled
  std::vector<WindowSample> train, val, test, generality;
};

// Frames, scaler and split windows. Pass `scaler`/`weeks` to reuse those
// stored with a checkpoint instead of fitting/resolving them.
inline PreparedData prepare_data(const Dataset& aligned, const DataConfig& cfg, const ModelSpec& spec,
                                 double validation_fraction, const std::optional<FeatureScaler>& scaler = std::nullopt,
                                 const std::optional<WeekSplit>& weeks = std::nullopt) {
  PreparedData p;
  for (const auto& s : aligned.sites) p.site_ids.push_back(s.site_id);
  GridOptions grid;
  grid.step_seconds = cfg.grid_minutes * timeutil::kMinute;
  grid.max_gap = cfg.max_gap;
  p.step_seconds = grid.step_seconds;
  const auto raw = interpolate_to_grid(aligned.sites, aligned.records, grid);
  p.weeks = weeks ? *weeks : resolve_weeks(cfg, raw);
  p.scaler = scaler ? *scaler : FeatureScaler::fit(raw, [&](const FeatureFrame& f) {
    return p.weeks.train.count(timeutil::iso_week(f.time)) > 0;
  });
  p.frames = std::make_shared<const FrameStore>(p.scaler.apply(raw));
  const auto windows = make_windows(p.frames, spec.lags, spec.horizons);
  auto split = split_by_weeks(windows, p.weeks.train, p.weeks.test, p.weeks.generality);
  std::tie(p.train, p.val) = holdout_tail(split.train, validation_fraction);
  p.test = std::move(split.test);
  p.generality = std::move(split.generality);
  return p;
}

// Windows of K contiguous valid frames, targets left empty: inputs for
// forecasting past the end of the data.
inline std::vector<WindowSample> input_windows(const std::shared_ptr<const FrameStore>& frames, std::size_t lags) {
  std::vector<WindowSample> out;
  const auto& fs = *frames;
  const std::int64_t step = fs.size() >= 2 ? fs[1].time - fs[0].time : 0;
  std::size_t run = 0;
  for (std::size_t k = 0; k < fs.size(); ++k) {
    run = fs[k].valid && (run == 0 || fs[k].time - fs[k - 1].time == step) ? run + 1 : (fs[k].valid ? 1 : 0);
    if (run >= lags) {
      WindowSample w;
      w.store = frames;
      w.first = k + 1 - lags;
      w.lags = lags;
      w.span = lags;
      w.targets.resize(fs[k].features.rows(), 0);
      out.push_back(std::move(w));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training runs

struct RunOutcome {
  TrainReport report;
  MetricReport test;
  std::optional<MetricReport> generality;
  nlohmann::json report_json;
};

inline nlohmann::json checkpoint_meta(const GraphBundle& bundle, const PreparedData& data, const RunConfig& cfg) {
  return {{"graph", to_json(bundle)},
          {"scaler", to_json(data.scaler)},
          {"grid", {{"grid_minutes", cfg.data.grid_minutes}, {"max_gap", cfg.data.max_gap}}},
          {"splits", to_json(data.weeks)},
          {"train", to_json(cfg.train)},
          {"eval", {{"q95_min_observations", cfg.eval.q95_min_observations}}}};
}

inline std::string iso_now() {
  return timeutil::format_iso8601(std::chrono::duration_cast<std::chrono::seconds>(
                                      std::chrono::system_clock::now().time_since_epoch())
                                      .count());
}

// Trains one model and writes into `out_dir`: config.json (resolved),
// checkpoint.bin (best weights), checkpoints/epoch-<n>.bin when periodic
// checkpoints are on, train_report.json, loss.csv and meta.json (the only
// file carrying wall-clock data).
inline RunOutcome run_training(const RunConfig& cfg, const Dataset& dataset, const GraphBundle& bundle,
                               const std::string& out_dir) {
  if (bundle.connectivity != cfg.model.connectivity) {
    throw ConfigError("model " + to_string(cfg.model.architecture) + " needs a '" + to_string(cfg.model.connectivity) +
                      "' graph, got '" + to_string(bundle.connectivity) + "'");
  }
  const auto started = iso_now();
  const auto clock = std::chrono::steady_clock::now();
  const auto aligned = align_to_graph(dataset, bundle.graph);
  ModelSpec spec = cfg.model;
  if (bundle.partition) spec.regions = bundle.partition->subgraphs.size();
  const auto data = prepare_data(aligned, cfg.data, spec, cfg.train.validation_fraction);
  if (data.train.empty()) throw DataError("no training windows in weeks " + nlohmann::json(data.weeks.train).dump());
  if (data.test.empty()) throw DataError("no test windows in weeks " + nlohmann::json(data.weeks.test).dump());
  const auto ctx = GraphContext::build(bundle.graph, bundle.partition_ptr());
  ForecastModel model(spec, ctx.region_labels());

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  RunConfig resolved = cfg;
  resolved.model = spec;
  write_file_atomic(fs::path(out_dir) / "config.json", to_json(resolved).dump(2) + "\n");
  const auto meta = checkpoint_meta(bundle, data, resolved);
  const CheckpointHook hook = [&](const std::string& tag, const ForecastModel& m, const EpochStats&) {
    if (tag == "best") {
      save_checkpoint((fs::path(out_dir) / "checkpoint.bin").string(), m, meta);
    } else {
      fs::create_directories(fs::path(out_dir) / "checkpoints");
      save_checkpoint((fs::path(out_dir) / "checkpoints" / (tag + ".bin")).string(), m, meta);
    }
  };

  RunOutcome out;
  out.report = train(model, data.train, data.val, ctx, cfg.train, hook);
  save_checkpoint((fs::path(out_dir) / "checkpoint.bin").string(), model, meta);

  out.test = evaluate_predictions(collect_predictions(model, data.test, ctx), data.site_ids, cfg.eval.q95_min_observations);
  if (!data.generality.empty()) {
    out.generality = generality_inference(model, ctx, data.generality, data.weeks.train, data.weeks.generality,
                                          data.site_ids, cfg.eval.q95_min_observations);
  }
  out.report_json = {{"model", to_string(spec.architecture)},
                     {"connectivity", to_string(spec.connectivity)},
                     {"seed", spec.seed},
                     {"horizons", spec.horizons},
                     {"training", to_json(out.report, spec.horizons)},
                     {"test", to_json(out.test, data.step_seconds)},
                     {"generality", out.generality ? to_json(*out.generality, data.step_seconds) : nlohmann::json(nullptr)},
                     {"overlap_cost", bundle_overlap_cost(bundle)}};
  write_file_atomic(fs::path(out_dir) / "train_report.json", out.report_json.dump(2) + "\n");
  write_file_atomic(fs::path(out_dir) / "loss.csv", loss_trace_csv(out.report, spec.horizons));

  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : out.report.epochs) epochs.push_back({{"epoch", e.epoch}, {"seconds", e.seconds}});
  const nlohmann::json timing{
      {"started", started},
      {"finished", iso_now()},
      {"seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - clock).count()},
      {"epochs", epochs},
      {"best_checkpoint", "checkpoint.bin"},
      {"best_epoch", out.report.best_epoch}};
  write_file_atomic(fs::path(out_dir) / "meta.json", timing.dump(2) + "\n");
  return out;
}

// ---------------------------------------------------------------------------
// Frozen checkpoints

struct LoadedRun {
  Checkpoint checkpoint;
  ForecastModel model;
  GraphBundle bundle;
  GraphContext ctx;
  FeatureScaler scaler;
  WeekSplit weeks;
  DataConfig data;
  std::size_t q95_min_observations = 20;
};

inline LoadedRun load_run_checkpoint(const std::string& path) {
  auto ck = load_checkpoint(path);
  try {
    const auto& meta = ck.header.at("meta");
    auto bundle = graph_bundle_from_json(meta.at("graph"));
    auto model = model_from_checkpoint(ck);
    auto ctx = GraphContext::build(bundle.graph, bundle.partition_ptr());
    DataConfig data;
    data.grid_minutes = meta.at("grid").at("grid_minutes").get<std::int64_t>();
    data.max_gap = meta.at("grid").at("max_gap").get<std::size_t>();
    const auto scaler = scaler_from_json(meta.at("scaler"));
    const auto weeks = week_split_from_json(meta.at("splits"));
    const auto q95_min = meta.at("eval").at("q95_min_observations").get<std::size_t>();
    return {std::move(ck), std::move(model), std::move(bundle), std::move(ctx), scaler, weeks, data, q95_min};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": checkpoint metadata incomplete: " + e.what());
  } catch (const ConfigError& e) {
    throw DataError(path + ": " + e.what());
  }
}

inline PreparedData prepare_for_checkpoint(const LoadedRun& run, const Dataset& dataset) {
  return prepare_data(align_to_graph(dataset, run.bundle.graph), run.data, run.model.spec(), 0.0, run.scaler, run.weeks);
}

// `site_id,anchor_time,pred_h<k>...` for every window of K valid frames.
inline std::string predictions_csv(const LoadedRun& run, const PreparedData& data) {
  const auto windows = input_windows(data.frames, run.model.spec().lags);
  std::string out = "site_id,anchor_time";
  for (auto h : run.model.spec().horizons) out += ",pred_h" + std::to_string(h);
  out += '\n';
  std::vector<std::string> rows(data.site_ids.size());
  for (const auto& w : windows) {
    const Matrix pred = run.model.predict(w, run.ctx);
    const auto when = timeutil::format_iso8601(w.anchor_time());
    for (std::size_t s = 0; s < data.site_ids.size(); ++s) {
      rows[s] += data.site_ids[s] + ',' + when;
      for (Eigen::Index h = 0; h < pred.cols(); ++h) rows[s] += ',' + csv::format_double(pred(static_cast<Eigen::Index>(s), h));
      rows[s] += '\n';
    }
  }
  for (const auto& r : rows) out += r;
  return out;
}

struct RunEvaluation {
  RunSummary summary;
  std::optional<PredictionSet> test_predictions;
  std::vector<std::string> site_ids;
};

// Re-evaluates a finished run directory. A missing checkpoint yields a
// summary without metrics so comparison tables can mark the cell absent.
inline RunEvaluation evaluate_run_dir(const std::string& run_dir, const std::optional<std::string>& data_dir_override = {}) {
  namespace fs = std::filesystem;
  RunEvaluation ev;
  ev.summary.label = fs::path(run_dir).lexically_normal().filename().string();
  if (ev.summary.label.empty()) ev.summary.label = fs::path(run_dir).lexically_normal().parent_path().filename().string();
  nlohmann::json config;
  const auto config_path = fs::path(run_dir) / "config.json";
  if (fs::exists(config_path)) {
    try {
      config = nlohmann::json::parse(read_file(config_path));
      ev.summary.model = config.at("model").at("architecture").get<std::string>();
      ev.summary.connectivity = config.at("model").at("connectivity").get<std::string>();
      ev.summary.seed = config.at("model").at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(config_path.string() + ": " + e.what());
    }
  }
  const auto ck_path = fs::path(run_dir) / "checkpoint.bin";
  if (!fs::exists(ck_path)) {
    warn("run " + run_dir + " has no checkpoint.bin; marked absent");
    if (ev.summary.model.empty()) ev.summary.model = "unknown";
    if (ev.summary.connectivity.empty()) ev.summary.connectivity = "unknown";
    return ev;
  }
  const auto run = load_run_checkpoint(ck_path.string());
  ev.summary.model = to_string(run.model.spec().architecture);
  ev.summary.connectivity = to_string(run.model.spec().connectivity);
  ev.summary.seed = run.model.spec().seed;
  ev.summary.step_seconds = run.data.grid_minutes * timeutil::kMinute;
  ev.summary.overlap_cost = bundle_overlap_cost(run.bundle);

  std::optional<std::string> data_dir = data_dir_override;
  if (!data_dir && config.contains("data") && config["data"].contains("dir") && config["data"]["dir"].is_string())
    data_dir = config["data"]["dir"].get<std::string>();
  if (!data_dir) throw ConfigError("run " + run_dir + " records no data directory; pass --data");
  const auto data = prepare_for_checkpoint(run, load_dataset(*data_dir));
  if (data.test.empty()) throw DataError("run " + run_dir + ": no test windows in the data");
  ev.site_ids = data.site_ids;
  ev.test_predictions = collect_predictions(run.model, data.test, run.ctx);
  ev.summary.test = evaluate_predictions(*ev.test_predictions, data.site_ids, run.q95_min_observations);
  if (!data.generality.empty()) {
    ev.summary.generality = generality_inference(run.model, run.ctx, data.generality, run.weeks.train,
                                                 run.weeks.generality, data.site_ids, run.q95_min_observations);
  }
  return ev;
}

}  // namespace regraph
