// regraph: synth, build-graph, train, predict, evaluate, analyze-graph.
// Exit codes: 0 success, 1 internal/numeric failure, 2 config or usage
// error, 3 data or I/O error.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "regraph/regraph.hpp"

namespace fs = std::filesystem;
using namespace regraph;

namespace {

void write_meta(const fs::path& dir, const std::string& command, nlohmann::json extra = nlohmann::json::object()) {
  extra["command"] = command;
  extra["written"] = iso_now();
  write_file_atomic(dir / "meta.json", extra.dump(2) + "\n");
}

RunConfig config_or_default(const std::string& path) { return path.empty() ? RunConfig{} : load_run_config(path); }

int cmd_synth(const std::string& config_path, const std::string& out) {
  const auto cfg = config_or_default(config_path);
  const SyntheticConfig syn = cfg.data.synthetic.value_or(SyntheticConfig{});
  const auto data = generate_synthetic(syn);
  write_synthetic(out, syn, data);
  write_meta(out, "synth");
  std::cout << "synth: " << data.sites.size() << " sites, " << data.records.size() << " records -> " << out << "\n";
  return 0;
}

struct BuildGraphArgs {
  std::string sites, strategy = "regional", out, config;
  std::optional<std::size_t> regions;
  std::optional<std::uint64_t> seed;
  std::optional<double> threshold, sigma;
  std::optional<std::string> weights, wiring;
};

int cmd_build_graph(const BuildGraphArgs& a) {
  auto cfg = config_or_default(a.config);
  Connectivity strategy;
  try {
    strategy = parse_connectivity(a.strategy);
  } catch (const ConfigError&) {
    throw ConfigError("--strategy must be connected, random or regional, got '" + a.strategy + "'");
  }
  if (a.regions) cfg.graph.random_groups = *a.regions;
  if (a.seed) cfg.graph.random_seed = *a.seed;
  if (a.threshold) cfg.graph.options.threshold_miles = *a.threshold;
  if (a.sigma) cfg.graph.options.sigma_miles = *a.sigma;
  if (a.weights) cfg.graph.options.weights = parse_adjacency_weights(*a.weights);
  if (a.wiring) cfg.graph.random_wiring = parse_random_edges(*a.wiring);
  if (!(cfg.graph.options.threshold_miles > 0.0) || !(cfg.graph.options.sigma_miles > 0.0)) {
    throw ConfigError("--threshold and --sigma must be > 0");
  }
  const auto sites = read_sites_csv(a.sites);
  auto provider = make_distance_provider(cfg.graph);
  const auto bundle = build_graph_bundle(sites, strategy, cfg.graph, *provider);
  if (const auto parent = fs::path(a.out).parent_path(); !parent.empty()) fs::create_directories(parent);
  write_graph_json(a.out, bundle);
  std::cout << "graph: " << bundle.graph.size() << " nodes, " << bundle.graph.edges().size() << " edges, strategy "
            << to_string(strategy) << "\n";
  if (bundle.partition) {
    std::cout << "subgraphs: " << bundle.partition->subgraphs.size() << "\n";
    for (const auto& s : bundle.partition->subgraphs)
      std::cout << "  " << s.label << ": " << s.nodes.size() << " nodes, " << s.graph.edges().size() << " edges\n";
  }
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir, const std::string& graph_path,
              const std::string& out) {
  auto cfg = load_run_config(config_path);
  cfg.data.dir = fs::absolute(data_dir).lexically_normal().string();
  const auto bundle = read_graph_json(graph_path);
  const auto dataset = load_dataset(data_dir);
  const auto outcome = run_training(cfg, dataset, bundle, out);
  std::cout << "train: " << outcome.report.epochs.size() << " epochs (" << outcome.report.stop_reason
            << "), best epoch " << outcome.report.best_epoch << "\n";
  for (std::size_t h = 0; h < outcome.test.horizons.size(); ++h)
    std::cout << "  test h" << outcome.test.horizons[h] << ": rmse " << csv::format_double(outcome.test.per_horizon[h].rmse)
              << "\n";
  return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& data_dir, const std::string& out) {
  const auto run = load_run_checkpoint(checkpoint);
  const auto data = prepare_for_checkpoint(run, load_dataset(data_dir));
  if (const auto parent = fs::path(out).parent_path(); !parent.empty()) fs::create_directories(parent);
  write_file_atomic(out, predictions_csv(run, data));
  std::cout << "predict: wrote " << out << "\n";
  return 0;
}

int cmd_evaluate(const std::vector<std::string>& runs, const std::string& out, const std::optional<std::string>& data,
                 bool literal) {
  std::vector<RunSummary> summaries;
  fs::create_directories(fs::path(out) / "timeseries");
  for (const auto& dir : runs) {
    auto ev = evaluate_run_dir(dir, data);
    if (ev.test_predictions)
      write_file_atomic(fs::path(out) / "timeseries" / (ev.summary.label + ".csv"),
                        timeseries_csv(*ev.test_predictions, ev.site_ids));
    summaries.push_back(std::move(ev.summary));
  }
  write_file_atomic(fs::path(out) / "metrics.csv", metrics_csv(summaries));
  write_file_atomic(fs::path(out) / "comparison.json", comparison_json(summaries, literal).dump(2) + "\n");
  write_meta(out, "evaluate");
  std::cout << metrics_csv(summaries);
  return 0;
}

int cmd_analyze_graph(const std::string& graph_path, const std::string& out) {
  const auto bundle = read_graph_json(graph_path);
  const auto& g = bundle.graph;
  nlohmann::json degrees = nlohmann::json::object();
  std::size_t dmin = g.size(), dmax = 0;
  double dsum = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto d = degree(g, i);
    degrees[g.nodes()[i].site_id] = d;
    dmin = std::min(dmin, d);
    dmax = std::max(dmax, d);
    dsum += static_cast<double>(d);
  }
  const auto regional = decompose_regional(g);
  nlohmann::json report{{"nodes", g.size()},
                        {"edges", g.edges().size()},
                        {"connectivity", to_string(bundle.connectivity)},
                        {"degree", {{"min", dmin}, {"max", dmax}, {"mean", g.size() ? dsum / static_cast<double>(g.size()) : 0.0}}},
                        {"degrees", degrees}};
  nlohmann::json costs{{"connected", overlap_cost(g)}, {"regional", overlap_cost(regional)}};
  nlohmann::json audits{{"regional", nullptr}};
  auto audit_json = [](const PartitionAudit& a) {
    return nlohmann::json{{"uncovered", a.uncovered}, {"duplicated", a.duplicated},
                          {"degree_violations", a.degree_violations}, {"foreign_edges", a.foreign_edges}, {"ok", a.ok()}};
  };
  audits["regional"] = audit_json(audit_partition(g, regional));
  if (bundle.partition) {
    costs["stored_" + to_string(bundle.partition->kind)] = overlap_cost(*bundle.partition);
    audits["stored_" + to_string(bundle.partition->kind)] = audit_json(audit_partition(g, *bundle.partition));
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& s : bundle.partition->subgraphs)
      groups.push_back({{"label", s.label}, {"nodes", s.nodes.size()}, {"edges", s.graph.edges().size()}});
    report["partition"] = groups;
  }
  report["overlap_cost"] = costs;
  report["overlap_reduction"] = overlap_cost(regional) / overlap_cost(g);
  report["degree_audit"] = audits;
  const auto text = report.dump(2) + "\n";
  if (!out.empty()) write_file_atomic(out, text);
  std::cout << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Regional graph forecasting of parking occupancy"};
  app.require_subcommand(1);

  std::string config, out, data, graph, checkpoint;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--config", config, "Run config (data.synthetic section)");
  synth->add_option("--out", out, "Output directory")->required();

  BuildGraphArgs bg;
  auto* build = app.add_subcommand("build-graph", "Build the site graph and its partition");
  build->add_option("--sites", bg.sites, "sites.csv")->required();
  build->add_option("--strategy", bg.strategy, "connected|random|regional")->capture_default_str();
  build->add_option("--regions", bg.regions, "Group count for the random strategy");
  build->add_option("--seed", bg.seed, "Seed for the random strategy");
  build->add_option("--threshold", bg.threshold, "Edge threshold in miles");
  build->add_option("--weights", bg.weights, "gaussian|binary|raw");
  build->add_option("--sigma", bg.sigma, "Gaussian kernel width in miles");
  build->add_option("--wiring", bg.wiring, "Random subgraph edges: induced|complete");
  build->add_option("--config", bg.config, "Run config supplying graph defaults");
  build->add_option("--out", bg.out, "graph.json")->required();

  auto* trn = app.add_subcommand("train", "Train one model");
  trn->add_option("--config", config, "Run config")->required();
  trn->add_option("--data", data, "Data directory (sites.csv, records.csv)")->required();
  trn->add_option("--graph", graph, "graph.json")->required();
  trn->add_option("--out", out, "Run directory")->required();

  auto* pred = app.add_subcommand("predict", "Frozen inference from a checkpoint");
  pred->add_option("--checkpoint", checkpoint, "checkpoint.bin")->required();
  pred->add_option("--data", data, "Data directory")->required();
  pred->add_option("--out", out, "preds.csv")->required();

  std::vector<std::string> runs;
  std::optional<std::string> eval_data;
  bool literal = false;
  auto* eval = app.add_subcommand("evaluate", "Metrics and comparison tables over run directories");
  eval->add_option("--runs", runs, "Run directories")->required();
  eval->add_option("--out", out, "Report directory")->required();
  eval->add_option("--data", eval_data, "Data directory (defaults to the one each run trained on)");
  eval->add_flag("--literal-metrics", literal, "Headline MAE/MAPE use the squared-error readings");

  auto* analyze = app.add_subcommand("analyze-graph", "Degrees, degree audit and overlap costs");
  analyze->add_option("--graph", graph, "graph.json")->required();
  analyze->add_option("--out", out, "Also write the report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(config, out);
    if (build->parsed()) return cmd_build_graph(bg);
    if (trn->parsed()) return cmd_train(config, data, graph, out);
    if (pred->parsed()) return cmd_predict(checkpoint, data, out);
    if (eval->parsed()) return cmd_evaluate(runs, out, eval_data, literal);
    if (analyze->parsed()) return cmd_analyze_graph(graph, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
