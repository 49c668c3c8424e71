#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "regraph/csv.hpp"
#include "regraph/data.hpp"
#include "regraph/errors.hpp"
#include "regraph/log.hpp"
#include "regraph/models.hpp"

namespace regraph {

// Percentile with linear interpolation between closest ranks
// (position q * (n - 1) in the sorted sample).
inline double percentile_linear(std::vector<double> xs, double q) {
  if (xs.empty()) throw UsageError("percentile of an empty sample");
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

// Per-site 95th percentile of observed occupancy. Sites with fewer than
// `min_observations` values get NaN and a warning.
inline std::vector<double> q95_reference(const std::vector<std::vector<double>>& series,
                                         std::size_t min_observations = 20,
                                         const std::vector<std::string>& site_ids = {}) {
  std::vector<double> out(series.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t s = 0; s < series.size(); ++s) {
    if (series[s].size() < min_observations) {
      warn("q95: site " + (s < site_ids.size() ? site_ids[s] : std::to_string(s)) + " has " +
           std::to_string(series[s].size()) + " observations (< " + std::to_string(min_observations) + "); excluded");
      continue;
    }
    out[s] = percentile_linear(series[s], 0.95);
  }
  return out;
}

struct MetricValues {
  double rmse = 0.0;
  double mae = 0.0;
  double mape = 0.0;          // 100 * mean |e| / q95
  double mae_literal = 0.0;   // mean e^2
  double mape_literal = 0.0;  // 100 * mean e^2 / q95
  std::size_t count = 0;
  std::size_t mape_count = 0;
};

// pred/truth are [sites x entries]; q95 per site. Sites whose q95 is not a
// positive number are left out of both MAPE readings.
inline MetricValues compute_metrics(const Matrix& pred, const Matrix& truth, const std::vector<double>& q95,
                                    const std::vector<std::string>& site_ids = {}) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) {
    throw ShapeError("compute_metrics: prediction [" + std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()) +
                     "] vs truth [" + std::to_string(truth.rows()) + "x" + std::to_string(truth.cols()) + "]");
  }
  if (q95.size() != static_cast<std::size_t>(truth.rows())) throw ShapeError("compute_metrics: q95 length mismatch");
  MetricValues m;
  double se = 0.0, ae = 0.0, ape = 0.0, sqe_ref = 0.0;
  for (Eigen::Index s = 0; s < truth.rows(); ++s) {
    const double ref = q95[static_cast<std::size_t>(s)];
    const bool use_ref = ref > 0.0 && std::isfinite(ref);
    if (!use_ref && truth.cols() > 0) {
      warn("metrics: site " + (static_cast<std::size_t>(s) < site_ids.size() ? site_ids[static_cast<std::size_t>(s)] : std::to_string(s)) +
           " has no positive q95; excluded from MAPE");
    }
    for (Eigen::Index t = 0; t < truth.cols(); ++t) {
      const double e = truth(s, t) - pred(s, t);
      se += e * e;
      ae += std::abs(e);
      ++m.count;
      if (use_ref) {
        ape += std::abs(e) / ref;
        sqe_ref += e * e / ref;
        ++m.mape_count;
      }
    }
  }
  if (m.count == 0) throw DataError("compute_metrics: nothing to evaluate");
  const double n = static_cast<double>(m.count);
  m.rmse = std::sqrt(se / n);
  m.mae = ae / n;
  m.mae_literal = se / n;
  if (m.mape_count) {
    m.mape = 100.0 * ape / static_cast<double>(m.mape_count);
    m.mape_literal = 100.0 * sqe_ref / static_cast<double>(m.mape_count);
  } else {
    m.mape = m.mape_literal = std::numeric_limits<double>::quiet_NaN();
  }
  return m;
}

inline nlohmann::json to_json(const MetricValues& m) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"rmse", num(m.rmse)},       {"mae", num(m.mae)},          {"mape", num(m.mape)},
          {"mae_literal", num(m.mae_literal)}, {"mape_literal", num(m.mape_literal)}, {"count", m.count},
          {"mape_count", m.mape_count}};
}

// ---------------------------------------------------------------------------
// Predictions over a window set

struct PredictionSet {
  std::vector<std::size_t> horizons;
  std::vector<std::int64_t> anchor_times;  // one per window
  std::int64_t step_seconds = 0;
  std::vector<Matrix> pred;   // per horizon: [sites x windows]
  std::vector<Matrix> truth;  // per horizon: [sites x windows]
  std::vector<std::vector<double>> observed;  // per site: occupancy of every frame the windows touch
};

inline PredictionSet collect_predictions(const ForecastModel& model, const std::vector<WindowSample>& windows,
                                         const GraphContext& ctx) {
  PredictionSet p;
  p.horizons = model.spec().horizons;
  const auto n = static_cast<Eigen::Index>(ctx.nodes);
  const auto w = static_cast<Eigen::Index>(windows.size());
  for (std::size_t h = 0; h < p.horizons.size(); ++h) {
    p.pred.emplace_back(n, w);
    p.truth.emplace_back(n, w);
  }
  p.observed.assign(ctx.nodes, {});
  std::set<std::pair<const FrameStore*, std::size_t>> seen;
  for (Eigen::Index k = 0; k < w; ++k) {
    const auto& win = windows[static_cast<std::size_t>(k)];
    const Matrix out = model.predict(win, ctx);
    for (std::size_t h = 0; h < p.horizons.size(); ++h) {
      p.pred[h].col(k) = out.col(static_cast<Eigen::Index>(h));
      p.truth[h].col(k) = win.targets.col(static_cast<Eigen::Index>(h));
    }
    p.anchor_times.push_back(win.anchor_time());
    for (std::size_t f = win.first; f < win.first + win.span; ++f) {
      if (!seen.insert({win.store.get(), f}).second) continue;
      const auto& frame = (*win.store)[f];
      for (Eigen::Index i = 0; i < n; ++i) p.observed[static_cast<std::size_t>(i)].push_back(frame.features(i, kOccupancy));
    }
  }
  if (windows.size() >= 1) {
    const auto& store = *windows.front().store;
    p.step_seconds = store.size() >= 2 ? store[1].time - store[0].time : 0;
  }
  return p;
}

struct MetricReport {
  std::vector<std::size_t> horizons;
  std::vector<MetricValues> per_horizon;
  std::vector<double> q95;
  std::vector<std::string> site_ids;
  std::size_t windows = 0;
};

inline MetricReport evaluate_predictions(const PredictionSet& p, const std::vector<std::string>& site_ids,
                                         std::size_t min_observations = 20) {
  MetricReport r;
  r.horizons = p.horizons;
  r.site_ids = site_ids;
  r.windows = p.anchor_times.size();
  r.q95 = q95_reference(p.observed, min_observations, site_ids);
  for (std::size_t h = 0; h < p.horizons.size(); ++h) r.per_horizon.push_back(compute_metrics(p.pred[h], p.truth[h], r.q95, site_ids));
  return r;
}

inline nlohmann::json to_json(const MetricReport& r, std::int64_t step_seconds = 600) {
  nlohmann::json horizons = nlohmann::json::array();
  for (std::size_t h = 0; h < r.horizons.size(); ++h) {
    auto cell = to_json(r.per_horizon[h]);
    cell["horizon_steps"] = r.horizons[h];
    cell["horizon_min"] = r.horizons[h] * static_cast<std::size_t>(step_seconds / 60);
    horizons.push_back(cell);
  }
  nlohmann::json q95 = nlohmann::json::object();
  for (std::size_t s = 0; s < r.q95.size(); ++s)
    q95[s < r.site_ids.size() ? r.site_ids[s] : std::to_string(s)] =
        std::isfinite(r.q95[s]) ? nlohmann::json(r.q95[s]) : nlohmann::json(nullptr);
  return {{"horizons", horizons}, {"windows", r.windows}, {"q95", q95}};
}

// Frozen-weight inference on held-out weeks that never touched training.
inline MetricReport generality_inference(const ForecastModel& model, const GraphContext& ctx,
                                         const std::vector<WindowSample>& windows, const std::set<int>& train_weeks,
                                         const std::set<int>& held_out_weeks, const std::vector<std::string>& site_ids,
                                         std::size_t min_observations = 20) {
  for (int w : held_out_weeks)
    if (train_weeks.count(w)) throw ConfigError("generality: week " + std::to_string(w) + " was used for training");
  for (const auto& win : windows) {
    if (!window_within_weeks(win, held_out_weeks)) throw ConfigError("generality: window outside the held-out weeks");
  }
  if (windows.empty()) throw DataError("generality: no windows in the held-out weeks");
  return evaluate_predictions(collect_predictions(model, windows, ctx), site_ids, min_observations);
}

// `site_id,time,truth,pred_h1,...`: one row per site and target time; the
// pred_h<k> column holds the forecast for that time issued k steps earlier.
inline std::string timeseries_csv(const PredictionSet& p, const std::vector<std::string>& site_ids) {
  std::map<std::int64_t, std::vector<std::pair<double, std::vector<std::optional<double>>>>> rows;
  const std::size_t n = site_ids.size();
  for (std::size_t h = 0; h < p.horizons.size(); ++h) {
    for (std::size_t k = 0; k < p.anchor_times.size(); ++k) {
      const auto t = p.anchor_times[k] + static_cast<std::int64_t>(p.horizons[h]) * p.step_seconds;
      auto& slot = rows[t];
      if (slot.empty()) slot.assign(n, {0.0, std::vector<std::optional<double>>(p.horizons.size())});
      for (std::size_t s = 0; s < n; ++s) {
        slot[s].first = p.truth[h](static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k));
        slot[s].second[h] = p.pred[h](static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k));
      }
    }
  }
  std::string out = "site_id,time,truth";
  for (auto h : p.horizons) out += ",pred_h" + std::to_string(h);
  out += '\n';
  for (std::size_t s = 0; s < n; ++s) {
    for (const auto& [t, slot] : rows) {
      out += site_ids[s] + ',' + timeutil::format_iso8601(t) + ',' + csv::format_double(slot[s].first);
      for (const auto& v : slot[s].second) out += ',' + (v ? csv::format_double(*v) : std::string());
      out += '\n';
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cross-run comparison

struct RunSummary {
  std::string model;
  std::string connectivity;
  std::uint64_t seed = 0;
  std::int64_t step_seconds = 600;
  std::optional<MetricReport> test;  // empty when the run's checkpoint is missing
  std::optional<MetricReport> generality;
  double overlap_cost = std::numeric_limits<double>::quiet_NaN();
  std::string label;
};

// metrics.csv: model,connectivity,horizon_min,seed,rmse,mae,mape,mae_literal,mape_literal
inline std::string metrics_csv(const std::vector<RunSummary>& runs) {
  std::vector<std::tuple<std::string, std::string, std::size_t, std::uint64_t, MetricValues>> rows;
  for (const auto& r : runs) {
    if (!r.test) continue;
    for (std::size_t h = 0; h < r.test->horizons.size(); ++h)
      rows.emplace_back(r.model, r.connectivity, r.test->horizons[h] * static_cast<std::size_t>(r.step_seconds / 60),
                        r.seed, r.test->per_horizon[h]);
  }
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return std::tie(std::get<0>(a), std::get<1>(a), std::get<2>(a), std::get<3>(a)) <
           std::tie(std::get<0>(b), std::get<1>(b), std::get<2>(b), std::get<3>(b));
  });
  std::string out = "model,connectivity,horizon_min,seed,rmse,mae,mape,mae_literal,mape_literal\n";
  for (const auto& [model, conn, minutes, seed, m] : rows) {
    out += model + ',' + conn + ',' + std::to_string(minutes) + ',' + std::to_string(seed) + ',' +
           csv::format_double(m.rmse) + ',' + csv::format_double(m.mae) + ',' + csv::format_double(m.mape) + ',' +
           csv::format_double(m.mae_literal) + ',' + csv::format_double(m.mape_literal) + '\n';
  }
  return out;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single seed
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd r;
  if (xs.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return r;
}

// Table-style summary: one row per (model, connectivity), one cell per
// horizon with mean and std over seeds. `literal` switches the headline MAE
// and MAPE to the squared-error readings.
inline nlohmann::json comparison_json(const std::vector<RunSummary>& runs, bool literal = false) {
  using Key = std::pair<std::string, std::string>;
  std::map<Key, std::map<std::size_t, std::vector<MetricValues>>> cells;
  std::map<Key, std::map<std::size_t, std::vector<MetricValues>>> generality;
  std::map<Key, std::vector<std::uint64_t>> seeds;
  std::map<std::string, double> overlap;
  nlohmann::json absent = nlohmann::json::array();
  for (const auto& r : runs) {
    const Key key{r.model, r.connectivity};
    if (std::isfinite(r.overlap_cost)) overlap[r.connectivity] = r.overlap_cost;
    if (!r.test) {
      absent.push_back({{"run", r.label}, {"model", r.model}, {"connectivity", r.connectivity}, {"seed", r.seed}});
      continue;
    }
    seeds[key].push_back(r.seed);
    const auto minutes = static_cast<std::size_t>(r.step_seconds / 60);
    for (std::size_t h = 0; h < r.test->horizons.size(); ++h)
      cells[key][r.test->horizons[h] * minutes].push_back(r.test->per_horizon[h]);
    if (r.generality)
      for (std::size_t h = 0; h < r.generality->horizons.size(); ++h)
        generality[key][r.generality->horizons[h] * minutes].push_back(r.generality->per_horizon[h]);
  }
  auto summarize = [&](const std::vector<MetricValues>& ms) {
    std::vector<double> rmse, mae, mape;
    for (const auto& m : ms) {
      rmse.push_back(m.rmse);
      mae.push_back(literal ? m.mae_literal : m.mae);
      mape.push_back(literal ? m.mape_literal : m.mape);
    }
    nlohmann::json cell;
    for (auto& [name, xs] : {std::pair<const char*, std::vector<double>&>{"rmse", rmse}, {"mae", mae}, {"mape", mape}}) {
      const auto s = mean_std(xs);
      cell[name] = {{"mean", s.mean}, {"std", s.std}};
    }
    cell["seeds"] = ms.size();
    return cell;
  };
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& [key, by_h] : cells) {
    nlohmann::json row{{"model", key.first}, {"connectivity", key.second}, {"seeds", seeds[key]}};
    nlohmann::json hs = nlohmann::json::object();
    for (const auto& [minutes, ms] : by_h) hs[std::to_string(minutes)] = summarize(ms);
    row["horizons_min"] = hs;
    if (generality.count(key)) {
      nlohmann::json gs = nlohmann::json::object();
      for (const auto& [minutes, ms] : generality[key]) gs[std::to_string(minutes)] = summarize(ms);
      row["generality_min"] = gs;
    }
    rows.push_back(row);
  }
  return {{"metric_reading", literal ? "literal" : "standard"}, {"rows", rows}, {"overlap_cost", overlap}, {"absent", absent}};
}

}  // namespace regraph
