#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "regraph/data.hpp"
#include "regraph/errors.hpp"
#include "regraph/models.hpp"
#include "regraph/numerics.hpp"

namespace regraph {

struct TrainConfig {
  std::size_t epochs = 100;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  double decay_rate = 0.99;
  double smoothing = 1e-8;
  std::uint64_t seed = 1;
  bool shuffle = true;
  std::size_t patience = 20;          // epochs without validation gain; 0 disables
  std::size_t checkpoint_every = 0;   // 0 disables periodic checkpoints
  double clip_norm = 5.0;             // 0 disables clipping
  double validation_fraction = 0.1;   // tail of the training span held out
  std::optional<double> stop_below_val_rmse;
  std::optional<double> stop_below_train_loss;
};

inline void validate(const TrainConfig& c) {
  if (c.epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate)) throw ConfigError("train: learning_rate must be >= 0");
  if (!(c.weight_decay >= 0.0) || !std::isfinite(c.weight_decay)) throw ConfigError("train: weight_decay must be >= 0");
  if (!(c.decay_rate >= 0.0 && c.decay_rate < 1.0)) throw ConfigError("train: decay_rate must lie in [0, 1)");
  if (!(c.smoothing > 0.0)) throw ConfigError("train: smoothing must be > 0");
  if (!(c.clip_norm >= 0.0)) throw ConfigError("train: clip_norm must be >= 0");
  if (!(c.validation_fraction >= 0.0 && c.validation_fraction < 1.0)) {
    throw ConfigError("train: validation_fraction must lie in [0, 1)");
  }
}

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j{{"epochs", c.epochs},
                   {"learning_rate", c.learning_rate},
                   {"weight_decay", c.weight_decay},
                   {"decay_rate", c.decay_rate},
                   {"smoothing", c.smoothing},
                   {"seed", c.seed},
                   {"shuffle", c.shuffle},
                   {"patience", c.patience},
                   {"checkpoint_every", c.checkpoint_every},
                   {"clip_norm", c.clip_norm},
                   {"validation_fraction", c.validation_fraction}};
  j["stop_below_val_rmse"] = c.stop_below_val_rmse ? nlohmann::json(*c.stop_below_val_rmse) : nlohmann::json(nullptr);
  j["stop_below_train_loss"] =
      c.stop_below_train_loss ? nlohmann::json(*c.stop_below_train_loss) : nlohmann::json(nullptr);
  return j;
}

// Mean over all entries of the squared difference.
inline DiffTensor mse_loss(const DiffTensor& predicted, const DiffTensor& target) {
  if (predicted.shape() != target.shape()) {
    throw ShapeError("mse_loss: prediction " + shape_string(predicted.shape()) + " vs target " +
                     shape_string(target.shape()));
  }
  const auto diff = sub(predicted, target);
  return mean(mul(diff, diff));
}

// Root mean squared error per horizon column over a set of windows.
inline std::vector<double> rmse_per_horizon(const ForecastModel& model, const std::vector<WindowSample>& samples,
                                            const GraphContext& ctx) {
  const std::size_t h = model.spec().horizons.size();
  std::vector<double> se(h, 0.0);
  std::size_t count = 0;
  for (const auto& w : samples) {
    const Matrix pred = model.predict(w, ctx);
    for (std::size_t c = 0; c < h; ++c) se[c] += (pred.col(static_cast<Eigen::Index>(c)) - w.targets.col(static_cast<Eigen::Index>(c))).squaredNorm();
    count += static_cast<std::size_t>(pred.rows());
  }
  for (auto& v : se) v = count ? std::sqrt(v / static_cast<double>(count)) : std::numeric_limits<double>::quiet_NaN();
  return se;
}

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  std::vector<double> val_rmse;  // per horizon, empty without validation data
  double val_rmse_mean = std::numeric_limits<double>::quiet_NaN();
  double fit_loss = std::numeric_limits<double>::quiet_NaN();  // post-epoch training MSE, only without validation
  double grad_norm_max = 0.0;
  double seconds = 0.0;  // wall clock; kept out of deterministic reports
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
  double best_score = std::numeric_limits<double>::infinity();
  std::string best_metric;  // "val_rmse" or "fit_loss"
  std::string stop_reason;
  std::size_t train_samples = 0;
  std::size_t val_samples = 0;
  std::size_t steps = 0;
};

// Deterministic report body: every field except wall-clock timings.
inline nlohmann::json to_json(const TrainReport& r, const std::vector<std::size_t>& horizons) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.epochs) {
    nlohmann::json row{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"grad_norm_max", e.grad_norm_max}};
    if (std::isfinite(e.fit_loss)) row["fit_loss"] = e.fit_loss;
    nlohmann::json val = nlohmann::json::object();
    for (std::size_t k = 0; k < e.val_rmse.size(); ++k) val["h" + std::to_string(horizons[k])] = e.val_rmse[k];
    row["val_rmse"] = val;
    epochs.push_back(row);
  }
  return {{"epochs", epochs},
          {"best_epoch", r.best_epoch},
          {"best_metric", r.best_metric},
          {"best_score", r.best_score},
          {"stop_reason", r.stop_reason},
          {"train_samples", r.train_samples},
          {"val_samples", r.val_samples},
          {"steps", r.steps}};
}

// `epoch,train_loss,val_rmse_h1,...`
inline std::string loss_trace_csv(const TrainReport& r, const std::vector<std::size_t>& horizons) {
  std::string out = "epoch,train_loss";
  for (auto h : horizons) out += ",val_rmse_h" + std::to_string(h);
  out += '\n';
  for (const auto& e : r.epochs) {
    out += std::to_string(e.epoch) + ',' + csv::format_double(e.train_loss);
    for (std::size_t k = 0; k < horizons.size(); ++k)
      out += ',' + (k < e.val_rmse.size() ? csv::format_double(e.val_rmse[k]) : std::string());
    out += '\n';
  }
  return out;
}

struct WeightSnapshot {
  std::vector<std::vector<double>> values;

  static WeightSnapshot take(const ForecastModel& m) {
    WeightSnapshot s;
    for (const auto& [name, t] : m.parameters()) s.values.emplace_back(t.values().begin(), t.values().end());
    return s;
  }

  void restore(const ForecastModel& m) const {
    const auto& params = m.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto t = params[k].second;
      std::copy(values[k].begin(), values[k].end(), t.mutable_values().begin());
    }
  }
};

// Called with a tag ("best" or "epoch-<n>") whenever a checkpoint is due.
using CheckpointHook = std::function<void(const std::string& tag, const ForecastModel& model, const EpochStats& stats)>;

// One RMSProp step per window over the full graph. The model ends holding
// the best weights seen: by validation RMSE when validation windows exist,
// otherwise by training MSE measured after the epoch's updates.
inline TrainReport train(ForecastModel& model, const std::vector<WindowSample>& train_samples,
                         const std::vector<WindowSample>& val_samples, const GraphContext& ctx, const TrainConfig& cfg,
                         const CheckpointHook& checkpoint = {}) {
  validate(cfg);
  if (train_samples.empty()) throw DataError("train: no training windows");
  const auto& spec = model.spec();
  for (const auto* set : {&train_samples, &val_samples}) {
    for (const auto& w : *set) {
      if (w.lags != spec.lags) throw ConfigError("train: window K does not match the model");
      if (static_cast<std::size_t>(w.targets.cols()) != spec.horizons.size()) {
        throw ConfigError("train: window horizons do not match the model");
      }
    }
  }

  RmsPropOptions opt;
  opt.learning_rate = cfg.learning_rate;
  opt.weight_decay = cfg.weight_decay;
  opt.decay_rate = cfg.decay_rate;
  opt.smoothing = cfg.smoothing;
  auto params = model.parameter_tensors();
  RmsProp optimizer(opt, params);

  TrainReport report;
  report.train_samples = train_samples.size();
  report.val_samples = val_samples.size();
  report.best_metric = val_samples.empty() ? "fit_loss" : "val_rmse";
  WeightSnapshot best = WeightSnapshot::take(model);
  SplitMix64 shuffle_rng(cfg.seed);
  std::vector<std::size_t> order(train_samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t since_best = 0;
  Tape::current().clear();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    if (cfg.shuffle)
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    EpochStats stats;
    stats.epoch = epoch;
    double loss_sum = 0.0;
    for (std::size_t step = 0; step < order.size(); ++step) {
      const auto& w = train_samples[order[step]];
      const auto where = "epoch " + std::to_string(epoch) + ", step " + std::to_string(step + 1);
      DiffTensor loss;
      try {
        loss = mse_loss(model.forward(w, ctx), DiffTensor::from_matrix(w.targets));
      } catch (const NumericError& e) {
        Tape::current().clear();
        throw NumericError(std::string(e.what()) + " at " + where);
      }
      const double value = loss.item();
      if (!std::isfinite(value)) {
        Tape::current().clear();
        throw NumericError("non-finite training loss at " + where);
      }
      backward(loss);
      if (cfg.clip_norm > 0.0) stats.grad_norm_max = std::max(stats.grad_norm_max, clip_grad_norm(params, cfg.clip_norm));
      optimizer.step();
      loss_sum += value;
      ++report.steps;
    }
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    if (!val_samples.empty()) {
      stats.val_rmse = rmse_per_horizon(model, val_samples, ctx);
      double total = 0.0;
      for (double v : stats.val_rmse) total += v;
      stats.val_rmse_mean = total / static_cast<double>(stats.val_rmse.size());
    }
    if (val_samples.empty()) {
      double se = 0.0, count = 0.0;
      for (const auto& w : train_samples) {
        se += (model.predict(w, ctx) - w.targets).squaredNorm();
        count += static_cast<double>(w.targets.size());
      }
      stats.fit_loss = se / count;
    }
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    report.epochs.push_back(stats);

    const double score = val_samples.empty() ? stats.fit_loss : stats.val_rmse_mean;
    if (!std::isfinite(score)) throw NumericError("non-finite validation score at epoch " + std::to_string(epoch));
    if (score < report.best_score) {
      report.best_score = score;
      report.best_epoch = epoch;
      best = WeightSnapshot::take(model);
      since_best = 0;
      if (checkpoint) checkpoint("best", model, stats);
    } else {
      ++since_best;
    }
    if (checkpoint && cfg.checkpoint_every && epoch % cfg.checkpoint_every == 0) {
      checkpoint("epoch-" + std::to_string(epoch), model, stats);
    }

    if (cfg.stop_below_train_loss && stats.train_loss < *cfg.stop_below_train_loss) {
      report.stop_reason = "train_loss_target";
      break;
    }
    if (cfg.stop_below_val_rmse && !val_samples.empty() && stats.val_rmse_mean < *cfg.stop_below_val_rmse) {
      report.stop_reason = "val_rmse_target";
      break;
    }
    if (cfg.patience && !val_samples.empty() && since_best >= cfg.patience) {
      report.stop_reason = "early_stop";
      break;
    }
  }
  if (report.stop_reason.empty()) report.stop_reason = "max_epochs";
  best.restore(model);
  return report;
}

}  // namespace regraph
