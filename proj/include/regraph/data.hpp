#pragma once

// Occupancy records, the 8-column node feature frames on a fixed time grid,
// sliding windows and week-based splits.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "regraph/csv.hpp"
#include "regraph/errors.hpp"
#include "regraph/graph.hpp"
#include "regraph/log.hpp"
#include "regraph/numerics.hpp"

namespace regraph {

// ---------------------------------------------------------------------------
// UTC calendar helpers (unix seconds)

namespace timeutil {

inline constexpr std::int64_t kMinute = 60;
inline constexpr std::int64_t kHour = 3600;
inline constexpr std::int64_t kDay = 86400;

// Days since 1970-01-01 for a proleptic Gregorian date.
constexpr std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m > 2 ? m - 3 : m + 9) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

struct Civil {
  std::int64_t year;
  unsigned month;
  unsigned day;
};

constexpr Civil civil_from_days(std::int64_t z) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const auto doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  return {y + (m <= 2), m, d};
}

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

// Monday = 0 ... Sunday = 6.
inline int weekday(std::int64_t t) {
  const std::int64_t days = floor_div(t, kDay);
  return static_cast<int>(((days % 7) + 7 + 3) % 7);  // 1970-01-01 was a Thursday
}

inline int hour_of_day(std::int64_t t) { return static_cast<int>(floor_div(t - floor_div(t, kDay) * kDay, kHour)); }

// ISO-8601 week number (1..53).
inline int iso_week(std::int64_t t) {
  const std::int64_t days = floor_div(t, kDay);
  const std::int64_t thursday = days - weekday(t) + 3;
  const auto civil = civil_from_days(thursday);
  const std::int64_t jan1 = days_from_civil(civil.year, 1, 1);
  return static_cast<int>((thursday - jan1) / 7 + 1);
}

// Accepts YYYY-MM-DD[T ]HH:MM[:SS[.frac]][Z|+HH:MM|-HH:MM].
inline std::int64_t parse_iso8601(const std::string& text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0;
  double sec = 0.0;
  char sep = 0;
  int consumed = 0;
  if (std::sscanf(text.c_str(), "%d-%d-%d%c%d:%d%n", &y, &mo, &d, &sep, &h, &mi, &consumed) < 6 ||
      (sep != 'T' && sep != ' ')) {
    throw DataError("malformed timestamp '" + text + "'");
  }
  std::size_t pos = static_cast<std::size_t>(consumed);
  if (pos < text.size() && text[pos] == ':') {
    std::size_t end = pos + 1;
    while (end < text.size() && (std::isdigit(static_cast<unsigned char>(text[end])) || text[end] == '.')) ++end;
    sec = csv::parse_double(text.substr(pos + 1, end - pos - 1), "seconds");
    pos = end;
  }
  std::int64_t offset = 0;
  if (pos < text.size()) {
    const char tz = text[pos];
    if (tz == 'Z' || tz == 'z') {
      ++pos;
    } else if (tz == '+' || tz == '-') {
      int oh = 0, om = 0;
      if (std::sscanf(text.c_str() + pos + 1, "%d:%d", &oh, &om) != 2) throw DataError("malformed offset in '" + text + "'");
      offset = (tz == '+' ? 1 : -1) * (oh * kHour + om * kMinute);
      pos = text.size();
    }
    if (pos != text.size()) throw DataError("trailing characters in timestamp '" + text + "'");
  }
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23 || mi < 0 || mi > 59 || sec < 0 || sec >= 61) {
    throw DataError("timestamp out of range '" + text + "'");
  }
  return days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d)) * kDay + h * kHour + mi * kMinute +
         static_cast<std::int64_t>(std::floor(sec)) - offset;
}

inline std::string format_iso8601(std::int64_t t) {
  const std::int64_t days = floor_div(t, kDay);
  const std::int64_t rem = t - days * kDay;
  const auto c = civil_from_days(days);
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%04lld-%02u-%02uT%02lld:%02lld:%02lldZ", static_cast<long long>(c.year), c.month,
                c.day, static_cast<long long>(rem / kHour), static_cast<long long>((rem % kHour) / kMinute),
                static_cast<long long>(rem % kMinute));
  return buf;
}

}  // namespace timeutil

// ---------------------------------------------------------------------------
// Records

struct SiteRecord {
  std::string site_id;
  std::int64_t timestamp = 0;  // unix seconds, UTC
  // Free spaces. Negative values encode trucks parked beyond capacity.
  int available = 0;
};

inline std::vector<SiteRecord> read_records_csv(const std::string& path) {
  std::vector<SiteRecord> records;
  csv::read_table(path, {"site_id", "timestamp_iso8601", "available"},
                  [&](const std::vector<std::string>& f, std::size_t) {
                    records.push_back({csv::trim(f[0]), timeutil::parse_iso8601(csv::trim(f[1])),
                                       static_cast<int>(csv::parse_int(f[2], "available"))});
                  });
  return records;
}

inline void write_records_csv(const std::string& path, const std::vector<SiteRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "site_id,timestamp_iso8601,available\n";
  for (const auto& r : records) out << r.site_id << ',' << timeutil::format_iso8601(r.timestamp) << ',' << r.available << '\n';
  if (!out) throw IoError("write failed: " + path);
}

struct Dataset {
  std::vector<SiteMeta> sites;
  std::vector<SiteRecord> records;
};

inline Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  ds.sites = read_sites_csv(dir + "/sites.csv");
  ds.records = read_records_csv(dir + "/records.csv");
  return ds;
}

// ---------------------------------------------------------------------------
// Feature frames

enum Feature : std::size_t {
  kWeekId = 0,
  kDayId,
  kHourId,
  kTravelTime,
  kOwner,
  kAmenity,
  kCapacity,
  kOccupancy,
  kFeatureCount
};

struct FeatureFrame {
  std::int64_t time = 0;
  Matrix features;  // n x kFeatureCount
  bool valid = false;
};

struct GridOptions {
  std::int64_t step_seconds = 10 * timeutil::kMinute;
  std::size_t max_gap = 6;  // longest run of missing slots that is still filled
  std::optional<std::int64_t> start;
  std::optional<std::int64_t> end;  // inclusive
};

inline double occupancy_rate(int capacity, int available) {
  return std::max(0.0, static_cast<double>(capacity - available) / static_cast<double>(capacity));
}

// Resamples per-site records onto a uniform grid. A slot takes the first
// record that falls inside it; missing slots bounded by known values at most
// `max_gap` slots apart are filled with the average of those two values.
// Frames where any site is still missing are marked invalid.
inline std::vector<FeatureFrame> interpolate_to_grid(const std::vector<SiteMeta>& sites,
                                                     const std::vector<SiteRecord>& records,
                                                     const GridOptions& opt = {}) {
  if (opt.step_seconds <= 0) throw UsageError("grid step must be positive");
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < sites.size(); ++i) index[sites[i].site_id] = i;

  std::vector<std::vector<std::pair<std::int64_t, double>>> series(sites.size());
  for (const auto& r : records) {
    auto it = index.find(r.site_id);
    if (it == index.end()) throw DataError("records reference site " + r.site_id + " absent from metadata");
    series[it->second].emplace_back(r.timestamp, occupancy_rate(sites[it->second].capacity, r.available));
  }
  std::int64_t lo = std::numeric_limits<std::int64_t>::max();
  std::int64_t hi = std::numeric_limits<std::int64_t>::min();
  for (std::size_t i = 0; i < sites.size(); ++i) {
    auto& s = series[i];
    // Stable sort, then keep the last record for a duplicated timestamp.
    std::stable_sort(s.begin(), s.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<std::pair<std::int64_t, double>> dedup;
    for (const auto& p : s) {
      if (!dedup.empty() && dedup.back().first == p.first) dedup.back() = p;
      else dedup.push_back(p);
    }
    s = std::move(dedup);
    if (s.size() < 2) throw DataError("site " + sites[i].site_id + " has fewer than 2 records");
    lo = std::min(lo, s.front().first);
    hi = std::max(hi, s.back().first);
  }
  if (sites.empty()) return {};
  const std::int64_t step = opt.step_seconds;
  const std::int64_t start = opt.start.value_or(timeutil::floor_div(lo, step) * step);
  const std::int64_t end = opt.end.value_or(timeutil::floor_div(hi, step) * step);
  if (end < start) return {};
  const auto slots = static_cast<std::size_t>((end - start) / step + 1);

  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::vector<double>> grid(sites.size(), std::vector<double>(slots, nan));
  for (std::size_t i = 0; i < sites.size(); ++i) {
    for (const auto& [t, occ] : series[i]) {
      if (t < start || t > end + step - 1) continue;
      const auto slot = static_cast<std::size_t>((t - start) / step);
      if (slot < slots && std::isnan(grid[i][slot])) grid[i][slot] = occ;
    }
    std::optional<std::size_t> last_known;
    for (std::size_t k = 0; k < slots; ++k) {
      if (std::isnan(grid[i][k])) continue;
      if (last_known && k - *last_known > 1 && k - *last_known - 1 <= opt.max_gap) {
        const double fill = 0.5 * (grid[i][*last_known] + grid[i][k]);
        for (std::size_t m = *last_known + 1; m < k; ++m) grid[i][m] = fill;
      }
      last_known = k;
    }
  }

  std::vector<FeatureFrame> frames(slots);
  for (std::size_t k = 0; k < slots; ++k) {
    auto& f = frames[k];
    f.time = start + static_cast<std::int64_t>(k) * step;
    f.features.resize(static_cast<Eigen::Index>(sites.size()), kFeatureCount);
    f.valid = true;
    const double week = timeutil::iso_week(f.time);
    const double day = timeutil::weekday(f.time);
    const double hour = timeutil::hour_of_day(f.time);
    for (std::size_t i = 0; i < sites.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      f.features(row, kWeekId) = week;
      f.features(row, kDayId) = day;
      f.features(row, kHourId) = hour;
      f.features(row, kTravelTime) = sites[i].travel_time;
      f.features(row, kOwner) = sites[i].owner;
      f.features(row, kAmenity) = sites[i].amenity_count;
      f.features(row, kCapacity) = sites[i].capacity;
      f.features(row, kOccupancy) = grid[i][k];
      if (std::isnan(grid[i][k])) f.valid = false;
    }
  }
  return frames;
}

// Min-max scaling of the first seven columns; occupancy passes through.
struct FeatureScaler {
  std::array<double, kFeatureCount> lo{};
  std::array<double, kFeatureCount> hi{};

  FeatureScaler() {
    lo.fill(0.0);
    hi.fill(1.0);
  }

  // Fits over valid frames accepted by `include`.
  template <typename Predicate>
  static FeatureScaler fit(const std::vector<FeatureFrame>& frames, Predicate include) {
    FeatureScaler s;
    bool any = false;
    for (std::size_t c = 0; c < kOccupancy; ++c) {
      s.lo[c] = std::numeric_limits<double>::infinity();
      s.hi[c] = -std::numeric_limits<double>::infinity();
    }
    for (const auto& f : frames) {
      if (!f.valid || !include(f)) continue;
      any = true;
      for (std::size_t c = 0; c < kOccupancy; ++c) {
        s.lo[c] = std::min(s.lo[c], f.features.col(static_cast<Eigen::Index>(c)).minCoeff());
        s.hi[c] = std::max(s.hi[c], f.features.col(static_cast<Eigen::Index>(c)).maxCoeff());
      }
    }
    if (!any) throw DataError("feature scaler: no valid frames to fit on");
    return s;
  }

  double apply(std::size_t column, double x) const {
    if (column == kOccupancy) return x;
    const double span = hi[column] - lo[column];
    return span > 0.0 ? (x - lo[column]) / span : 0.0;
  }

  Matrix apply(const Matrix& features) const {
    Matrix out = features;
    for (Eigen::Index r = 0; r < out.rows(); ++r)
      for (Eigen::Index c = 0; c < out.cols(); ++c) out(r, c) = apply(static_cast<std::size_t>(c), out(r, c));
    return out;
  }

  std::vector<FeatureFrame> apply(const std::vector<FeatureFrame>& frames) const {
    std::vector<FeatureFrame> out = frames;
    for (auto& f : out) f.features = apply(f.features);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Windows

using FrameStore = std::vector<FeatureFrame>;

// K consecutive input frames plus occupancy targets at each horizon.
struct WindowSample {
  std::shared_ptr<const FrameStore> store;
  std::size_t first = 0;  // index of the oldest input frame
  std::size_t lags = 0;   // K
  std::size_t span = 0;   // K + max horizon frames covered in total
  Matrix targets;         // n x |horizons|

  const Matrix& input(std::size_t k) const { return (*store)[first + k].features; }
  std::int64_t anchor_time() const { return (*store)[first + lags - 1].time; }
  std::int64_t first_time() const { return (*store)[first].time; }
  std::int64_t last_time() const { return (*store)[first + span - 1].time; }
  std::size_t nodes() const { return static_cast<std::size_t>(targets.rows()); }
};

inline std::size_t max_horizon(const std::vector<std::size_t>& horizons) {
  return horizons.empty() ? 0 : *std::max_element(horizons.begin(), horizons.end());
}

// Stride-1 windows inside every run of contiguous valid frames.
inline std::vector<WindowSample> make_windows(std::shared_ptr<const FrameStore> frames, std::size_t lags,
                                              const std::vector<std::size_t>& horizons) {
  if (lags < 1) throw UsageError("make_windows: K must be >= 1");
  const std::size_t hmax = max_horizon(horizons);
  if (hmax < 1 || std::count(horizons.begin(), horizons.end(), std::size_t{0}) > 0) {
    throw UsageError("make_windows: horizons must be >= 1");
  }
  const std::size_t span = lags + hmax;
  std::vector<WindowSample> out;
  const auto& fs = *frames;
  const std::int64_t step = fs.size() >= 2 ? fs[1].time - fs[0].time : 0;
  std::size_t run_start = 0;
  for (std::size_t k = 0; k <= fs.size(); ++k) {
    const bool breaks =
        k == fs.size() || !fs[k].valid || (k > run_start && fs[k].time - fs[k - 1].time != step);
    if (!breaks) continue;
    const std::size_t len = k - run_start;
    for (std::size_t s = run_start; len >= span && s + span <= k; ++s) {
      WindowSample w;
      w.store = frames;
      w.first = s;
      w.lags = lags;
      w.span = span;
      const auto n = fs[s].features.rows();
      w.targets.resize(n, static_cast<Eigen::Index>(horizons.size()));
      for (std::size_t h = 0; h < horizons.size(); ++h)
        w.targets.col(static_cast<Eigen::Index>(h)) = fs[s + lags - 1 + horizons[h]].features.col(kOccupancy);
      out.push_back(std::move(w));
    }
    run_start = (k < fs.size() && fs[k].valid) ? k : k + 1;
  }
  if (out.empty()) warn("make_windows: not enough contiguous frames for K=" + std::to_string(lags) + " and max horizon " + std::to_string(hmax));
  return out;
}

inline std::vector<WindowSample> make_windows(const FrameStore& frames, std::size_t lags,
                                              const std::vector<std::size_t>& horizons) {
  return make_windows(std::make_shared<const FrameStore>(frames), lags, horizons);
}

struct SplitSamples {
  std::vector<WindowSample> train;
  std::vector<WindowSample> test;
  std::vector<WindowSample> generality;
};

inline bool window_within_weeks(const WindowSample& w, const std::set<int>& weeks) {
  for (std::size_t k = 0; k < w.span; ++k) {
    if (!weeks.count(timeutil::iso_week((*w.store)[w.first + k].time))) return false;
  }
  return true;
}

// Assigns each window to the split whose week set contains every frame it
// touches; windows straddling two splits are dropped.
inline SplitSamples split_by_weeks(const std::vector<WindowSample>& samples, const std::set<int>& train_weeks,
                                   const std::set<int>& test_weeks, const std::set<int>& generality_weeks) {
  auto overlap = [](const std::set<int>& a, const std::set<int>& b) {
    for (int w : a)
      if (b.count(w)) return w;
    return 0;
  };
  if (int w = overlap(train_weeks, test_weeks)) throw ConfigError("week " + std::to_string(w) + " is in both train and test");
  if (int w = overlap(train_weeks, generality_weeks)) {
    throw ConfigError("week " + std::to_string(w) + " is in both train and generality");
  }
  if (int w = overlap(test_weeks, generality_weeks)) {
    throw ConfigError("week " + std::to_string(w) + " is in both test and generality");
  }
  SplitSamples out;
  for (const auto& s : samples) {
    if (window_within_weeks(s, train_weeks)) out.train.push_back(s);
    else if (window_within_weeks(s, test_weeks)) out.test.push_back(s);
    else if (window_within_weeks(s, generality_weeks)) out.generality.push_back(s);
  }
  return out;
}

// Splits off the chronologically last `fraction` of the covered time span.
// Windows crossing the cut belong to neither side.
inline std::pair<std::vector<WindowSample>, std::vector<WindowSample>> holdout_tail(
    const std::vector<WindowSample>& samples, double fraction) {
  if (samples.empty() || fraction <= 0.0) return {samples, {}};
  std::int64_t lo = samples.front().first_time(), hi = samples.front().last_time();
  for (const auto& s : samples) {
    lo = std::min(lo, s.first_time());
    hi = std::max(hi, s.last_time());
  }
  const auto cut = lo + static_cast<std::int64_t>(std::floor((1.0 - fraction) * static_cast<double>(hi - lo)));
  std::vector<WindowSample> head, tail;
  for (const auto& s : samples) {
    if (s.last_time() < cut) head.push_back(s);
    else if (s.first_time() >= cut) tail.push_back(s);
  }
  return {std::move(head), std::move(tail)};
}

}  // namespace regraph
