#pragma once

// Synthetic truck-parking archive: clustered sites in up to eight states and
// 10-minute occupancy records driven by an overnight diurnal cycle, weekend
// modulation, per-site AR(1) noise and same-region overflow spill.

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "regraph/data.hpp"
#include "regraph/errors.hpp"
#include "regraph/graph.hpp"
#include "regraph/numerics.hpp"

namespace regraph {

struct SyntheticConfig {
  std::size_t n_sites = 105;
  std::size_t n_regions = 8;
  std::size_t days = 42;
  std::uint64_t seed = 7;
  std::string start = "2024-01-01T00:00:00Z";
  std::int64_t step_minutes = 10;

  std::array<double, 2> base_range{0.55, 0.75};       // mean demand as fraction of capacity
  std::array<double, 2> amplitude_range{0.2, 0.35};   // diurnal amplitude
  std::array<double, 2> peak_hour_range{-3.0, 5.0};   // overnight demand peak (21:00-05:00), drawn per region
  double peak_jitter_hours = 0.5;                     // per-site deviation from the regional peak
  double weekend_factor = 0.8;                        // demand multiplier on Sat/Sun
  double noise_level = 0.06;                          // AR(1) innovation std
  double noise_persistence = 0.95;
  double coupling = 0.5;                              // share of excess pushed to same-region sites
  double region_spread_deg = 0.5;
  // Share of sites placed along a corridor toward the nearest other state.
  double corridor_fraction = 0.25;
  double missing_rate = 0.01;                         // dropped records
  double fast_site_fraction = 0.1;                    // sites reporting every 5 minutes
  std::optional<std::string> force_full_site;         // pins one site's demand above capacity
  double force_full_level = 1.5;
};

inline void validate(const SyntheticConfig& c) {
  auto range_ok = [](const std::array<double, 2>& r) { return std::isfinite(r[0]) && std::isfinite(r[1]) && r[0] <= r[1]; };
  if (c.n_sites < 1) throw ConfigError("synthetic: n_sites must be >= 1");
  if (c.n_regions < 1 || c.n_regions > 8) throw ConfigError("synthetic: n_regions must be in [1, 8]");
  if (c.n_regions > c.n_sites) throw ConfigError("synthetic: n_regions exceeds n_sites");
  if (c.days < 1) throw ConfigError("synthetic: days must be >= 1");
  if (c.step_minutes < 1) throw ConfigError("synthetic: step_minutes must be >= 1");
  if (!range_ok(c.base_range) || !range_ok(c.amplitude_range) || !range_ok(c.peak_hour_range)) {
    throw ConfigError("synthetic: ranges must be finite with lo <= hi");
  }
  if (!(c.coupling >= 0.0 && c.coupling <= 1.0)) throw ConfigError("synthetic: coupling must lie in [0, 1]");
  if (!(c.noise_level >= 0.0) || !std::isfinite(c.noise_level)) throw ConfigError("synthetic: noise_level invalid");
  if (!(c.noise_persistence >= 0.0 && c.noise_persistence < 1.0)) {
    throw ConfigError("synthetic: noise_persistence must lie in [0, 1)");
  }
  if (!(c.missing_rate >= 0.0 && c.missing_rate < 1.0)) throw ConfigError("synthetic: missing_rate must lie in [0, 1)");
  if (!(c.fast_site_fraction >= 0.0 && c.fast_site_fraction <= 1.0)) {
    throw ConfigError("synthetic: fast_site_fraction must lie in [0, 1]");
  }
  if (!(c.corridor_fraction >= 0.0 && c.corridor_fraction <= 1.0)) {
    throw ConfigError("synthetic: corridor_fraction must lie in [0, 1]");
  }
  if (!(c.peak_jitter_hours >= 0.0) || !std::isfinite(c.peak_jitter_hours)) {
    throw ConfigError("synthetic: peak_jitter_hours invalid");
  }
  if (!(c.region_spread_deg >= 0.0) || !std::isfinite(c.region_spread_deg)) {
    throw ConfigError("synthetic: region_spread_deg invalid");
  }
  if (!(c.weekend_factor > 0.0) || !std::isfinite(c.weekend_factor)) throw ConfigError("synthetic: weekend_factor invalid");
}

inline nlohmann::json to_json(const SyntheticConfig& c) {
  nlohmann::json j{{"n_sites", c.n_sites},
                   {"n_regions", c.n_regions},
                   {"days", c.days},
                   {"seed", c.seed},
                   {"start", c.start},
                   {"step_minutes", c.step_minutes},
                   {"base_range", c.base_range},
                   {"amplitude_range", c.amplitude_range},
                   {"peak_hour_range", c.peak_hour_range},
                   {"weekend_factor", c.weekend_factor},
                   {"noise_level", c.noise_level},
                   {"noise_persistence", c.noise_persistence},
                   {"coupling", c.coupling},
                   {"region_spread_deg", c.region_spread_deg},
                   {"corridor_fraction", c.corridor_fraction},
                   {"peak_jitter_hours", c.peak_jitter_hours},
                   {"missing_rate", c.missing_rate},
                   {"fast_site_fraction", c.fast_site_fraction},
                   {"force_full_level", c.force_full_level}};
  j["force_full_site"] = c.force_full_site ? nlohmann::json(*c.force_full_site) : nlohmann::json(nullptr);
  return j;
}

struct SyntheticData {
  std::vector<SiteMeta> sites;
  std::vector<SiteRecord> records;
  std::vector<std::vector<double>> occupancy;  // per site, per step (before record dropping)
  std::int64_t start = 0;
  std::int64_t step_seconds = 600;
};

namespace detail {

struct StateInfo {
  const char* code;
  double lat;
  double lon;
  int reporting_sites;
};

// The eight reporting states with their approximate centroids and reporting
// site counts.
inline constexpr std::array<StateInfo, 8> kStates{{{"IA", 42.0, -93.5, 44},
                                                   {"IL", 40.0, -89.2, 19},
                                                   {"KS", 38.5, -98.4, 18},
                                                   {"KY", 37.5, -85.3, 13},
                                                   {"MI", 43.6, -84.7, 14},
                                                   {"MN", 45.7, -94.5, 7},
                                                   {"OH", 40.3, -82.8, 18},
                                                   {"WI", 44.6, -89.9, 11}}};

// Largest-remainder apportionment with at least one site per region.
inline std::vector<std::size_t> apportion(std::size_t total, std::size_t regions) {
  double weight_sum = 0.0;
  for (std::size_t r = 0; r < regions; ++r) weight_sum += kStates[r].reporting_sites;
  std::vector<std::size_t> counts(regions, 1);
  const std::size_t spare = total - regions;
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t used = 0;
  for (std::size_t r = 0; r < regions; ++r) {
    const double exact = static_cast<double>(spare) * kStates[r].reporting_sites / weight_sum;
    const auto whole = static_cast<std::size_t>(std::floor(exact));
    counts[r] += whole;
    used += whole;
    rema.emplace_back(exact - static_cast<double>(whole), r);
  }
  std::stable_sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; used < spare; ++k, ++used) ++counts[rema[k].second];
  return counts;
}

}  // namespace detail

inline SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
  validate(cfg);
  SyntheticData out;
  out.start = timeutil::parse_iso8601(cfg.start);
  out.step_seconds = cfg.step_minutes * timeutil::kMinute;

  SplitMix64 site_rng(cfg.seed);
  const auto counts = detail::apportion(cfg.n_sites, cfg.n_regions);
  std::vector<std::size_t> neighbour(cfg.n_regions);
  for (std::size_t r = 0; r < cfg.n_regions; ++r) {
    neighbour[r] = r;
    double best = INFINITY;
    for (std::size_t q = 0; q < cfg.n_regions; ++q) {
      const double d = haversine_miles(detail::kStates[r].lat, detail::kStates[r].lon, detail::kStates[q].lat,
                                       detail::kStates[q].lon);
      if (q != r && d < best) {
        best = d;
        neighbour[r] = q;
      }
    }
  }
  std::vector<std::size_t> region_index;
  for (std::size_t r = 0; r < cfg.n_regions; ++r) {
    for (std::size_t k = 0; k < counts[r]; ++k) {
      const auto& st = detail::kStates[r];
      SiteMeta s;
      char id[32];
      std::snprintf(id, sizeof(id), "%s%03zu", st.code, k + 1);
      s.site_id = id;
      s.region = st.code;
      double lat = st.lat, lon = st.lon, spread = cfg.region_spread_deg;
      if (neighbour[r] != r && site_rng.uniform() < cfg.corridor_fraction) {
        // Interstate site toward the nearest neighbouring state, close to the border.
        const auto& nb = detail::kStates[neighbour[r]];
        const double t = site_rng.uniform(0.38, 0.5);
        lat += t * (nb.lat - st.lat);
        lon += t * (nb.lon - st.lon);
        spread = 0.1;
      }
      s.latitude = std::clamp(lat + spread * site_rng.normal(), -90.0, 90.0);
      s.longitude = std::clamp(lon + spread * site_rng.normal(), -180.0, 180.0);
      s.travel_time = std::round(site_rng.uniform(3.0, 60.0) * 10.0) / 10.0;
      s.owner = site_rng.uniform() < 0.6 ? 1 : 0;
      s.amenity_count = static_cast<int>(site_rng.below(7));
      s.capacity = 15 + static_cast<int>(site_rng.below(106));
      out.sites.push_back(s);
      region_index.push_back(r);
    }
  }
  const std::size_t n = out.sites.size();

  struct Profile {
    double base, amplitude, peak_hour;
    bool fast;
  };
  // Each region runs on its own freight schedule; sites jitter around it.
  std::vector<double> region_peak(cfg.n_regions);
  for (auto& h : region_peak) h = site_rng.uniform(cfg.peak_hour_range[0], cfg.peak_hour_range[1]);
  std::vector<Profile> profiles(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& p = profiles[i];
    p.base = site_rng.uniform(cfg.base_range[0], cfg.base_range[1]);
    p.amplitude = site_rng.uniform(cfg.amplitude_range[0], cfg.amplitude_range[1]);
    p.peak_hour = region_peak[region_index[i]] + cfg.peak_jitter_hours * site_rng.normal();
    p.fast = site_rng.uniform() < cfg.fast_site_fraction;
  }
  std::optional<std::size_t> forced;
  if (cfg.force_full_site) {
    for (std::size_t i = 0; i < n; ++i)
      if (out.sites[i].site_id == *cfg.force_full_site) forced = i;
    if (!forced) throw ConfigError("synthetic: force_full_site " + *cfg.force_full_site + " does not exist");
  }

  // Each site owns its noise stream, so with zero coupling a site's series
  // depends on nothing but its own profile and stream.
  std::vector<SplitMix64> noise;
  std::vector<SplitMix64> drop;
  for (std::size_t i = 0; i < n; ++i) {
    noise.emplace_back(cfg.seed * 0x9E3779B97F4A7C15ULL + 2 * i + 1);
    drop.emplace_back(cfg.seed * 0xD1B54A32D192ED03ULL + 2 * i + 2);
  }
  std::vector<std::vector<std::size_t>> members(cfg.n_regions);
  for (std::size_t i = 0; i < n; ++i) members[region_index[i]].push_back(i);

  const auto steps = static_cast<std::size_t>(cfg.days * 24 * 60 / static_cast<std::size_t>(cfg.step_minutes));
  out.occupancy.assign(n, std::vector<double>(steps, 0.0));
  std::vector<double> latent(n, 0.0), demand(n), pushed(n), received(n);
  const double innovation = cfg.noise_level * std::sqrt(1.0 - cfg.noise_persistence * cfg.noise_persistence);
  for (std::size_t t = 0; t < steps; ++t) {
    const std::int64_t when = out.start + static_cast<std::int64_t>(t) * out.step_seconds;
    const double hour = static_cast<double>((when - timeutil::floor_div(when, timeutil::kDay) * timeutil::kDay)) / 3600.0;
    const bool weekend = timeutil::weekday(when) >= 5;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& p = profiles[i];
      latent[i] = cfg.noise_persistence * latent[i] + innovation * noise[i].normal();
      const double cycle = std::cos(2.0 * std::numbers::pi * (hour - p.peak_hour) / 24.0);
      double d = (p.base + p.amplitude * cycle + latent[i]) * (weekend ? cfg.weekend_factor : 1.0);
      if (forced && *forced == i) d = cfg.force_full_level;
      demand[i] = std::max(0.0, d) * out.sites[i].capacity;  // trucks
      pushed[i] = 0.0;
      received[i] = 0.0;
    }
    for (const auto& group : members) {
      if (group.size() < 2) continue;
      for (auto i : group) {
        const double excess = demand[i] - out.sites[i].capacity;
        if (excess <= 0.0) continue;
        pushed[i] = cfg.coupling * excess;
        const double share = pushed[i] / static_cast<double>(group.size() - 1);
        for (auto j : group)
          if (j != i) received[j] += share;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double cap = out.sites[i].capacity;
      const double occupied = std::clamp(std::round(demand[i] - pushed[i] + received[i]), 0.0, std::floor(1.1 * cap));
      out.occupancy[i][t] = occupied / cap;
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    const int cap = out.sites[i].capacity;
    for (std::size_t t = 0; t < steps; ++t) {
      const std::int64_t when = out.start + static_cast<std::int64_t>(t) * out.step_seconds;
      const bool edge = t == 0 || t + 1 == steps;
      if (!edge && drop[i].uniform() < cfg.missing_rate) continue;
      const int used = static_cast<int>(std::lround(out.occupancy[i][t] * cap));
      out.records.push_back({out.sites[i].site_id, when, cap - used});
      if (profiles[i].fast && t + 1 < steps) {
        const double mid = 0.5 * (out.occupancy[i][t] + out.occupancy[i][t + 1]);
        out.records.push_back({out.sites[i].site_id, when + out.step_seconds / 2,
                               cap - static_cast<int>(std::lround(mid * cap))});
      }
    }
  }
  return out;
}

// Writes sites.csv, records.csv and synth.json into `dir`.
inline void write_synthetic(const std::string& dir, const SyntheticConfig& cfg, const SyntheticData& data) {
  std::filesystem::create_directories(dir);
  write_sites_csv(dir + "/sites.csv", data.sites);
  write_records_csv(dir + "/records.csv", data.records);
  std::ofstream js(dir + "/synth.json", std::ios::binary);
  if (!js) throw IoError("cannot write " + dir + "/synth.json");
  js << to_json(cfg).dump(2) << '\n';
}

}  // namespace regraph
