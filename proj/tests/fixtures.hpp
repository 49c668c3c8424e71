#pragma once

// Small hand-built graphs and inputs shared by the unit and acceptance tests.

#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "regraph/data.hpp"
#include "regraph/graph.hpp"
#include "regraph/models.hpp"
#include "regraph/numerics.hpp"

namespace fixture {

using namespace regraph;

inline SiteMeta site(std::string id, std::string region, double lat = 40.0, double lon = -90.0) {
  SiteMeta s;
  s.site_id = std::move(id);
  s.region = std::move(region);
  s.latitude = lat;
  s.longitude = lon;
  s.capacity = 20;
  return s;
}

// Distances from a fixed table keyed by unordered id pair; absent pairs are far apart.
class TableProvider final : public DistanceProvider {
 public:
  TableProvider() = default;
  explicit TableProvider(std::map<std::pair<std::string, std::string>, double> t) : table_(std::move(t)) {}
  void set(const std::string& a, const std::string& b, double miles) { table_[key(a, b)] = miles; }
  double miles(const SiteMeta& a, const SiteMeta& b) override {
    auto it = table_.find(key(a.site_id, b.site_id));
    return it == table_.end() ? 1000.0 : it->second;
  }

 private:
  static std::pair<std::string, std::string> key(const std::string& a, const std::string& b) {
    return a < b ? std::pair(a, b) : std::pair(b, a);
  }
  std::map<std::pair<std::string, std::string>, double> table_;
};

// Random graph on n sites spread over `regions` labels, with edges drawn with
// probability `density` at random distances under the threshold.
struct ToyGraph {
  std::vector<SiteMeta> sites;
  TableProvider distances;
};

inline ToyGraph toy_graph(std::size_t n, std::size_t regions, std::uint64_t seed, double density = 0.5) {
  SplitMix64 rng(seed);
  ToyGraph t;
  for (std::size_t i = 0; i < n; ++i)
    t.sites.push_back(site("n" + std::to_string(i), "R" + std::to_string(i % regions)));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (rng.uniform() < density) t.distances.set(t.sites[i].site_id, t.sites[j].site_id, rng.uniform(1.0, 39.0));
  return t;
}

inline SiteGraph build(ToyGraph& t, AdjacencyWeights w = AdjacencyWeights::Gaussian) {
  GraphOptions opt;
  opt.weights = w;
  return build_connected(t.sites, t.distances, opt);
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, SplitMix64& rng, double lo = -1.0, double hi = 1.0) {
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(lo, hi);
  return m;
}

inline std::vector<Matrix> random_frames(std::size_t k, std::size_t n, std::size_t f, SplitMix64& rng) {
  std::vector<Matrix> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(random_matrix(n, f, rng, 0.0, 1.0));
  return out;
}

// Valid frames on a 10-minute grid with random features and a smooth
// occupancy column.
inline std::shared_ptr<const FrameStore> random_store(std::size_t frames, std::size_t n, SplitMix64& rng,
                                                      std::int64_t start = 1700000000) {
  auto store = std::make_shared<FrameStore>();
  for (std::size_t k = 0; k < frames; ++k) {
    FeatureFrame f;
    f.time = start + static_cast<std::int64_t>(k) * 600;
    f.features = random_matrix(n, kFeatureCount, rng, 0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i)
      f.features(static_cast<Eigen::Index>(i), kOccupancy) = 0.5 + 0.4 * std::sin(0.3 * static_cast<double>(k + 2 * i));
    f.valid = true;
    store->push_back(std::move(f));
  }
  return store;
}

inline ModelSpec small_spec(Architecture a, std::size_t hidden, std::size_t lags, std::vector<std::size_t> horizons,
                            std::uint64_t seed = 3) {
  ModelSpec s;
  s.architecture = a;
  s.connectivity = required_connectivity(a);
  s.hidden = hidden;
  s.lags = lags;
  s.horizons = std::move(horizons);
  s.seed = seed;
  return s;
}

// Graph context matching the architecture's connectivity.
inline GraphContext context_for(Architecture a, const SiteGraph& g, std::size_t random_groups = 2,
                                std::uint64_t seed = 5) {
  switch (required_connectivity(a)) {
    case Connectivity::Regional: {
      auto p = decompose_regional(g);
      return GraphContext::build(g, &p);
    }
    case Connectivity::Random: {
      auto p = decompose_random(g, random_groups, seed);
      return GraphContext::build(g, &p);
    }
    case Connectivity::Connected: break;
  }
  return GraphContext::build(g);
}

inline const std::vector<Architecture>& all_architectures() {
  static const std::vector<Architecture> all{Architecture::StackedGRU, Architecture::StackedGCN, Architecture::TGCN,
                                             Architecture::CSTGCN,     Architecture::RanTGCN,    Architecture::RegTGCN};
  return all;
}

}  // namespace fixture
