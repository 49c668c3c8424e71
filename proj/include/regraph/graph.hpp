#pragma once

// Truck-parking site graphs: distance providers, the thresholded connected
// graph with its symmetric normalized operator, and the two decompositions
// (per-region subgraphs and seeded random groups).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "regraph/csv.hpp"
#include "regraph/errors.hpp"
#include "regraph/numerics.hpp"

namespace regraph {

struct SiteMeta {
  std::string site_id;
  std::string region;
  double latitude = 0.0;
  double longitude = 0.0;
  double travel_time = 0.0;  // minutes from the nearest city
  int owner = 0;             // 1 public, 0 private
  int amenity_count = 0;
  int capacity = 1;
};

inline void validate_site(const SiteMeta& s) {
  if (s.site_id.empty()) throw DataError("site with empty id");
  if (s.capacity < 1) throw DataError("site " + s.site_id + ": capacity must be >= 1");
  if (!(s.latitude >= -90.0 && s.latitude <= 90.0)) throw DataError("site " + s.site_id + ": latitude out of range");
  if (!(s.longitude >= -180.0 && s.longitude <= 180.0)) {
    throw DataError("site " + s.site_id + ": longitude out of range");
  }
  if (s.owner != 0 && s.owner != 1) throw DataError("site " + s.site_id + ": owner must be 0 or 1");
  if (s.amenity_count < 0) throw DataError("site " + s.site_id + ": negative amenity count");
}

inline void validate_sites(const std::vector<SiteMeta>& sites) {
  std::set<std::string> seen;
  for (const auto& s : sites) {
    validate_site(s);
    if (!seen.insert(s.site_id).second) throw DataError("duplicate site id " + s.site_id);
  }
}

inline const std::vector<std::string>& sites_csv_header() {
  static const std::vector<std::string> header{"site_id", "region", "lat",       "lon",
                                               "travel_time_min", "owner", "amenities", "capacity"};
  return header;
}

inline std::vector<SiteMeta> read_sites_csv(const std::string& path) {
  std::vector<SiteMeta> sites;
  csv::read_table(path, sites_csv_header(), [&](const std::vector<std::string>& f, std::size_t) {
    SiteMeta s;
    s.site_id = csv::trim(f[0]);
    s.region = csv::trim(f[1]);
    s.latitude = csv::parse_double(f[2], "lat");
    s.longitude = csv::parse_double(f[3], "lon");
    s.travel_time = csv::parse_double(f[4], "travel_time_min");
    s.owner = static_cast<int>(csv::parse_int(f[5], "owner"));
    s.amenity_count = static_cast<int>(csv::parse_int(f[6], "amenities"));
    s.capacity = static_cast<int>(csv::parse_int(f[7], "capacity"));
    validate_site(s);
    sites.push_back(std::move(s));
  });
  validate_sites(sites);
  return sites;
}

inline void write_sites_csv(const std::string& path, const std::vector<SiteMeta>& sites) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "site_id,region,lat,lon,travel_time_min,owner,amenities,capacity\n";
  for (const auto& s : sites) {
    out << s.site_id << ',' << s.region << ',' << csv::format_double(s.latitude) << ','
        << csv::format_double(s.longitude) << ',' << csv::format_double(s.travel_time) << ',' << s.owner << ','
        << s.amenity_count << ',' << s.capacity << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Distances

inline constexpr double kEarthRadiusMiles = 3958.8;

inline double haversine_miles(double lat1, double lon1, double lat2, double lon2) {
  constexpr double rad = std::numbers::pi / 180.0;
  const double dlat = (lat2 - lat1) * rad;
  const double dlon = (lon2 - lon1) * rad;
  const double s1 = std::sin(dlat / 2.0);
  const double s2 = std::sin(dlon / 2.0);
  double h = s1 * s1 + std::cos(lat1 * rad) * std::cos(lat2 * rad) * s2 * s2;
  h = std::clamp(h, 0.0, 1.0);
  return 2.0 * kEarthRadiusMiles * std::asin(std::sqrt(h));
}

inline double haversine_distance(const SiteMeta& a, const SiteMeta& b) {
  return haversine_miles(a.latitude, a.longitude, b.latitude, b.longitude);
}

class DistanceProvider {
 public:
  virtual ~DistanceProvider() = default;
  virtual double miles(const SiteMeta& a, const SiteMeta& b) = 0;
};

class HaversineProvider final : public DistanceProvider {
 public:
  double miles(const SiteMeta& a, const SiteMeta& b) override { return haversine_distance(a, b); }
};

// Persistent `site_a,site_b,miles` cache in front of another provider.
// Lookups are symmetric; misses are resolved by the inner provider and
// appended to the cache file under a mutex.
class CachedDistanceProvider final : public DistanceProvider {
 public:
  CachedDistanceProvider(std::shared_ptr<DistanceProvider> inner, std::string path)
      : inner_(std::move(inner)), path_(std::move(path)) {
    std::ifstream probe(path_);
    if (probe.good()) {
      probe.close();
      csv::read_table(path_, {"site_a", "site_b", "miles"}, [&](const std::vector<std::string>& f, std::size_t) {
        cache_[key(csv::trim(f[0]), csv::trim(f[1]))] = csv::parse_double(f[2], "miles");
      });
    }
  }

  double miles(const SiteMeta& a, const SiteMeta& b) override {
    auto k = key(a.site_id, b.site_id);
    {
      std::lock_guard lock(mutex_);
      if (auto it = cache_.find(k); it != cache_.end()) return it->second;
    }
    const double d = inner_->miles(a, b);
    std::lock_guard lock(mutex_);
    if (cache_.emplace(k, d).second) append(k, d);
    return d;
  }

  std::size_t cached() const {
    std::lock_guard lock(mutex_);
    return cache_.size();
  }

 private:
  using Key = std::pair<std::string, std::string>;
  static Key key(const std::string& a, const std::string& b) { return a < b ? Key{a, b} : Key{b, a}; }

  void append(const Key& k, double d) {
    std::ifstream probe(path_);
    const bool fresh = !probe.good() || probe.peek() == std::ifstream::traits_type::eof();
    probe.close();
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw IoError("cannot write distance cache " + path_);
    if (fresh) out << "site_a,site_b,miles\n";
    out << k.first << ',' << k.second << ',' << csv::format_double(d) << '\n';
  }

  std::shared_ptr<DistanceProvider> inner_;
  std::string path_;
  std::map<Key, double> cache_;
  mutable std::mutex mutex_;
};

// ---------------------------------------------------------------------------
// Graphs

enum class AdjacencyWeights { Gaussian, Binary, Raw };

inline std::string to_string(AdjacencyWeights w) {
  switch (w) {
    case AdjacencyWeights::Gaussian: return "gaussian";
    case AdjacencyWeights::Binary: return "binary";
    case AdjacencyWeights::Raw: return "raw";
  }
  return "gaussian";
}

inline AdjacencyWeights parse_adjacency_weights(const std::string& s) {
  if (s == "gaussian") return AdjacencyWeights::Gaussian;
  if (s == "binary") return AdjacencyWeights::Binary;
  if (s == "raw") return AdjacencyWeights::Raw;
  throw ConfigError("unknown adjacency_weights '" + s + "' (expected gaussian, binary or raw)");
}

struct GraphOptions {
  double threshold_miles = 40.0;
  AdjacencyWeights weights = AdjacencyWeights::Gaussian;
  double sigma_miles = 20.0;
};

inline double edge_weight(double miles, const GraphOptions& opt) {
  switch (opt.weights) {
    case AdjacencyWeights::Binary: return 1.0;
    // Co-located sites keep a strictly positive weight so the edge survives.
    case AdjacencyWeights::Raw: return std::max(miles, 1e-3);
    case AdjacencyWeights::Gaussian: {
      const double x = miles / opt.sigma_miles;
      return std::exp(-x * x);
    }
  }
  return 1.0;
}

struct Edge {
  std::size_t i = 0;
  std::size_t j = 0;
  double miles = 0.0;
};

// D^-1/2 (A + I) D^-1/2. Entry products use inv[i]*inv[j] so the result is
// exactly symmetric for symmetric input.
inline Matrix normalized_operator(const Matrix& adjacency) {
  const Eigen::Index n = adjacency.rows();
  Matrix a_hat = adjacency + Matrix::Identity(n, n);
  std::vector<double> inv(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    double d = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) d += a_hat(i, j);
    inv[static_cast<std::size_t>(i)] = 1.0 / std::sqrt(d);
  }
  Matrix out(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      out(i, j) = a_hat(i, j) * (inv[static_cast<std::size_t>(i)] * inv[static_cast<std::size_t>(j)]);
  return out;
}

class SiteGraph {
 public:
  SiteGraph() = default;

  // Builds adjacency and the normalized operator from an explicit edge list.
  SiteGraph(std::vector<SiteMeta> nodes, std::vector<Edge> edges, GraphOptions options, Matrix distances = {})
      : nodes_(std::move(nodes)), edges_(std::move(edges)), options_(options), distances_(std::move(distances)) {
    const auto n = static_cast<Eigen::Index>(nodes_.size());
    adjacency_ = Matrix::Zero(n, n);
    for (auto& e : edges_) {
      if (e.i == e.j) throw DataError("self-loop edge on node " + std::to_string(e.i));
      if (e.i >= nodes_.size() || e.j >= nodes_.size()) throw DataError("edge endpoint out of range");
      if (e.i > e.j) std::swap(e.i, e.j);
      const double w = edge_weight(e.miles, options_);
      const auto a = static_cast<Eigen::Index>(e.i), b = static_cast<Eigen::Index>(e.j);
      if (adjacency_(a, b) != 0.0) throw DataError("duplicate edge " + nodes_[e.i].site_id + "-" + nodes_[e.j].site_id);
      adjacency_(a, b) = w;
      adjacency_(b, a) = w;
    }
    std::sort(edges_.begin(), edges_.end(), [](const Edge& x, const Edge& y) {
      return std::pair(x.i, x.j) < std::pair(y.i, y.j);
    });
    normalized_ = normalized_operator(adjacency_);
  }

  std::size_t size() const { return nodes_.size(); }
  const std::vector<SiteMeta>& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const GraphOptions& options() const { return options_; }
  const Matrix& adjacency() const { return adjacency_; }
  const Matrix& normalized() const { return normalized_; }
  // Pairwise provider distances when the graph was built from sites; empty
  // for graphs reconstructed from an edge list.
  const Matrix& distances() const { return distances_; }

  Matrix binary_adjacency() const {
    return adjacency_.unaryExpr([](double w) { return w > 0.0 ? 1.0 : 0.0; });
  }

  std::size_t index_of(const std::string& site_id) const {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].site_id == site_id) return i;
    throw DataError("site " + site_id + " not in graph");
  }

 private:
  std::vector<SiteMeta> nodes_;
  std::vector<Edge> edges_;
  GraphOptions options_;
  Matrix adjacency_;
  Matrix normalized_;
  Matrix distances_;
};

// Undirected edges between all site pairs within the distance threshold.
inline SiteGraph build_connected(const std::vector<SiteMeta>& sites, DistanceProvider& distances,
                                 const GraphOptions& options = {}) {
  if (sites.empty()) throw UsageError("build_connected: no sites");
  if (!(options.threshold_miles > 0.0)) throw UsageError("build_connected: threshold must be positive");
  if (options.weights == AdjacencyWeights::Gaussian && !(options.sigma_miles > 0.0)) {
    throw UsageError("build_connected: sigma must be positive");
  }
  validate_sites(sites);
  const std::size_t n = sites.size();
  Matrix dist = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double d = 0.0;
      try {
        d = distances.miles(sites[i], sites[j]);
      } catch (const std::exception& e) {
        throw DataError("distance lookup failed for " + sites[i].site_id + "-" + sites[j].site_id + ": " + e.what());
      }
      if (!std::isfinite(d) || d < 0.0) {
        throw DataError("invalid distance for " + sites[i].site_id + "-" + sites[j].site_id);
      }
      dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = d;
      dist(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = d;
      if (d <= options.threshold_miles) edges.push_back({i, j, d});
    }
  }
  return SiteGraph(sites, std::move(edges), options, std::move(dist));
}

// Count of positive off-diagonal adjacency entries in row i.
inline std::size_t degree(const SiteGraph& g, std::size_t i) {
  if (i >= g.size()) throw UsageError("degree: node index out of range");
  std::size_t d = 0;
  for (std::size_t j = 0; j < g.size(); ++j)
    if (j != i && g.adjacency()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) > 0.0) ++d;
  return d;
}

// ---------------------------------------------------------------------------
// Decompositions

enum class PartitionKind { Regional, Random };

// How a random group is wired: `induced` keeps only the full graph's edges
// inside the group; `complete` joins every pair in the group.
enum class RandomEdges { Induced, Complete };

inline std::string to_string(RandomEdges e) { return e == RandomEdges::Complete ? "complete" : "induced"; }

inline RandomEdges parse_random_edges(const std::string& s) {
  if (s == "induced") return RandomEdges::Induced;
  if (s == "complete") return RandomEdges::Complete;
  throw ConfigError("unknown random_edges '" + s + "' (expected induced or complete)");
}

struct Subgraph {
  std::string label;
  std::vector<std::size_t> nodes;  // global node indices, ascending
  SiteGraph graph;                 // local indices follow `nodes`
};

struct RegionalPartition {
  PartitionKind kind = PartitionKind::Regional;
  std::vector<std::string> region_of;     // per global node
  std::vector<std::string> region_order;  // fixed order of subgraphs
  std::vector<Subgraph> subgraphs;        // parallel to region_order

  std::size_t node_count() const { return region_of.size(); }
};

namespace detail {

inline Subgraph induced_subgraph(const SiteGraph& g, std::string label, std::vector<std::size_t> members,
                                 bool complete) {
  std::sort(members.begin(), members.end());
  std::vector<std::size_t> local(g.size(), static_cast<std::size_t>(-1));
  std::vector<SiteMeta> nodes;
  for (std::size_t k = 0; k < members.size(); ++k) {
    local[members[k]] = k;
    nodes.push_back(g.nodes()[members[k]]);
  }
  std::vector<Edge> edges;
  if (complete) {
    if (g.distances().rows() != static_cast<Eigen::Index>(g.size())) {
      throw UsageError("complete random groups need pairwise distances; rebuild the graph from sites");
    }
    for (std::size_t a = 0; a < members.size(); ++a)
      for (std::size_t b = a + 1; b < members.size(); ++b)
        edges.push_back({a, b, g.distances()(static_cast<Eigen::Index>(members[a]), static_cast<Eigen::Index>(members[b]))});
  } else {
    for (const auto& e : g.edges()) {
      if (local[e.i] != static_cast<std::size_t>(-1) && local[e.j] != static_cast<std::size_t>(-1)) {
        edges.push_back({local[e.i], local[e.j], e.miles});
      }
    }
  }
  Matrix dist;
  if (g.distances().rows() == static_cast<Eigen::Index>(g.size())) {
    const auto m = static_cast<Eigen::Index>(members.size());
    dist.resize(m, m);
    for (Eigen::Index a = 0; a < m; ++a)
      for (Eigen::Index b = 0; b < m; ++b)
        dist(a, b) = g.distances()(static_cast<Eigen::Index>(members[static_cast<std::size_t>(a)]),
                                   static_cast<Eigen::Index>(members[static_cast<std::size_t>(b)]));
  }
  SiteGraph sub(std::move(nodes), std::move(edges), g.options(), std::move(dist));
  return Subgraph{std::move(label), std::move(members), std::move(sub)};
}

}  // namespace detail

// One subgraph per distinct region label (sorted); cross-region edges drop.
inline RegionalPartition decompose_regional(const SiteGraph& g) {
  RegionalPartition p;
  p.kind = PartitionKind::Regional;
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& region = g.nodes()[i].region;
    if (region.empty()) throw DataError("site " + g.nodes()[i].site_id + " has an empty region label");
    p.region_of.push_back(region);
    members[region].push_back(i);
  }
  for (auto& [label, nodes] : members) {
    p.region_order.push_back(label);
    p.subgraphs.push_back(detail::induced_subgraph(g, label, std::move(nodes), false));
  }
  return p;
}

// Seeded shuffle into `groups` near-equal groups (sizes differ by <= 1).
inline RegionalPartition decompose_random(const SiteGraph& g, std::size_t groups, std::uint64_t seed,
                                          RandomEdges wiring = RandomEdges::Induced) {
  const std::size_t n = g.size();
  if (groups < 1 || groups > n) {
    throw UsageError("decompose_random: need 1 <= groups <= " + std::to_string(n) + ", got " + std::to_string(groups));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  SplitMix64 rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  RegionalPartition p;
  p.kind = PartitionKind::Random;
  p.region_of.assign(n, {});
  std::size_t cursor = 0;
  for (std::size_t k = 0; k < groups; ++k) {
    const std::size_t take = n / groups + (k < n % groups ? 1 : 0);
    std::vector<std::size_t> members(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                     order.begin() + static_cast<std::ptrdiff_t>(cursor + take));
    cursor += take;
    std::string label = "group" + std::to_string(k);
    for (auto m : members) p.region_of[m] = label;
    p.region_order.push_back(label);
    p.subgraphs.push_back(detail::induced_subgraph(g, label, std::move(members), wiring == RandomEdges::Complete));
  }
  return p;
}

// Rebuilds a partition from explicit group membership (used when loading
// serialized graphs). Subgraph edges are the given local edge lists.
inline RegionalPartition partition_from_groups(const SiteGraph& g, PartitionKind kind,
                                               std::vector<std::pair<std::string, std::vector<std::size_t>>> groups,
                                               std::vector<std::vector<Edge>> local_edges) {
  RegionalPartition p;
  p.kind = kind;
  p.region_of.assign(g.size(), {});
  for (std::size_t k = 0; k < groups.size(); ++k) {
    auto& [label, members] = groups[k];
    std::sort(members.begin(), members.end());
    std::vector<SiteMeta> nodes;
    for (auto m : members) {
      if (m >= g.size()) throw DataError("partition member out of range");
      if (!p.region_of[m].empty()) throw DataError("node " + g.nodes()[m].site_id + " appears in two groups");
      p.region_of[m] = label;
      nodes.push_back(g.nodes()[m]);
    }
    p.region_order.push_back(label);
    p.subgraphs.push_back(Subgraph{label, members, SiteGraph(std::move(nodes), std::move(local_edges[k]), g.options())});
  }
  for (std::size_t i = 0; i < g.size(); ++i)
    if (p.region_of[i].empty()) throw DataError("node " + g.nodes()[i].site_id + " not covered by the partition");
  return p;
}

// The whole graph as a single group.
inline RegionalPartition single_region(const SiteGraph& g, const std::string& label = "all") {
  std::vector<std::size_t> members(g.size());
  std::iota(members.begin(), members.end(), std::size_t{0});
  RegionalPartition p;
  p.kind = PartitionKind::Regional;
  p.region_of.assign(g.size(), label);
  p.region_order.push_back(label);
  p.subgraphs.push_back(detail::induced_subgraph(g, label, std::move(members), false));
  return p;
}

// ---------------------------------------------------------------------------
// Overlap accounting: with self-loops every node references itself plus its
// neighbours, so a graph costs n * mean(degree + 1) node computations.

inline double overlap_cost(std::size_t nodes, double mean_references) {
  return static_cast<double>(nodes) * mean_references;
}

inline double overlap_cost(const SiteGraph& g) {
  if (g.size() == 0) return 0.0;
  double refs = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) refs += static_cast<double>(degree(g, i) + 1);
  return overlap_cost(g.size(), refs / static_cast<double>(g.size()));
}

inline double overlap_cost(const RegionalPartition& p) {
  double total = 0.0;
  for (const auto& s : p.subgraphs) total += overlap_cost(s.graph);
  return total;
}

// Violations of the partition contract: nodes missing or duplicated, and
// nodes whose subgraph degree exceeds their full-graph degree.
struct PartitionAudit {
  std::size_t uncovered = 0;
  std::size_t duplicated = 0;
  std::size_t degree_violations = 0;
  std::size_t foreign_edges = 0;  // subgraph edges absent from the full graph

  bool ok() const { return uncovered == 0 && duplicated == 0 && degree_violations == 0 && foreign_edges == 0; }
};

inline PartitionAudit audit_partition(const SiteGraph& g, const RegionalPartition& p) {
  PartitionAudit audit;
  std::vector<int> hits(g.size(), 0);
  for (const auto& s : p.subgraphs) {
    for (std::size_t local = 0; local < s.nodes.size(); ++local) {
      const auto global = s.nodes[local];
      ++hits[global];
      if (degree(s.graph, local) > degree(g, global)) ++audit.degree_violations;
    }
    for (const auto& e : s.graph.edges()) {
      const auto a = static_cast<Eigen::Index>(s.nodes[e.i]);
      const auto b = static_cast<Eigen::Index>(s.nodes[e.j]);
      if (!(g.adjacency()(a, b) > 0.0)) ++audit.foreign_edges;
    }
  }
  for (int h : hits) {
    if (h == 0) ++audit.uncovered;
    if (h > 1) ++audit.duplicated;
  }
  return audit;
}

}  // namespace regraph
