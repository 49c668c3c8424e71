#pragma once

// JSON forms of graphs, partitions and feature scalers, and the binary
// checkpoint container:
//
//   magic "RGRCKPT\n" | u32 LE format_version | u64 LE header bytes |
//   JSON header | float64 LE tensor values in header order

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "regraph/data.hpp"
#include "regraph/errors.hpp"
#include "regraph/graph.hpp"
#include "regraph/models.hpp"

namespace regraph {

// ---------------------------------------------------------------------------
// Atomic file output

// Writes through a sibling temp file and renames it into place, so readers
// never observe a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw IoError("write failed for " + path.string() + " (disk full?)");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move checkpoint into place at " + path.string());
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Sites, graphs, partitions

inline nlohmann::json to_json(const SiteMeta& s) {
  return {{"site_id", s.site_id},       {"region", s.region}, {"lat", s.latitude},
          {"lon", s.longitude},         {"travel_time_min", s.travel_time},
          {"owner", s.owner},           {"amenities", s.amenity_count},
          {"capacity", s.capacity}};
}

inline SiteMeta site_from_json(const nlohmann::json& j) {
  SiteMeta s;
  s.site_id = j.at("site_id").get<std::string>();
  s.region = j.at("region").get<std::string>();
  s.latitude = j.at("lat").get<double>();
  s.longitude = j.at("lon").get<double>();
  s.travel_time = j.at("travel_time_min").get<double>();
  s.owner = j.at("owner").get<int>();
  s.amenity_count = j.at("amenities").get<int>();
  s.capacity = j.at("capacity").get<int>();
  validate_site(s);
  return s;
}

inline nlohmann::json to_json(const GraphOptions& o) {
  return {{"threshold_miles", o.threshold_miles}, {"weights", to_string(o.weights)}, {"sigma_miles", o.sigma_miles}};
}

inline GraphOptions graph_options_from_json(const nlohmann::json& j) {
  GraphOptions o;
  o.threshold_miles = j.at("threshold_miles").get<double>();
  o.weights = parse_adjacency_weights(j.at("weights").get<std::string>());
  o.sigma_miles = j.at("sigma_miles").get<double>();
  return o;
}

inline nlohmann::json edges_to_json(const std::vector<Edge>& edges) {
  auto out = nlohmann::json::array();
  for (const auto& e : edges) out.push_back({e.i, e.j, e.miles});
  return out;
}

inline std::vector<Edge> edges_from_json(const nlohmann::json& j) {
  std::vector<Edge> out;
  for (const auto& e : j) out.push_back({e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>(), e.at(2).get<double>()});
  return out;
}

inline std::string to_string(PartitionKind k) { return k == PartitionKind::Regional ? "regional" : "random"; }

inline PartitionKind parse_partition_kind(const std::string& s) {
  if (s == "regional") return PartitionKind::Regional;
  if (s == "random") return PartitionKind::Random;
  throw DataError("unknown partition kind '" + s + "'");
}

// A full graph plus the partition (if any) a model trains against.
struct GraphBundle {
  SiteGraph graph;
  Connectivity connectivity = Connectivity::Connected;
  std::optional<RegionalPartition> partition;
  nlohmann::json provenance = nlohmann::json::object();  // strategy parameters

  const RegionalPartition* partition_ptr() const { return partition ? &*partition : nullptr; }
};

inline nlohmann::json to_json(const GraphBundle& b) {
  nlohmann::json sites = nlohmann::json::array();
  for (const auto& s : b.graph.nodes()) sites.push_back(to_json(s));
  nlohmann::json j{{"format", "regraph-graph"},
                   {"version", 1},
                   {"connectivity", to_string(b.connectivity)},
                   {"options", to_json(b.graph.options())},
                   {"sites", sites},
                   {"edges", edges_to_json(b.graph.edges())},
                   {"provenance", b.provenance}};
  if (b.partition) {
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& s : b.partition->subgraphs)
      groups.push_back({{"label", s.label}, {"nodes", s.nodes}, {"edges", edges_to_json(s.graph.edges())}});
    j["partition"] = {{"kind", to_string(b.partition->kind)}, {"groups", groups}};
  } else {
    j["partition"] = nullptr;
  }
  return j;
}

inline GraphBundle graph_bundle_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "regraph-graph") throw DataError("not a graph file");
    if (j.at("version").get<int>() != 1) throw DataError("unsupported graph file version");
    std::vector<SiteMeta> sites;
    for (const auto& s : j.at("sites")) sites.push_back(site_from_json(s));
    validate_sites(sites);
    GraphBundle b;
    b.graph = SiteGraph(sites, edges_from_json(j.at("edges")), graph_options_from_json(j.at("options")));
    b.connectivity = parse_connectivity(j.at("connectivity").get<std::string>());
    b.provenance = j.value("provenance", nlohmann::json::object());
    const auto& p = j.at("partition");
    if (!p.is_null()) {
      std::vector<std::pair<std::string, std::vector<std::size_t>>> groups;
      std::vector<std::vector<Edge>> edges;
      for (const auto& g : p.at("groups")) {
        groups.emplace_back(g.at("label").get<std::string>(), g.at("nodes").get<std::vector<std::size_t>>());
        edges.push_back(edges_from_json(g.at("edges")));
      }
      b.partition = partition_from_groups(b.graph, parse_partition_kind(p.at("kind").get<std::string>()),
                                          std::move(groups), std::move(edges));
    }
    if ((b.connectivity == Connectivity::Connected) != !b.partition) {
      throw DataError("graph connectivity " + to_string(b.connectivity) + " does not match its partition");
    }
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed graph JSON: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("malformed graph JSON: ") + e.what());
  }
}

inline void write_graph_json(const std::string& path, const GraphBundle& b) {
  write_file_atomic(path, to_json(b).dump(1) + "\n");
}

inline GraphBundle read_graph_json(const std::string& path) {
  const auto text = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
  return graph_bundle_from_json(j);
}

// ---------------------------------------------------------------------------
// Feature scaler

inline nlohmann::json to_json(const FeatureScaler& s) { return {{"lo", s.lo}, {"hi", s.hi}}; }

inline FeatureScaler scaler_from_json(const nlohmann::json& j) {
  FeatureScaler s;
  s.lo = j.at("lo").get<std::array<double, kFeatureCount>>();
  s.hi = j.at("hi").get<std::array<double, kFeatureCount>>();
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::array<char, 8> kCheckpointMagic{'R', 'G', 'R', 'C', 'K', 'P', 'T', '\n'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.append(bytes.data(), bytes.size());
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw DataError("checkpoint truncated");
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  pos += sizeof(T);
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace detail

struct Checkpoint {
  nlohmann::json header;  // includes "model", "region_labels" and caller metadata
  std::map<std::string, std::pair<Shape, std::vector<double>>> weights;
};

// `meta` is stored under header["meta"] (scaler, graph, grid options ...).
inline std::string encode_checkpoint(const ForecastModel& model, const nlohmann::json& meta) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, t] : model.parameters()) tensors.push_back({{"name", name}, {"shape", t.shape()}});
  const nlohmann::json header{{"format_version", kCheckpointVersion},
                              {"model", to_json(model.spec())},
                              {"region_labels", model.region_labels()},
                              {"tensors", tensors},
                              {"meta", meta}};
  const std::string text = header.dump();
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& [name, t] : model.parameters())
    for (double v : t.values()) detail::put_le<double>(out, v);
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < kCheckpointMagic.size() || !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin())) {
    throw DataError("not a checkpoint file (bad magic)");
  }
  std::size_t pos = kCheckpointMagic.size();
  const auto version = detail::get_le<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = detail::get_le<std::uint64_t>(bytes, pos);
  if (header_len > bytes.size() - pos) throw DataError("checkpoint truncated");
  Checkpoint ck;
  try {
    ck.header = nlohmann::json::parse(bytes.substr(pos, header_len));
    pos += header_len;
    for (const auto& t : ck.header.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      const auto shape = t.at("shape").get<Shape>();
      std::vector<double> values(shape_size(shape));
      for (auto& v : values) v = detail::get_le<double>(bytes, pos);
      if (!ck.weights.emplace(name, std::pair(shape, std::move(values))).second) {
        throw DataError("checkpoint repeats tensor " + name);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint header: ") + e.what());
  }
  if (pos != bytes.size()) throw DataError("checkpoint has trailing bytes");
  return ck;
}

inline void save_checkpoint(const std::string& path, const ForecastModel& model, const nlohmann::json& meta) {
  write_file_atomic(path, encode_checkpoint(model, meta));
}

inline Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

inline ForecastModel model_from_checkpoint(const Checkpoint& ck) {
  ForecastModel model(model_spec_from_json(ck.header.at("model")),
                      ck.header.at("region_labels").get<std::vector<std::string>>());
  model.load_weights(ck.weights);
  return model;
}

}  // namespace regraph
