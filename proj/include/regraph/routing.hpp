#pragma once

// HTTP driving-distance provider. The routing service is queried with
//   GET <path>?origin_lat=..&origin_lon=..&dest_lat=..&dest_lon=..
// and must answer with a JSON object {"miles": <number>}.

#include <httplib.h>
#include <json.hpp>

#include <cstdlib>
#include <memory>
#include <string>

#include "regraph/csv.hpp"
#include "regraph/errors.hpp"
#include "regraph/graph.hpp"

namespace regraph {

class HttpDistanceProvider final : public DistanceProvider {
 public:
  // `url` is scheme://host[:port][/path]
  explicit HttpDistanceProvider(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("routing url needs a scheme: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    base_ = url.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
  }

  double miles(const SiteMeta& a, const SiteMeta& b) override {
    httplib::Client client(base_);
    client.set_connection_timeout(10);
    client.set_read_timeout(30);
    httplib::Params params{{"origin_lat", csv::format_double(a.latitude)},
                           {"origin_lon", csv::format_double(a.longitude)},
                           {"dest_lat", csv::format_double(b.latitude)},
                           {"dest_lon", csv::format_double(b.longitude)}};
    auto res = client.Get(path_, params, httplib::Headers{});
    if (!res) throw IoError("routing request failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw IoError("routing service answered HTTP " + std::to_string(res->status));
    try {
      auto body = nlohmann::json::parse(res->body);
      return body.at("miles").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw IoError(std::string("malformed routing response: ") + e.what());
    }
  }

 private:
  std::string base_;
  std::string path_;
};

// Provider selected from REGRAPH_ROUTING_URL (HTTP) or haversine, wrapped in
// the REGRAPH_DISTANCE_CACHE file cache when that variable is set.
inline std::shared_ptr<DistanceProvider> distance_provider_from_env() {
  std::shared_ptr<DistanceProvider> provider;
  if (const char* url = std::getenv("REGRAPH_ROUTING_URL"); url && *url) {
    provider = std::make_shared<HttpDistanceProvider>(url);
  } else {
    provider = std::make_shared<HaversineProvider>();
  }
  if (const char* cache = std::getenv("REGRAPH_DISTANCE_CACHE"); cache && *cache) {
    provider = std::make_shared<CachedDistanceProvider>(provider, cache);
  }
  return provider;
}

}  // namespace regraph
