#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "regraph/synthetic.hpp"

using namespace regraph;

namespace {

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(b.size());
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Synthetic, DefaultSiteTable) {
  SyntheticConfig cfg;
  cfg.days = 1;
  auto d = generate_synthetic(cfg);
  EXPECT_EQ(d.sites.size(), 105u);
  std::map<std::string, int> per;
  for (const auto& s : d.sites) ++per[s.region];
  EXPECT_EQ(per, (std::map<std::string, int>{{"IA", 31}, {"IL", 14}, {"KS", 13}, {"KY", 10}, {"MI", 10}, {"MN", 6}, {"OH", 13}, {"WI", 8}}));
}

TEST(Synthetic, OccupancyBounds) {
  SyntheticConfig cfg;
  cfg.days = 7;
  cfg.coupling = 0.8;
  auto d = generate_synthetic(cfg);
  double peak = 0.0;
  for (const auto& series : d.occupancy)
    for (double v : series) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.1 + 1e-12);
      peak = std::max(peak, v);
    }
  EXPECT_GT(peak, 1.0);
}

TEST(Synthetic, SameSeedByteIdentical) {
  SyntheticConfig cfg;
  cfg.n_sites = 12;
  cfg.n_regions = 3;
  cfg.days = 2;
  const auto base = std::filesystem::temp_directory_path() / "regraph_synth_det";
  std::filesystem::remove_all(base);
  write_synthetic((base / "a").string(), cfg, generate_synthetic(cfg));
  write_synthetic((base / "b").string(), cfg, generate_synthetic(cfg));
  for (const char* f : {"sites.csv", "records.csv", "synth.json"}) EXPECT_EQ(slurp(base / "a" / f), slurp(base / "b" / f)) << f;
  cfg.seed = 8;
  write_synthetic((base / "c").string(), cfg, generate_synthetic(cfg));
  EXPECT_NE(slurp(base / "a" / "records.csv"), slurp(base / "c" / "records.csv"));
}

TEST(Synthetic, ZeroCouplingSitesIndependent) {
  SyntheticConfig cfg;
  cfg.n_sites = 12;
  cfg.n_regions = 2;
  cfg.days = 3;
  cfg.coupling = 0.0;
  auto base = generate_synthetic(cfg);
  cfg.force_full_site = base.sites[0].site_id;
  auto forced = generate_synthetic(cfg);
  EXPECT_NE(base.occupancy[0], forced.occupancy[0]);
  for (std::size_t i = 1; i < base.sites.size(); ++i) EXPECT_EQ(base.occupancy[i], forced.occupancy[i]);
}

TEST(Synthetic, ForcedFullSiteSpillsToRegion) {
  SyntheticConfig cfg;
  cfg.n_sites = 16;
  cfg.n_regions = 2;
  cfg.days = 4;
  cfg.coupling = 0.0;
  auto first = generate_synthetic(cfg);
  const auto target = first.sites[0];
  cfg.force_full_site = target.site_id;
  auto baseline = generate_synthetic(cfg);
  cfg.coupling = 0.8;
  auto coupled = generate_synthetic(cfg);
  for (std::size_t i = 1; i < coupled.sites.size(); ++i) {
    double a = 0, b = 0;
    for (double v : baseline.occupancy[i]) a += v;
    for (double v : coupled.occupancy[i]) b += v;
    if (coupled.sites[i].region == target.region) {
      EXPECT_GT(b, a) << coupled.sites[i].site_id;
    }
  }
}

TEST(Synthetic, SameRegionCorrelationExceedsCrossRegion) {
  SyntheticConfig cfg;
  cfg.days = 14;
  for (double coupling : {0.3, 0.8}) {
    cfg.coupling = coupling;
    auto d = generate_synthetic(cfg);
    double same = 0, cross = 0;
    std::size_t ns = 0, nc = 0;
    for (std::size_t i = 0; i < d.sites.size(); ++i)
      for (std::size_t j = i + 1; j < d.sites.size(); ++j) {
        const double r = pearson(d.occupancy[i], d.occupancy[j]);
        if (d.sites[i].region == d.sites[j].region) {
          same += r;
          ++ns;
        } else {
          cross += r;
          ++nc;
        }
      }
    EXPECT_GE(same / ns, cross / nc + 0.1) << "coupling " << coupling;
  }
}

TEST(Synthetic, RecordsCoverGridWithFastSites) {
  SyntheticConfig cfg;
  cfg.n_sites = 20;
  cfg.n_regions = 2;
  cfg.days = 2;
  cfg.fast_site_fraction = 0.5;
  auto d = generate_synthetic(cfg);
  std::map<std::string, std::size_t> count;
  for (const auto& r : d.records) ++count[r.site_id];
  const std::size_t steps = 2 * 144;
  std::size_t fast = 0;
  for (const auto& [id, c] : count) {
    if (c > steps) ++fast;
    EXPECT_GE(c, steps * 9 / 10);
  }
  EXPECT_GT(fast, 0u);
}

TEST(Synthetic, ConfigValidation) {
  SyntheticConfig cfg;
  cfg.coupling = 1.5;
  EXPECT_THROW(generate_synthetic(cfg), ConfigError);
  cfg = {};
  cfg.n_regions = 9;
  EXPECT_THROW(generate_synthetic(cfg), ConfigError);
  cfg = {};
  cfg.base_range = {0.8, 0.2};
  EXPECT_THROW(generate_synthetic(cfg), ConfigError);
  cfg = {};
  cfg.days = 1;
  cfg.force_full_site = "nope";
  EXPECT_THROW(generate_synthetic(cfg), ConfigError);
}
