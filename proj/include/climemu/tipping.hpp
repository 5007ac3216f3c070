#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "climemu/geodesic_grid.hpp"
#include "climemu/intervention.hpp"

namespace climemu {

enum class Comparator { greater, less };
enum class Combine { any, all };

struct TippingRule {
  std::size_t variable = kTas;  // OutputIndex
  Comparator comparator = Comparator::greater;
  double threshold_percent = 0.0;
};

struct TippingSite {
  std::string id;
  std::string display_name;
  LatLon center{0.0, 0.0};
  double radius_km = 1000.0;
  std::vector<TippingRule> rules;
  Combine combine = Combine::any;

  void validate() const;
};

/// Denominator floors guarding near-zero baselines, per output channel.
struct PercentFloors {
  std::array<double, kNumOutputs> eps{10.0, 0.05, 0.05};  // psl Pa, pr mm/day, tas K
};

struct SiteAssessment {
  std::string site_id;
  std::array<double, kNumOutputs> percent_change{};
  bool at_risk = false;
  std::vector<std::size_t> triggered_rules;  // indices into site.rules
};

/// Vertices within radius_km (haversine, 6371 km sphere) of the centre.
std::vector<std::size_t> site_members(const IcosahedralGrid& grid, const TippingSite& site);

/// Percent change per output variable from area-weighted site means of
/// `before` and `after` (each 3 x n_vertices). Throws empty_site when no
/// vertex is within the radius.
std::array<double, kNumOutputs> site_metrics(std::span<const double> before,
                                             std::span<const double> after,
                                             const TippingSite& site, const IcosahedralGrid& grid,
                                             const PercentFloors& floors = {});

bool rule_fires(const TippingRule& rule, const std::array<double, kNumOutputs>& percent);

std::vector<SiteAssessment> assess(std::span<const double> before, std::span<const double> after,
                                   const std::vector<TippingSite>& sites,
                                   const IcosahedralGrid& grid, const PercentFloors& floors = {});
std::vector<SiteAssessment> assess(const ResponseBundle& bundle,
                                   const std::vector<TippingSite>& sites,
                                   const PercentFloors& floors = {});

/// Placeholder seven-site configuration; thresholds are not expert values.
std::vector<TippingSite> default_sites();

nlohmann::json sites_to_json(const std::vector<TippingSite>& sites);
std::vector<TippingSite> sites_from_json(const nlohmann::json& j);
std::vector<TippingSite> load_sites(const std::filesystem::path& path);

nlohmann::json assessment_to_json(const SiteAssessment& a);

std::string to_string(Comparator c);

}  // namespace climemu
