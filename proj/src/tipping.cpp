#include "climemu/tipping.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "climemu/error.hpp"

namespace climemu {

std::string to_string(Comparator c) { return c == Comparator::greater ? ">" : "<"; }

void TippingSite::validate() const {
  const std::string path = "sites." + id;
  if (id.empty()) fail(ErrorCode::invalid_argument, "site id must not be empty", "sites");
  if (!(radius_km > 0.0) || !std::isfinite(radius_km))
    fail(ErrorCode::invalid_argument, "radius_km must be > 0", path + ".radius_km");
  if (!(center.lat >= -90.0 && center.lat <= 90.0) || !std::isfinite(center.lon))
    fail(ErrorCode::invalid_argument, "site centre is off the sphere", path + ".center");
  if (rules.empty()) fail(ErrorCode::invalid_argument, "a site needs at least one rule", path + ".rules");
  for (std::size_t i = 0; i < rules.size(); ++i) {
    if (rules[i].variable >= kNumOutputs)
      fail(ErrorCode::invalid_argument, "rule variable out of range",
           path + ".rules[" + std::to_string(i) + "]");
    if (!std::isfinite(rules[i].threshold_percent))
      fail(ErrorCode::invalid_argument, "rule threshold must be finite",
           path + ".rules[" + std::to_string(i) + "].threshold_percent");
  }
}

std::vector<std::size_t> site_members(const IcosahedralGrid& grid, const TippingSite& site) {
  std::vector<std::size_t> members;
  const auto verts = grid.vertices();
  for (std::size_t v = 0; v < grid.size(); ++v)
    if (haversine_km(site.center, verts[v]) <= site.radius_km) members.push_back(v);
  return members;
}

std::array<double, kNumOutputs> site_metrics(std::span<const double> before,
                                             std::span<const double> after,
                                             const TippingSite& site, const IcosahedralGrid& grid,
                                             const PercentFloors& floors) {
  site.validate();
  const std::size_t nv = grid.size();
  if (before.size() != kNumOutputs * nv || after.size() != before.size())
    fail(ErrorCode::invalid_argument, "response fields do not match grid level " +
                                          std::to_string(grid.level()));
  const auto members = site_members(grid, site);
  if (members.empty())
    fail(ErrorCode::empty_site, "site '" + site.id + "' contains no vertex at grid level " +
                                    std::to_string(grid.level()),
         "sites." + site.id);
  const auto w = grid.area_weights();
  double wsum = 0.0;
  for (std::size_t v : members) wsum += w[v];

  std::array<double, kNumOutputs> pct{};
  for (std::size_t c = 0; c < kNumOutputs; ++c) {
    double b = 0.0, a = 0.0;
    for (std::size_t v : members) {
      b += w[v] * before[c * nv + v];
      a += w[v] * after[c * nv + v];
    }
    b /= wsum;
    a /= wsum;
    pct[c] = 100.0 * (a - b) / std::max(std::fabs(b), floors.eps[c]);
  }
  return pct;
}

bool rule_fires(const TippingRule& rule, const std::array<double, kNumOutputs>& percent) {
  const double p = percent[rule.variable];
  return rule.comparator == Comparator::greater ? p > rule.threshold_percent
                                                : p < rule.threshold_percent;
}

std::vector<SiteAssessment> assess(std::span<const double> before, std::span<const double> after,
                                   const std::vector<TippingSite>& sites,
                                   const IcosahedralGrid& grid, const PercentFloors& floors) {
  std::vector<SiteAssessment> out;
  out.reserve(sites.size());
  for (const auto& site : sites) {
    SiteAssessment a;
    a.site_id = site.id;
    a.percent_change = site_metrics(before, after, site, grid, floors);
    for (std::size_t i = 0; i < site.rules.size(); ++i)
      if (rule_fires(site.rules[i], a.percent_change)) a.triggered_rules.push_back(i);
    a.at_risk = site.combine == Combine::any ? !a.triggered_rules.empty()
                                             : a.triggered_rules.size() == site.rules.size();
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<SiteAssessment> assess(const ResponseBundle& bundle,
                                   const std::vector<TippingSite>& sites,
                                   const PercentFloors& floors) {
  return assess(bundle.before, bundle.after, sites, grid_for_level(bundle.grid_level), floors);
}

std::vector<TippingSite> default_sites() {
  auto rule = [](std::size_t v, Comparator c, double t) { return TippingRule{v, c, t}; };
  const auto gt = Comparator::greater;
  const auto lt = Comparator::less;
  return {
      {"greenland_ice_sheet", "Greenland ice sheet", {72.0, -40.0}, 1000.0, {rule(kTas, gt, 5.0)}, Combine::any},
      {"west_antarctic_ice_sheet", "West Antarctic ice sheet", {-80.0, -110.0}, 1000.0, {rule(kTas, gt, 5.0)}, Combine::any},
      {"amazon_basin", "Amazon basin", {-5.0, -62.0}, 1500.0, {rule(kPr, lt, -10.0), rule(kTas, gt, 5.0)}, Combine::any},
      {"sahel_west_african_monsoon", "Sahel / West African monsoon", {14.0, 0.0}, 1500.0, {rule(kPr, lt, -10.0), rule(kPr, gt, 10.0)}, Combine::any},
      {"north_atlantic_subpolar_gyre", "North Atlantic subpolar gyre", {55.0, -40.0}, 1000.0, {rule(kTas, lt, -5.0)}, Combine::any},
      {"coral_triangle", "Indo-Pacific coral triangle", {0.0, 125.0}, 1500.0, {rule(kTas, gt, 3.0)}, Combine::any},
      {"boreal_permafrost", "Boreal permafrost belt", {65.0, 100.0}, 1500.0, {rule(kTas, gt, 5.0)}, Combine::any},
  };
}

nlohmann::json sites_to_json(const std::vector<TippingSite>& sites) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["placeholder"] = true;
  j["sites"] = nlohmann::json::array();
  for (const auto& s : sites) {
    nlohmann::json rules = nlohmann::json::array();
    for (const auto& r : s.rules)
      rules.push_back({{"variable", kOutputChannels[r.variable].id},
                       {"comparator", to_string(r.comparator)},
                       {"threshold_percent", r.threshold_percent}});
    j["sites"].push_back({{"id", s.id},
                          {"display_name", s.display_name},
                          {"center", {{"lat", s.center.lat}, {"lon", s.center.lon}}},
                          {"radius_km", s.radius_km},
                          {"rules", rules},
                          {"combine", s.combine == Combine::any ? "any" : "all"}});
  }
  return j;
}

std::vector<TippingSite> sites_from_json(const nlohmann::json& j) {
  std::vector<TippingSite> sites;
  std::set<std::string> ids;
  try {
    const int version = j.value("schema_version", 1);
    if (version != 1)
      fail(ErrorCode::format_error, "unsupported sites schema_version " + std::to_string(version));
    for (const auto& e : j.at("sites")) {
      TippingSite s;
      s.id = e.at("id").get<std::string>();
      s.display_name = e.value("display_name", s.id);
      s.center = {e.at("center").at("lat").get<double>(), e.at("center").at("lon").get<double>()};
      s.radius_km = e.at("radius_km").get<double>();
      const std::string combine = e.value("combine", std::string("any"));
      if (combine == "any")
        s.combine = Combine::any;
      else if (combine == "all")
        s.combine = Combine::all;
      else
        fail(ErrorCode::invalid_argument, "combine must be 'any' or 'all'", "sites." + s.id + ".combine");
      for (const auto& r : e.at("rules")) {
        TippingRule rule;
        const auto v = output_index(r.at("variable").get<std::string>());
        if (!v) fail(ErrorCode::invalid_argument, "unknown rule variable", "sites." + s.id + ".rules");
        rule.variable = *v;
        const auto cmp = r.at("comparator").get<std::string>();
        if (cmp == ">")
          rule.comparator = Comparator::greater;
        else if (cmp == "<")
          rule.comparator = Comparator::less;
        else
          fail(ErrorCode::invalid_argument, "comparator must be '>' or '<'", "sites." + s.id + ".rules");
        rule.threshold_percent = r.at("threshold_percent").get<double>();
        s.rules.push_back(rule);
      }
      s.validate();
      if (!ids.insert(s.id).second)
        fail(ErrorCode::invalid_argument, "duplicate site id '" + s.id + "'", "sites." + s.id);
      sites.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::format_error, std::string("sites config is malformed: ") + e.what());
  }
  return sites;
}

std::vector<TippingSite> load_sites(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::not_found, "cannot open sites config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::format_error, path.string() + ": " + e.what());
  }
  return sites_from_json(j);
}

nlohmann::json assessment_to_json(const SiteAssessment& a) {
  nlohmann::json pct;
  for (std::size_t c = 0; c < kNumOutputs; ++c) pct[std::string(kOutputChannels[c].id)] = a.percent_change[c];
  return {{"site_id", a.site_id},
          {"percent_change", pct},
          {"at_risk", a.at_risk},
          {"triggered_rules", a.triggered_rules}};
}

}  // namespace climemu
