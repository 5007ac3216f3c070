#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "climemu/geodesic_grid.hpp"

namespace climemu {

struct LatLonBox {
  double lat_min = -90.0;
  double lat_max = 90.0;
  double lon_min = -180.0;
  double lon_max = 180.0;
};

enum class RegionKind { named, latlon_box, polygon };

struct RegionSpec {
  RegionKind kind = RegionKind::latlon_box;
  std::optional<std::string> name;
  std::optional<LatLonBox> box;
  std::optional<std::vector<LatLon>> polygon;

  static RegionSpec named_region(std::string n);
  static RegionSpec from_box(LatLonBox b);
  static RegionSpec from_polygon(std::vector<LatLon> pts);

  /// Throws invalid_argument if the fields do not match `kind`.
  void validate() const;
  bool operator==(const RegionSpec&) const;
};

/// Named boxes resolvable by region_mask. Defaults are the NEP/SEP/SEA
/// stratocumulus decks; a JSON file can override or extend them.
class RegionCatalog {
 public:
  RegionCatalog();
  static RegionCatalog from_file(const std::filesystem::path& path);

  const LatLonBox& resolve(const std::string& name) const;
  void set(const std::string& name, LatLonBox box) { boxes_[name] = box; }
  const std::map<std::string, LatLonBox>& entries() const { return boxes_; }

 private:
  std::map<std::string, LatLonBox> boxes_;
};

const RegionCatalog& default_regions();

/// Latitude bounds are closed; longitude is half-open [lon_min, lon_max)
/// measured eastward with wraparound, so a box and its longitude complement
/// partition the sphere.
bool box_contains(const LatLonBox& box, const LatLon& p);

/// Spherical winding number of `p` around the closed polygon.
int winding_number(const std::vector<LatLon>& polygon, const Vec3& p);

std::vector<bool> region_mask(const IcosahedralGrid& grid, const RegionSpec& region,
                              const RegionCatalog& catalog = default_regions());

std::string to_string(RegionKind kind);

/// {"kind": "named", "name": ...} | {"kind": "latlon_box", "box": {lat_min, ...}}
/// | {"kind": "polygon", "polygon": [{"lat", "lon"}, ...]}. Errors carry a
/// field path rooted at `path`.
nlohmann::json region_to_json(const RegionSpec& r);
RegionSpec region_from_json(const nlohmann::json& j, const std::string& path = "region");
RegionKind region_kind_from_string(const std::string& s);

}  // namespace climemu
