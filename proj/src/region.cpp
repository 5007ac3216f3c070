#include "climemu/region.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "climemu/error.hpp"

namespace climemu {

RegionSpec RegionSpec::named_region(std::string n) {
  RegionSpec r;
  r.kind = RegionKind::named;
  r.name = std::move(n);
  return r;
}

RegionSpec RegionSpec::from_box(LatLonBox b) {
  RegionSpec r;
  r.kind = RegionKind::latlon_box;
  r.box = b;
  return r;
}

RegionSpec RegionSpec::from_polygon(std::vector<LatLon> pts) {
  RegionSpec r;
  r.kind = RegionKind::polygon;
  r.polygon = std::move(pts);
  return r;
}

void RegionSpec::validate() const {
  switch (kind) {
    case RegionKind::named:
      if (!name || name->empty() || box || polygon)
        fail(ErrorCode::invalid_argument, "named region needs exactly a name", "region.name");
      break;
    case RegionKind::latlon_box:
      if (!box || name || polygon)
        fail(ErrorCode::invalid_argument, "latlon_box region needs exactly a box", "region.box");
      if (!(box->lat_min < box->lat_max))
        fail(ErrorCode::invalid_argument, "box needs lat_min < lat_max", "region.box");
      if (box->lat_min < -90.0 || box->lat_max > 90.0)
        fail(ErrorCode::invalid_argument, "box latitude outside [-90, 90]", "region.box");
      if (!std::isfinite(box->lon_min) || !std::isfinite(box->lon_max))
        fail(ErrorCode::invalid_argument, "box longitude must be finite", "region.box");
      break;
    case RegionKind::polygon:
      if (!polygon || name || box)
        fail(ErrorCode::invalid_argument, "polygon region needs exactly a polygon",
             "region.polygon");
      if (polygon->size() < 3)
        fail(ErrorCode::invalid_argument, "polygon needs at least 3 vertices", "region.polygon");
      for (const auto& p : *polygon)
        if (!(p.lat >= -90.0 && p.lat <= 90.0) || !std::isfinite(p.lon))
          fail(ErrorCode::invalid_argument, "polygon vertex outside the sphere", "region.polygon");
      break;
  }
}

bool RegionSpec::operator==(const RegionSpec& o) const {
  auto box_eq = [](const std::optional<LatLonBox>& a, const std::optional<LatLonBox>& b) {
    if (a.has_value() != b.has_value()) return false;
    if (!a) return true;
    return a->lat_min == b->lat_min && a->lat_max == b->lat_max && a->lon_min == b->lon_min &&
           a->lon_max == b->lon_max;
  };
  auto poly_eq = [](const std::optional<std::vector<LatLon>>& a,
                    const std::optional<std::vector<LatLon>>& b) {
    if (a.has_value() != b.has_value()) return false;
    if (!a) return true;
    if (a->size() != b->size()) return false;
    for (std::size_t i = 0; i < a->size(); ++i)
      if ((*a)[i].lat != (*b)[i].lat || (*a)[i].lon != (*b)[i].lon) return false;
    return true;
  };
  return kind == o.kind && name == o.name && box_eq(box, o.box) && poly_eq(polygon, o.polygon);
}

std::string to_string(RegionKind kind) {
  switch (kind) {
    case RegionKind::named: return "named";
    case RegionKind::latlon_box: return "latlon_box";
    case RegionKind::polygon: return "polygon";
  }
  return "?";
}

RegionKind region_kind_from_string(const std::string& s) {
  if (s == "named") return RegionKind::named;
  if (s == "latlon_box") return RegionKind::latlon_box;
  if (s == "polygon") return RegionKind::polygon;
  fail(ErrorCode::invalid_argument, "unknown region kind '" + s + "'", "region.kind");
}

RegionCatalog::RegionCatalog() {
  boxes_["NEP"] = {15.0, 35.0, -140.0, -110.0};
  boxes_["SEP"] = {-30.0, 0.0, -110.0, -70.0};
  boxes_["SEA"] = {-30.0, 0.0, -15.0, 15.0};
}

RegionCatalog RegionCatalog::from_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::io_error, "cannot read " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::format_error, path.string() + ": " + e.what());
  }
  RegionCatalog cat;
  try {
    for (const auto& [name, b] : j.at("regions").items()) {
      const LatLonBox box{b.at("lat_min").get<double>(), b.at("lat_max").get<double>(),
                          b.at("lon_min").get<double>(), b.at("lon_max").get<double>()};
      RegionSpec::from_box(box).validate();
      cat.set(name, box);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::format_error, path.string() + ": " + e.what());
  }
  return cat;
}

const LatLonBox& RegionCatalog::resolve(const std::string& name) const {
  auto it = boxes_.find(name);
  if (it == boxes_.end()) fail(ErrorCode::not_found, "unknown region '" + name + "'", "region.name");
  return it->second;
}

const RegionCatalog& default_regions() {
  static const RegionCatalog cat;
  return cat;
}

bool box_contains(const LatLonBox& box, const LatLon& p) {
  if (p.lat < box.lat_min || p.lat > box.lat_max) return false;
  const double width = box.lon_max - box.lon_min;
  if (width >= 360.0) return true;
  double span = std::fmod(width, 360.0);
  if (span < 0.0) span += 360.0;
  double offset = std::fmod(p.lon - box.lon_min, 360.0);
  if (offset < 0.0) offset += 360.0;
  return offset < span;
}

int winding_number(const std::vector<LatLon>& polygon, const Vec3& p) {
  double total = 0.0;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 a = to_unit(polygon[i]);
    const Vec3 b = to_unit(polygon[(i + 1) % n]);
    // Angle between the great-circle directions p->a and p->b, in p's tangent plane.
    const double y = p.dot(a.cross(b));
    const double x = a.dot(b) - a.dot(p) * b.dot(p);
    total += std::atan2(y, x);
  }
  return static_cast<int>(std::lround(total / (2.0 * std::numbers::pi)));
}

namespace {

// Orients the polygon so its vertex centroid has winding +1; polygons whose
// centroid vanishes (e.g. a great circle) keep the caller's orientation.
std::vector<LatLon> oriented(const std::vector<LatLon>& poly) {
  Vec3 c = Vec3::Zero();
  for (const auto& p : poly) c += to_unit(p);
  if (c.norm() < 1e-6 * static_cast<double>(poly.size())) return poly;
  c.normalize();
  if (winding_number(poly, c) < 0) return {poly.rbegin(), poly.rend()};
  return poly;
}

}  // namespace

std::vector<bool> region_mask(const IcosahedralGrid& grid, const RegionSpec& region,
                              const RegionCatalog& catalog) {
  region.validate();
  std::vector<bool> mask(grid.size(), false);
  const auto verts = grid.vertices();
  switch (region.kind) {
    case RegionKind::named: {
      const LatLonBox& box = catalog.resolve(*region.name);
      for (std::size_t v = 0; v < grid.size(); ++v) mask[v] = box_contains(box, verts[v]);
      break;
    }
    case RegionKind::latlon_box:
      for (std::size_t v = 0; v < grid.size(); ++v) mask[v] = box_contains(*region.box, verts[v]);
      break;
    case RegionKind::polygon: {
      const auto poly = oriented(*region.polygon);
      const auto xyz = grid.unit_xyz();
      for (std::size_t v = 0; v < grid.size(); ++v) mask[v] = winding_number(poly, xyz[v]) == 1;
      break;
    }
  }
  return mask;
}

nlohmann::json region_to_json(const RegionSpec& r) {
  nlohmann::json j;
  j["kind"] = to_string(r.kind);
  if (r.name) j["name"] = *r.name;
  if (r.box)
    j["box"] = {{"lat_min", r.box->lat_min},
                {"lat_max", r.box->lat_max},
                {"lon_min", r.box->lon_min},
                {"lon_max", r.box->lon_max}};
  if (r.polygon) {
    j["polygon"] = nlohmann::json::array();
    for (const auto& p : *r.polygon) j["polygon"].push_back({{"lat", p.lat}, {"lon", p.lon}});
  }
  return j;
}

RegionSpec region_from_json(const nlohmann::json& j, const std::string& path) {
  auto number = [](const nlohmann::json& obj, const char* key, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key) || !obj[key].is_number())
      fail(ErrorCode::invalid_argument, "expected a number", where + "." + key);
    return obj[key].get<double>();
  };
  if (!j.is_object()) fail(ErrorCode::invalid_argument, "region must be an object", path);
  if (!j.contains("kind") || !j["kind"].is_string())
    fail(ErrorCode::invalid_argument, "region.kind must be a string", path + ".kind");
  RegionSpec r;
  try {
    r.kind = region_kind_from_string(j["kind"].get<std::string>());
  } catch (const Error& e) {
    fail(ErrorCode::invalid_argument, e.what(), path + ".kind");
  }
  if (j.contains("name")) {
    if (!j["name"].is_string()) fail(ErrorCode::invalid_argument, "name must be a string", path + ".name");
    r.name = j["name"].get<std::string>();
  }
  if (j.contains("box")) {
    const auto& b = j["box"];
    r.box = LatLonBox{number(b, "lat_min", path + ".box"), number(b, "lat_max", path + ".box"),
                      number(b, "lon_min", path + ".box"), number(b, "lon_max", path + ".box")};
  }
  if (j.contains("polygon")) {
    const auto& p = j["polygon"];
    if (!p.is_array()) fail(ErrorCode::invalid_argument, "polygon must be an array", path + ".polygon");
    std::vector<LatLon> pts;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const std::string where = path + ".polygon[" + std::to_string(i) + "]";
      pts.push_back({number(p[i], "lat", where), number(p[i], "lon", where)});
    }
    r.polygon = std::move(pts);
  }
  try {
    r.validate();
  } catch (const Error& e) {
    std::string fp = e.field_path();
    if (fp.rfind("region", 0) == 0) fp = path + fp.substr(6);
    fail(e.code(), e.what(), fp);
  }
  return r;
}

}  // namespace climemu
