#include <doctest.h>

#include <fstream>

#include "climemu/error.hpp"
#include "climemu/region.hpp"
#include "support.hpp"

using namespace climemu;

namespace {

double masked_area(const IcosahedralGrid& g, const std::vector<bool>& m) {
  double a = 0.0;
  for (std::size_t v = 0; v < g.size(); ++v)
    if (m[v]) a += g.area_weights()[v];
  return a;
}

}  // namespace

TEST_SUITE("region") {

TEST_CASE("whole-globe box selects every vertex") {
  const auto& g = grid_for_level(3);
  const auto m = region_mask(g, RegionSpec::from_box({-90, 90, -180, 180}));
  CHECK(std::count(m.begin(), m.end(), true) == static_cast<long>(g.size()));
}

TEST_CASE("named SEP equals the per-vertex box predicate") {
  const auto& g = grid_for_level(4);
  const auto m = region_mask(g, RegionSpec::named_region("SEP"));
  std::size_t n = 0;
  for (std::size_t v = 0; v < g.size(); ++v) {
    const auto p = g.vertices()[v];
    const bool inside = p.lat >= -30.0 && p.lat <= 0.0 && p.lon >= -110.0 && p.lon < -70.0;
    CHECK(m[v] == inside);
    n += inside;
  }
  CHECK(n > 0);
}

TEST_CASE("unknown named region is not_found") {
  try {
    region_mask(grid_for_level(1), RegionSpec::named_region("ATLANTIS"));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::not_found);
  }
}

TEST_CASE("a box and its longitude complement partition the sphere") {
  const auto& g = grid_for_level(4);
  for (auto [lo, hi] : {std::pair{-110.0, -70.0}, std::pair{150.0, 200.0}, std::pair{-15.0, 15.0}}) {
    const auto a = region_mask(g, RegionSpec::from_box({-90, 90, lo, hi}));
    const auto b = region_mask(g, RegionSpec::from_box({-90, 90, hi, lo + 360.0}));
    for (std::size_t v = 0; v < g.size(); ++v) CHECK(a[v] != b[v]);
  }
}

TEST_CASE("box wrapping the antimeridian") {
  const auto& g = grid_for_level(3);
  const auto m = region_mask(g, RegionSpec::from_box({-10, 10, 170, 190}));
  for (std::size_t v = 0; v < g.size(); ++v) {
    const auto p = g.vertices()[v];
    const bool inside = p.lat >= -10 && p.lat <= 10 && (p.lon >= 170 || p.lon < -170);
    CHECK(m[v] == inside);
  }
}

TEST_CASE("northern-hemisphere polygon covers half the area at level 5") {
  std::vector<LatLon> eq;
  for (int i = 0; i < 36; ++i) eq.push_back({0.0, -180.0 + 10.0 * i});
  const auto& g = grid_for_level(5);
  const auto m = region_mask(g, RegionSpec::from_polygon(eq));
  CHECK(std::fabs(masked_area(g, m) - 0.5) <= 0.02);
  CHECK(m[0]);  // north pole
}

TEST_CASE("small polygons are orientation independent") {
  std::vector<LatLon> tri{{-30, -110}, {-30, -70}, {0, -90}};
  std::vector<LatLon> rev(tri.rbegin(), tri.rend());
  const auto& g = grid_for_level(4);
  const auto a = region_mask(g, RegionSpec::from_polygon(tri));
  const auto b = region_mask(g, RegionSpec::from_polygon(rev));
  CHECK(a == b);
  CHECK(masked_area(g, a) < 0.05);
  CHECK(masked_area(g, a) > 0.0);
}

TEST_CASE("winding number counts a point inside a square once") {
  std::vector<LatLon> sq{{-10, -10}, {-10, 10}, {10, 10}, {10, -10}};
  CHECK(std::abs(winding_number(sq, to_unit({0, 0}))) == 1);
  CHECK(winding_number(sq, to_unit({40, 40})) == 0);
}

TEST_CASE("RegionSpec validation") {
  CHECK_THROWS_AS(RegionSpec::from_box({10, 5, 0, 1}).validate(), Error);
  CHECK_THROWS_AS(RegionSpec::from_polygon({{0, 0}, {1, 1}}).validate(), Error);
  RegionSpec mixed = RegionSpec::named_region("SEP");
  mixed.box = LatLonBox{};
  CHECK_THROWS_AS(mixed.validate(), Error);
  CHECK_THROWS_AS(RegionSpec::from_polygon({{0, 0}, {95, 1}, {1, 2}}).validate(), Error);
}

TEST_CASE("json round trip and field paths") {
  for (const auto& r : {RegionSpec::named_region("NEP"), RegionSpec::from_box({-30, 0, -15, 15}),
                        RegionSpec::from_polygon({{0, 0}, {0, 10}, {10, 5}})}) {
    CHECK(region_from_json(region_to_json(r)) == r);
  }
  try {
    region_from_json({{"kind", "latlon_box"}, {"box", {{"lat_min", 0}, {"lat_max", 1}, {"lon_min", 0}}}});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.field_path() == "region.box.lon_max");
  }
  try {
    region_from_json({{"kind", "blob"}}, "scenario.region");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.field_path() == "scenario.region.kind");
  }
}

TEST_CASE("catalog file overrides and extends defaults") {
  testing::TempDir tmp;
  std::ofstream(tmp / "r.json") << R"({"regions": {"SEP": {"lat_min": -20, "lat_max": -10, "lon_min": -100, "lon_max": -90},
                                      "BOX": {"lat_min": 0, "lat_max": 1, "lon_min": 0, "lon_max": 1}}})";
  const auto cat = RegionCatalog::from_file(tmp / "r.json");
  CHECK(cat.resolve("SEP").lat_min == -20);
  CHECK(cat.resolve("NEP").lat_min == 15);
  CHECK(cat.resolve("BOX").lon_max == 1);
  std::ofstream(tmp / "bad.json") << R"({"regions": {"X": {"lat_min": 0}}})";
  CHECK_THROWS_AS(RegionCatalog::from_file(tmp / "bad.json"), Error);
}

}  // TEST_SUITE
