#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace climemu {

inline constexpr int kMaxGridLevel = 5;
inline constexpr double kEarthRadiusKm = 6371.0;

struct LatLon {
  double lat;  // degrees, [-90, 90]
  double lon;  // degrees, [-180, 180)
};

using Vec3 = Eigen::Vector3d;
using Face = std::array<std::int32_t, 3>;

constexpr std::size_t vertex_count(int level) {
  return 10 * (std::size_t{1} << (2 * level)) + 2;
}

/// Hierarchical icosphere. Level 0 is an icosahedron with vertex 0 on the
/// north pole and vertex 11 on the south pole; every level appends the edge
/// midpoints of the previous one, so the first vertex_count(L-1) vertices of
/// level L are the level L-1 vertices, bit for bit.
class IcosahedralGrid {
 public:
  int level() const { return level_; }
  std::size_t size() const { return xyz_.size(); }

  std::span<const LatLon> vertices() const { return latlon_; }
  std::span<const Vec3> unit_xyz() const { return xyz_; }
  std::span<const double> area_weights() const { return weights_; }
  /// Index into the level-1 grid. Inherited vertices map to themselves.
  /// Empty at level 0.
  std::span<const std::int32_t> parent_map() const { return parent_; }
  std::span<const Face> faces() const { return faces_; }
  const std::vector<std::vector<std::int32_t>>& neighbors() const { return neighbors_; }

 private:
  friend IcosahedralGrid build_grid(int level);
  friend IcosahedralGrid load_grid_cache(const std::filesystem::path& path);

  int level_ = 0;
  std::vector<Vec3> xyz_;
  std::vector<LatLon> latlon_;
  std::vector<double> weights_;
  std::vector<std::int32_t> parent_;
  std::vector<Face> faces_;
  std::vector<std::vector<std::int32_t>> neighbors_;
};

IcosahedralGrid build_grid(int level);

/// Spherical-Voronoi cell areas normalised to sum to one.
std::vector<double> compute_area_weights(const IcosahedralGrid& grid);

enum class ResampleMethod { nearest, inverse_distance };

/// A regular lat-lon field, row-major [lat][lon].
struct LatLonField {
  std::vector<double> lat;  // degrees, strictly monotone
  std::vector<double> lon;  // degrees, strictly monotone; [0,360) is accepted
  std::vector<double> values;
};

std::vector<double> resample_latlon(const LatLonField& field, const IcosahedralGrid& grid,
                                    ResampleMethod method);

/// Area-weighted mean of fine vertices onto their parents.
std::vector<double> coarsen(std::span<const double> field, const IcosahedralGrid& fine,
                            const IcosahedralGrid& coarse);

/// Coarsens repeatedly from `field`'s level to `target_level`.
std::vector<double> coarsen_to(std::span<const double> field, int target_level);

// Geometry helpers shared by several modules.
Vec3 to_unit(const LatLon& p);
LatLon to_latlon(const Vec3& v);
double normalize_lon(double lon);
double great_circle_rad(const Vec3& a, const Vec3& b);
double haversine_km(const LatLon& a, const LatLon& b);

/// Grid cache: "ICOG", version, level, count, then lat/lon pairs and weights.
void save_grid_cache(const IcosahedralGrid& grid, const std::filesystem::path& path);
IcosahedralGrid load_grid_cache(const std::filesystem::path& path);

/// Shared immutable grids, built once per level.
const IcosahedralGrid& grid_for_level(int level);

}  // namespace climemu
