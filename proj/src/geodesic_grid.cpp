#include "climemu/geodesic_grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <numeric>
#include <string>
#include <utility>

#include "climemu/error.hpp"

namespace climemu {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Signed spherical triangle area (Van Oosterom & Strackee).
double signed_triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  const double num = a.dot(b.cross(c));
  const double den = 1.0 + a.dot(b) + b.dot(c) + c.dot(a);
  return 2.0 * std::atan2(num, den);
}

Vec3 circumcenter(const Vec3& a, const Vec3& b, const Vec3& c) {
  Vec3 n = (b - a).cross(c - a);
  n.normalize();
  if (n.dot(a + b + c) < 0.0) n = -n;
  return n;
}

struct Topology {
  std::vector<Vec3> xyz;
  std::vector<Face> faces;
};

Topology base_icosahedron() {
  Topology t;
  const double ring_lat = std::atan(0.5) / kDeg;
  t.xyz.push_back(Vec3(0.0, 0.0, 1.0));
  for (int i = 0; i < 5; ++i) t.xyz.push_back(to_unit({ring_lat, normalize_lon(72.0 * i)}));
  for (int i = 0; i < 5; ++i) t.xyz.push_back(to_unit({-ring_lat, normalize_lon(36.0 + 72.0 * i)}));
  t.xyz.push_back(Vec3(0.0, 0.0, -1.0));

  for (int i = 0; i < 5; ++i) {
    const int u0 = 1 + i, u1 = 1 + (i + 1) % 5;
    const int l0 = 6 + i, l1 = 6 + (i + 1) % 5;
    t.faces.push_back({0, u0, u1});
    t.faces.push_back({u0, l0, u1});
    t.faces.push_back({u1, l0, l1});
    t.faces.push_back({11, l1, l0});
  }
  // Outward (counter-clockwise seen from outside) orientation.
  for (auto& f : t.faces) {
    const Vec3& a = t.xyz[f[0]];
    const Vec3& b = t.xyz[f[1]];
    const Vec3& c = t.xyz[f[2]];
    if ((b - a).cross(c - a).dot(a + b + c) < 0.0) std::swap(f[1], f[2]);
  }
  return t;
}

// One midpoint subdivision. Each new vertex is assigned to whichever of its
// two edge endpoints currently owns fewer children (ties: lower index), so
// coarse cells get balanced child sets.
Topology subdivide(const Topology& in, std::vector<std::int32_t>& parent) {
  Topology out;
  out.xyz = in.xyz;
  parent.resize(in.xyz.size());
  std::iota(parent.begin(), parent.end(), 0);
  std::vector<int> child_count(in.xyz.size(), 1);

  std::map<std::pair<std::int32_t, std::int32_t>, std::int32_t> midpoint;
  auto mid = [&](std::int32_t a, std::int32_t b) {
    const auto key = std::minmax(a, b);
    auto it = midpoint.find(key);
    if (it != midpoint.end()) return it->second;
    Vec3 m = (out.xyz[a] + out.xyz[b]).normalized();
    const auto idx = static_cast<std::int32_t>(out.xyz.size());
    out.xyz.push_back(m);
    std::int32_t owner = key.first;
    if (child_count[key.second] < child_count[key.first]) owner = key.second;
    parent.push_back(owner);
    ++child_count[owner];
    midpoint.emplace(key, idx);
    return idx;
  };

  out.faces.reserve(in.faces.size() * 4);
  for (const auto& f : in.faces) {
    const auto ab = mid(f[0], f[1]);
    const auto bc = mid(f[1], f[2]);
    const auto ca = mid(f[2], f[0]);
    out.faces.push_back({f[0], ab, ca});
    out.faces.push_back({ab, f[1], bc});
    out.faces.push_back({ca, bc, f[2]});
    out.faces.push_back({ab, bc, ca});
  }
  return out;
}

std::vector<double> voronoi_weights(std::span<const Vec3> xyz, std::span<const Face> faces) {
  std::vector<double> area(xyz.size(), 0.0);
  for (const auto& f : faces) {
    const Vec3& a = xyz[f[0]];
    const Vec3& b = xyz[f[1]];
    const Vec3& c = xyz[f[2]];
    const Vec3 o = circumcenter(a, b, c);
    const Vec3 mab = (a + b).normalized();
    const Vec3 mbc = (b + c).normalized();
    const Vec3 mca = (c + a).normalized();
    // Each corner owns the quadrilateral corner -> edge midpoint -> circumcenter -> edge midpoint.
    area[f[0]] += signed_triangle_area(a, mab, o) + signed_triangle_area(a, o, mca);
    area[f[1]] += signed_triangle_area(b, mbc, o) + signed_triangle_area(b, o, mab);
    area[f[2]] += signed_triangle_area(c, mca, o) + signed_triangle_area(c, o, mbc);
  }
  const double total = std::accumulate(area.begin(), area.end(), 0.0);
  for (double& w : area) w /= total;
  return area;
}

std::vector<std::vector<std::int32_t>> build_neighbors(std::size_t n, std::span<const Face> faces) {
  std::vector<std::vector<std::int32_t>> nb(n);
  for (const auto& f : faces) {
    for (int i = 0; i < 3; ++i) {
      nb[f[i]].push_back(f[(i + 1) % 3]);
      nb[f[i]].push_back(f[(i + 2) % 3]);
    }
  }
  for (auto& list : nb) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
  return nb;
}

}  // namespace

double normalize_lon(double lon) {
  double x = std::fmod(lon + 180.0, 360.0);
  if (x < 0.0) x += 360.0;
  x -= 180.0;
  if (x >= 180.0) x -= 360.0;
  return x;
}

Vec3 to_unit(const LatLon& p) {
  const double phi = p.lat * kDeg;
  const double lam = p.lon * kDeg;
  return Vec3(std::cos(phi) * std::cos(lam), std::cos(phi) * std::sin(lam), std::sin(phi));
}

LatLon to_latlon(const Vec3& v) {
  const double lat = std::atan2(v.z(), std::hypot(v.x(), v.y())) / kDeg;
  const double lon = std::atan2(v.y(), v.x()) / kDeg;
  return {lat, normalize_lon(lon)};
}

double great_circle_rad(const Vec3& a, const Vec3& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

double haversine_km(const LatLon& a, const LatLon& b) {
  const double dphi = (b.lat - a.lat) * kDeg;
  const double dlam = (b.lon - a.lon) * kDeg;
  const double s = std::sin(dphi / 2) * std::sin(dphi / 2) +
                   std::cos(a.lat * kDeg) * std::cos(b.lat * kDeg) * std::sin(dlam / 2) *
                       std::sin(dlam / 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(s)));
}

IcosahedralGrid build_grid(int level) {
  if (level < 0 || level > kMaxGridLevel)
    fail(ErrorCode::invalid_argument,
         "grid level " + std::to_string(level) + " outside 0.." + std::to_string(kMaxGridLevel));

  Topology topo = base_icosahedron();
  std::vector<std::int32_t> parent;
  for (int l = 1; l <= level; ++l) topo = subdivide(topo, parent);

  IcosahedralGrid g;
  g.level_ = level;
  g.xyz_ = std::move(topo.xyz);
  g.faces_ = std::move(topo.faces);
  g.parent_ = level > 0 ? std::move(parent) : std::vector<std::int32_t>{};
  g.latlon_.reserve(g.xyz_.size());
  for (const auto& v : g.xyz_) g.latlon_.push_back(to_latlon(v));
  g.weights_ = voronoi_weights(g.xyz_, g.faces_);
  g.neighbors_ = build_neighbors(g.xyz_.size(), g.faces_);
  return g;
}

std::vector<double> compute_area_weights(const IcosahedralGrid& grid) {
  return voronoi_weights(grid.unit_xyz(), grid.faces());
}

const IcosahedralGrid& grid_for_level(int level) {
  if (level < 0 || level > kMaxGridLevel)
    fail(ErrorCode::invalid_argument, "grid level " + std::to_string(level) + " out of range");
  static std::once_flag flags[kMaxGridLevel + 1];
  static IcosahedralGrid grids[kMaxGridLevel + 1];
  std::call_once(flags[level], [level] { grids[level] = build_grid(level); });
  return grids[level];
}

// ---------------------------------------------------------------------------
// Resampling

namespace {

struct AxisOrder {
  std::vector<double> lon;        // normalised, ascending
  std::vector<std::size_t> index; // original column for each sorted entry
};

AxisOrder sorted_lon_axis(const std::vector<double>& lon) {
  AxisOrder ax;
  ax.index.resize(lon.size());
  std::iota(ax.index.begin(), ax.index.end(), std::size_t{0});
  std::vector<double> norm(lon.size());
  for (std::size_t i = 0; i < lon.size(); ++i) norm[i] = normalize_lon(lon[i]);
  std::sort(ax.index.begin(), ax.index.end(),
            [&](std::size_t a, std::size_t b) { return norm[a] < norm[b]; });
  for (auto i : ax.index) ax.lon.push_back(norm[i]);
  return ax;
}

double circular_gap(double a, double b) {
  double d = std::fabs(a - b);
  return std::min(d, 360.0 - d);
}

// Up to `per_side` columns on each side of `lon`, as sorted-axis positions.
std::vector<std::size_t> candidate_columns(const AxisOrder& ax, double lon, std::size_t per_side) {
  const std::size_t n = ax.lon.size();
  const auto it = std::lower_bound(ax.lon.begin(), ax.lon.end(), lon);
  const std::size_t hi = static_cast<std::size_t>(it - ax.lon.begin()) % n;
  std::vector<std::size_t> cols;
  const std::size_t take = std::min(per_side, n);
  for (std::size_t k = 0; k < take; ++k) {
    cols.push_back((hi + k) % n);
    cols.push_back((hi + n - 1 - k) % n);
  }
  std::sort(cols.begin(), cols.end());
  cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
  return cols;
}

}  // namespace

std::vector<double> resample_latlon(const LatLonField& field, const IcosahedralGrid& grid,
                                    ResampleMethod method) {
  const std::size_t nlat = field.lat.size();
  const std::size_t nlon = field.lon.size();
  if (nlat == 0 || nlon == 0 || field.values.empty())
    fail(ErrorCode::invalid_argument, "resample_latlon: empty field");
  if (field.values.size() != nlat * nlon)
    fail(ErrorCode::invalid_argument, "resample_latlon: values do not match lat/lon axes");
  auto monotone = [](const std::vector<double>& a) {
    if (a.size() < 2) return true;
    const bool up = a[1] > a[0];
    for (std::size_t i = 1; i < a.size(); ++i)
      if (up ? !(a[i] > a[i - 1]) : !(a[i] < a[i - 1])) return false;
    return true;
  };
  if (!monotone(field.lat) || !monotone(field.lon))
    fail(ErrorCode::invalid_argument, "resample_latlon: axes must be strictly monotone");
  for (double v : field.values)
    if (!std::isfinite(v)) fail(ErrorCode::invalid_argument, "resample_latlon: non-finite value");

  const AxisOrder ax = sorted_lon_axis(field.lon);
  std::vector<double> sin_lat(nlat), cos_lat(nlat);
  for (std::size_t i = 0; i < nlat; ++i) {
    sin_lat[i] = std::sin(field.lat[i] * kDeg);
    cos_lat[i] = std::cos(field.lat[i] * kDeg);
  }

  std::vector<double> out(grid.size());
  const auto verts = grid.vertices();
  const std::size_t per_side = method == ResampleMethod::nearest ? 1 : 4;

  struct Cand {
    double dist;
    std::size_t cell;
  };
  std::vector<Cand> cands;
  for (std::size_t v = 0; v < grid.size(); ++v) {
    const LatLon p = verts[v];
    const double sp = std::sin(p.lat * kDeg), cp = std::cos(p.lat * kDeg);
    const auto cols = candidate_columns(ax, p.lon, per_side);
    cands.clear();
    for (std::size_t c : cols) {
      const double cos_dl = std::cos(circular_gap(ax.lon[c], p.lon) * kDeg);
      const std::size_t col = ax.index[c];
      for (std::size_t r = 0; r < nlat; ++r) {
        const double cosd = std::clamp(sp * sin_lat[r] + cp * cos_lat[r] * cos_dl, -1.0, 1.0);
        cands.push_back({std::acos(cosd), r * nlon + col});
      }
    }
    auto closer = [](const Cand& a, const Cand& b) {
      return a.dist < b.dist || (a.dist == b.dist && a.cell < b.cell);
    };
    if (method == ResampleMethod::nearest) {
      out[v] = field.values[std::min_element(cands.begin(), cands.end(), closer)->cell];
      continue;
    }
    const std::size_t k = std::min<std::size_t>(4, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(k), cands.end(),
                      closer);
    if (cands[0].dist < 1e-9) {
      out[v] = field.values[cands[0].cell];
      continue;
    }
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double w = 1.0 / cands[i].dist;
      num += w * field.values[cands[i].cell];
      den += w;
    }
    out[v] = num / den;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Coarsening

std::vector<double> coarsen(std::span<const double> field, const IcosahedralGrid& fine,
                            const IcosahedralGrid& coarse) {
  if (fine.level() < 1 || coarse.level() != fine.level() - 1)
    fail(ErrorCode::invalid_argument,
         "coarsen: expected levels L and L-1, got " + std::to_string(fine.level()) + " and " +
             std::to_string(coarse.level()));
  if (field.size() != fine.size())
    fail(ErrorCode::invalid_argument, "coarsen: field length " + std::to_string(field.size()) +
                                          " does not match level " +
                                          std::to_string(fine.level()) + " grid");
  std::vector<double> num(coarse.size(), 0.0), den(coarse.size(), 0.0);
  const auto parent = fine.parent_map();
  const auto w = fine.area_weights();
  for (std::size_t v = 0; v < fine.size(); ++v) {
    num[parent[v]] += w[v] * field[v];
    den[parent[v]] += w[v];
  }
  for (std::size_t c = 0; c < coarse.size(); ++c) num[c] /= den[c];
  return num;
}

std::vector<double> coarsen_to(std::span<const double> field, int target_level) {
  int level = -1;
  for (int l = 0; l <= kMaxGridLevel; ++l)
    if (vertex_count(l) == field.size()) level = l;
  if (level < 0) fail(ErrorCode::invalid_argument, "coarsen_to: field length is not a grid size");
  if (target_level < 0 || target_level > level)
    fail(ErrorCode::invalid_argument, "coarsen_to: cannot go from level " +
                                          std::to_string(level) + " to " +
                                          std::to_string(target_level));
  std::vector<double> cur(field.begin(), field.end());
  for (int l = level; l > target_level; --l)
    cur = coarsen(cur, grid_for_level(l), grid_for_level(l - 1));
  return cur;
}

// ---------------------------------------------------------------------------
// Cache file

namespace {
constexpr char kGridMagic[4] = {'I', 'C', 'O', 'G'};
constexpr std::uint32_t kGridVersion = 1;

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    fail(ErrorCode::corrupt_file, "grid cache truncated");
  return v;
}
}  // namespace

void save_grid_cache(const IcosahedralGrid& grid, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::io_error, "cannot write " + path.string());
  os.write(kGridMagic, 4);
  put(os, kGridVersion);
  put(os, static_cast<std::uint32_t>(grid.level()));
  put(os, static_cast<std::uint32_t>(grid.size()));
  for (const auto& p : grid.vertices()) {
    put(os, p.lat);
    put(os, p.lon);
  }
  for (double w : grid.area_weights()) put(os, w);
}

IcosahedralGrid load_grid_cache(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::io_error, "cannot read " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kGridMagic, 4) != 0)
    fail(ErrorCode::format_error, "grid cache: bad magic");
  if (get<std::uint32_t>(is) != kGridVersion)
    fail(ErrorCode::format_error, "grid cache: unsupported version");
  const auto level = static_cast<int>(get<std::uint32_t>(is));
  const auto count = get<std::uint32_t>(is);
  if (level > kMaxGridLevel || count != vertex_count(level))
    fail(ErrorCode::format_error, "grid cache: inconsistent level/count");

  IcosahedralGrid g = build_grid(level);
  for (std::size_t v = 0; v < count; ++v) {
    const double lat = get<double>(is);
    const double lon = get<double>(is);
    if (std::fabs(lat - g.latlon_[v].lat) > 1e-9 || std::fabs(lon - g.latlon_[v].lon) > 1e-9)
      fail(ErrorCode::format_error, "grid cache: vertex " + std::to_string(v) +
                                        " disagrees with the canonical icosphere");
  }
  for (std::size_t v = 0; v < count; ++v) g.weights_[v] = get<double>(is);
  return g;
}

}  // namespace climemu
