#include "support.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <random>
#include <unistd.h>

#include "climemu/anomaly_pipeline.hpp"

namespace climemu::testing {

namespace fs = std::filesystem;
using json = nlohmann::json;

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  std::random_device rd;
  path_ = fs::temp_directory_path() /
          (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++) + "-" + std::to_string(rd()));
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string cell;
  bool quoted = false, cell_started = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell += c;
      }
      continue;
    }
    if (c == '"' && !cell_started) {
      quoted = true;
      cell_started = true;
    } else if (c == ',') {
      row.push_back(cell);
      cell.clear();
      cell_started = false;
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      row.push_back(cell);
      rows.push_back(row);
      row.clear();
      cell.clear();
      cell_started = false;
    } else {
      cell += c;
      cell_started = true;
    }
  }
  if (cell_started || !row.empty()) {
    row.push_back(cell);
    rows.push_back(row);
  }
  return rows;
}

MlpModel linear_model(int level, const Eigen::MatrixXf& a, const Eigen::VectorXf& b, int lag) {
  const int nv = static_cast<int>(vertex_count(level));
  MlpModel m;
  m.lag_months = lag;
  m.grid_level = level;
  m.layer_sizes = {6 * nv, 3 * nv};
  m.activation = Activation::identity;
  m.layer_norm = false;
  m.weights.push_back(a);
  m.biases.push_back(b);
  m.in_mean.assign(kNumInputs, 0.0);
  m.in_std.assign(kNumInputs, 1.0);
  m.out_mean.assign(kNumOutputs, 0.0);
  m.out_std.assign(kNumOutputs, 1.0);
  m.validate();
  return m;
}

MlpModel linear_model(int level, const Eigen::MatrixXf& a, int lag) {
  return linear_model(level, a, Eigen::VectorXf::Zero(a.rows()), lag);
}

std::size_t brute_nearest(const IcosahedralGrid& grid, const Vec3& p) {
  const auto xyz = grid.unit_xyz();
  std::size_t best = 0;
  for (std::size_t v = 1; v < xyz.size(); ++v)
    if (xyz[v].dot(p) > xyz[best].dot(p)) best = v;
  return best;
}

std::vector<double> mc_voronoi_areas(const IcosahedralGrid& grid, int m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const auto xyz = grid.unit_xyz();
  const auto& nb = grid.neighbors();
  std::vector<double> counts(grid.size(), 0.0);
  std::size_t cur = 0;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      const double z = -1.0 + 2.0 * (i + u01(rng)) / m;
      const double phi = 2.0 * M_PI * (j + u01(rng)) / m;
      const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      const Vec3 p(r * std::cos(phi), r * std::sin(phi), z);
      for (bool moved = true; moved;) {
        moved = false;
        double best = xyz[cur].dot(p);
        for (std::int32_t n : nb[cur]) {
          const double d = xyz[static_cast<std::size_t>(n)].dot(p);
          if (d > best) {
            best = d;
            cur = static_cast<std::size_t>(n);
            moved = true;
          }
        }
      }
      counts[cur] += 1.0;
    }
  }
  const double total = static_cast<double>(m) * m;
  for (auto& c : counts) c /= total;
  return counts;
}

AnomalyDataset anomaly_dataset(const SyntheticSpec& spec) {
  return compute_anomalies(generate_synthetic(spec));
}

namespace {

bool type_matches(const json& v, const std::string& t) {
  if (t == "object") return v.is_object();
  if (t == "array") return v.is_array();
  if (t == "string") return v.is_string();
  if (t == "boolean") return v.is_boolean();
  if (t == "null") return v.is_null();
  if (t == "integer") return v.is_number_integer() || (v.is_number_float() && v.get<double>() == std::floor(v.get<double>()));
  if (t == "number") return v.is_number();
  return false;
}

const json& resolve_ref(const std::string& ref, const json& root) {
  // Only "#/a/b" pointers into the same document.
  return root.at(json::json_pointer(ref.substr(1)));
}

}  // namespace

std::string schema_violation(const json& inst, const json& schema, const json& root, const std::string& where) {
  if (schema.contains("$ref")) return schema_violation(inst, resolve_ref(schema["$ref"], root), root, where);
  if (schema.contains("type")) {
    bool ok = false;
    if (schema["type"].is_array()) {
      for (const auto& t : schema["type"]) ok = ok || type_matches(inst, t);
    } else {
      ok = type_matches(inst, schema["type"]);
    }
    if (!ok) return where + ": expected type " + schema["type"].dump();
  }
  if (schema.contains("enum")) {
    bool found = false;
    for (const auto& e : schema["enum"]) found = found || e == inst;
    if (!found) return where + ": " + inst.dump() + " not in " + schema["enum"].dump();
  }
  if (inst.is_number()) {
    const double v = inst.get<double>();
    if (schema.contains("minimum") && v < schema["minimum"].get<double>()) return where + ": below minimum";
    if (schema.contains("maximum") && v > schema["maximum"].get<double>()) return where + ": above maximum";
  }
  if (inst.is_object()) {
    if (schema.contains("required"))
      for (const auto& r : schema["required"])
        if (!inst.contains(r.get<std::string>())) return where + ": missing " + r.get<std::string>();
    for (const auto& [k, v] : inst.items()) {
      const std::string at = where + "." + k;
      if (schema.contains("properties") && schema["properties"].contains(k)) {
        auto e = schema_violation(v, schema["properties"][k], root, at);
        if (!e.empty()) return e;
      } else if (schema.contains("additionalProperties")) {
        const auto& ap = schema["additionalProperties"];
        if (ap.is_boolean()) {
          if (!ap.get<bool>()) return at + ": unexpected property";
        } else {
          auto e = schema_violation(v, ap, root, at);
          if (!e.empty()) return e;
        }
      }
    }
  }
  if (inst.is_array()) {
    if (schema.contains("minItems") && inst.size() < schema["minItems"].get<std::size_t>()) return where + ": too few items";
    if (schema.contains("maxItems") && inst.size() > schema["maxItems"].get<std::size_t>()) return where + ": too many items";
    if (schema.contains("items"))
      for (std::size_t i = 0; i < inst.size(); ++i) {
        auto e = schema_violation(inst[i], schema["items"], root, where + "[" + std::to_string(i) + "]");
        if (!e.empty()) return e;
      }
  }
  return {};
}

const json& api_schema() {
  static const json schema = [] {
    std::ifstream is(fs::path(CLIMEMU_SOURCE_DIR) / "schema" / "api.schema.json");
    return json::parse(is);
  }();
  return schema;
}

std::string api_violation(const json& instance, const std::string& def) {
  const auto& root = api_schema();
  return schema_violation(instance, root.at("$defs").at(def), root);
}

}  // namespace climemu::testing
