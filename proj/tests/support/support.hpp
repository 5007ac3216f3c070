#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "climemu/dataset.hpp"
#include "climemu/emulator.hpp"
#include "climemu/error.hpp"

namespace climemu::testing {

/// Unique scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "climemu");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Independent RFC 4180 reader: rows of unescaped cells. Accepts CRLF or LF.
std::vector<std::vector<std::string>> parse_csv(const std::string& text);

/// Affine model without hidden layers mapping 6 x nv inputs to 3 x nv
/// outputs: y = A x + b, identity standardisation.
MlpModel linear_model(int level, const Eigen::MatrixXf& a, int lag = 1);
MlpModel linear_model(int level, const Eigen::MatrixXf& a, const Eigen::VectorXf& b, int lag = 1);

/// Monte-Carlo Voronoi areas: m x m jittered samples stratified uniformly in
/// (z, longitude), each assigned to its nearest vertex by a greedy walk on
/// the neighbour graph. Returns the sample fraction per vertex.
std::vector<double> mc_voronoi_areas(const IcosahedralGrid& grid, int m, std::uint64_t seed);

/// Nearest vertex by exhaustive search.
std::size_t brute_nearest(const IcosahedralGrid& grid, const Vec3& p);

/// Raw synthetic data passed through the anomaly pipeline.
AnomalyDataset anomaly_dataset(const SyntheticSpec& spec);

/// Subset of JSON Schema: type, required, properties, additionalProperties,
/// items, enum, minItems, maxItems, minimum, maximum and local $ref.
/// Returns an empty string when `instance` conforms, else the first problem.
std::string schema_violation(const nlohmann::json& instance, const nlohmann::json& schema,
                             const nlohmann::json& root, const std::string& where = "$");

/// The published API schema and the validator applied to one of its $defs.
const nlohmann::json& api_schema();
std::string api_violation(const nlohmann::json& instance, const std::string& def);

/// Code of the climemu::Error thrown by `f`, or nullopt if it returns.
template <class F>
std::optional<ErrorCode> error_code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace climemu::testing
