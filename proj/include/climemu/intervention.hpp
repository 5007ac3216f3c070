#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "climemu/dataset.hpp"
#include "climemu/emulator.hpp"
#include "climemu/region.hpp"

namespace climemu {

enum class PerturbMode { add, scale };
enum class Aggregation { sum, mean };
enum class BaselineKind { reference_time, climatological_zero };

struct Perturbation {
  PerturbMode mode = PerturbMode::add;
  double value = 0.0;  // W m-2 for add, unitless factor for scale
  bool operator==(const Perturbation&) const = default;
};

struct InterventionScenario {
  RegionSpec region;
  int duration_years = 1;
  std::map<std::string, Perturbation> perturbations;  // keyed by input channel id
  int reference_time = 0;
  /// Empty means every suite lag <= 12 * duration_years.
  std::vector<int> lag_set;
  Aggregation aggregation = Aggregation::sum;
  BaselineKind baseline = BaselineKind::reference_time;
  /// Cosine taper width outside the mask; 0 disables tapering.
  double taper_km = 0.0;

  /// Checks everything that does not need a suite or dataset.
  void validate() const;
  bool operator==(const InterventionScenario&) const;
};

nlohmann::json scenario_to_json(const InterventionScenario& s);
/// Throws invalid_argument with a field path such as
/// "perturbations.sw_cre_toa.value".
InterventionScenario scenario_from_json(const nlohmann::json& j);

std::string to_string(PerturbMode m);
std::string to_string(Aggregation a);
std::string to_string(BaselineKind b);

/// Lags to aggregate: the scenario's explicit set or the duration default.
/// Throws not_found for a lag missing from the suite.
std::vector<int> resolve_lag_set(const InterventionScenario& s, const LagSuite& suite);

/// Per-vertex forcing weight in [0, 1]: 1 inside the mask, a cosine taper of
/// great-circle distance to the nearest masked vertex within `taper_km`, 0
/// elsewhere.
std::vector<double> forcing_weights(const IcosahedralGrid& grid, const std::vector<bool>& mask,
                                    double taper_km);

/// `x` is 6 x n_vertices. Unperturbed channels and vertices are copied.
std::vector<double> apply_perturbation(std::span<const double> x, const InterventionScenario& s,
                                       const std::vector<bool>& mask);
std::vector<double> apply_perturbation(std::span<const double> x, const InterventionScenario& s,
                                       std::span<const double> weights);

struct LagComponent {
  int lag = 0;
  std::vector<double> before;
  std::vector<double> after;
};

struct ResponseBundle {
  int grid_level = 0;
  std::vector<int> lags;
  std::vector<double> baseline_input;   // 6 x n_vertices
  std::vector<double> perturbed_input;  // 6 x n_vertices
  std::vector<double> before;           // 3 x n_vertices
  std::vector<double> after;
  std::vector<double> diff;
  std::vector<LagComponent> components;
};

/// Baseline input for the scenario: dataset inputs at reference_time, or zeros.
std::vector<double> baseline_input(const AnomalyDataset& ds, const InterventionScenario& s);

ResponseBundle aggregate_response(const LagSuite& suite, const InterventionScenario& s,
                                  std::span<const double> baseline_x,
                                  const RegionCatalog& catalog = default_regions());

}  // namespace climemu
