#include "climemu/intervention.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "climemu/error.hpp"

namespace climemu {

namespace {

const std::set<std::string>& scenario_keys() {
  static const std::set<std::string> keys{"region",      "duration_years", "perturbations",
                                          "reference_time", "lag_set",    "aggregation",
                                          "baseline",    "taper_km"};
  return keys;
}

int integer_field(const nlohmann::json& j, const std::string& key) {
  const auto& v = j[key];
  if (!v.is_number_integer())
    fail(ErrorCode::invalid_argument, key + " must be an integer", key);
  return v.get<int>();
}

}  // namespace

std::string to_string(PerturbMode m) { return m == PerturbMode::add ? "add" : "scale"; }
std::string to_string(Aggregation a) { return a == Aggregation::sum ? "sum" : "mean"; }
std::string to_string(BaselineKind b) {
  return b == BaselineKind::reference_time ? "reference_time" : "climatological_zero";
}

void InterventionScenario::validate() const {
  region.validate();
  if (duration_years < 1)
    fail(ErrorCode::invalid_argument, "duration_years must be >= 1", "duration_years");
  if (perturbations.empty())
    fail(ErrorCode::invalid_argument, "at least one perturbation is required", "perturbations");
  for (const auto& [id, p] : perturbations) {
    if (!input_index(id))
      fail(ErrorCode::invalid_argument, "'" + id + "' is not an input channel",
           "perturbations." + id);
    if (!std::isfinite(p.value))
      fail(ErrorCode::invalid_argument, "perturbation value must be finite",
           "perturbations." + id + ".value");
  }
  if (reference_time < 0)
    fail(ErrorCode::invalid_argument, "reference_time must be >= 0", "reference_time");
  for (std::size_t i = 0; i < lag_set.size(); ++i) {
    if (lag_set[i] < 0)
      fail(ErrorCode::invalid_argument, "lags must be >= 0", "lag_set[" + std::to_string(i) + "]");
    for (std::size_t k = 0; k < i; ++k)
      if (lag_set[k] == lag_set[i])
        fail(ErrorCode::invalid_argument, "duplicate lag", "lag_set[" + std::to_string(i) + "]");
  }
  if (!(taper_km >= 0.0) || !std::isfinite(taper_km))
    fail(ErrorCode::invalid_argument, "taper_km must be finite and >= 0", "taper_km");
}

bool InterventionScenario::operator==(const InterventionScenario& o) const {
  return region == o.region && duration_years == o.duration_years &&
         perturbations == o.perturbations && reference_time == o.reference_time &&
         lag_set == o.lag_set && aggregation == o.aggregation && baseline == o.baseline &&
         taper_km == o.taper_km;
}

nlohmann::json scenario_to_json(const InterventionScenario& s) {
  nlohmann::json j;
  j["region"] = region_to_json(s.region);
  j["duration_years"] = s.duration_years;
  j["perturbations"] = nlohmann::json::object();
  for (const auto& [id, p] : s.perturbations)
    j["perturbations"][id] = {{"mode", to_string(p.mode)}, {"value", p.value}};
  j["reference_time"] = s.reference_time;
  j["lag_set"] = s.lag_set;
  j["aggregation"] = to_string(s.aggregation);
  j["baseline"] = to_string(s.baseline);
  j["taper_km"] = s.taper_km;
  return j;
}

InterventionScenario scenario_from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrorCode::invalid_argument, "scenario must be a JSON object", "");
  for (const auto& [key, _] : j.items())
    if (!scenario_keys().count(key))
      fail(ErrorCode::invalid_argument, "unknown scenario field '" + key + "'", key);

  InterventionScenario s;
  if (!j.contains("region")) fail(ErrorCode::invalid_argument, "region is required", "region");
  s.region = region_from_json(j["region"], "region");
  if (j.contains("duration_years")) s.duration_years = integer_field(j, "duration_years");
  if (j.contains("reference_time")) s.reference_time = integer_field(j, "reference_time");

  if (!j.contains("perturbations") || !j["perturbations"].is_object())
    fail(ErrorCode::invalid_argument, "perturbations must be an object", "perturbations");
  for (const auto& [id, p] : j["perturbations"].items()) {
    const std::string path = "perturbations." + id;
    if (!input_index(id))
      fail(ErrorCode::invalid_argument, "'" + id + "' is not an input channel", path);
    if (!p.is_object()) fail(ErrorCode::invalid_argument, "perturbation must be an object", path);
    Perturbation pert;
    const std::string mode = p.value("mode", std::string("add"));
    if (mode == "add")
      pert.mode = PerturbMode::add;
    else if (mode == "scale")
      pert.mode = PerturbMode::scale;
    else
      fail(ErrorCode::invalid_argument, "mode must be 'add' or 'scale'", path + ".mode");
    if (!p.contains("value") || !p["value"].is_number())
      fail(ErrorCode::invalid_argument, "value must be a number", path + ".value");
    pert.value = p["value"].get<double>();
    s.perturbations[id] = pert;
  }

  if (j.contains("lag_set")) {
    const auto& ls = j["lag_set"];
    if (!ls.is_array()) fail(ErrorCode::invalid_argument, "lag_set must be an array", "lag_set");
    for (std::size_t i = 0; i < ls.size(); ++i) {
      if (!ls[i].is_number_integer())
        fail(ErrorCode::invalid_argument, "lags must be integers", "lag_set[" + std::to_string(i) + "]");
      s.lag_set.push_back(ls[i].get<int>());
    }
  }
  if (j.contains("aggregation")) {
    const auto a = j["aggregation"].is_string() ? j["aggregation"].get<std::string>() : "";
    if (a == "sum")
      s.aggregation = Aggregation::sum;
    else if (a == "mean")
      s.aggregation = Aggregation::mean;
    else
      fail(ErrorCode::invalid_argument, "aggregation must be 'sum' or 'mean'", "aggregation");
  }
  if (j.contains("baseline")) {
    const auto b = j["baseline"].is_string() ? j["baseline"].get<std::string>() : "";
    if (b == "reference_time")
      s.baseline = BaselineKind::reference_time;
    else if (b == "climatological_zero")
      s.baseline = BaselineKind::climatological_zero;
    else
      fail(ErrorCode::invalid_argument, "baseline must be 'reference_time' or 'climatological_zero'",
           "baseline");
  }
  if (j.contains("taper_km")) {
    if (!j["taper_km"].is_number())
      fail(ErrorCode::invalid_argument, "taper_km must be a number", "taper_km");
    s.taper_km = j["taper_km"].get<double>();
  }
  s.validate();
  return s;
}

std::vector<int> resolve_lag_set(const InterventionScenario& s, const LagSuite& suite) {
  std::vector<int> lags;
  if (s.lag_set.empty()) {
    for (int lag : suite.lags())
      if (lag <= 12 * s.duration_years) lags.push_back(lag);
    if (lags.empty())
      fail(ErrorCode::not_found,
           "no suite lag is within " + std::to_string(12 * s.duration_years) + " months",
           "duration_years");
  } else {
    for (std::size_t i = 0; i < s.lag_set.size(); ++i) {
      if (!suite.models.count(s.lag_set[i]))
        fail(ErrorCode::not_found, "lag " + std::to_string(s.lag_set[i]) + " is not in the suite",
             "lag_set[" + std::to_string(i) + "]");
      lags.push_back(s.lag_set[i]);
    }
    std::sort(lags.begin(), lags.end());
  }
  return lags;
}

std::vector<double> forcing_weights(const IcosahedralGrid& grid, const std::vector<bool>& mask,
                                    double taper_km) {
  if (mask.size() != grid.size())
    fail(ErrorCode::invalid_argument, "mask does not match the grid");
  std::vector<double> w(grid.size(), 0.0);
  for (std::size_t v = 0; v < grid.size(); ++v) w[v] = mask[v] ? 1.0 : 0.0;
  if (taper_km <= 0.0) return w;

  const auto xyz = grid.unit_xyz();
  std::vector<std::size_t> inside;
  for (std::size_t v = 0; v < grid.size(); ++v)
    if (mask[v]) inside.push_back(v);
  if (inside.empty()) return w;
  const double width_rad = taper_km / kEarthRadiusKm;
  for (std::size_t v = 0; v < grid.size(); ++v) {
    if (mask[v]) continue;
    double best = std::numbers::pi;
    for (std::size_t u : inside) best = std::min(best, great_circle_rad(xyz[v], xyz[u]));
    if (best < width_rad) w[v] = 0.5 * (1.0 + std::cos(std::numbers::pi * best / width_rad));
  }
  return w;
}

std::vector<double> apply_perturbation(std::span<const double> x, const InterventionScenario& s,
                                       std::span<const double> weights) {
  const std::size_t nv = weights.size();
  if (x.size() != kNumInputs * nv)
    fail(ErrorCode::invalid_argument, "input field has " + std::to_string(x.size()) +
                                          " values, expected " + std::to_string(kNumInputs * nv));
  std::vector<double> out(x.begin(), x.end());
  for (const auto& [id, p] : s.perturbations) {
    const auto c = input_index(id);
    if (!c) fail(ErrorCode::invalid_argument, "'" + id + "' is not an input channel", "perturbations." + id);
    if (!std::isfinite(p.value))
      fail(ErrorCode::invalid_argument, "perturbation value must be finite", "perturbations." + id + ".value");
    double* row = out.data() + *c * nv;
    for (std::size_t v = 0; v < nv; ++v) {
      const double w = weights[v];
      if (w == 0.0) continue;
      if (p.mode == PerturbMode::add)
        row[v] = w == 1.0 ? row[v] + p.value : row[v] + w * p.value;
      else
        row[v] = w == 1.0 ? row[v] * p.value : row[v] * (1.0 + w * (p.value - 1.0));
    }
  }
  return out;
}

std::vector<double> apply_perturbation(std::span<const double> x, const InterventionScenario& s,
                                       const std::vector<bool>& mask) {
  std::vector<double> w(mask.size());
  for (std::size_t v = 0; v < mask.size(); ++v) w[v] = mask[v] ? 1.0 : 0.0;
  return apply_perturbation(x, s, std::span<const double>(w));
}

std::vector<double> baseline_input(const AnomalyDataset& ds, const InterventionScenario& s) {
  if (s.baseline == BaselineKind::climatological_zero)
    return std::vector<double>(kNumInputs * ds.n_vertices(), 0.0);
  if (s.reference_time < 0 || s.reference_time >= ds.n_months)
    fail(ErrorCode::invalid_argument,
         "reference_time " + std::to_string(s.reference_time) + " is outside 0.." +
             std::to_string(ds.n_months - 1),
         "reference_time");
  return ds.inputs_at(s.reference_time);
}

ResponseBundle aggregate_response(const LagSuite& suite, const InterventionScenario& s,
                                  std::span<const double> baseline_x, const RegionCatalog& catalog) {
  s.validate();
  const auto lags = resolve_lag_set(s, suite);
  const auto& grid = grid_for_level(suite.grid_level);
  const std::size_t nv = grid.size();
  if (baseline_x.size() != kNumInputs * nv)
    fail(ErrorCode::invalid_argument, "baseline input does not match the suite grid level");

  const auto mask = region_mask(grid, s.region, catalog);
  const auto weights = forcing_weights(grid, mask, s.taper_km);

  ResponseBundle b;
  b.grid_level = suite.grid_level;
  b.lags = lags;
  b.baseline_input.assign(baseline_x.begin(), baseline_x.end());
  b.perturbed_input = apply_perturbation(baseline_x, s, std::span<const double>(weights));
  b.before.assign(kNumOutputs * nv, 0.0);
  b.after.assign(kNumOutputs * nv, 0.0);
  for (int lag : lags) {
    const MlpModel& m = suite.at(lag);
    LagComponent c;
    c.lag = lag;
    c.before = mlp_forward(m, std::span<const double>(b.baseline_input));
    c.after = mlp_forward(m, std::span<const double>(b.perturbed_input));
    for (std::size_t i = 0; i < b.before.size(); ++i) {
      b.before[i] += c.before[i];
      b.after[i] += c.after[i];
    }
    b.components.push_back(std::move(c));
  }
  if (s.aggregation == Aggregation::mean) {
    const double n = static_cast<double>(lags.size());
    for (auto& v : b.before) v /= n;
    for (auto& v : b.after) v /= n;
  }
  b.diff.resize(b.before.size());
  for (std::size_t i = 0; i < b.diff.size(); ++i) b.diff[i] = b.after[i] - b.before[i];
  return b;
}

}  // namespace climemu
