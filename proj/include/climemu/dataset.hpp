#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "climemu/channels.hpp"
#include "climemu/geodesic_grid.hpp"

namespace climemu {

inline constexpr std::size_t kNumChannels = kNumInputs + kNumOutputs;

enum class Provenance { raw, anomaly };

/// Slot 0..5 are the inputs, 6..8 the outputs, both in canonical order.
const FieldChannel& channel_at(std::size_t slot);
std::optional<std::size_t> channel_slot(std::string_view id);

/// Monthly multi-channel fields on one icosahedral level. Each channel is a
/// row-major [month][vertex] float32 block.
struct AnomalyDataset {
  int grid_level = 0;
  int n_months = 0;
  int start_year = 1850;
  int start_month = 1;  // 1..12
  Provenance provenance = Provenance::raw;
  nlohmann::json pipeline = nlohmann::json::array();
  /// Generator parameters when the data is synthetic; null otherwise.
  nlohmann::json synthetic;
  std::array<std::vector<float>, kNumChannels> data;
  /// Time-mean raw precipitation per vertex, kept for the non-negativity
  /// constraint once the raw fields have been turned into anomalies.
  std::optional<std::vector<float>> pr_climatology;

  std::size_t n_vertices() const { return vertex_count(grid_level); }
  std::span<const float> channel(std::size_t slot) const { return data[slot]; }
  std::span<float> channel(std::size_t slot) { return data[slot]; }
  float at(std::size_t slot, int month, std::size_t vertex) const {
    return data[slot][static_cast<std::size_t>(month) * n_vertices() + vertex];
  }

  /// 6 x n_vertices inputs at `month`, channel-major.
  std::vector<double> inputs_at(int month) const;
  /// 3 x n_vertices outputs at `month`, channel-major.
  std::vector<double> outputs_at(int month) const;

  /// Throws if shapes disagree or any value is non-finite.
  void validate() const;
};

void save_dataset(const AnomalyDataset& ds, const std::filesystem::path& dir);
AnomalyDataset load_dataset(const std::filesystem::path& dir);

struct PlantedGain {
  int lag = 1;
  std::size_t output = kTas;  // OutputIndex
  std::size_t input = kSwCreToa;  // InputIndex
  double gain = 0.0;
};

struct SyntheticSpec {
  std::uint64_t seed = 0;
  int n_months = 1200;
  int grid_level = 3;
  int start_year = 1850;
  int start_month = 1;
  /// Per channel slot. The seasonal cycle at a vertex is
  /// amplitude * (0.3 + sin(lat)) * sin(2 pi (month + 0.5) / 12).
  std::array<double, kNumChannels> seasonal_amplitude{};
  /// Cubic in s = 2 t / (n_months - 1) - 1: c0 + c1 s + c2 s^2 + c3 s^3.
  std::array<std::array<double, 4>, kNumChannels> trend{};
  std::array<double, kNumChannels> rho{};
  /// Standard deviation of the AR(1) innovation before spatial smoothing.
  std::array<double, kNumChannels> sigma{};
  /// Neighbour-averaging passes applied to each innovation field.
  int noise_smoothing_passes = 3;
  std::vector<PlantedGain> gains;

  /// Plausible climate-like baselines, seasonal cycles and noise levels,
  /// no planted response.
  static SyntheticSpec realistic(std::uint64_t seed, int grid_level, int n_months);
  int max_lag() const;
  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticSpec from_json(const nlohmann::json& j);
};

struct SyntheticComponents {
  AnomalyDataset dataset;
  /// AR(1) noise per channel slot, [month][vertex], aligned with the dataset.
  std::array<std::vector<double>, kNumChannels> noise;
};

AnomalyDataset generate_synthetic(const SyntheticSpec& spec);
SyntheticComponents generate_synthetic_components(const SyntheticSpec& spec);

/// One pass of neighbour averaging (vertex and its neighbours, equal weights).
std::vector<double> smooth_once(const IcosahedralGrid& grid, std::span<const double> field);

std::string to_string(Provenance p);

}  // namespace climemu
