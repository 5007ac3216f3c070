#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include <json.hpp>

#include "climemu/dataset.hpp"
#include "climemu/mlp.hpp"

namespace climemu {

struct TrainConfig {
  int epochs = 15;
  double initial_lr = 2e-4;
  /// Learning rate at epoch e is initial_lr * exp(-lr_decay_per_epoch * e).
  double lr_decay_per_epoch = 1e-6;
  int batch_size = 32;
  std::vector<int> hidden_layers{1024, 1024, 1024, 1024};
  Activation activation = Activation::gelu;
  bool layer_norm = true;
  double lambda_precip = 0.0;
  double lambda_moisture = 0.0;
  double lambda_mass = 0.0;
  double lambda_energy = 0.0;
  /// K per W m-2 linking global-mean tas to global-mean net TOA radiation.
  double c_energy = 0.0;
  /// Trailing fraction of the (time-ordered) sample pairs held out.
  double val_fraction = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct LossTerms {
  double total = 0.0;
  double mse = 0.0;
  double c_precip = 0.0;
  double c_moisture = 0.0;
  double c_mass = 0.0;
  double c_energy = 0.0;
};

/// Loss for one sample. `pred`, `target` are 3 x n_vertices and `input`
/// 6 x n_vertices, channel-major, in physical units. The mse is taken after
/// dividing each output channel by `out_scale` (empty: unit scale); the
/// constraint terms are in physical units. An empty `pr_clim` is read as zero.
/// When `grad_pred` is given it receives d total / d pred.
LossTerms physics_loss(std::span<const double> pred, std::span<const double> target,
                       std::span<const double> input, std::span<const double> pr_clim,
                       std::span<const double> weights, const TrainConfig& cfg,
                       std::span<const double> out_scale = {},
                       std::vector<double>* grad_pred = nullptr);

/// Input at t - lag paired with output at t, t = lag .. n_months - 1, split in
/// time order: the last `val_fraction` of pairs form the validation set.
struct PairSplit {
  int lag = 0;
  std::vector<int> train_months;  // output month of each pair
  std::vector<int> val_months;
};
PairSplit split_pairs(const AnomalyDataset& ds, int lag, double val_fraction);

/// Trains one emulator for `lag`. Throws `diverged` on a non-finite loss.
MlpModel train_model(const AnomalyDataset& ds, int lag, const TrainConfig& cfg);

/// Mean loss terms of `model` over the given output months.
LossTerms evaluate_loss(const MlpModel& model, const AnomalyDataset& ds,
                        std::span<const int> months, const TrainConfig& cfg);

void save_model(const MlpModel& model, const std::filesystem::path& path);
MlpModel load_model(const std::filesystem::path& path);

/// Throws shape_error naming both levels when they differ.
void check_model_grid(const MlpModel& model, int dataset_level);

struct LagSuite {
  int grid_level = 0;
  std::map<int, MlpModel> models;
  nlohmann::json train_config;

  std::vector<int> lags() const;
  const MlpModel& at(int lag) const;
  void validate() const;
};

LagSuite train_lag_suite(const AnomalyDataset& ds, const std::vector<int>& lags,
                         const TrainConfig& cfg);

/// Writes suite.json plus one model file per lag.
void save_suite(const LagSuite& suite, const std::filesystem::path& dir);
LagSuite load_suite(const std::filesystem::path& dir);

/// Area-weighted Pearson correlation.
double pattern_correlation(std::span<const double> a, std::span<const double> b,
                           std::span<const double> weights);

/// (f(a m) - f(-a m)) / 2a about a zero baseline, where m is `mask` applied
/// to input channel `input`. Returns 3 x n_vertices.
std::vector<double> unit_response(const MlpModel& model, std::size_t input,
                                  const std::vector<bool>& mask, double amplitude = 1.0);

/// Response of the planted operator at `lag` to a unit perturbation of
/// `input` inside `mask`; 3 x n_vertices.
std::vector<double> planted_response(const SyntheticSpec& spec, int lag, std::size_t input,
                                     const std::vector<bool>& mask);

/// Per-lag validation mse and, for synthetic data with planted gains, the
/// pattern correlation of each planted (lag, output, input) term.
nlohmann::json evaluate_suite(const LagSuite& suite, const AnomalyDataset& ds,
                              const TrainConfig& cfg, const std::vector<bool>& probe_mask);

}  // namespace climemu
