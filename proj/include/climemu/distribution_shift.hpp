#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "climemu/dataset.hpp"

namespace climemu {

inline constexpr double kDefaultOodThreshold = 0.01;

/// PCA + Gaussian KDE reference for one input channel.
struct ShiftReference {
  std::string channel_id;
  int k = 2;
  std::vector<double> mean;                 // n_vertices
  Eigen::MatrixXd axes;                     // k x n_vertices, orthonormal rows
  std::vector<double> explained_variance;   // fraction per axis, non-increasing
  Eigen::MatrixXd projections;              // n_train x k
  std::vector<double> bandwidth;            // per dimension
  std::vector<double> sorted_log_density;   // training log-densities, ascending
  double threshold = kDefaultOodThreshold;

  std::size_t n_vertices() const { return mean.size(); }
  std::size_t n_train() const { return static_cast<std::size_t>(projections.rows()); }
};

struct ShiftScore {
  std::vector<double> coords;
  double log_density = 0.0;
  double percentile = 0.0;
  bool ood = false;
};

/// `fields` is n_train x n_vertices, one training sample per row.
ShiftReference fit_reference(const std::string& channel_id, const Eigen::MatrixXd& fields,
                             int k = 2, double threshold = kDefaultOodThreshold);

/// One reference per input channel from every month of an anomaly dataset.
std::vector<ShiftReference> fit_references(const AnomalyDataset& ds, int k = 2,
                                           double threshold = kDefaultOodThreshold);

std::vector<double> project(const ShiftReference& ref, std::span<const double> field);

/// Log of the Gaussian product-kernel density at `coords`.
double kde_log_density(const ShiftReference& ref, std::span<const double> coords);

/// Fraction of training samples with lower log-density, linearly
/// interpolated between ranks: 0 at or below the minimum, 1 at or above the
/// maximum.
double percentile_of(const ShiftReference& ref, double log_density);

ShiftScore score(const ShiftReference& ref, std::span<const double> field);

/// Log-density on a regular grid spanning the training projections padded
/// by `pad` bandwidths; row-major [i_y][i_x] over the first two axes.
struct DensityGrid {
  std::vector<double> x, y;
  std::vector<double> log_density;
};
DensityGrid density_grid(const ShiftReference& ref, int n = 40, double pad = 3.0);

void save_reference(const ShiftReference& ref, const std::filesystem::path& path);
ShiftReference load_reference(const std::filesystem::path& path);

}  // namespace climemu
