#pragma once

#include <vector>

#include "climemu/dataset.hpp"

namespace climemu {

/// Row-major [month][vertex] series in double precision.
struct Series {
  int n_months = 0;
  int n_vertices = 0;
  int start_month = 1;  // calendar month of index 0, 1..12
  std::vector<double> values;

  double& operator()(int t, int v) { return values[static_cast<std::size_t>(t) * n_vertices + v]; }
  double operator()(int t, int v) const {
    return values[static_cast<std::size_t>(t) * n_vertices + v];
  }
  int calendar_month(int t) const { return (start_month - 1 + t) % 12; }
  int year_index(int t) const { return (start_month - 1 + t) / 12; }
};

struct PipelineConfig {
  int rolling_window_years = 30;
  int detrend_degree = 3;
  void validate() const;
};

/// Subtracts the per-(vertex, calendar month) mean.
Series deseasonalize(const Series& in);

/// Least-squares polynomial in year index, fit and removed per
/// (vertex, calendar month). The year index is mapped to [-1, 1] per
/// calendar month; if the monomial normal matrix has condition number above
/// 1e8 the fit switches to a Legendre basis solved by QR.
Series detrend(const Series& in, int degree = 3);

/// Subtracts the mean of the same calendar month over a centred window of
/// `window_years` years, [y - W/2, y + (W-1)/2], truncated at the edges.
Series remove_rolling_mean(const Series& in, int window_years = 30);

/// deseasonalize -> detrend -> remove_rolling_mean.
Series compute_anomalies(const Series& in, const PipelineConfig& cfg = {});

/// Applies the pipeline to every channel of a raw dataset. Also stores the
/// raw precipitation climatology and records the stages in `pipeline`.
AnomalyDataset compute_anomalies(const AnomalyDataset& raw, const PipelineConfig& cfg = {});

Series channel_series(const AnomalyDataset& ds, std::size_t slot);

}  // namespace climemu
