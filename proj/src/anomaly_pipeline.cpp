#include "climemu/anomaly_pipeline.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <Eigen/Dense>

#include "climemu/error.hpp"

namespace climemu {

namespace {

void check_series(const Series& s) {
  if (s.n_vertices <= 0 || s.n_months < 0 ||
      s.values.size() != static_cast<std::size_t>(s.n_months) * s.n_vertices)
    fail(ErrorCode::invalid_argument, "series shape does not match its values");
  if (s.start_month < 1 || s.start_month > 12)
    fail(ErrorCode::invalid_argument, "series start_month must be 1..12");
}

// Month indices grouped by calendar month.
std::array<std::vector<int>, 12> by_calendar_month(const Series& s) {
  std::array<std::vector<int>, 12> groups;
  for (int t = 0; t < s.n_months; ++t) groups[s.calendar_month(t)].push_back(t);
  return groups;
}

double legendre(int j, double x) {
  double p0 = 1.0, p1 = x;
  if (j == 0) return p0;
  for (int n = 1; n < j; ++n) {
    const double p2 = ((2.0 * n + 1.0) * x * p1 - n * p0) / (n + 1.0);
    p0 = p1;
    p1 = p2;
  }
  return p1;
}

}  // namespace

void PipelineConfig::validate() const {
  if (rolling_window_years < 1)
    fail(ErrorCode::invalid_argument, "rolling window must be at least one year");
  if (detrend_degree < 0) fail(ErrorCode::invalid_argument, "detrend degree must be >= 0");
}

Series deseasonalize(const Series& in) {
  check_series(in);
  if (in.n_months < 12)
    fail(ErrorCode::invalid_argument,
         "deseasonalize needs at least 12 months, got " + std::to_string(in.n_months));
  Series out = in;
  const auto groups = by_calendar_month(in);
  std::vector<double> mean(in.n_vertices);
  for (const auto& idx : groups) {
    std::fill(mean.begin(), mean.end(), 0.0);
    for (int t : idx)
      for (int v = 0; v < in.n_vertices; ++v) mean[v] += in(t, v);
    for (double& m : mean) m /= static_cast<double>(idx.size());
    for (int t : idx)
      for (int v = 0; v < in.n_vertices; ++v) out(t, v) -= mean[v];
  }
  return out;
}

Series detrend(const Series& in, int degree) {
  check_series(in);
  if (degree < 0) fail(ErrorCode::invalid_argument, "detrend degree must be >= 0");
  const auto groups = by_calendar_month(in);
  const int ncoef = degree + 1;
  for (int m = 0; m < 12; ++m) {
    if (static_cast<int>(groups[m].size()) < ncoef)
      fail(ErrorCode::invalid_argument,
           "detrend of degree " + std::to_string(degree) + " needs " + std::to_string(ncoef) +
               " samples per calendar month; month " + std::to_string(m + 1) + " has " +
               std::to_string(groups[m].size()));
  }

  Series out = in;
  for (const auto& idx : groups) {
    const int n = static_cast<int>(idx.size());
    const double y0 = in.year_index(idx.front());
    const double y1 = in.year_index(idx.back());
    const double centre = 0.5 * (y0 + y1);
    const double half = y1 > y0 ? 0.5 * (y1 - y0) : 1.0;

    std::vector<double> scaled(n);
    Eigen::MatrixXd X(n, ncoef);
    for (int k = 0; k < n; ++k) {
      scaled[k] = (in.year_index(idx[k]) - centre) / half;
      double p = 1.0;
      for (int j = 0; j < ncoef; ++j, p *= scaled[k]) X(k, j) = p;
    }
    Eigen::MatrixXd Y(n, in.n_vertices);
    for (int k = 0; k < n; ++k)
      for (int v = 0; v < in.n_vertices; ++v) Y(k, v) = in(idx[k], v);

    const Eigen::MatrixXd G = X.transpose() * X;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    Eigen::MatrixXd fitted;
    if (lo > 0.0 && hi / lo <= 1e8) {
      const Eigen::MatrixXd B = G.ldlt().solve(X.transpose() * Y);
      fitted = X * B;
    } else {
      Eigen::MatrixXd L(n, ncoef);
      for (int k = 0; k < n; ++k)
        for (int j = 0; j < ncoef; ++j) L(k, j) = legendre(j, scaled[k]);
      const Eigen::MatrixXd B = L.colPivHouseholderQr().solve(Y);
      fitted = L * B;
    }
    for (int k = 0; k < n; ++k)
      for (int v = 0; v < in.n_vertices; ++v) out(idx[k], v) -= fitted(k, v);
  }
  return out;
}

Series remove_rolling_mean(const Series& in, int window_years) {
  check_series(in);
  if (in.n_months < 12)
    fail(ErrorCode::invalid_argument,
         "remove_rolling_mean needs at least 12 months, got " + std::to_string(in.n_months));
  if (window_years < 1) fail(ErrorCode::invalid_argument, "rolling window must be >= 1 year");
  const int back = window_years / 2;
  const int ahead = (window_years - 1) / 2;

  Series out = in;
  const auto groups = by_calendar_month(in);
  std::vector<double> prefix;
  for (const auto& idx : groups) {
    const int n = static_cast<int>(idx.size());
    prefix.assign(static_cast<std::size_t>(n + 1), 0.0);
    for (int v = 0; v < in.n_vertices; ++v) {
      for (int k = 0; k < n; ++k) prefix[k + 1] = prefix[k] + in(idx[k], v);
      for (int k = 0; k < n; ++k) {
        // Same-month samples are one year apart, so sample offsets equal year offsets.
        const int a = std::max(0, k - back);
        const int b = std::min(n - 1, k + ahead);
        const double mean = (prefix[b + 1] - prefix[a]) / static_cast<double>(b - a + 1);
        out(idx[k], v) = in(idx[k], v) - mean;
      }
    }
  }
  return out;
}

Series compute_anomalies(const Series& in, const PipelineConfig& cfg) {
  cfg.validate();
  return remove_rolling_mean(detrend(deseasonalize(in), cfg.detrend_degree),
                             cfg.rolling_window_years);
}

Series channel_series(const AnomalyDataset& ds, std::size_t slot) {
  Series s;
  s.n_months = ds.n_months;
  s.n_vertices = static_cast<int>(ds.n_vertices());
  s.start_month = ds.start_month;
  s.values.assign(ds.data[slot].begin(), ds.data[slot].end());
  return s;
}

AnomalyDataset compute_anomalies(const AnomalyDataset& raw, const PipelineConfig& cfg) {
  if (raw.provenance != Provenance::raw)
    fail(ErrorCode::invalid_argument, "compute_anomalies expects a raw dataset");
  raw.validate();
  cfg.validate();

  AnomalyDataset out = raw;
  out.provenance = Provenance::anomaly;
  for (std::size_t slot = 0; slot < kNumChannels; ++slot) {
    const Series a = compute_anomalies(channel_series(raw, slot), cfg);
    auto& dst = out.data[slot];
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<float>(a.values[i]);
  }

  const std::size_t nv = raw.n_vertices();
  const std::size_t pr_slot = kNumInputs + kPr;
  std::vector<double> clim(nv, 0.0);
  for (int t = 0; t < raw.n_months; ++t)
    for (std::size_t v = 0; v < nv; ++v) clim[v] += raw.at(pr_slot, t, v);
  out.pr_climatology.emplace(nv);
  for (std::size_t v = 0; v < nv; ++v)
    (*out.pr_climatology)[v] = static_cast<float>(clim[v] / raw.n_months);

  out.pipeline = nlohmann::json::array({
      {{"stage", "deseasonalize"}},
      {{"stage", "detrend"}, {"degree", cfg.detrend_degree}, {"basis", "per-calendar-month polynomial in scaled year"}},
      {{"stage", "remove_rolling_mean"}, {"window_years", cfg.rolling_window_years}, {"centered", true}},
  });
  return out;
}

}  // namespace climemu
