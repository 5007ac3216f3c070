#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "climemu/anomaly_pipeline.hpp"
#include "climemu/error.hpp"
#include "support.hpp"

using namespace climemu;

namespace {

Series make_series(int months, int nv, int start_month = 1) {
  Series s;
  s.n_months = months;
  s.n_vertices = nv;
  s.start_month = start_month;
  s.values.assign(static_cast<std::size_t>(months) * nv, 0.0);
  return s;
}

Series white_noise(int months, int nv, std::uint64_t seed) {
  Series s = make_series(months, nv);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  for (auto& x : s.values) x = n01(rng);
  return s;
}

double max_abs(const Series& s) {
  double m = 0.0;
  for (double x : s.values) m = std::max(m, std::fabs(x));
  return m;
}

}  // namespace

TEST_SUITE("anomaly_pipeline") {

TEST_CASE("deseasonalize removes constants and pure annual cycles") {
  Series c = make_series(120, 3);
  for (auto& x : c.values) x = 7.5;
  CHECK(max_abs(deseasonalize(c)) < 1e-12);

  Series s = make_series(120, 2, 4);
  for (int t = 0; t < s.n_months; ++t)
    for (int v = 0; v < 2; ++v) s(t, v) = (v + 1) * std::sin(2 * std::numbers::pi * t / 12.0);
  CHECK(max_abs(deseasonalize(s)) < 1e-12);
}

TEST_CASE("deseasonalize matches a two-pass calendar-month mean") {
  const Series in = white_noise(100, 4, 3);  // 8 years and 4 months
  const Series out = deseasonalize(in);
  for (int m = 0; m < 12; ++m)
    for (int v = 0; v < 4; ++v) {
      double sum = 0.0;
      int n = 0;
      for (int t = m; t < in.n_months; t += 12) sum += in(t, v), ++n;
      for (int t = m; t < in.n_months; t += 12)
        CHECK(out(t, v) == doctest::Approx(in(t, v) - sum / n).epsilon(1e-12));
    }
}

TEST_CASE("detrend removes a cubic in the year index") {
  Series s = make_series(12 * 40, 2);
  for (int t = 0; t < s.n_months; ++t) {
    const double y = s.year_index(t);
    s(t, 0) = 3.0 - 0.2 * y + 0.01 * y * y - 0.0004 * y * y * y;
    s(t, 1) = 100.0 + 2.0 * y;
  }
  CHECK(max_abs(detrend(s, 3)) < 1e-6);
}

TEST_CASE("detrend needs degree+1 samples of each calendar month") {
  const Series s = white_noise(36, 1, 1);
  CHECK(testing::error_code_of([&] { detrend(s, 3); }) == ErrorCode::invalid_argument);
  CHECK_NOTHROW(detrend(white_noise(48, 1, 1), 3));
}

TEST_CASE("rolling mean matches a brute-force centred window") {
  Series s = make_series(12 * 25, 1, 7);
  for (int t = 0; t < s.n_months; ++t) s(t, 0) = 0.5 * t + std::cos(t * 0.37);
  for (int w : {1, 4, 7, 10}) {
    const Series out = remove_rolling_mean(s, w);
    for (int t = 0; t < s.n_months; ++t) {
      const int y = s.year_index(t);
      double sum = 0.0;
      int n = 0;
      for (int u = 0; u < s.n_months; ++u) {
        const int yu = s.year_index(u);
        if (s.calendar_month(u) == s.calendar_month(t) && yu >= y - w / 2 && yu <= y + (w - 1) / 2)
          sum += s(u, 0), ++n;
      }
      CHECK(std::fabs(out(t, 0) - (s(t, 0) - sum / n)) < 1e-9);
    }
  }
}

TEST_CASE("a window longer than the record reduces to deseasonalize") {
  const Series s = white_noise(12 * 10, 3, 4);
  const Series a = remove_rolling_mean(s, 30);
  const Series b = deseasonalize(s);
  for (std::size_t i = 0; i < a.values.size(); ++i) CHECK(std::fabs(a.values[i] - b.values[i]) < 1e-12);
}

TEST_CASE("the pipeline is linear") {
  const Series a = white_noise(12 * 12, 2, 5);
  const Series b = white_noise(12 * 12, 2, 6);
  Series mix = a;
  for (std::size_t i = 0; i < mix.values.size(); ++i) mix.values[i] = 2.0 * a.values[i] - 3.0 * b.values[i];
  const PipelineConfig cfg{5, 2};
  const Series ra = compute_anomalies(a, cfg), rb = compute_anomalies(b, cfg), rm = compute_anomalies(mix, cfg);
  for (std::size_t i = 0; i < rm.values.size(); ++i)
    CHECK(std::fabs(rm.values[i] - (2.0 * ra.values[i] - 3.0 * rb.values[i])) < 1e-9);
}

TEST_CASE("deseasonalize and detrend are projections") {
  const Series s = white_noise(12 * 15, 2, 8);
  const Series d = deseasonalize(s);
  const Series dd = deseasonalize(d);
  const Series t = detrend(s, 3);
  const Series tt = detrend(t, 3);
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    CHECK(std::fabs(dd.values[i] - d.values[i]) < 1e-12);
    CHECK(std::fabs(tt.values[i] - t.values[i]) < 1e-9);
  }
}

TEST_CASE("full pipeline annihilates seasonal cycle plus cubic trend") {
  SyntheticSpec spec = SyntheticSpec::realistic(1, 1, 12 * 40);
  spec.sigma.fill(0.0);
  const auto raw = generate_synthetic(spec);
  const auto an = compute_anomalies(raw);
  for (std::size_t slot = 0; slot < kNumChannels; ++slot) {
    double scale = 0.0, resid = 0.0;
    for (float x : raw.data[slot]) scale = std::max(scale, std::fabs(static_cast<double>(x)));
    for (float x : an.data[slot]) resid = std::max(resid, std::fabs(static_cast<double>(x)));
    CHECK(resid < 1e-5 * scale);
  }
}

TEST_CASE("dataset pipeline records its stages and refuses anomaly input") {
  const auto raw = generate_synthetic(SyntheticSpec::realistic(2, 0, 12 * 6));
  const auto an = compute_anomalies(raw, {5, 3});
  CHECK(an.provenance == Provenance::anomaly);
  REQUIRE(an.pipeline.size() == 3);
  CHECK(an.pipeline[0]["stage"] == "deseasonalize");
  CHECK(an.pipeline[1]["degree"] == 3);
  CHECK(an.pipeline[2]["window_years"] == 5);
  CHECK(testing::error_code_of([&] { compute_anomalies(an); }) == ErrorCode::invalid_argument);
  CHECK(testing::error_code_of([&] { compute_anomalies(raw, {0, 3}); }) == ErrorCode::invalid_argument);
}

TEST_CASE("series shorter than a year are rejected") {
  CHECK(testing::error_code_of([] { deseasonalize(white_noise(11, 1, 1)); }) == ErrorCode::invalid_argument);
  Series bad = make_series(24, 2);
  bad.values.pop_back();
  CHECK(testing::error_code_of([&] { deseasonalize(bad); }) == ErrorCode::invalid_argument);
}

}  // TEST_SUITE
