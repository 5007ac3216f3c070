#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <Eigen/Dense>

#include "climemu/distribution_shift.hpp"
#include "climemu/error.hpp"
#include "support.hpp"

using namespace climemu;
namespace fs = std::filesystem;

namespace {

// Samples of a Gaussian living on a 2-D subspace of R^nv plus optional isotropic noise.
Eigen::MatrixXd gaussian_fields(int n, int nv, double s1, double s2, double noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Eigen::MatrixXd raw(nv, 2);
  for (auto& v : raw.reshaped()) v = n01(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
  const Eigen::MatrixXd basis = qr.householderQ() * Eigen::MatrixXd::Identity(nv, 2);
  Eigen::MatrixXd f(n, nv);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd x = s1 * n01(rng) * basis.col(0) + s2 * n01(rng) * basis.col(1);
    for (int v = 0; v < nv; ++v) x(v) += 3.0 + noise * n01(rng);
    f.row(i) = x.transpose();
  }
  return f;
}

}  // namespace

TEST_SUITE("distribution_shift") {

TEST_CASE("rank-one data puts nearly all variance on the first axis") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01;
  const int n = 200, nv = 50;
  Eigen::VectorXd pattern(nv);
  for (auto& v : pattern) v = n01(rng);
  Eigen::MatrixXd f(n, nv);
  for (int i = 0; i < n; ++i) {
    const double a = 5.0 * n01(rng);
    for (int v = 0; v < nv; ++v) f(i, v) = a * pattern(v) + 0.01 * n01(rng);
  }
  const auto ref = fit_reference("sw_cre_toa", f);
  CHECK(ref.explained_variance[0] >= 0.99);
  CHECK(ref.explained_variance[1] <= ref.explained_variance[0]);
  CHECK(std::fabs(std::fabs(ref.axes.row(0).dot(pattern.normalized())) - 1.0) < 1e-4);
}

TEST_CASE("axes are orthonormal and training projections are centred") {
  for (auto [n, nv] : {std::pair{60, 200}, std::pair{300, 40}}) {  // both decomposition spaces
    const auto f = gaussian_fields(n, nv, 4.0, 2.0, 0.3, 2);
    const auto ref = fit_reference("x", f, 3);
    const Eigen::MatrixXd gram = ref.axes * ref.axes.transpose();
    CHECK((gram - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-8);
    for (int d = 0; d < 3; ++d) CHECK(std::fabs(ref.projections.col(d).mean()) < 1e-9);
    CHECK(std::is_sorted(ref.sorted_log_density.begin(), ref.sorted_log_density.end()));
  }
}

TEST_CASE("projection is an isometry on the fitted subspace") {
  const auto f = gaussian_fields(80, 30, 3.0, 1.0, 0.0, 3);
  const auto ref = fit_reference("x", f, 2);
  for (int i = 0; i < 10; ++i) {
    const double df = (f.row(i) - f.row(i + 1)).norm();
    const double dp = (ref.projections.row(i) - ref.projections.row(i + 1)).norm();
    CHECK(df == doctest::Approx(dp).epsilon(1e-9));
  }
  std::vector<double> x(30);
  for (int v = 0; v < 30; ++v) x[v] = f(5, v);
  const auto p = project(ref, x);
  CHECK(p[0] == doctest::Approx(ref.projections(5, 0)).epsilon(1e-10));
}

TEST_CASE("fresh samples score around the median percentile") {
  const int nv = 40;
  const auto train = gaussian_fields(400, nv, 3.0, 1.5, 0.2, 4);
  const auto ref = fit_reference("x", train);
  // Same seed, twice as many rows: the first 400 repeat the training set and
  // the rest are fresh draws on the same basis.
  const auto all = gaussian_fields(800, nv, 3.0, 1.5, 0.2, 4);
  std::vector<double> pct;
  for (Eigen::Index i = 400; i < 800; ++i) {
    std::vector<double> x(nv);
    for (int v = 0; v < nv; ++v) x[v] = all(i, v);
    pct.push_back(score(ref, x).percentile);
  }
  std::nth_element(pct.begin(), pct.begin() + 200, pct.end());
  CHECK(std::fabs(pct[200] - 0.5) <= 0.1);
}

TEST_CASE("a ten-sigma displacement is out of distribution; the mode is not") {
  const int nv = 40;
  const auto f = gaussian_fields(300, nv, 3.0, 1.5, 0.2, 5);
  const auto ref = fit_reference("x", f);
  const double sd0 = std::sqrt((ref.projections.col(0).array().square()).mean());
  std::vector<double> far(ref.mean), centre(ref.mean);
  for (int v = 0; v < nv; ++v) far[v] += 10.0 * sd0 * ref.axes(0, v);
  const auto s = score(ref, far);
  CHECK(s.percentile < 0.01);
  CHECK(s.ood);
  const auto c = score(ref, centre);
  CHECK(c.percentile >= 0.5);
  CHECK_FALSE(c.ood);
}

TEST_CASE("percentile is monotone in log-density with the documented endpoints") {
  const auto ref = fit_reference("x", gaussian_fields(100, 20, 2.0, 1.0, 0.1, 6));
  const auto& s = ref.sorted_log_density;
  CHECK(percentile_of(ref, s.front() - 1.0) == 0.0);
  CHECK(percentile_of(ref, s.front()) == 0.0);
  CHECK(percentile_of(ref, s.back()) == 1.0);
  CHECK(percentile_of(ref, s[10]) == doctest::Approx(10.0 / 99.0));
  double prev = -1.0;
  for (double d = s.front() - 0.5; d < s.back() + 0.5; d += 0.01) {
    const double p = percentile_of(ref, d);
    CHECK(p >= prev);
    prev = p;
  }
}

TEST_CASE("density falls off away from the data along an axis") {
  const auto ref = fit_reference("x", gaussian_fields(200, 20, 2.0, 1.0, 0.1, 7));
  double prev = kde_log_density(ref, std::vector<double>{0.0, 0.0});
  for (double r = 3.0; r <= 30.0; r += 3.0) {
    const double d = kde_log_density(ref, std::vector<double>{r, 0.0});
    CHECK(d < prev);
    prev = d;
  }
}

TEST_CASE("density grid covers the training cloud") {
  const auto ref = fit_reference("x", gaussian_fields(120, 20, 2.0, 1.0, 0.1, 8));
  const auto g = density_grid(ref, 25);
  CHECK(g.x.size() == 25u);
  CHECK(g.log_density.size() == 625u);
  CHECK(g.x.front() < ref.projections.col(0).minCoeff());
  CHECK(g.y.back() > ref.projections.col(1).maxCoeff());
  CHECK(testing::error_code_of([&] { density_grid(ref, 1); }) == ErrorCode::invalid_argument);
}

TEST_CASE("degenerate training data is refused") {
  Eigen::MatrixXd constant = Eigen::MatrixXd::Constant(50, 10, 2.0);
  CHECK(testing::error_code_of([&] { fit_reference("x", constant); }) == ErrorCode::degenerate_reference);
  Eigen::MatrixXd rank1(50, 10);
  for (int i = 0; i < 50; ++i)
    for (int v = 0; v < 10; ++v) rank1(i, v) = i * (v + 1.0);
  CHECK(testing::error_code_of([&] { fit_reference("x", rank1, 2); }) == ErrorCode::degenerate_reference);
  CHECK(testing::error_code_of([&] { fit_reference("x", constant.topRows(2), 2); }) == ErrorCode::invalid_argument);
}

TEST_CASE("reference files round trip and detect corruption") {
  testing::TempDir tmp;
  const auto ref = fit_reference("lw_cre_toa", gaussian_fields(90, 25, 2.0, 1.0, 0.1, 9), 2, 0.05);
  save_reference(ref, tmp / "r.shft");
  const auto back = load_reference(tmp / "r.shft");
  CHECK(back.channel_id == "lw_cre_toa");
  CHECK(back.k == 2);
  CHECK(back.threshold == 0.05);
  CHECK(back.mean == ref.mean);
  CHECK(back.axes == ref.axes);
  CHECK(back.projections == ref.projections);
  CHECK(back.bandwidth == ref.bandwidth);
  CHECK(back.sorted_log_density == ref.sorted_log_density);
  CHECK(back.explained_variance == ref.explained_variance);

  fs::copy_file(tmp / "r.shft", tmp / "t.shft");
  fs::resize_file(tmp / "t.shft", fs::file_size(tmp / "t.shft") - 3);
  CHECK(testing::error_code_of([&] { load_reference(tmp / "t.shft"); }) == ErrorCode::corrupt_file);
  std::ofstream(tmp / "bad.shft") << "NOPE and more bytes";
  CHECK(testing::error_code_of([&] { load_reference(tmp / "bad.shft"); }) == ErrorCode::format_error);
}

TEST_CASE("fit_references covers every input channel") {
  const auto ds = testing::anomaly_dataset(SyntheticSpec::realistic(3, 1, 120));
  const auto refs = fit_references(ds);
  REQUIRE(refs.size() == kNumInputs);
  for (std::size_t c = 0; c < kNumInputs; ++c) {
    CHECK(refs[c].channel_id == kInputChannels[c].id);
    CHECK(refs[c].n_vertices() == ds.n_vertices());
    CHECK(refs[c].n_train() == 120u);
  }
  std::vector<double> short_field(5, 0.0);
  CHECK(testing::error_code_of([&] { score(refs[0], short_field); }) == ErrorCode::invalid_argument);
}

}  // TEST_SUITE
