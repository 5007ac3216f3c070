#include "climemu/distribution_shift.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "climemu/error.hpp"

namespace climemu {

namespace {

constexpr char kShiftMagic[4] = {'S', 'H', 'F', 'T'};
constexpr std::uint32_t kShiftVersion = 1;

double log_sum_exp(const std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_doubles(std::ostream& os, const double* p, std::size_t n) {
  os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}

struct Reader {
  const std::vector<char>& buf;
  std::size_t pos = 0;
  template <typename T>
  T get() {
    if (pos + sizeof(T) > buf.size()) fail(ErrorCode::corrupt_file, "shift reference is truncated");
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  void doubles(double* dst, std::size_t n) {
    if (pos + n * sizeof(double) > buf.size())
      fail(ErrorCode::corrupt_file, "shift reference is truncated");
    std::memcpy(dst, buf.data() + pos, n * sizeof(double));
    pos += n * sizeof(double);
  }
};

}  // namespace

ShiftReference fit_reference(const std::string& channel_id, const Eigen::MatrixXd& fields, int k,
                             double threshold) {
  const Eigen::Index n = fields.rows();
  const Eigen::Index nv = fields.cols();
  if (k < 1) fail(ErrorCode::invalid_argument, "k must be >= 1");
  if (n <= k)
    fail(ErrorCode::invalid_argument, "need more training samples (" + std::to_string(n) +
                                          ") than components (" + std::to_string(k) + ")");
  if (nv < k) fail(ErrorCode::invalid_argument, "fields have fewer vertices than components");
  if (!fields.allFinite()) fail(ErrorCode::invalid_argument, "training fields must be finite");
  if (!(threshold >= 0.0 && threshold <= 1.0))
    fail(ErrorCode::invalid_argument, "OOD threshold must be in [0, 1]");

  ShiftReference ref;
  ref.channel_id = channel_id;
  ref.k = k;
  ref.threshold = threshold;
  const Eigen::RowVectorXd mu = fields.colwise().mean();
  ref.mean.assign(mu.data(), mu.data() + nv);
  const Eigen::MatrixXd X = fields.rowwise() - mu;

  // Eigen-decomposition of whichever of X X^T (sample space) and X^T X
  // (vertex space) is smaller; both share the non-zero spectrum.
  const bool sample_space = n <= nv;
  const Eigen::MatrixXd gram = sample_space ? Eigen::MatrixXd(X * X.transpose())
                                            : Eigen::MatrixXd(X.transpose() * X);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  if (eig.info() != Eigen::Success)
    fail(ErrorCode::degenerate_reference, "eigen-decomposition failed for " + channel_id);
  const Eigen::VectorXd evals = eig.eigenvalues();  // ascending
  const double total = std::max(0.0, evals.sum());
  if (!(total > 0.0))
    fail(ErrorCode::degenerate_reference, "channel " + channel_id + " has zero variance");

  ref.axes.resize(k, nv);
  const Eigen::Index m = gram.rows();
  for (int i = 0; i < k; ++i) {
    const Eigen::Index col = m - 1 - i;
    const double lambda = evals(col);
    if (!(lambda > total * 1e-12))
      fail(ErrorCode::degenerate_reference,
           "channel " + channel_id + " has fewer than " + std::to_string(k) +
               " directions of non-zero variance");
    Eigen::RowVectorXd axis = sample_space
                                  ? Eigen::RowVectorXd(eig.eigenvectors().col(col).transpose() * X)
                                  : Eigen::RowVectorXd(eig.eigenvectors().col(col).transpose());
    axis /= axis.norm();
    // Sign convention: largest-magnitude component positive.
    Eigen::Index arg;
    axis.cwiseAbs().maxCoeff(&arg);
    if (axis(arg) < 0) axis = -axis;
    ref.axes.row(i) = axis;
    ref.explained_variance.push_back(std::clamp(lambda / total, 0.0, 1.0));
  }
  // Re-orthonormalise to remove round-off between nearly degenerate axes.
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(ref.axes.transpose());
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(nv, k);
  for (int i = 0; i < k; ++i)
    if (q.col(i).dot(ref.axes.row(i).transpose()) < 0) q.col(i) = -q.col(i);
  ref.axes = q.transpose();

  ref.projections = X * ref.axes.transpose();
  for (int d = 0; d < k; ++d) {
    const Eigen::VectorXd c = ref.projections.col(d);
    const double cm = c.mean();
    const double sd = std::sqrt((c.array() - cm).square().sum() / static_cast<double>(n - 1));
    // Scott's rule.
    const double h = sd * std::pow(static_cast<double>(n), -1.0 / (k + 4));
    if (!(h > 0.0))
      fail(ErrorCode::degenerate_reference, "zero spread along axis " + std::to_string(d));
    ref.bandwidth.push_back(h);
  }

  ref.sorted_log_density.resize(static_cast<std::size_t>(n));
  std::vector<double> coords(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int d = 0; d < k; ++d) coords[d] = ref.projections(i, d);
    ref.sorted_log_density[static_cast<std::size_t>(i)] = kde_log_density(ref, coords);
  }
  std::sort(ref.sorted_log_density.begin(), ref.sorted_log_density.end());
  return ref;
}

std::vector<ShiftReference> fit_references(const AnomalyDataset& ds, int k, double threshold) {
  ds.validate();
  const std::size_t nv = ds.n_vertices();
  std::vector<ShiftReference> refs;
  for (std::size_t c = 0; c < kNumInputs; ++c) {
    Eigen::MatrixXd f(ds.n_months, static_cast<Eigen::Index>(nv));
    for (int t = 0; t < ds.n_months; ++t)
      for (std::size_t v = 0; v < nv; ++v) f(t, static_cast<Eigen::Index>(v)) = ds.at(c, t, v);
    refs.push_back(fit_reference(std::string(kInputChannels[c].id), f, k, threshold));
  }
  return refs;
}

std::vector<double> project(const ShiftReference& ref, std::span<const double> field) {
  if (field.size() != ref.n_vertices())
    fail(ErrorCode::invalid_argument, "field has " + std::to_string(field.size()) +
                                          " values, reference expects " +
                                          std::to_string(ref.n_vertices()));
  std::vector<double> c(static_cast<std::size_t>(ref.k), 0.0);
  for (int d = 0; d < ref.k; ++d) {
    double s = 0.0;
    for (std::size_t v = 0; v < field.size(); ++v) s += ref.axes(d, static_cast<Eigen::Index>(v)) * (field[v] - ref.mean[v]);
    c[static_cast<std::size_t>(d)] = s;
  }
  return c;
}

double kde_log_density(const ShiftReference& ref, std::span<const double> coords) {
  const std::size_t n = ref.n_train();
  double log_norm = -std::log(static_cast<double>(n));
  for (int d = 0; d < ref.k; ++d)
    log_norm -= std::log(ref.bandwidth[d]) + 0.5 * std::log(2.0 * std::numbers::pi);
  std::vector<double> terms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double q = 0.0;
    for (int d = 0; d < ref.k; ++d) {
      const double z = (coords[d] - ref.projections(static_cast<Eigen::Index>(i), d)) / ref.bandwidth[d];
      q += z * z;
    }
    terms[i] = -0.5 * q;
  }
  return log_norm + log_sum_exp(terms);
}

double percentile_of(const ShiftReference& ref, double log_density) {
  const auto& s = ref.sorted_log_density;
  const std::size_t n = s.size();
  if (n == 0) fail(ErrorCode::invalid_argument, "reference has no percentile table");
  if (!(log_density > s.front())) return 0.0;
  if (log_density >= s.back()) return 1.0;
  // i-th smallest (0-based) maps to i / (n - 1).
  const auto it = std::upper_bound(s.begin(), s.end(), log_density);
  const std::size_t hi = static_cast<std::size_t>(it - s.begin());
  const std::size_t lo = hi - 1;
  const double span = s[hi] - s[lo];
  const double frac = span > 0.0 ? (log_density - s[lo]) / span : 0.0;
  return (static_cast<double>(lo) + frac) / static_cast<double>(n - 1);
}

ShiftScore score(const ShiftReference& ref, std::span<const double> field) {
  for (double v : field)
    if (!std::isfinite(v)) fail(ErrorCode::invalid_argument, "field contains non-finite values");
  ShiftScore s;
  s.coords = project(ref, field);
  s.log_density = kde_log_density(ref, s.coords);
  s.percentile = percentile_of(ref, s.log_density);
  s.ood = s.percentile < ref.threshold;
  return s;
}

DensityGrid density_grid(const ShiftReference& ref, int n, double pad) {
  if (n < 2) fail(ErrorCode::invalid_argument, "density grid needs n >= 2");
  DensityGrid g;
  const int dims = std::min(ref.k, 2);
  std::array<std::vector<double>*, 2> axes{&g.x, &g.y};
  for (int d = 0; d < 2; ++d) {
    if (d >= dims) {
      g.y.assign(1, 0.0);
      continue;
    }
    const auto col = ref.projections.col(d);
    const double lo = col.minCoeff() - pad * ref.bandwidth[d];
    const double hi = col.maxCoeff() + pad * ref.bandwidth[d];
    for (int i = 0; i < n; ++i) axes[d]->push_back(lo + (hi - lo) * i / (n - 1));
  }
  std::vector<double> c(static_cast<std::size_t>(ref.k), 0.0);
  for (double y : g.y)
    for (double x : g.x) {
      c[0] = x;
      if (ref.k > 1) c[1] = y;
      g.log_density.push_back(kde_log_density(ref, c));
    }
  return g;
}

void save_reference(const ShiftReference& ref, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorCode::io_error, "cannot write " + path.string());
  os.write(kShiftMagic, 4);
  put(os, kShiftVersion);
  put(os, static_cast<std::uint32_t>(ref.channel_id.size()));
  os.write(ref.channel_id.data(), static_cast<std::streamsize>(ref.channel_id.size()));
  put(os, static_cast<std::uint32_t>(ref.k));
  put(os, static_cast<std::uint32_t>(ref.n_train()));
  put(os, static_cast<std::uint32_t>(ref.n_vertices()));
  put(os, ref.threshold);
  put_doubles(os, ref.mean.data(), ref.mean.size());
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> axes = ref.axes;
  put_doubles(os, axes.data(), static_cast<std::size_t>(axes.size()));
  put_doubles(os, ref.explained_variance.data(), ref.explained_variance.size());
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> proj = ref.projections;
  put_doubles(os, proj.data(), static_cast<std::size_t>(proj.size()));
  put_doubles(os, ref.bandwidth.data(), ref.bandwidth.size());
  put_doubles(os, ref.sorted_log_density.data(), ref.sorted_log_density.size());
  if (!os) fail(ErrorCode::io_error, "failed writing " + path.string());
}

ShiftReference load_reference(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::not_found, "cannot open shift reference " + path.string());
  const std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() < 8 || std::memcmp(buf.data(), kShiftMagic, 4) != 0)
    fail(ErrorCode::format_error, "not a shift reference (bad magic): " + path.string());
  Reader r{buf, 4};
  const auto version = r.get<std::uint32_t>();
  if (version != kShiftVersion)
    fail(ErrorCode::format_error, "unsupported shift reference version " + std::to_string(version));
  const auto id_len = r.get<std::uint32_t>();
  if (id_len > 256 || r.pos + id_len > buf.size())
    fail(ErrorCode::corrupt_file, "shift reference header is corrupt");
  ShiftReference ref;
  ref.channel_id.assign(buf.data() + r.pos, id_len);
  r.pos += id_len;
  ref.k = static_cast<int>(r.get<std::uint32_t>());
  const auto n = r.get<std::uint32_t>();
  const auto nv = r.get<std::uint32_t>();
  ref.threshold = r.get<double>();
  if (ref.k < 1 || n <= static_cast<std::uint32_t>(ref.k) || nv < static_cast<std::uint32_t>(ref.k))
    fail(ErrorCode::corrupt_file, "shift reference header is inconsistent");
  const std::size_t k = static_cast<std::size_t>(ref.k);
  const std::size_t expected = r.pos + sizeof(double) * (nv + k * nv + k + n * k + k + n);
  if (buf.size() != expected)
    fail(ErrorCode::corrupt_file, "shift reference length " + std::to_string(buf.size()) +
                                      " does not match header (expected " + std::to_string(expected) + ")");
  ref.mean.resize(nv);
  r.doubles(ref.mean.data(), nv);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> axes(ref.k, nv);
  r.doubles(axes.data(), k * nv);
  ref.axes = axes;
  ref.explained_variance.resize(k);
  r.doubles(ref.explained_variance.data(), k);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> proj(n, ref.k);
  r.doubles(proj.data(), n * k);
  ref.projections = proj;
  ref.bandwidth.resize(k);
  r.doubles(ref.bandwidth.data(), k);
  ref.sorted_log_density.resize(n);
  r.doubles(ref.sorted_log_density.data(), n);
  return ref;
}

}  // namespace climemu
