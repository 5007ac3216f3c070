#include "climemu/mlp.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "climemu/error.hpp"

namespace climemu {

namespace {
constexpr double kGeluK = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluC = 0.044715;

// Per-channel block length; inputs are laid out channel-major.
std::size_t block_length(std::size_t total, std::size_t channels) {
  return channels == 0 ? total : total / channels;
}
}  // namespace

double gelu(double u) {
  return 0.5 * u * (1.0 + std::tanh(kGeluK * (u + kGeluC * u * u * u)));
}

double gelu_derivative(double u) {
  const double t = std::tanh(kGeluK * (u + kGeluC * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluK * (1.0 + 3.0 * kGeluC * u * u);
}

template <typename T>
std::size_t BasicMlp<T>::n_parameters() const {
  std::size_t n = 0;
  for (const auto& w : weights) n += static_cast<std::size_t>(w.size());
  for (const auto& b : biases) n += static_cast<std::size_t>(b.size());
  for (const auto& g : ln_gain) n += static_cast<std::size_t>(g.size());
  for (const auto& o : ln_offset) n += static_cast<std::size_t>(o.size());
  return n;
}

template <typename T>
void BasicMlp<T>::validate() const {
  if (layer_sizes.size() < 2) fail(ErrorCode::shape_error, "model needs at least two layer sizes");
  for (int s : layer_sizes)
    if (s <= 0) fail(ErrorCode::shape_error, "layer sizes must be positive");
  const std::size_t nl = layer_sizes.size() - 1;
  if (weights.size() != nl || biases.size() != nl)
    fail(ErrorCode::shape_error, "model has the wrong number of weight blocks");
  for (std::size_t l = 0; l < nl; ++l) {
    if (weights[l].rows() != layer_sizes[l + 1] || weights[l].cols() != layer_sizes[l] ||
        biases[l].size() != layer_sizes[l + 1])
      fail(ErrorCode::shape_error, "layer " + std::to_string(l) + " dimensions are incompatible");
    if (!weights[l].allFinite() || !biases[l].allFinite())
      fail(ErrorCode::invalid_argument, "layer " + std::to_string(l) + " has non-finite parameters");
  }
  const std::size_t nh = layer_norm ? nl - 1 : 0;
  if (ln_gain.size() != nh || ln_offset.size() != nh)
    fail(ErrorCode::shape_error, "layer-norm parameter count does not match hidden layers");
  for (std::size_t l = 0; l < nh; ++l) {
    if (ln_gain[l].size() != layer_sizes[l + 1] || ln_offset[l].size() != layer_sizes[l + 1])
      fail(ErrorCode::shape_error, "layer-norm " + std::to_string(l) + " has the wrong width");
    if (!ln_gain[l].allFinite() || !ln_offset[l].allFinite())
      fail(ErrorCode::invalid_argument, "layer-norm parameters are non-finite");
  }
  if (in_mean.empty() || in_mean.size() != in_std.size() || out_mean.empty() ||
      out_mean.size() != out_std.size())
    fail(ErrorCode::shape_error, "standardisation vectors are missing or mismatched");
  if (input_size() % in_mean.size() != 0 || output_size() % out_mean.size() != 0)
    fail(ErrorCode::shape_error, "channel count does not divide the layer size");
  for (double s : in_std)
    if (!(s > 0.0) || !std::isfinite(s)) fail(ErrorCode::invalid_argument, "input std must be > 0");
  for (double s : out_std)
    if (!(s > 0.0) || !std::isfinite(s)) fail(ErrorCode::invalid_argument, "output std must be > 0");
}

template <typename T>
template <typename U>
BasicMlp<U> BasicMlp<T>::cast() const {
  BasicMlp<U> m;
  m.lag_months = lag_months;
  m.grid_level = grid_level;
  m.layer_sizes = layer_sizes;
  m.activation = activation;
  m.layer_norm = layer_norm;
  for (const auto& w : weights) m.weights.push_back(w.template cast<U>());
  for (const auto& b : biases) m.biases.push_back(b.template cast<U>());
  for (const auto& g : ln_gain) m.ln_gain.push_back(g.template cast<U>());
  for (const auto& o : ln_offset) m.ln_offset.push_back(o.template cast<U>());
  m.in_mean = in_mean;
  m.in_std = in_std;
  m.out_mean = out_mean;
  m.out_std = out_std;
  m.summary = summary;
  return m;
}

template <typename T>
BasicMlp<T> make_mlp(const std::vector<int>& layer_sizes, std::size_t in_channels,
                     std::size_t out_channels, std::uint64_t seed, Activation activation,
                     bool layer_norm) {
  BasicMlp<T> m;
  m.layer_sizes = layer_sizes;
  m.activation = activation;
  m.layer_norm = layer_norm;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const int fan_in = layer_sizes[l];
    const int fan_out = layer_sizes[l + 1];
    typename BasicMlp<T>::Matrix w(fan_out, fan_in);
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (int j = 0; j < fan_in; ++j)
      for (int i = 0; i < fan_out; ++i) w(i, j) = static_cast<T>(scale * normal(rng));
    m.weights.push_back(std::move(w));
    m.biases.push_back(BasicMlp<T>::Vector::Zero(fan_out));
    if (layer_norm && l + 2 < layer_sizes.size()) {
      m.ln_gain.push_back(BasicMlp<T>::Vector::Ones(fan_out));
      m.ln_offset.push_back(BasicMlp<T>::Vector::Zero(fan_out));
    }
  }
  m.in_mean.assign(in_channels, 0.0);
  m.in_std.assign(in_channels, 1.0);
  m.out_mean.assign(out_channels, 0.0);
  m.out_std.assign(out_channels, 1.0);
  m.validate();
  return m;
}

template <typename T>
typename BasicMlp<T>::Matrix standardize_inputs(const BasicMlp<T>& model,
                                                const typename BasicMlp<T>::Matrix& x) {
  typename BasicMlp<T>::Matrix out(x.rows(), x.cols());
  const std::size_t len = block_length(static_cast<std::size_t>(x.rows()), model.in_mean.size());
  for (std::size_t c = 0; c < model.in_mean.size(); ++c) {
    const auto r0 = static_cast<Eigen::Index>(c * len);
    const auto n = static_cast<Eigen::Index>(len);
    const T mean = static_cast<T>(model.in_mean[c]);
    const T inv = static_cast<T>(1.0 / model.in_std[c]);
    out.middleRows(r0, n) = (x.middleRows(r0, n).array() - mean) * inv;
  }
  return out;
}

template <typename T>
typename BasicMlp<T>::Matrix standardize_outputs(const BasicMlp<T>& model,
                                                 const typename BasicMlp<T>::Matrix& y) {
  typename BasicMlp<T>::Matrix out(y.rows(), y.cols());
  const std::size_t len = block_length(static_cast<std::size_t>(y.rows()), model.out_mean.size());
  for (std::size_t c = 0; c < model.out_mean.size(); ++c) {
    const auto r0 = static_cast<Eigen::Index>(c * len);
    const auto n = static_cast<Eigen::Index>(len);
    const T mean = static_cast<T>(model.out_mean[c]);
    const T inv = static_cast<T>(1.0 / model.out_std[c]);
    out.middleRows(r0, n) = (y.middleRows(r0, n).array() - mean) * inv;
  }
  return out;
}

template <typename T>
typename BasicMlp<T>::Matrix destandardize_outputs(const BasicMlp<T>& model,
                                                   const typename BasicMlp<T>::Matrix& y) {
  typename BasicMlp<T>::Matrix out(y.rows(), y.cols());
  const std::size_t len = block_length(static_cast<std::size_t>(y.rows()), model.out_mean.size());
  for (std::size_t c = 0; c < model.out_mean.size(); ++c) {
    const auto r0 = static_cast<Eigen::Index>(c * len);
    const auto n = static_cast<Eigen::Index>(len);
    const T mean = static_cast<T>(model.out_mean[c]);
    const T sd = static_cast<T>(model.out_std[c]);
    out.middleRows(r0, n) = y.middleRows(r0, n).array() * sd + mean;
  }
  return out;
}

template <typename T>
typename BasicMlp<T>::Matrix forward_standardized(const BasicMlp<T>& model,
                                                  const typename BasicMlp<T>::Matrix& x,
                                                  ForwardCache<T>* cache) {
  using Matrix = typename BasicMlp<T>::Matrix;
  if (x.rows() != static_cast<Eigen::Index>(model.input_size()))
    fail(ErrorCode::invalid_argument, "input has " + std::to_string(x.rows()) +
                                          " rows, model expects " +
                                          std::to_string(model.input_size()));
  if (cache) {
    cache->layer_input.clear();
    cache->normalized.clear();
    cache->inv_sigma.clear();
    cache->pre_activation.clear();
  }
  Matrix a = x;
  const std::size_t nl = model.n_layers();
  for (std::size_t l = 0; l < nl; ++l) {
    if (cache) cache->layer_input.push_back(a);
    Matrix z = model.weights[l] * a;
    z.colwise() += model.biases[l];
    if (l + 1 == nl) return z;

    Matrix u;
    if (model.layer_norm) {
      const auto width = static_cast<T>(z.rows());
      const Matrix mu = z.colwise().sum() / width;
      z.rowwise() -= mu.row(0);
      const Matrix var = z.array().square().colwise().sum() / width;
      Matrix inv = (var.array() + static_cast<T>(kLayerNormEps)).rsqrt();
      z.array().rowwise() *= inv.row(0).array();
      u = (z.array().colwise() * model.ln_gain[l].array()).matrix();
      u.colwise() += model.ln_offset[l];
      if (cache) {
        cache->normalized.push_back(z);
        cache->inv_sigma.push_back(std::move(inv));
      }
    } else {
      u = std::move(z);
    }
    if (cache) cache->pre_activation.push_back(u);
    if (model.activation == Activation::gelu)
      a = u.unaryExpr([](T v) { return static_cast<T>(gelu(static_cast<double>(v))); });
    else
      a = std::move(u);
  }
  return a;
}

template <typename T>
MlpGradients<T> MlpGradients<T>::zeros_like(const BasicMlp<T>& m, std::size_t batch) {
  MlpGradients<T> g;
  for (const auto& w : m.weights) g.weights.push_back(Matrix::Zero(w.rows(), w.cols()));
  for (const auto& b : m.biases) g.biases.push_back(Vector::Zero(b.size()));
  for (const auto& x : m.ln_gain) g.ln_gain.push_back(Vector::Zero(x.size()));
  for (const auto& x : m.ln_offset) g.ln_offset.push_back(Vector::Zero(x.size()));
  g.input = Matrix::Zero(static_cast<Eigen::Index>(m.input_size()),
                         static_cast<Eigen::Index>(batch));
  return g;
}

template <typename T>
MlpGradients<T> backward_standardized(const BasicMlp<T>& model, const ForwardCache<T>& cache,
                                      const typename BasicMlp<T>::Matrix& grad_net) {
  using Matrix = typename BasicMlp<T>::Matrix;
  const std::size_t nl = model.n_layers();
  MlpGradients<T> g = MlpGradients<T>::zeros_like(model, static_cast<std::size_t>(grad_net.cols()));

  Matrix dz = grad_net;
  for (std::size_t li = nl; li-- > 0;) {
    const Matrix& a_in = cache.layer_input[li];
    g.weights[li].noalias() = dz * a_in.transpose();
    g.biases[li] = dz.rowwise().sum();
    Matrix da = model.weights[li].transpose() * dz;
    if (li == 0) {
      g.input = std::move(da);
      break;
    }
    const std::size_t h = li - 1;  // hidden layer producing a_in
    Matrix du = da;
    if (model.activation == Activation::gelu) {
      const Matrix& u = cache.pre_activation[h];
      du.array() *= u.unaryExpr([](T v) {
                        return static_cast<T>(gelu_derivative(static_cast<double>(v)));
                      }).array();
    }
    if (model.layer_norm) {
      const Matrix& nhat = cache.normalized[h];
      g.ln_gain[h] = (du.array() * nhat.array()).rowwise().sum().matrix();
      g.ln_offset[h] = du.rowwise().sum();
      Matrix dn = (du.array().colwise() * model.ln_gain[h].array()).matrix();
      const auto width = static_cast<T>(dn.rows());
      const Matrix mean_dn = dn.colwise().sum() / width;
      const Matrix mean_dn_n = (dn.array() * nhat.array()).colwise().sum().matrix() / width;
      Matrix dzh = dn;
      dzh.rowwise() -= mean_dn.row(0);
      dzh.array() -= nhat.array().rowwise() * mean_dn_n.row(0).array();
      dzh.array().rowwise() *= cache.inv_sigma[h].row(0).array();
      dz = std::move(dzh);
    } else {
      dz = std::move(du);
    }
  }
  return g;
}

template <typename T>
typename BasicMlp<T>::Matrix mlp_forward(const BasicMlp<T>& model,
                                         const typename BasicMlp<T>::Matrix& x) {
  if (!x.allFinite()) fail(ErrorCode::invalid_argument, "mlp_forward: non-finite input");
  return destandardize_outputs(model, forward_standardized(model, standardize_inputs(model, x)));
}

template <typename T>
std::vector<double> mlp_forward(const BasicMlp<T>& model, std::span<const double> x) {
  if (x.size() != model.input_size())
    fail(ErrorCode::invalid_argument, "mlp_forward: input length " + std::to_string(x.size()) +
                                          " does not match model input " +
                                          std::to_string(model.input_size()));
  typename BasicMlp<T>::Matrix col(static_cast<Eigen::Index>(x.size()), 1);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) fail(ErrorCode::invalid_argument, "mlp_forward: non-finite input");
    col(static_cast<Eigen::Index>(i), 0) = static_cast<T>(x[i]);
  }
  const auto y = mlp_forward(model, col);
  std::vector<double> out(static_cast<std::size_t>(y.rows()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(y(static_cast<Eigen::Index>(i), 0));
  return out;
}

template <typename T>
MlpGradients<T> mlp_backward(const BasicMlp<T>& model, const typename BasicMlp<T>::Matrix& x,
                             const typename BasicMlp<T>::Matrix& grad_output) {
  if (!x.allFinite()) fail(ErrorCode::invalid_argument, "mlp_backward: non-finite input");
  if (grad_output.rows() != static_cast<Eigen::Index>(model.output_size()) ||
      grad_output.cols() != x.cols())
    fail(ErrorCode::invalid_argument, "mlp_backward: grad_output shape mismatch");
  ForwardCache<T> cache;
  forward_standardized(model, standardize_inputs(model, x), &cache);

  // y = net * sd + mean, so dL/dnet = dL/dy * sd.
  typename BasicMlp<T>::Matrix grad_net = grad_output;
  const std::size_t out_len = model.output_size() / model.out_mean.size();
  for (std::size_t c = 0; c < model.out_mean.size(); ++c)
    grad_net.middleRows(static_cast<Eigen::Index>(c * out_len), static_cast<Eigen::Index>(out_len)) *=
        static_cast<T>(model.out_std[c]);

  auto g = backward_standardized(model, cache, grad_net);
  const std::size_t in_len = model.input_size() / model.in_mean.size();
  for (std::size_t c = 0; c < model.in_mean.size(); ++c)
    g.input.middleRows(static_cast<Eigen::Index>(c * in_len), static_cast<Eigen::Index>(in_len)) /=
        static_cast<T>(model.in_std[c]);
  return g;
}

#define CLIMEMU_INSTANTIATE(T)                                                                    \
  template struct BasicMlp<T>;                                                                    \
  template struct MlpGradients<T>;                                                                \
  template BasicMlp<T> make_mlp<T>(const std::vector<int>&, std::size_t, std::size_t,             \
                                   std::uint64_t, Activation, bool);                              \
  template BasicMlp<T>::Matrix forward_standardized<T>(const BasicMlp<T>&,                        \
                                                       const BasicMlp<T>::Matrix&,                \
                                                       ForwardCache<T>*);                         \
  template MlpGradients<T> backward_standardized<T>(const BasicMlp<T>&, const ForwardCache<T>&,   \
                                                    const BasicMlp<T>::Matrix&);                  \
  template BasicMlp<T>::Matrix standardize_inputs<T>(const BasicMlp<T>&,                          \
                                                     const BasicMlp<T>::Matrix&);                 \
  template BasicMlp<T>::Matrix standardize_outputs<T>(const BasicMlp<T>&,                         \
                                                      const BasicMlp<T>::Matrix&);                \
  template BasicMlp<T>::Matrix destandardize_outputs<T>(const BasicMlp<T>&,                       \
                                                        const BasicMlp<T>::Matrix&);              \
  template BasicMlp<T>::Matrix mlp_forward<T>(const BasicMlp<T>&, const BasicMlp<T>::Matrix&);    \
  template std::vector<double> mlp_forward<T>(const BasicMlp<T>&, std::span<const double>);       \
  template MlpGradients<T> mlp_backward<T>(const BasicMlp<T>&, const BasicMlp<T>::Matrix&,        \
                                           const BasicMlp<T>::Matrix&);

CLIMEMU_INSTANTIATE(float)
CLIMEMU_INSTANTIATE(double)
#undef CLIMEMU_INSTANTIATE

template BasicMlp<double> BasicMlp<float>::cast<double>() const;
template BasicMlp<float> BasicMlp<double>::cast<float>() const;
template BasicMlp<float> BasicMlp<float>::cast<float>() const;
template BasicMlp<double> BasicMlp<double>::cast<double>() const;

}  // namespace climemu
