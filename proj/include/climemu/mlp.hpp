#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace climemu {

enum class Activation : std::uint8_t { gelu = 0, identity = 1 };

inline constexpr double kLayerNormEps = 1e-5;

/// tanh approximation of GELU and its derivative.
double gelu(double u);
double gelu_derivative(double u);

struct TrainSummary {
  int epochs_run = 0;
  double train_total = 0.0;
  double train_mse = 0.0;
  double c_precip = 0.0;
  double c_moisture = 0.0;
  double c_mass = 0.0;
  double c_energy = 0.0;
  double val_mse = 0.0;
};

/// Fully connected emulator. Hidden layers are affine -> layer norm -> GELU;
/// the output layer is affine only. Inputs and outputs are standardised per
/// channel, each channel covering a contiguous block of the flattened vector.
template <typename T>
struct BasicMlp {
  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

  int lag_months = 0;
  int grid_level = 0;
  std::vector<int> layer_sizes;  // input, hidden..., output
  Activation activation = Activation::gelu;
  bool layer_norm = true;

  std::vector<Matrix> weights;  // weights[l] is sizes[l+1] x sizes[l]
  std::vector<Vector> biases;
  std::vector<Vector> ln_gain;  // one per hidden layer
  std::vector<Vector> ln_offset;

  std::vector<double> in_mean, in_std;    // per input channel
  std::vector<double> out_mean, out_std;  // per output channel

  TrainSummary summary;

  std::size_t n_layers() const { return weights.size(); }
  std::size_t n_hidden() const { return weights.empty() ? 0 : weights.size() - 1; }
  std::size_t input_size() const { return static_cast<std::size_t>(layer_sizes.front()); }
  std::size_t output_size() const { return static_cast<std::size_t>(layer_sizes.back()); }
  std::size_t n_parameters() const;

  /// Throws on incompatible shapes, non-finite parameters or std <= 0.
  void validate() const;

  template <typename U>
  BasicMlp<U> cast() const;
};

using MlpModel = BasicMlp<float>;

/// Parameters initialised with N(0, 1/fan_in) weights, zero biases, unit
/// layer-norm gains; identity standardisation.
template <typename T>
BasicMlp<T> make_mlp(const std::vector<int>& layer_sizes, std::size_t in_channels,
                     std::size_t out_channels, std::uint64_t seed,
                     Activation activation = Activation::gelu, bool layer_norm = true);

/// Intermediate values kept for the backward pass; columns are samples.
template <typename T>
struct ForwardCache {
  using Matrix = typename BasicMlp<T>::Matrix;
  std::vector<Matrix> layer_input;   // a_l fed into layer l
  std::vector<Matrix> normalized;    // layer-norm output before gain/offset
  std::vector<Matrix> inv_sigma;     // 1 x batch per hidden layer
  std::vector<Matrix> pre_activation;  // u = gain * normalized + offset (or z)
};

template <typename T>
struct MlpGradients {
  using Matrix = typename BasicMlp<T>::Matrix;
  using Vector = typename BasicMlp<T>::Vector;
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  std::vector<Vector> ln_gain;
  std::vector<Vector> ln_offset;
  Matrix input;  // d loss / d input, same shape as the input batch

  static MlpGradients zeros_like(const BasicMlp<T>& m, std::size_t batch);
};

/// Network on standardised data: in_size x batch -> out_size x batch.
template <typename T>
typename BasicMlp<T>::Matrix forward_standardized(const BasicMlp<T>& model,
                                                  const typename BasicMlp<T>::Matrix& x,
                                                  ForwardCache<T>* cache = nullptr);

/// Reverse mode of forward_standardized. `grad_net` is d loss / d network
/// output; the returned input gradient is with respect to the standardised input.
template <typename T>
MlpGradients<T> backward_standardized(const BasicMlp<T>& model, const ForwardCache<T>& cache,
                                      const typename BasicMlp<T>::Matrix& grad_net);

template <typename T>
typename BasicMlp<T>::Matrix standardize_inputs(const BasicMlp<T>& model,
                                                const typename BasicMlp<T>::Matrix& x);
template <typename T>
typename BasicMlp<T>::Matrix destandardize_outputs(const BasicMlp<T>& model,
                                                   const typename BasicMlp<T>::Matrix& y);
template <typename T>
typename BasicMlp<T>::Matrix standardize_outputs(const BasicMlp<T>& model,
                                                 const typename BasicMlp<T>::Matrix& y);

/// Physical units in and out, samples as columns.
template <typename T>
typename BasicMlp<T>::Matrix mlp_forward(const BasicMlp<T>& model,
                                         const typename BasicMlp<T>::Matrix& x);

/// Single sample; throws invalid_argument on shape mismatch or non-finite input.
template <typename T>
std::vector<double> mlp_forward(const BasicMlp<T>& model, std::span<const double> x);

/// Gradients of L = sum(grad_output * forward(x)); physical units on both
/// ends, so `input` is d L / d x.
template <typename T>
MlpGradients<T> mlp_backward(const BasicMlp<T>& model, const typename BasicMlp<T>::Matrix& x,
                             const typename BasicMlp<T>::Matrix& grad_output);

/// Visits every trainable parameter block together with the matching
/// gradient block, in declaration order.
template <typename T, typename F>
void for_each_block(BasicMlp<T>& model, MlpGradients<T>& grads, F&& f) {
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    f(model.weights[l].data(), grads.weights[l].data(), model.weights[l].size());
    f(model.biases[l].data(), grads.biases[l].data(), model.biases[l].size());
  }
  for (std::size_t l = 0; l < model.ln_gain.size(); ++l) {
    f(model.ln_gain[l].data(), grads.ln_gain[l].data(), model.ln_gain[l].size());
    f(model.ln_offset[l].data(), grads.ln_offset[l].data(), model.ln_offset[l].size());
  }
}

}  // namespace climemu
