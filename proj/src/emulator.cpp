#include "climemu/emulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "climemu/error.hpp"
#include "climemu/geodesic_grid.hpp"

namespace climemu {

namespace {

constexpr char kModelMagic[4] = {'M', 'L', 'P', 'M'};
constexpr std::uint32_t kModelVersion = 1;

using MatrixF = MlpModel::Matrix;

void check_lambda(double v, const char* name) {
  if (!(v >= 0.0) || !std::isfinite(v))
    fail(ErrorCode::invalid_argument, std::string(name) + " must be finite and >= 0",
         std::string("train.") + name);
}

// Channel-major block [c * nv, (c+1) * nv) of a flattened field.
std::span<const double> block(std::span<const double> x, std::size_t c, std::size_t nv) {
  return x.subspan(c * nv, nv);
}

double weighted_sum(std::span<const double> w, std::span<const double> x) {
  double s = 0.0;
  for (std::size_t v = 0; v < x.size(); ++v) s += w[v] * x[v];
  return s;
}

std::vector<double> pr_clim_of(const AnomalyDataset& ds) {
  if (!ds.pr_climatology) return {};
  return {ds.pr_climatology->begin(), ds.pr_climatology->end()};
}

// Standardised inputs for the given output months as columns.
MatrixF standardized_inputs(const MlpModel& model, const AnomalyDataset& ds, int lag,
                            std::span<const int> months) {
  const std::size_t nv = ds.n_vertices();
  MatrixF x(static_cast<Eigen::Index>(kNumInputs * nv), static_cast<Eigen::Index>(months.size()));
  for (std::size_t j = 0; j < months.size(); ++j) {
    const std::size_t t = static_cast<std::size_t>(months[j] - lag);
    for (std::size_t c = 0; c < kNumInputs; ++c) {
      const float* src = ds.data[c].data() + t * nv;
      const double mean = model.in_mean[c];
      const double inv = 1.0 / model.in_std[c];
      for (std::size_t v = 0; v < nv; ++v)
        x(static_cast<Eigen::Index>(c * nv + v), static_cast<Eigen::Index>(j)) =
            static_cast<float>((src[v] - mean) * inv);
    }
  }
  return x;
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(const std::vector<char>& buf, std::size_t& pos) {
  if (pos + sizeof(T) > buf.size()) fail(ErrorCode::format_error, "model file is truncated");
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) fail(ErrorCode::invalid_argument, "epochs must be >= 1", "train.epochs");
  if (!(initial_lr > 0.0) || !std::isfinite(initial_lr))
    fail(ErrorCode::invalid_argument, "initial_lr must be > 0", "train.initial_lr");
  if (!std::isfinite(lr_decay_per_epoch))
    fail(ErrorCode::invalid_argument, "lr_decay_per_epoch must be finite",
         "train.lr_decay_per_epoch");
  if (batch_size < 1)
    fail(ErrorCode::invalid_argument, "batch_size must be >= 1", "train.batch_size");
  for (int h : hidden_layers)
    if (h < 1) fail(ErrorCode::invalid_argument, "hidden layer widths must be >= 1", "train.hidden_layers");
  check_lambda(lambda_precip, "lambda_precip");
  check_lambda(lambda_moisture, "lambda_moisture");
  check_lambda(lambda_mass, "lambda_mass");
  check_lambda(lambda_energy, "lambda_energy");
  if (!std::isfinite(c_energy))
    fail(ErrorCode::invalid_argument, "c_energy must be finite", "train.c_energy");
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    fail(ErrorCode::invalid_argument, "val_fraction must be in (0, 1)", "train.val_fraction");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"initial_lr", initial_lr},
          {"lr_decay_per_epoch", lr_decay_per_epoch},
          {"batch_size", batch_size},
          {"hidden_layers", hidden_layers},
          {"activation", activation == Activation::gelu ? "gelu" : "identity"},
          {"layer_norm", layer_norm},
          {"lambda_precip", lambda_precip},
          {"lambda_moisture", lambda_moisture},
          {"lambda_mass", lambda_mass},
          {"lambda_energy", lambda_energy},
          {"c_energy", c_energy},
          {"val_fraction", val_fraction},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.initial_lr = j.value("initial_lr", c.initial_lr);
  c.lr_decay_per_epoch = j.value("lr_decay_per_epoch", c.lr_decay_per_epoch);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.hidden_layers = j.value("hidden_layers", c.hidden_layers);
  const std::string act = j.value("activation", std::string("gelu"));
  if (act == "gelu")
    c.activation = Activation::gelu;
  else if (act == "identity")
    c.activation = Activation::identity;
  else
    fail(ErrorCode::invalid_argument, "unknown activation '" + act + "'", "train.activation");
  c.layer_norm = j.value("layer_norm", c.layer_norm);
  c.lambda_precip = j.value("lambda_precip", c.lambda_precip);
  c.lambda_moisture = j.value("lambda_moisture", c.lambda_moisture);
  c.lambda_mass = j.value("lambda_mass", c.lambda_mass);
  c.lambda_energy = j.value("lambda_energy", c.lambda_energy);
  c.c_energy = j.value("c_energy", c.c_energy);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

LossTerms physics_loss(std::span<const double> pred, std::span<const double> target,
                       std::span<const double> input, std::span<const double> pr_clim,
                       std::span<const double> weights, const TrainConfig& cfg,
                       std::span<const double> out_scale, std::vector<double>* grad_pred) {
  const std::size_t nv = weights.size();
  if (nv == 0 || pred.size() != kNumOutputs * nv || target.size() != pred.size() ||
      input.size() != kNumInputs * nv)
    fail(ErrorCode::invalid_argument, "physics_loss: field sizes do not match the weights");
  if (!pr_clim.empty() && pr_clim.size() != nv)
    fail(ErrorCode::invalid_argument, "physics_loss: pr climatology size mismatch");
  if (!out_scale.empty() && out_scale.size() != kNumOutputs)
    fail(ErrorCode::invalid_argument, "physics_loss: out_scale needs one entry per output");

  LossTerms L;
  if (grad_pred) grad_pred->assign(pred.size(), 0.0);
  const double n = static_cast<double>(pred.size());

  for (std::size_t c = 0; c < kNumOutputs; ++c) {
    const double s = out_scale.empty() ? 1.0 : out_scale[c];
    const double inv2 = 1.0 / (s * s);
    for (std::size_t v = 0; v < nv; ++v) {
      const std::size_t i = c * nv + v;
      const double r = pred[i] - target[i];
      L.mse += r * r * inv2;
      if (grad_pred) (*grad_pred)[i] += 2.0 * r * inv2 / n;
    }
  }
  L.mse /= n;

  const auto psl = block(pred, kPsl, nv);
  const auto pr = block(pred, kPr, nv);
  const auto tas = block(pred, kTas, nv);

  for (std::size_t v = 0; v < nv; ++v) {
    const double total_pr = (pr_clim.empty() ? 0.0 : pr_clim[v]) + pr[v];
    const double viol = std::max(0.0, -total_pr);
    L.c_precip += viol * viol;
    if (grad_pred && viol > 0.0)
      (*grad_pred)[kPr * nv + v] += cfg.lambda_precip * (-2.0 * viol) / static_cast<double>(nv);
  }
  L.c_precip /= static_cast<double>(nv);

  const double m_psl = weighted_sum(weights, psl);
  const double m_pr = weighted_sum(weights, pr);
  L.c_mass = m_psl * m_psl;
  L.c_moisture = m_pr * m_pr;

  double net_toa = 0.0;
  for (std::size_t v = 0; v < nv; ++v)
    net_toa += weights[v] * (input[kSwCreToa * nv + v] + input[kLwCreToa * nv + v] +
                             input[kNetClearskyToa * nv + v]);
  const double e = weighted_sum(weights, tas) - cfg.c_energy * net_toa;
  L.c_energy = e * e;

  if (grad_pred) {
    for (std::size_t v = 0; v < nv; ++v) {
      (*grad_pred)[kPsl * nv + v] += cfg.lambda_mass * 2.0 * m_psl * weights[v];
      (*grad_pred)[kPr * nv + v] += cfg.lambda_moisture * 2.0 * m_pr * weights[v];
      (*grad_pred)[kTas * nv + v] += cfg.lambda_energy * 2.0 * e * weights[v];
    }
  }
  L.total = L.mse + cfg.lambda_precip * L.c_precip + cfg.lambda_moisture * L.c_moisture +
            cfg.lambda_mass * L.c_mass + cfg.lambda_energy * L.c_energy;
  return L;
}

PairSplit split_pairs(const AnomalyDataset& ds, int lag, double val_fraction) {
  if (lag < 0) fail(ErrorCode::invalid_argument, "lag must be >= 0", "lags");
  const int n_pairs = ds.n_months - lag;
  const int n_val = static_cast<int>(std::floor(val_fraction * n_pairs));
  if (n_pairs - n_val < 1 || n_val < 1)
    fail(ErrorCode::invalid_argument,
         "lag " + std::to_string(lag) + " leaves too few sample pairs in " +
             std::to_string(ds.n_months) + " months",
         "lags");
  PairSplit s;
  s.lag = lag;
  for (int t = lag; t < ds.n_months - n_val; ++t) s.train_months.push_back(t);
  for (int t = ds.n_months - n_val; t < ds.n_months; ++t) s.val_months.push_back(t);
  return s;
}

LossTerms evaluate_loss(const MlpModel& model, const AnomalyDataset& ds,
                        std::span<const int> months, const TrainConfig& cfg) {
  check_model_grid(model, ds.grid_level);
  const auto& grid = grid_for_level(ds.grid_level);
  const std::vector<double> clim = pr_clim_of(ds);
  const int lag = model.lag_months;
  LossTerms acc;
  if (months.empty()) return acc;
  constexpr std::size_t kChunk = 256;
  for (std::size_t j0 = 0; j0 < months.size(); j0 += kChunk) {
    const auto chunk = months.subspan(j0, std::min(kChunk, months.size() - j0));
    const MatrixF x = standardized_inputs(model, ds, lag, chunk);
    const MatrixF y = destandardize_outputs(model, forward_standardized(model, x));
    std::vector<double> pred(static_cast<std::size_t>(y.rows()));
    for (std::size_t j = 0; j < chunk.size(); ++j) {
      for (std::size_t i = 0; i < pred.size(); ++i)
        pred[i] = y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      const auto target = ds.outputs_at(chunk[j]);
      const auto input = ds.inputs_at(chunk[j] - lag);
      const auto l = physics_loss(pred, target, input, clim, grid.area_weights(), cfg, model.out_std);
      acc.total += l.total;
      acc.mse += l.mse;
      acc.c_precip += l.c_precip;
      acc.c_moisture += l.c_moisture;
      acc.c_mass += l.c_mass;
      acc.c_energy += l.c_energy;
    }
  }
  const double n = static_cast<double>(months.size());
  acc.total /= n;
  acc.mse /= n;
  acc.c_precip /= n;
  acc.c_moisture /= n;
  acc.c_mass /= n;
  acc.c_energy /= n;
  return acc;
}

MlpModel train_model(const AnomalyDataset& ds, int lag, const TrainConfig& cfg) {
  cfg.validate();
  ds.validate();
  const PairSplit split = split_pairs(ds, lag, cfg.val_fraction);
  const std::size_t nv = ds.n_vertices();
  const auto& grid = grid_for_level(ds.grid_level);
  const auto weights = grid.area_weights();
  const std::vector<double> clim = pr_clim_of(ds);

  std::vector<int> sizes;
  sizes.push_back(static_cast<int>(kNumInputs * nv));
  sizes.insert(sizes.end(), cfg.hidden_layers.begin(), cfg.hidden_layers.end());
  sizes.push_back(static_cast<int>(kNumOutputs * nv));
  MlpModel model = make_mlp<float>(sizes, kNumInputs, kNumOutputs, cfg.seed ^ (0x9E3779B97F4A7C15ULL * (lag + 1)),
                                   cfg.activation, cfg.layer_norm);
  model.lag_months = lag;
  model.grid_level = ds.grid_level;

  // Standardisation from the training portion only.
  auto channel_stats = [&](std::size_t slot, int offset, double& mean, double& sd) {
    double s = 0.0, s2 = 0.0;
    for (int t : split.train_months) {
      const float* row = ds.data[slot].data() + static_cast<std::size_t>(t - offset) * nv;
      for (std::size_t v = 0; v < nv; ++v) {
        s += row[v];
        s2 += static_cast<double>(row[v]) * row[v];
      }
    }
    const double n = static_cast<double>(split.train_months.size() * nv);
    mean = s / n;
    const double var = std::max(0.0, s2 / n - mean * mean);
    sd = var > 0.0 ? std::sqrt(var) : 1.0;
  };
  for (std::size_t c = 0; c < kNumInputs; ++c)
    channel_stats(c, lag, model.in_mean[c], model.in_std[c]);
  for (std::size_t c = 0; c < kNumOutputs; ++c)
    channel_stats(kNumInputs + c, 0, model.out_mean[c], model.out_std[c]);

  const MatrixF x_all = standardized_inputs(model, ds, lag, split.train_months);
  const std::size_t n_train = split.train_months.size();

  std::vector<std::vector<float>> m1, m2;
  {
    auto g0 = MlpGradients<float>::zeros_like(model, 0);
    for_each_block(model, g0, [&](float*, float*, Eigen::Index n) {
      m1.emplace_back(static_cast<std::size_t>(n), 0.0f);
      m2.emplace_back(static_cast<std::size_t>(n), 0.0f);
    });
  }
  constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  long step = 0;

  std::mt19937_64 rng(cfg.seed + 0x5851F42D4C957F2DULL * static_cast<std::uint64_t>(lag + 1));
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);

  std::vector<double> pred(kNumOutputs * nv), target, input, grad;
  ForwardCache<float> cache;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.initial_lr * std::exp(-cfg.lr_decay_per_epoch * epoch);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b0 = 0; b0 < n_train; b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t bs = std::min<std::size_t>(cfg.batch_size, n_train - b0);
      MatrixF xb(x_all.rows(), static_cast<Eigen::Index>(bs));
      for (std::size_t j = 0; j < bs; ++j) xb.col(static_cast<Eigen::Index>(j)) = x_all.col(static_cast<Eigen::Index>(order[b0 + j]));
      const MatrixF net = forward_standardized(model, xb, &cache);
      const MatrixF y = destandardize_outputs(model, net);
      MatrixF grad_net(net.rows(), net.cols());
      for (std::size_t j = 0; j < bs; ++j) {
        const int t = split.train_months[order[b0 + j]];
        for (std::size_t i = 0; i < pred.size(); ++i)
          pred[i] = y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        target = ds.outputs_at(t);
        input = ds.inputs_at(t - lag);
        const auto l = physics_loss(pred, target, input, clim, weights, cfg, model.out_std, &grad);
        if (!std::isfinite(l.total))
          fail(ErrorCode::diverged, "training loss became non-finite at epoch " +
                                        std::to_string(epoch) + " for lag " + std::to_string(lag));
        for (std::size_t c = 0; c < kNumOutputs; ++c)
          for (std::size_t v = 0; v < nv; ++v) {
            const std::size_t i = c * nv + v;
            grad_net(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                static_cast<float>(grad[i] * model.out_std[c] / static_cast<double>(bs));
          }
      }
      auto g = backward_standardized(model, cache, grad_net);
      ++step;
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      std::size_t k = 0;
      for_each_block(model, g, [&](float* p, float* d, Eigen::Index n) {
        auto& a = m1[k];
        auto& s = m2[k];
        for (Eigen::Index i = 0; i < n; ++i) {
          const double gi = d[i];
          a[i] = static_cast<float>(beta1 * a[i] + (1.0 - beta1) * gi);
          s[i] = static_cast<float>(beta2 * s[i] + (1.0 - beta2) * gi * gi);
          const double mhat = a[i] / c1;
          const double vhat = s[i] / c2;
          p[i] = static_cast<float>(p[i] - lr * mhat / (std::sqrt(vhat) + adam_eps));
        }
        ++k;
      });
    }
    if (!model.weights.back().allFinite())
      fail(ErrorCode::diverged, "parameters became non-finite at epoch " + std::to_string(epoch) +
                                    " for lag " + std::to_string(lag));
  }

  const auto tr = evaluate_loss(model, ds, split.train_months, cfg);
  const auto va = evaluate_loss(model, ds, split.val_months, cfg);
  if (!std::isfinite(tr.total) || !std::isfinite(va.total))
    fail(ErrorCode::diverged, "final loss is non-finite for lag " + std::to_string(lag));
  model.summary.epochs_run = cfg.epochs;
  model.summary.train_total = tr.total;
  model.summary.train_mse = tr.mse;
  model.summary.c_precip = tr.c_precip;
  model.summary.c_moisture = tr.c_moisture;
  model.summary.c_mass = tr.c_mass;
  model.summary.c_energy = tr.c_energy;
  model.summary.val_mse = va.mse;
  model.validate();
  return model;
}

void check_model_grid(const MlpModel& model, int dataset_level) {
  if (model.grid_level != dataset_level)
    fail(ErrorCode::shape_error, "model grid level " + std::to_string(model.grid_level) +
                                     " does not match dataset grid level " +
                                     std::to_string(dataset_level));
  const std::size_t nv = vertex_count(dataset_level);
  if (model.input_size() != kNumInputs * nv || model.output_size() != kNumOutputs * nv)
    fail(ErrorCode::shape_error, "model layer sizes do not match grid level " +
                                     std::to_string(dataset_level));
}

void save_model(const MlpModel& model, const std::filesystem::path& path) {
  model.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorCode::io_error, "cannot write model file " + path.string());
  os.write(kModelMagic, 4);
  write_pod(os, kModelVersion);
  write_pod(os, static_cast<std::int32_t>(model.lag_months));
  write_pod(os, static_cast<std::int32_t>(model.grid_level));
  write_pod(os, static_cast<std::uint32_t>(model.n_layers()));
  for (int s : model.layer_sizes) write_pod(os, static_cast<std::uint32_t>(s));
  write_pod(os, static_cast<std::uint8_t>(model.activation));
  write_pod(os, static_cast<std::uint8_t>(model.layer_norm ? 1 : 0));
  write_pod(os, static_cast<std::uint32_t>(model.in_mean.size()));
  write_pod(os, static_cast<std::uint32_t>(model.out_mean.size()));
  // Weights row-major, then biases, per layer; then layer-norm gain/offset.
  for (std::size_t l = 0; l < model.n_layers(); ++l) {
    const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w = model.weights[l];
    os.write(reinterpret_cast<const char*>(w.data()), static_cast<std::streamsize>(w.size() * sizeof(float)));
    os.write(reinterpret_cast<const char*>(model.biases[l].data()),
             static_cast<std::streamsize>(model.biases[l].size() * sizeof(float)));
  }
  for (std::size_t l = 0; l < model.ln_gain.size(); ++l) {
    os.write(reinterpret_cast<const char*>(model.ln_gain[l].data()),
             static_cast<std::streamsize>(model.ln_gain[l].size() * sizeof(float)));
    os.write(reinterpret_cast<const char*>(model.ln_offset[l].data()),
             static_cast<std::streamsize>(model.ln_offset[l].size() * sizeof(float)));
  }
  for (const auto* v : {&model.in_mean, &model.in_std, &model.out_mean, &model.out_std})
    os.write(reinterpret_cast<const char*>(v->data()), static_cast<std::streamsize>(v->size() * sizeof(double)));
  if (!os) fail(ErrorCode::io_error, "failed writing model file " + path.string());
}

MlpModel load_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::not_found, "cannot open model file " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() < 4 || std::memcmp(buf.data(), kModelMagic, 4) != 0)
    fail(ErrorCode::format_error, "not a model file (bad magic): " + path.string());
  std::size_t pos = 4;
  const auto version = read_pod<std::uint32_t>(buf, pos);
  if (version != kModelVersion)
    fail(ErrorCode::format_error, "unsupported model version " + std::to_string(version) +
                                      " (expected " + std::to_string(kModelVersion) + ")");
  MlpModel m;
  m.lag_months = read_pod<std::int32_t>(buf, pos);
  m.grid_level = read_pod<std::int32_t>(buf, pos);
  const auto n_layers = read_pod<std::uint32_t>(buf, pos);
  if (n_layers < 1 || n_layers > 64) fail(ErrorCode::format_error, "implausible layer count");
  std::size_t expected_floats = 0;
  for (std::uint32_t i = 0; i <= n_layers; ++i) {
    const auto s = read_pod<std::uint32_t>(buf, pos);
    if (s == 0 || s > (1u << 26)) fail(ErrorCode::format_error, "implausible layer size");
    m.layer_sizes.push_back(static_cast<int>(s));
  }
  const auto act = read_pod<std::uint8_t>(buf, pos);
  if (act > 1) fail(ErrorCode::format_error, "unknown activation tag");
  m.activation = static_cast<Activation>(act);
  m.layer_norm = read_pod<std::uint8_t>(buf, pos) != 0;
  const auto n_in = read_pod<std::uint32_t>(buf, pos);
  const auto n_out = read_pod<std::uint32_t>(buf, pos);
  if (n_in == 0 || n_out == 0 || n_in > 64 || n_out > 64)
    fail(ErrorCode::format_error, "implausible channel count");

  for (std::uint32_t l = 0; l < n_layers; ++l) {
    expected_floats += static_cast<std::size_t>(m.layer_sizes[l + 1]) * (m.layer_sizes[l] + 1);
    if (m.layer_norm && l + 1 < n_layers) expected_floats += 2 * static_cast<std::size_t>(m.layer_sizes[l + 1]);
  }
  const std::size_t expected =
      pos + expected_floats * sizeof(float) + 2 * (n_in + n_out) * sizeof(double);
  if (buf.size() != expected)
    fail(ErrorCode::format_error, "model file length " + std::to_string(buf.size()) +
                                      " does not match header (expected " +
                                      std::to_string(expected) + ")");

  auto read_floats = [&](float* dst, std::size_t n) {
    std::memcpy(dst, buf.data() + pos, n * sizeof(float));
    pos += n * sizeof(float);
  };
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w(m.layer_sizes[l + 1], m.layer_sizes[l]);
    read_floats(w.data(), static_cast<std::size_t>(w.size()));
    m.weights.emplace_back(w);
    MlpModel::Vector b(m.layer_sizes[l + 1]);
    read_floats(b.data(), static_cast<std::size_t>(b.size()));
    m.biases.push_back(std::move(b));
  }
  if (m.layer_norm) {
    for (std::uint32_t l = 0; l + 1 < n_layers; ++l) {
      MlpModel::Vector g(m.layer_sizes[l + 1]), o(m.layer_sizes[l + 1]);
      read_floats(g.data(), static_cast<std::size_t>(g.size()));
      read_floats(o.data(), static_cast<std::size_t>(o.size()));
      m.ln_gain.push_back(std::move(g));
      m.ln_offset.push_back(std::move(o));
    }
  }
  auto read_doubles = [&](std::vector<double>& dst, std::size_t n) {
    dst.resize(n);
    std::memcpy(dst.data(), buf.data() + pos, n * sizeof(double));
    pos += n * sizeof(double);
  };
  read_doubles(m.in_mean, n_in);
  read_doubles(m.in_std, n_in);
  read_doubles(m.out_mean, n_out);
  read_doubles(m.out_std, n_out);
  try {
    m.validate();
  } catch (const Error& e) {
    fail(ErrorCode::format_error, std::string("model file is inconsistent: ") + e.what());
  }
  return m;
}

std::vector<int> LagSuite::lags() const {
  std::vector<int> out;
  for (const auto& [lag, _] : models) out.push_back(lag);
  return out;
}

const MlpModel& LagSuite::at(int lag) const {
  const auto it = models.find(lag);
  if (it == models.end())
    fail(ErrorCode::not_found, "lag " + std::to_string(lag) + " is not in the suite", "lag_set");
  return it->second;
}

void LagSuite::validate() const {
  if (models.empty()) fail(ErrorCode::invalid_argument, "lag suite is empty");
  const MlpModel* first = nullptr;
  for (const auto& [lag, m] : models) {
    if (lag < 0) fail(ErrorCode::invalid_argument, "suite lags must be >= 0");
    if (m.lag_months != lag)
      fail(ErrorCode::invalid_argument, "suite entry " + std::to_string(lag) +
                                            " holds a model for lag " + std::to_string(m.lag_months));
    check_model_grid(m, grid_level);
    m.validate();
    if (first && (first->input_size() != m.input_size() || first->output_size() != m.output_size()))
      fail(ErrorCode::shape_error, "suite models are not shape-compatible");
    first = &m;
  }
}

LagSuite train_lag_suite(const AnomalyDataset& ds, const std::vector<int>& lags,
                         const TrainConfig& cfg) {
  if (lags.empty()) fail(ErrorCode::invalid_argument, "at least one lag is required", "lags");
  std::vector<int> sorted = lags;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    fail(ErrorCode::invalid_argument, "duplicate lags", "lags");
  for (int lag : sorted) split_pairs(ds, lag, cfg.val_fraction);
  LagSuite suite;
  suite.grid_level = ds.grid_level;
  suite.train_config = cfg.to_json();
  for (int lag : sorted) suite.models.emplace(lag, train_model(ds, lag, cfg));
  return suite;
}

void save_suite(const LagSuite& suite, const std::filesystem::path& dir) {
  suite.validate();
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["schema_version"] = 1;
  j["grid_level"] = suite.grid_level;
  j["train_config"] = suite.train_config;
  j["models"] = nlohmann::json::array();
  for (const auto& [lag, m] : suite.models) {
    const std::string file = "lag_" + std::to_string(lag) + ".mlpm";
    save_model(m, dir / file);
    j["models"].push_back({{"lag", lag},
                           {"file", file},
                           {"val_mse", m.summary.val_mse},
                           {"train_mse", m.summary.train_mse},
                           {"train_total", m.summary.train_total},
                           {"c_precip", m.summary.c_precip},
                           {"c_moisture", m.summary.c_moisture},
                           {"c_mass", m.summary.c_mass},
                           {"c_energy", m.summary.c_energy},
                           {"epochs", m.summary.epochs_run}});
  }
  std::ofstream os(dir / "suite.json", std::ios::trunc);
  if (!os) fail(ErrorCode::io_error, "cannot write " + (dir / "suite.json").string());
  os << j.dump(2) << '\n';
}

LagSuite load_suite(const std::filesystem::path& dir) {
  const auto manifest = dir / "suite.json";
  std::ifstream is(manifest);
  if (!is) fail(ErrorCode::not_found, "missing suite manifest " + manifest.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::format_error, "suite.json is not valid JSON: " + std::string(e.what()));
  }
  LagSuite suite;
  try {
    suite.grid_level = j.at("grid_level").get<int>();
    suite.train_config = j.value("train_config", nlohmann::json::object());
    for (const auto& e : j.at("models")) {
      const int lag = e.at("lag").get<int>();
      MlpModel m = load_model(dir / e.at("file").get<std::string>());
      m.summary.val_mse = e.value("val_mse", 0.0);
      m.summary.train_mse = e.value("train_mse", 0.0);
      m.summary.train_total = e.value("train_total", 0.0);
      m.summary.c_precip = e.value("c_precip", 0.0);
      m.summary.c_moisture = e.value("c_moisture", 0.0);
      m.summary.c_mass = e.value("c_mass", 0.0);
      m.summary.c_energy = e.value("c_energy", 0.0);
      m.summary.epochs_run = e.value("epochs", 0);
      if (!suite.models.emplace(lag, std::move(m)).second)
        fail(ErrorCode::format_error, "suite.json lists lag " + std::to_string(lag) + " twice");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::format_error, "suite.json is malformed: " + std::string(e.what()));
  }
  suite.validate();
  return suite;
}

double pattern_correlation(std::span<const double> a, std::span<const double> b,
                           std::span<const double> weights) {
  if (a.size() != b.size() || a.size() != weights.size() || a.empty())
    fail(ErrorCode::invalid_argument, "pattern_correlation: size mismatch");
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  const double ma = weighted_sum(weights, a) / wsum;
  const double mb = weighted_sum(weights, b) / wsum;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += weights[i] * da * db;
    saa += weights[i] * da * da;
    sbb += weights[i] * db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

std::vector<double> unit_response(const MlpModel& model, std::size_t input,
                                  const std::vector<bool>& mask, double amplitude) {
  const std::size_t nv = model.input_size() / kNumInputs;
  if (input >= kNumInputs || mask.size() != nv)
    fail(ErrorCode::invalid_argument, "unit_response: channel or mask does not match the model");
  if (!(amplitude > 0.0)) fail(ErrorCode::invalid_argument, "unit_response: amplitude must be > 0");
  std::vector<double> plus(model.input_size(), 0.0), minus(model.input_size(), 0.0);
  for (std::size_t v = 0; v < nv; ++v)
    if (mask[v]) {
      plus[input * nv + v] = amplitude;
      minus[input * nv + v] = -amplitude;
    }
  const auto yp = mlp_forward(model, std::span<const double>(plus));
  const auto ym = mlp_forward(model, std::span<const double>(minus));
  std::vector<double> r(yp.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = (yp[i] - ym[i]) / (2.0 * amplitude);
  return r;
}

std::vector<double> planted_response(const SyntheticSpec& spec, int lag, std::size_t input,
                                     const std::vector<bool>& mask) {
  const auto& grid = grid_for_level(spec.grid_level);
  const std::size_t nv = grid.size();
  if (mask.size() != nv) fail(ErrorCode::invalid_argument, "planted_response: mask size mismatch");
  std::vector<double> m(nv);
  for (std::size_t v = 0; v < nv; ++v) m[v] = mask[v] ? 1.0 : 0.0;
  const auto sm = smooth_once(grid, m);
  std::vector<double> r(kNumOutputs * nv, 0.0);
  for (const auto& g : spec.gains) {
    if (g.lag != lag || g.input != input) continue;
    for (std::size_t v = 0; v < nv; ++v) r[g.output * nv + v] += g.gain * sm[v];
  }
  return r;
}

nlohmann::json evaluate_suite(const LagSuite& suite, const AnomalyDataset& ds,
                              const TrainConfig& cfg, const std::vector<bool>& probe_mask) {
  suite.validate();
  if (suite.grid_level != ds.grid_level)
    fail(ErrorCode::shape_error, "suite grid level " + std::to_string(suite.grid_level) +
                                     " does not match dataset grid level " +
                                     std::to_string(ds.grid_level));
  const auto& grid = grid_for_level(ds.grid_level);
  const std::size_t nv = grid.size();
  nlohmann::json report;
  report["grid_level"] = ds.grid_level;
  report["per_lag"] = nlohmann::json::array();
  int best_lag = -1;
  double best = 0.0;
  for (const auto& [lag, m] : suite.models) {
    const auto split = split_pairs(ds, lag, cfg.val_fraction);
    const auto va = evaluate_loss(m, ds, split.val_months, cfg);
    report["per_lag"].push_back({{"lag", lag},
                                 {"val_mse", va.mse},
                                 {"val_c_mass", va.c_mass},
                                 {"val_c_precip", va.c_precip},
                                 {"val_c_moisture", va.c_moisture},
                                 {"val_c_energy", va.c_energy}});
    if (best_lag < 0 || va.mse < best) {
      best = va.mse;
      best_lag = lag;
    }
  }
  report["best_lag"] = best_lag;

  report["planted"] = nlohmann::json::array();
  if (!ds.synthetic.is_null()) {
    const auto spec = SyntheticSpec::from_json(ds.synthetic);
    for (const auto& g : spec.gains) {
      if (g.gain == 0.0 || !suite.models.count(g.lag)) continue;
      const auto learned = unit_response(suite.at(g.lag), g.input, probe_mask);
      const auto planted = planted_response(spec, g.lag, g.input, probe_mask);
      const std::span<const double> lo(learned.data() + g.output * nv, nv);
      const std::span<const double> po(planted.data() + g.output * nv, nv);
      report["planted"].push_back({{"lag", g.lag},
                                   {"input", kInputChannels[g.input].id},
                                   {"output", kOutputChannels[g.output].id},
                                   {"gain", g.gain},
                                   {"pattern_correlation", pattern_correlation(lo, po, grid.area_weights())}});
    }
  }
  return report;
}

}  // namespace climemu
