#include "climemu/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

#include "climemu/error.hpp"

namespace climemu {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
constexpr int kSchemaVersion = 1;

static_assert(sizeof(float) == 4);
static_assert(std::endian::native == std::endian::little,
              "channel files are little-endian; add byte swapping for this host");

void write_f32(const fs::path& path, std::span<const float> values) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::io_error, "cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(values.data()),
           static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!os) fail(ErrorCode::io_error, "short write to " + path.string());
}

std::vector<float> read_f32(const fs::path& path, std::size_t expected) {
  std::error_code ec;
  const auto size = fs::file_size(path, ec);
  if (ec) fail(ErrorCode::corrupt_file, "missing channel file " + path.filename().string());
  if (size != expected * sizeof(float))
    fail(ErrorCode::corrupt_file, path.filename().string() + " holds " + std::to_string(size) +
                                      " bytes, expected " +
                                      std::to_string(expected * sizeof(float)));
  std::vector<float> out(expected);
  std::ifstream is(path, std::ios::binary);
  if (!is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(size)))
    fail(ErrorCode::corrupt_file, "cannot read " + path.string());
  return out;
}

}  // namespace

const FieldChannel& channel_at(std::size_t slot) {
  if (slot < kNumInputs) return kInputChannels[slot];
  return kOutputChannels.at(slot - kNumInputs);
}

std::optional<std::size_t> channel_slot(std::string_view id) {
  if (auto i = input_index(id)) return *i;
  if (auto o = output_index(id)) return *o + kNumInputs;
  return std::nullopt;
}

std::string to_string(Provenance p) { return p == Provenance::raw ? "raw" : "anomaly"; }

std::vector<double> AnomalyDataset::inputs_at(int month) const {
  const std::size_t nv = n_vertices();
  std::vector<double> x(kNumInputs * nv);
  for (std::size_t c = 0; c < kNumInputs; ++c) {
    const float* src = data[c].data() + static_cast<std::size_t>(month) * nv;
    std::copy(src, src + nv, x.begin() + static_cast<std::ptrdiff_t>(c * nv));
  }
  return x;
}

std::vector<double> AnomalyDataset::outputs_at(int month) const {
  const std::size_t nv = n_vertices();
  std::vector<double> y(kNumOutputs * nv);
  for (std::size_t c = 0; c < kNumOutputs; ++c) {
    const float* src = data[kNumInputs + c].data() + static_cast<std::size_t>(month) * nv;
    std::copy(src, src + nv, y.begin() + static_cast<std::ptrdiff_t>(c * nv));
  }
  return y;
}

void AnomalyDataset::validate() const {
  if (grid_level < 0 || grid_level > kMaxGridLevel)
    fail(ErrorCode::shape_error, "dataset grid level out of range");
  if (n_months <= 0) fail(ErrorCode::shape_error, "dataset has no months");
  if (start_month < 1 || start_month > 12) fail(ErrorCode::invalid_argument, "start_month must be 1..12");
  const std::size_t expected = static_cast<std::size_t>(n_months) * n_vertices();
  for (std::size_t s = 0; s < kNumChannels; ++s) {
    if (data[s].size() != expected)
      fail(ErrorCode::shape_error, "channel " + std::string(channel_at(s).id) + " has " +
                                       std::to_string(data[s].size()) + " values, expected " +
                                       std::to_string(expected));
    for (float f : data[s])
      if (!std::isfinite(f))
        fail(ErrorCode::invalid_argument,
             "channel " + std::string(channel_at(s).id) + " contains non-finite values");
  }
  if (pr_climatology && pr_climatology->size() != n_vertices())
    fail(ErrorCode::shape_error, "pr climatology length mismatch");
}

void save_dataset(const AnomalyDataset& ds, const fs::path& dir) {
  ds.validate();
  fs::create_directories(dir);
  json meta;
  meta["schema_version"] = kSchemaVersion;
  meta["grid_level"] = ds.grid_level;
  meta["n_months"] = ds.n_months;
  meta["start_year"] = ds.start_year;
  meta["start_month"] = ds.start_month;
  json channels = json::array();
  for (std::size_t s = 0; s < kNumChannels; ++s) {
    const auto& ch = channel_at(s);
    channels.push_back({{"id", ch.id}, {"role", to_string(ch.role)}, {"units", ch.units},
                        {"long_name", ch.long_name}});
  }
  meta["channels"] = channels;
  meta["provenance"] = to_string(ds.provenance);
  meta["pipeline"] = ds.pipeline;
  if (!ds.synthetic.is_null()) meta["synthetic"] = ds.synthetic;
  if (ds.pr_climatology) meta["climatology"] = json::array({"pr"});

  for (std::size_t s = 0; s < kNumChannels; ++s)
    write_f32(dir / (std::string(channel_at(s).id) + ".f32"), ds.data[s]);
  if (ds.pr_climatology) write_f32(dir / "pr.clim.f32", *ds.pr_climatology);

  std::ofstream os(dir / "meta.json");
  if (!os) fail(ErrorCode::io_error, "cannot write meta.json in " + dir.string());
  os << meta.dump(2) << '\n';
}

AnomalyDataset load_dataset(const fs::path& dir) {
  std::ifstream is(dir / "meta.json");
  if (!is) fail(ErrorCode::io_error, "no meta.json in " + dir.string());
  json meta;
  try {
    is >> meta;
  } catch (const json::exception& e) {
    fail(ErrorCode::format_error, "meta.json: " + std::string(e.what()));
  }

  AnomalyDataset ds;
  try {
    if (meta.at("schema_version").get<int>() != kSchemaVersion)
      fail(ErrorCode::format_error, "meta.json: unsupported schema_version " +
                                        meta.at("schema_version").dump());
    ds.grid_level = meta.at("grid_level").get<int>();
    ds.n_months = meta.at("n_months").get<int>();
    ds.start_year = meta.at("start_year").get<int>();
    ds.start_month = meta.at("start_month").get<int>();
    const auto prov = meta.at("provenance").get<std::string>();
    if (prov != "raw" && prov != "anomaly")
      fail(ErrorCode::format_error, "meta.json: bad provenance '" + prov + "'");
    ds.provenance = prov == "raw" ? Provenance::raw : Provenance::anomaly;
    ds.pipeline = meta.value("pipeline", json::array());
    if (meta.contains("synthetic")) ds.synthetic = meta["synthetic"];

    const auto& channels = meta.at("channels");
    std::vector<std::string> ids;
    for (const auto& c : channels) ids.push_back(c.at("id").get<std::string>());
    for (std::size_t s = 0; s < kNumChannels; ++s) {
      const std::string want(channel_at(s).id);
      if (std::find(ids.begin(), ids.end(), want) == ids.end())
        fail(ErrorCode::format_error, "dataset is missing channel '" + want + "'");
    }
    if (ids.size() != kNumChannels)
      fail(ErrorCode::format_error, "dataset lists " + std::to_string(ids.size()) +
                                        " channels, expected 6 inputs + 3 outputs");
    for (std::size_t s = 0; s < kNumChannels; ++s) {
      if (ids[s] != channel_at(s).id)
        fail(ErrorCode::format_error, "channel order differs from canonical at position " +
                                          std::to_string(s) + " ('" + ids[s] + "')");
      const auto role = channels[s].at("role").get<std::string>();
      if (role != to_string(channel_at(s).role))
        fail(ErrorCode::format_error, "channel '" + ids[s] + "' has role '" + role + "'");
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::format_error, "meta.json: " + std::string(e.what()));
  }
  if (ds.grid_level < 0 || ds.grid_level > kMaxGridLevel || ds.n_months <= 0)
    fail(ErrorCode::format_error, "meta.json: invalid grid_level or n_months");

  const std::size_t expected = static_cast<std::size_t>(ds.n_months) * ds.n_vertices();
  for (std::size_t s = 0; s < kNumChannels; ++s)
    ds.data[s] = read_f32(dir / (std::string(channel_at(s).id) + ".f32"), expected);
  if (meta.contains("climatology")) ds.pr_climatology = read_f32(dir / "pr.clim.f32", ds.n_vertices());
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic data

std::vector<double> smooth_once(const IcosahedralGrid& grid, std::span<const double> field) {
  if (field.size() != grid.size())
    fail(ErrorCode::invalid_argument, "smooth_once: field does not match grid");
  std::vector<double> out(field.size());
  const auto& nb = grid.neighbors();
  for (std::size_t v = 0; v < field.size(); ++v) {
    double s = field[v];
    for (auto u : nb[v]) s += field[u];
    out[v] = s / static_cast<double>(nb[v].size() + 1);
  }
  return out;
}

SyntheticSpec SyntheticSpec::realistic(std::uint64_t seed, int grid_level, int n_months) {
  SyntheticSpec s;
  s.seed = seed;
  s.grid_level = grid_level;
  s.n_months = n_months;
  // sw_cre_toa, lw_cre_toa, sw_cre_surf, lw_cre_surf, net_clearsky_toa, net_clearsky_surf, psl, pr, tas
  const std::array<double, kNumChannels> base{-47.0, 28.0, -53.0, 24.0, 19.0, 120.0, 101325.0, 3.0, 288.0};
  const std::array<double, kNumChannels> seasonal{12.0, 4.0, 14.0, 5.0, 40.0, 60.0, 300.0, 1.0, 6.0};
  const std::array<double, kNumChannels> sigma{6.0, 3.0, 6.0, 3.0, 4.0, 5.0, 80.0, 0.4, 0.6};
  for (std::size_t c = 0; c < kNumChannels; ++c) {
    s.seasonal_amplitude[c] = seasonal[c];
    s.trend[c] = {base[c], 0.02 * std::fabs(base[c]) * 0.1, 0.002 * std::fabs(base[c]) * 0.1,
                  0.01 * std::fabs(base[c]) * 0.1};
    s.rho[c] = 0.5;
    s.sigma[c] = sigma[c];
  }
  return s;
}

int SyntheticSpec::max_lag() const {
  int m = 0;
  for (const auto& g : gains) m = std::max(m, g.lag);
  return m;
}

void SyntheticSpec::validate() const {
  if (grid_level < 0 || grid_level > kMaxGridLevel)
    fail(ErrorCode::invalid_argument, "synthetic grid_level out of range");
  if (start_month < 1 || start_month > 12)
    fail(ErrorCode::invalid_argument, "synthetic start_month must be 1..12");
  if (noise_smoothing_passes < 0)
    fail(ErrorCode::invalid_argument, "noise_smoothing_passes must be >= 0");
  for (std::size_t c = 0; c < kNumChannels; ++c) {
    if (!(rho[c] >= 0.0 && rho[c] < 1.0))
      fail(ErrorCode::invalid_argument, "AR(1) coefficient must lie in [0, 1)");
    if (!(sigma[c] >= 0.0) || !std::isfinite(sigma[c]))
      fail(ErrorCode::invalid_argument, "noise sigma must be finite and >= 0");
  }
  for (const auto& g : gains) {
    if (g.lag < 0) fail(ErrorCode::invalid_argument, "planted lag must be >= 0");
    if (g.output >= kNumOutputs || g.input >= kNumInputs)
      fail(ErrorCode::invalid_argument, "planted gain channel out of range");
    if (!std::isfinite(g.gain)) fail(ErrorCode::invalid_argument, "planted gain must be finite");
  }
  if (n_months < max_lag() + 24)
    fail(ErrorCode::invalid_argument,
         "n_months=" + std::to_string(n_months) + " is shorter than max lag + 24");
}

json SyntheticSpec::to_json() const {
  json j;
  j["seed"] = seed;
  j["n_months"] = n_months;
  j["grid_level"] = grid_level;
  j["start_year"] = start_year;
  j["start_month"] = start_month;
  j["seasonal_amplitude"] = seasonal_amplitude;
  j["trend"] = trend;
  j["rho"] = rho;
  j["sigma"] = sigma;
  j["noise_smoothing_passes"] = noise_smoothing_passes;
  json gs = json::array();
  for (const auto& g : gains)
    gs.push_back({{"lag", g.lag},
                  {"output", kOutputChannels[g.output].id},
                  {"input", kInputChannels[g.input].id},
                  {"gain", g.gain}});
  j["gains"] = gs;
  return j;
}

SyntheticSpec SyntheticSpec::from_json(const json& j) {
  SyntheticSpec s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.n_months = j.at("n_months").get<int>();
  s.grid_level = j.at("grid_level").get<int>();
  s.start_year = j.value("start_year", 1850);
  s.start_month = j.value("start_month", 1);
  s.seasonal_amplitude = j.at("seasonal_amplitude").get<std::array<double, kNumChannels>>();
  s.trend = j.at("trend").get<std::array<std::array<double, 4>, kNumChannels>>();
  s.rho = j.at("rho").get<std::array<double, kNumChannels>>();
  s.sigma = j.at("sigma").get<std::array<double, kNumChannels>>();
  s.noise_smoothing_passes = j.value("noise_smoothing_passes", 3);
  for (const auto& g : j.at("gains")) {
    PlantedGain pg;
    pg.lag = g.at("lag").get<int>();
    const auto out = output_index(g.at("output").get<std::string>());
    const auto in = input_index(g.at("input").get<std::string>());
    if (!out || !in) fail(ErrorCode::invalid_argument, "unknown channel in planted gain");
    pg.output = *out;
    pg.input = *in;
    pg.gain = g.at("gain").get<double>();
    s.gains.push_back(pg);
  }
  return s;
}

SyntheticComponents generate_synthetic_components(const SyntheticSpec& spec) {
  spec.validate();
  const IcosahedralGrid& grid = grid_for_level(spec.grid_level);
  const std::size_t nv = grid.size();
  const int nt = spec.n_months;
  const int history = spec.max_lag();
  const int total = nt + history;

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Noise for months -history .. nt-1, stationary start.
  std::array<std::vector<double>, kNumChannels> full;
  std::vector<double> innov(nv);
  for (std::size_t c = 0; c < kNumChannels; ++c) {
    full[c].assign(static_cast<std::size_t>(total) * nv, 0.0);
    const double rho = spec.rho[c];
    for (int t = 0; t < total; ++t) {
      for (auto& e : innov) e = spec.sigma[c] * normal(rng);
      std::vector<double> sm = innov;
      for (int p = 0; p < spec.noise_smoothing_passes; ++p) sm = smooth_once(grid, sm);
      double* row = full[c].data() + static_cast<std::size_t>(t) * nv;
      if (t == 0) {
        const double scale = 1.0 / std::sqrt(1.0 - rho * rho);
        for (std::size_t v = 0; v < nv; ++v) row[v] = scale * sm[v];
      } else {
        const double* prev = row - nv;
        for (std::size_t v = 0; v < nv; ++v) row[v] = rho * prev[v] + sm[v];
      }
    }
  }

  // Planted lagged response, added on top of the output noise.
  std::array<std::vector<double>, kNumOutputs> response;
  for (auto& r : response) r.assign(static_cast<std::size_t>(nt) * nv, 0.0);
  for (const auto& g : spec.gains) {
    if (g.gain == 0.0) continue;
    for (int t = 0; t < nt; ++t) {
      const int src = t - g.lag + history;
      std::span<const double> in(full[g.input].data() + static_cast<std::size_t>(src) * nv, nv);
      const auto sm = smooth_once(grid, in);
      double* dst = response[g.output].data() + static_cast<std::size_t>(t) * nv;
      for (std::size_t v = 0; v < nv; ++v) dst[v] += g.gain * sm[v];
    }
  }

  SyntheticComponents out;
  AnomalyDataset& ds = out.dataset;
  ds.grid_level = spec.grid_level;
  ds.n_months = nt;
  ds.start_year = spec.start_year;
  ds.start_month = spec.start_month;
  ds.provenance = Provenance::raw;
  ds.synthetic = spec.to_json();

  const auto verts = grid.vertices();
  std::vector<double> lat_factor(nv);
  for (std::size_t v = 0; v < nv; ++v)
    lat_factor[v] = 0.3 + std::sin(verts[v].lat * std::numbers::pi / 180.0);

  for (std::size_t c = 0; c < kNumChannels; ++c) {
    ds.data[c].resize(static_cast<std::size_t>(nt) * nv);
    out.noise[c].assign(full[c].begin() + static_cast<std::ptrdiff_t>(history) * static_cast<std::ptrdiff_t>(nv),
                        full[c].end());
    const auto& tr = spec.trend[c];
    for (int t = 0; t < nt; ++t) {
      const int month = (spec.start_month - 1 + t) % 12;
      const double season =
          spec.seasonal_amplitude[c] * std::sin(2.0 * std::numbers::pi * (month + 0.5) / 12.0);
      const double s = nt > 1 ? 2.0 * t / (nt - 1) - 1.0 : 0.0;
      const double trend = tr[0] + s * (tr[1] + s * (tr[2] + s * tr[3]));
      for (std::size_t v = 0; v < nv; ++v) {
        const std::size_t i = static_cast<std::size_t>(t) * nv + v;
        double value = trend + season * lat_factor[v] + out.noise[c][i];
        if (c >= kNumInputs) value += response[c - kNumInputs][i];
        ds.data[c][i] = static_cast<float>(value);
      }
    }
  }
  return out;
}

AnomalyDataset generate_synthetic(const SyntheticSpec& spec) {
  return generate_synthetic_components(spec).dataset;
}

}  // namespace climemu
