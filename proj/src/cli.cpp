#include "climemu/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "climemu/anomaly_pipeline.hpp"
#include "climemu/dataset.hpp"
#include "climemu/distribution_shift.hpp"
#include "climemu/emulator.hpp"
#include "climemu/error.hpp"
#include "climemu/hash.hpp"
#include "climemu/service.hpp"

namespace climemu {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

constexpr int kManifestVersion = 1;

struct MissingInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_dir(const std::string& path, const char* what) {
  if (!fs::is_directory(path)) throw MissingInput(std::string(what) + " directory '" + path + "' does not exist");
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw MissingInput(std::string(what) + " file '" + path + "' does not exist");
}

void require_dataset(const std::string& path) {
  require_dir(path, "dataset");
  require_file((fs::path(path) / "meta.json").string(), "dataset meta");
}

void write_manifest(const fs::path& dir, const std::string& stage, const json& inputs,
                    const json& parameters, const json& seed, const json& metrics = nullptr) {
  json m = {{"schema_version", kManifestVersion},
            {"stage", stage},
            {"tool", "climemu"},
            {"inputs", inputs},
            {"parameters", parameters},
            {"seed", seed},
            {"outputs", hash_directory(dir)}};
  if (!metrics.is_null()) m["metrics"] = metrics;
  std::ofstream os(dir / "manifest.json");
  if (!os) fail(ErrorCode::io_error, "cannot write manifest in " + dir.string());
  os << m.dump(2) << '\n';
}

json input_entry(const std::string& path) {
  if (fs::is_directory(path)) return {{"path", path}, {"files", hash_directory(path)}};
  return {{"path", path}, {"hash", hash_file(path)}};
}

PlantedGain parse_gain(const std::string& text) {
  // lag:output:input:gain
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  if (parts.size() != 4)
    fail(ErrorCode::invalid_argument, "gain must look like lag:output:input:value, got '" + text + "'", "gain");
  PlantedGain g;
  const auto out = output_index(parts[1]);
  const auto in = input_index(parts[2]);
  if (!out) fail(ErrorCode::invalid_argument, "unknown output channel '" + parts[1] + "'", "gain");
  if (!in) fail(ErrorCode::invalid_argument, "unknown input channel '" + parts[2] + "'", "gain");
  try {
    g.lag = std::stoi(parts[0]);
    g.gain = std::stod(parts[3]);
  } catch (const std::exception&) {
    fail(ErrorCode::invalid_argument, "cannot parse gain '" + text + "'", "gain");
  }
  g.output = *out;
  g.input = *in;
  return g;
}

struct SynthArgs {
  std::string out;
  std::uint64_t seed = 0;
  int n_months = 1200;
  int grid_level = 3;
  int start_year = 1850;
  bool no_noise = false;
  std::vector<std::string> gains;
};

struct PreprocessArgs {
  std::string in, out;
  int rolling_window_years = 30;
  int detrend_degree = 3;
};

struct TrainArgs {
  std::string in, out;
  std::vector<int> lags{1, 2, 3, 6, 12};
  TrainConfig cfg;
  std::string activation = "gelu";
};

struct ShiftArgs {
  std::string in, out;
  int k = 2;
  double threshold = kDefaultOodThreshold;
};

struct EvaluateArgs {
  std::string suite, data, out;
  std::vector<double> probe_box{-60.0, 60.0, -180.0, 0.0};
  std::string probe_region;
};

struct ServeArgs {
  std::string data, raw, suite, shift, sites, regions, projections;
  std::string records = "records.jsonl";
  std::string host = "127.0.0.1";
  int port = 8080;
  double timeout_s = 60.0;
};

int cmd_synth(const SynthArgs& a, std::ostream& out, std::ostream& err) {
  SyntheticSpec spec = SyntheticSpec::realistic(a.seed, a.grid_level, a.n_months);
  spec.start_year = a.start_year;
  if (a.no_noise) spec.sigma.fill(0.0);
  for (const auto& g : a.gains) spec.gains.push_back(parse_gain(g));
  spec.validate();
  err << "synth: level " << spec.grid_level << ", " << spec.n_months << " months, seed " << spec.seed << '\n';
  const AnomalyDataset ds = generate_synthetic(spec);
  save_dataset(ds, a.out);
  write_manifest(a.out, "synth", json::object(), spec.to_json(), spec.seed);
  out << json{{"stage", "synth"}, {"status", "ok"}, {"out", a.out}, {"n_vertices", ds.n_vertices()}}.dump() << '\n';
  return kExitOk;
}

int cmd_preprocess(const PreprocessArgs& a, std::ostream& out, std::ostream& err) {
  require_dataset(a.in);
  PipelineConfig cfg;
  cfg.rolling_window_years = a.rolling_window_years;
  cfg.detrend_degree = a.detrend_degree;
  cfg.validate();
  const AnomalyDataset raw = load_dataset(a.in);
  err << "preprocess: " << raw.n_months << " months at level " << raw.grid_level << '\n';
  const AnomalyDataset anom = compute_anomalies(raw, cfg);
  save_dataset(anom, a.out);

  // Size of the anomalies relative to the raw field scale, per channel.
  json metrics = json::object();
  double worst = 0.0;
  for (std::size_t s = 0; s < kNumChannels; ++s) {
    double raw_scale = 0.0, max_abs = 0.0;
    for (float v : raw.data[s]) raw_scale = std::max(raw_scale, std::fabs(static_cast<double>(v)));
    for (float v : anom.data[s]) max_abs = std::max(max_abs, std::fabs(static_cast<double>(v)));
    const double ratio = raw_scale > 0.0 ? max_abs / raw_scale : 0.0;
    worst = std::max(worst, ratio);
    metrics[std::string(channel_at(s).id)] = {{"max_abs_anomaly", max_abs}, {"raw_scale", raw_scale}, {"relative", ratio}};
  }
  metrics["max_relative"] = worst;
  const json params = {{"rolling_window_years", cfg.rolling_window_years}, {"detrend_degree", cfg.detrend_degree}};
  write_manifest(a.out, "preprocess", {{"raw", input_entry(a.in)}}, params, nullptr, metrics);
  out << json{{"stage", "preprocess"}, {"status", "ok"}, {"out", a.out}, {"metrics", metrics}}.dump() << '\n';
  return kExitOk;
}

int cmd_train(TrainArgs a, std::ostream& out, std::ostream& err) {
  require_dataset(a.in);
  if (a.activation == "gelu")
    a.cfg.activation = Activation::gelu;
  else if (a.activation == "identity")
    a.cfg.activation = Activation::identity;
  else
    fail(ErrorCode::invalid_argument, "unknown activation '" + a.activation + "'", "activation");
  a.cfg.validate();
  const AnomalyDataset ds = load_dataset(a.in);
  if (ds.provenance != Provenance::anomaly)
    fail(ErrorCode::invalid_argument, "train expects an anomaly dataset; run preprocess first", "in");
  err << "train: lags";
  for (int l : a.lags) err << ' ' << l;
  err << ", " << a.cfg.epochs << " epochs\n";
  const LagSuite suite = train_lag_suite(ds, a.lags, a.cfg);
  save_suite(suite, a.out);
  json params = a.cfg.to_json();
  params["lags"] = a.lags;
  write_manifest(a.out, "train", {{"anomaly", input_entry(a.in)}}, params, a.cfg.seed);
  std::ifstream is(fs::path(a.out) / "suite.json");
  const json manifest = json::parse(is);
  out << json{{"stage", "train"}, {"status", "ok"}, {"out", a.out}, {"models", manifest["models"]}}.dump() << '\n';
  return kExitOk;
}

int cmd_shift_fit(const ShiftArgs& a, std::ostream& out, std::ostream& err) {
  require_dataset(a.in);
  const AnomalyDataset ds = load_dataset(a.in);
  err << "shift-fit: k=" << a.k << " over " << ds.n_months << " months\n";
  const auto refs = fit_references(ds, a.k, a.threshold);
  save_references(refs, a.out);
  json ev = json::object();
  for (const auto& r : refs) ev[r.channel_id] = r.explained_variance;
  write_manifest(a.out, "shift-fit", {{"anomaly", input_entry(a.in)}},
                 {{"k", a.k}, {"threshold", a.threshold}}, nullptr, {{"explained_variance", ev}});
  out << json{{"stage", "shift-fit"}, {"status", "ok"}, {"out", a.out}, {"explained_variance", ev}}.dump() << '\n';
  return kExitOk;
}

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out, std::ostream& err) {
  require_dir(a.suite, "suite");
  require_file((fs::path(a.suite) / "suite.json").string(), "suite manifest");
  require_dataset(a.data);
  const LagSuite suite = load_suite(a.suite);
  const AnomalyDataset ds = load_dataset(a.data);
  RegionSpec probe;
  if (!a.probe_region.empty()) {
    probe = RegionSpec::named_region(a.probe_region);
  } else {
    if (a.probe_box.size() != 4)
      fail(ErrorCode::invalid_argument, "probe-box needs lat_min,lat_max,lon_min,lon_max", "probe-box");
    probe = RegionSpec::from_box({a.probe_box[0], a.probe_box[1], a.probe_box[2], a.probe_box[3]});
  }
  probe.validate();
  const auto mask = region_mask(grid_for_level(ds.grid_level), probe);
  const TrainConfig cfg = TrainConfig::from_json(suite.train_config);
  err << "evaluate: " << suite.models.size() << " models\n";
  json report = evaluate_suite(suite, ds, cfg, mask);
  report["probe_region"] = region_to_json(probe);
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    std::ofstream os(fs::path(a.out) / "report.json");
    if (!os) fail(ErrorCode::io_error, "cannot write report in " + a.out);
    os << report.dump(2) << '\n';
    os.close();
    write_manifest(a.out, "evaluate", {{"suite", input_entry(a.suite)}, {"anomaly", input_entry(a.data)}},
                   {{"probe_region", region_to_json(probe)}}, nullptr);
  }
  out << json{{"stage", "evaluate"}, {"status", "ok"}, {"report", report}}.dump() << '\n';
  return kExitOk;
}

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

int cmd_serve(const ServeArgs& a, std::ostream& out, std::ostream& err) {
  ServiceOptions o;
  require_dataset(a.data);
  o.anomaly_dir = a.data;
  if (!a.raw.empty()) require_dataset(a.raw), o.raw_dir = a.raw;
  if (!a.suite.empty()) require_dir(a.suite, "suite"), o.suite_dir = a.suite;
  if (!a.shift.empty()) require_dir(a.shift, "shift reference"), o.shift_dir = a.shift;
  if (!a.sites.empty()) require_file(a.sites, "sites"), o.sites_path = a.sites;
  if (!a.regions.empty()) require_file(a.regions, "regions"), o.regions_path = a.regions;
  if (!a.projections.empty()) require_file(a.projections, "projections"), o.projections_path = a.projections;
  o.records_path = a.records;
  if (!(a.timeout_s > 0.0)) fail(ErrorCode::invalid_argument, "timeout-s must be > 0", "timeout-s");
  if (a.port < 0 || a.port > 65535) fail(ErrorCode::invalid_argument, "port must be in 0..65535", "port");

  Service svc(load_session(o), std::chrono::milliseconds(static_cast<long long>(a.timeout_s * 1000.0)));
  g_stop = false;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const int port = svc.start_background(a.host, a.port);
  err << "serve: listening on http://" << a.host << ':' << port << "/api\n";
  out << json{{"stage", "serve"}, {"status", "listening"}, {"host", a.host}, {"port", port}}.dump() << std::endl;
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  svc.stop();
  return kExitOk;
}

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::not_found: return kExitMissingInput;
    case ErrorCode::diverged:
    case ErrorCode::io_error: return kExitRuntime;
    default: return kExitValidation;
  }
}

int report_error(std::ostream& err, int code, const std::string& kind, const std::string& message,
                 const std::string& field_path = {}) {
  json e = {{"error", kind}, {"message", message}, {"exit_code", code}};
  if (!field_path.empty()) e["field_path"] = field_path;
  err << e.dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
  return code;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Climate-intervention emulation workbench", "climemu"};
  app.set_config("--config", "", "TOML file whose keys mirror the long flag names")->check(CLI::ExistingFile);
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  app.fallthrough();

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic raw dataset");
  synth->add_option("--out", sy.out, "Output dataset directory")->required();
  synth->add_option("--seed", sy.seed)->capture_default_str();
  synth->add_option("--n-months", sy.n_months)->capture_default_str();
  synth->add_option("--grid-level", sy.grid_level)->capture_default_str();
  synth->add_option("--start-year", sy.start_year)->capture_default_str();
  synth->add_flag("--no-noise", sy.no_noise, "Seasonal cycle and trend only");
  synth->add_option("--gain", sy.gains, "Planted gain lag:output:input:value (repeatable)");

  PreprocessArgs pp;
  auto* pre = app.add_subcommand("preprocess", "Raw dataset to anomalies");
  pre->add_option("--in", pp.in, "Raw dataset directory")->required();
  pre->add_option("--out", pp.out, "Anomaly dataset directory")->required();
  pre->add_option("--rolling-window-years", pp.rolling_window_years)->capture_default_str();
  pre->add_option("--detrend-degree", pp.detrend_degree)->capture_default_str();

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train one emulator per lag");
  train->add_option("--in", tr.in, "Anomaly dataset directory")->required();
  train->add_option("--out", tr.out, "Suite directory")->required();
  train->add_option("--lags", tr.lags)->capture_default_str()->delimiter(',');
  train->add_option("--epochs", tr.cfg.epochs)->capture_default_str();
  train->add_option("--initial-lr", tr.cfg.initial_lr)->capture_default_str();
  train->add_option("--lr-decay-per-epoch", tr.cfg.lr_decay_per_epoch)->capture_default_str();
  train->add_option("--batch-size", tr.cfg.batch_size)->capture_default_str();
  train->add_option("--hidden-layers", tr.cfg.hidden_layers)->capture_default_str()->delimiter(',');
  train->add_option("--activation", tr.activation)->capture_default_str();
  train->add_option("--layer-norm", tr.cfg.layer_norm)->capture_default_str();
  train->add_option("--lambda-precip", tr.cfg.lambda_precip)->capture_default_str();
  train->add_option("--lambda-moisture", tr.cfg.lambda_moisture)->capture_default_str();
  train->add_option("--lambda-mass", tr.cfg.lambda_mass)->capture_default_str();
  train->add_option("--lambda-energy", tr.cfg.lambda_energy)->capture_default_str();
  train->add_option("--c-energy", tr.cfg.c_energy)->capture_default_str();
  train->add_option("--val-fraction", tr.cfg.val_fraction)->capture_default_str();
  train->add_option("--seed", tr.cfg.seed)->capture_default_str();

  ShiftArgs sh;
  auto* shift = app.add_subcommand("shift-fit", "Fit distribution-shift references");
  shift->add_option("--in", sh.in, "Anomaly dataset directory")->required();
  shift->add_option("--out", sh.out, "Reference directory")->required();
  shift->add_option("--k", sh.k)->capture_default_str();
  shift->add_option("--threshold", sh.threshold)->capture_default_str();

  EvaluateArgs ev;
  auto* eval = app.add_subcommand("evaluate", "Per-lag validation metrics and planted-operator recovery");
  eval->add_option("--suite", ev.suite, "Suite directory")->required();
  eval->add_option("--data", ev.data, "Anomaly dataset directory")->required();
  eval->add_option("--out", ev.out, "Report directory (optional)");
  eval->add_option("--probe-box", ev.probe_box, "lat_min,lat_max,lon_min,lon_max")
      ->capture_default_str()->delimiter(',')->expected(4);
  eval->add_option("--probe-region", ev.probe_region, "Named region used instead of --probe-box");

  ServeArgs sv;
  auto* serve = app.add_subcommand("serve", "Serve the HTTP API");
  serve->add_option("--data", sv.data, "Anomaly dataset directory")->required();
  serve->add_option("--raw", sv.raw, "Raw dataset directory");
  serve->add_option("--suite", sv.suite, "Suite directory");
  serve->add_option("--shift", sv.shift, "Shift reference directory");
  serve->add_option("--sites", sv.sites, "Tipping sites JSON");
  serve->add_option("--regions", sv.regions, "Named regions JSON");
  serve->add_option("--projections", sv.projections, "Projection names JSON");
  serve->add_option("--records", sv.records)->capture_default_str();
  serve->add_option("--host", sv.host)->capture_default_str();
  serve->add_option("--port", sv.port, "0 picks a free port")->capture_default_str();
  serve->add_option("--timeout-s", sv.timeout_s)->capture_default_str();

  for (auto* sub : app.get_subcommands({})) sub->allow_config_extras(CLI::config_extras_mode::error);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    const bool missing = dynamic_cast<const CLI::ValidationError*>(&e) != nullptr &&
                         std::string(e.what()).find("does not exist") != std::string::npos;
    return report_error(err, missing ? kExitMissingInput : kExitValidation, "usage", e.what());
  }

  try {
    if (app.got_subcommand(synth)) return cmd_synth(sy, out, err);
    if (app.got_subcommand(pre)) return cmd_preprocess(pp, out, err);
    if (app.got_subcommand(train)) return cmd_train(tr, out, err);
    if (app.got_subcommand(shift)) return cmd_shift_fit(sh, out, err);
    if (app.got_subcommand(eval)) return cmd_evaluate(ev, out, err);
    if (app.got_subcommand(serve)) return cmd_serve(sv, out, err);
  } catch (const MissingInput& e) {
    return report_error(err, kExitMissingInput, "missing_input", e.what());
  } catch (const Error& e) {
    return report_error(err, exit_code_for(e.code()), std::string(to_string(e.code())), e.what(), e.field_path());
  } catch (const std::exception& e) {
    return report_error(err, kExitRuntime, "runtime", e.what());
  }
  return report_error(err, kExitValidation, "usage", "no subcommand given");
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace climemu
