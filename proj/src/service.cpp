#include "climemu/service.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <future>
#include <thread>

#include <httplib.h>

#include "climemu/error.hpp"

namespace climemu {

namespace {

using json = nlohmann::json;

constexpr std::array<const char*, 6> kStages{"raw", "anomaly", "perturbed", "before", "after", "diff"};

HttpResponse json_response(int status, const json& body) {
  if (has_non_finite(body))
    return error_response(500, "non_finite", "response contained a non-finite number");
  return {status, "application/json", body.dump()};
}

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return 400;
    case ErrorCode::not_found: return 404;
    case ErrorCode::empty_site: return 422;
    default: return 500;
  }
}

HttpResponse from_error(const Error& e, std::optional<int> status = std::nullopt) {
  return error_response(status.value_or(status_for(e.code())), std::string(to_string(e.code())),
                        e.what(), e.field_path());
}

std::optional<int> parse_int(const std::string& s) {
  int v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

json parse_body(const std::string& body) {
  try {
    return json::parse(body);
  } catch (const json::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("request body is not valid JSON: ") + e.what(), "");
  }
}

json channel_json(const FieldChannel& c) {
  return {{"id", c.id}, {"role", to_string(c.role)}, {"units", c.units}, {"long_name", c.long_name}};
}

RunResult run_scenario(const SessionState& st, const InterventionScenario& s, std::int64_t run_id) {
  RunResult r;
  r.run_id = run_id;
  r.scenario = s;
  const std::vector<double> base = baseline_input(*st.dataset, s);
  r.bundle = aggregate_response(*st.suite, s, base, st.regions);
  const std::size_t nv = st.dataset->n_vertices();
  for (const auto& [id, _] : s.perturbations) {
    const auto c = *input_index(id);
    for (const auto& ref : st.references)
      if (ref.channel_id == id)
        r.shift[id] = score(ref, std::span<const double>(r.bundle.perturbed_input).subspan(c * nv, nv));
  }
  r.tipping = assess(r.bundle, st.sites);

  json shift = json::object();
  bool ood_any = false;
  for (const auto& [id, sc] : r.shift) {
    shift[id] = {{"coords", sc.coords},
                 {"log_density", sc.log_density},
                 {"percentile", sc.percentile},
                 {"ood", sc.ood}};
    ood_any = ood_any || sc.ood;
  }
  json tipping = json::array();
  for (std::size_t i = 0; i < r.tipping.size(); ++i) {
    json a = assessment_to_json(r.tipping[i]);
    a["display_name"] = st.sites[i].display_name;
    tipping.push_back(a);
  }
  r.response = {{"run_id", run_id},
                {"scenario", scenario_to_json(s)},
                {"lags", r.bundle.lags},
                {"grid_level", r.bundle.grid_level},
                {"summary", summarize_response(r.bundle)},
                {"shift", shift},
                {"ood_any", ood_any},
                {"tipping", tipping}};
  return r;
}

}  // namespace

HttpResponse error_response(int status, const std::string& code, const std::string& message,
                            const std::string& field_path) {
  json body = {{"code", code}, {"message", message}};
  if (!field_path.empty()) body["field_path"] = field_path;
  return {status, "application/json", body.dump(-1, ' ', false, json::error_handler_t::replace)};
}

bool has_non_finite(const json& j) {
  if (j.is_number_float()) return !std::isfinite(j.get<double>());
  if (j.is_array() || j.is_object())
    for (const auto& v : j)
      if (has_non_finite(v)) return true;
  return false;
}

json summarize_response(const ResponseBundle& b) {
  const auto& grid = grid_for_level(b.grid_level);
  const auto w = grid.area_weights();
  const std::size_t nv = grid.size();
  json out = json::object();
  for (std::size_t c = 0; c < kNumOutputs; ++c) {
    double mb = 0, ma = 0, md = 0, rms = 0, lo = 0, hi = 0;
    for (std::size_t v = 0; v < nv; ++v) {
      const std::size_t i = c * nv + v;
      mb += w[v] * b.before[i];
      ma += w[v] * b.after[i];
      md += w[v] * b.diff[i];
      rms += w[v] * b.diff[i] * b.diff[i];
      if (v == 0 || b.diff[i] < lo) lo = b.diff[i];
      if (v == 0 || b.diff[i] > hi) hi = b.diff[i];
    }
    out[std::string(kOutputChannels[c].id)] = {{"before_mean", mb},
                                               {"after_mean", ma},
                                               {"diff_mean", md},
                                               {"diff_rms", std::sqrt(rms)},
                                               {"diff_min", lo},
                                               {"diff_max", hi}};
  }
  return out;
}

void SessionState::validate() const {
  if (!dataset) fail(ErrorCode::invalid_argument, "session has no dataset");
  if (!records) fail(ErrorCode::invalid_argument, "session has no record store");
  if (dataset->provenance != Provenance::anomaly)
    fail(ErrorCode::invalid_argument, "the served dataset must hold anomalies");
  const int level = dataset->grid_level;
  if (raw && raw->grid_level != level)
    fail(ErrorCode::shape_error, "raw dataset grid level " + std::to_string(raw->grid_level) +
                                     " does not match anomaly dataset level " + std::to_string(level));
  if (suite) {
    if (suite->grid_level != level)
      fail(ErrorCode::shape_error, "suite grid level " + std::to_string(suite->grid_level) +
                                       " does not match dataset grid level " + std::to_string(level));
    suite->validate();
  }
  for (const auto& r : references)
    if (r.n_vertices() != dataset->n_vertices())
      fail(ErrorCode::shape_error, "shift reference '" + r.channel_id + "' has " +
                                       std::to_string(r.n_vertices()) +
                                       " vertices, dataset grid level " + std::to_string(level) +
                                       " has " + std::to_string(dataset->n_vertices()));
  for (const auto& s : sites) s.validate();
}

std::vector<std::string> default_projections() {
  return {"equirectangular", "orthographic",     "mollweide",          "robinson",
          "natural_earth",   "mercator",         "transverse_mercator", "lambert_conformal_conic",
          "lambert_azimuthal_equal_area", "albers_equal_area", "azimuthal_equidistant",
          "stereographic",   "gnomonic",         "equal_earth",        "winkel_tripel",
          "eckert_iv",       "hammer",           "sinusoidal",         "miller",
          "conic_equidistant", "polyconic",      "van_der_grinten"};
}

std::vector<std::string> load_projections(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::not_found, "cannot open projections file " + path.string());
  try {
    const json j = json::parse(is);
    return j.at("projections").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail(ErrorCode::format_error, path.string() + ": " + e.what());
  }
}

void save_references(const std::vector<ShiftReference>& refs, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& r : refs) save_reference(r, dir / (r.channel_id + ".shft"));
}

std::vector<ShiftReference> load_references(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    fail(ErrorCode::not_found, "shift reference directory " + dir.string() + " does not exist");
  std::vector<ShiftReference> refs;
  for (const auto& c : kInputChannels) {
    const auto p = dir / (std::string(c.id) + ".shft");
    if (std::filesystem::exists(p)) refs.push_back(load_reference(p));
  }
  if (refs.empty()) fail(ErrorCode::not_found, "no shift references found in " + dir.string());
  return refs;
}

SessionState load_session(const ServiceOptions& o) {
  SessionState st;
  auto ds = std::make_shared<AnomalyDataset>(load_dataset(o.anomaly_dir));
  st.dataset = ds;
  if (o.raw_dir) st.raw = std::make_shared<AnomalyDataset>(load_dataset(*o.raw_dir));
  if (o.suite_dir) st.suite = std::make_shared<LagSuite>(load_suite(*o.suite_dir));
  if (o.shift_dir) st.references = load_references(*o.shift_dir);
  if (o.sites_path) st.sites = load_sites(*o.sites_path);
  if (o.regions_path) st.regions = RegionCatalog::from_file(*o.regions_path);
  st.projections = o.projections_path ? load_projections(*o.projections_path) : default_projections();
  st.records = std::make_shared<RecordStore>(o.records_path);
  st.validate();
  return st;
}

struct Service::Http {
  httplib::Server server;
  std::thread thread;
};

namespace {

std::shared_ptr<const SessionState> freeze(SessionState s) {
  if (s.projections.empty()) s.projections = default_projections();
  s.validate();
  return std::make_shared<const SessionState>(std::move(s));
}

}  // namespace

Service::Service(SessionState state, std::chrono::milliseconds run_timeout)
    : state_(freeze(std::move(state))), run_timeout_(run_timeout) {}

Service::~Service() { stop(); }

std::shared_ptr<const RunResult> Service::last_run() const {
  std::lock_guard lock(run_mu_);
  return last_run_;
}

RunResult Service::execute(const InterventionScenario& s) const {
  if (!state_->suite) fail(ErrorCode::not_found, "no lag suite is loaded");
  return run_scenario(*state_, s, 0);
}

HttpResponse Service::handle(const HttpRequest& req) {
  try {
    const std::string& p = req.path;
    const std::string& m = req.method;
    auto only = [&](const char* method) { return m == method; };
    if (p == "/api/meta") return only("GET") ? meta() : error_response(405, "method_not_allowed", m + " " + p);
    if (p == "/api/field") return only("GET") ? field(req) : error_response(405, "method_not_allowed", m + " " + p);
    if (p == "/api/intervention/run")
      return only("POST") ? run(req) : error_response(405, "method_not_allowed", m + " " + p);
    if (p == "/api/records") {
      if (m == "GET") return records_get();
      if (m == "POST") return records_post(req);
      return error_response(405, "method_not_allowed", m + " " + p);
    }
    if (p == "/api/records/export.csv")
      return only("GET") ? records_csv() : error_response(405, "method_not_allowed", m + " " + p);
    if (p.rfind("/api/records/", 0) == 0) {
      return only("DELETE") ? records_delete(p.substr(std::string("/api/records/").size()))
                            : error_response(405, "method_not_allowed", m + " " + p);
    }
    if (p == "/api/shift/density")
      return only("GET") ? shift_density(req) : error_response(405, "method_not_allowed", m + " " + p);
    if (p == "/api/regions/mask")
      return only("POST") ? region_mask_endpoint(req) : error_response(405, "method_not_allowed", m + " " + p);
    return error_response(404, "not_found", "no endpoint " + p);
  } catch (const Error& e) {
    return from_error(e);
  } catch (const json::exception& e) {
    return error_response(400, "invalid_argument", e.what());
  } catch (const std::exception& e) {
    return error_response(500, "internal", e.what());
  }
}

HttpResponse Service::meta() const {
  const auto& st = *state_;
  json channels = json::array();
  for (const auto& c : kInputChannels) channels.push_back(channel_json(c));
  for (const auto& c : kOutputChannels) channels.push_back(channel_json(c));
  json regions = json::object();
  for (const auto& [name, b] : st.regions.entries())
    regions[name] = {{"lat_min", b.lat_min}, {"lat_max", b.lat_max}, {"lon_min", b.lon_min}, {"lon_max", b.lon_max}};
  json levels = json::array();
  for (int l = 0; l <= st.dataset->grid_level; ++l) levels.push_back(l);
  const auto run = last_run();
  json out = {{"schema_version", 1},
              {"channels", channels},
              {"grid_levels", levels},
              {"native_level", st.dataset->grid_level},
              {"n_months", st.dataset->n_months},
              {"start_year", st.dataset->start_year},
              {"start_month", st.dataset->start_month},
              {"available_lags", st.suite ? json(st.suite->lags()) : json::array()},
              {"sites", sites_to_json(st.sites)["sites"]},
              {"projections", st.projections},
              {"regions", regions},
              {"stages", kStages},
              {"raw_available", static_cast<bool>(st.raw)},
              {"shift_channels", json::array()},
              {"run_id", run ? json(run->run_id) : json(nullptr)}};
  for (const auto& r : st.references) out["shift_channels"].push_back(r.channel_id);
  return json_response(200, out);
}

HttpResponse Service::field(const HttpRequest& req) const {
  const auto& st = *state_;
  auto q = [&](const char* k) -> std::optional<std::string> {
    const auto it = req.query.find(k);
    if (it == req.query.end()) return std::nullopt;
    return it->second;
  };
  const std::string role = q("role").value_or("");
  if (role != "input" && role != "output")
    return error_response(400, "invalid_argument", "role must be 'input' or 'output'", "role");
  const std::string channel = q("channel").value_or("");
  const auto idx = role == "input" ? input_index(channel) : output_index(channel);
  if (!idx) return error_response(404, "not_found", "unknown " + role + " channel '" + channel + "'", "channel");
  const std::string stage = q("stage").value_or("anomaly");
  if (std::find(kStages.begin(), kStages.end(), stage) == kStages.end())
    return error_response(400, "invalid_argument", "unknown stage '" + stage + "'", "stage");

  const int native = st.dataset->grid_level;
  int level = native;
  if (const auto l = q("level")) {
    const auto v = parse_int(*l);
    if (!v || *v < 0 || *v > native)
      return error_response(400, "invalid_argument",
                            "level must be an integer in 0.." + std::to_string(native), "level");
    level = *v;
  }
  const std::size_t nv = st.dataset->n_vertices();
  const std::size_t slot = role == "input" ? *idx : kNumInputs + *idx;
  std::vector<double> values;
  json extra = json::object();

  const bool run_stage = stage == "perturbed" || stage == "before" || stage == "after" || stage == "diff";
  if (run_stage) {
    if (stage == "perturbed" && role != "input")
      return error_response(400, "invalid_argument", "stage 'perturbed' applies to inputs", "stage");
    if (stage != "perturbed" && role != "output")
      return error_response(400, "invalid_argument", "stage '" + stage + "' applies to outputs", "stage");
    const auto run = last_run();
    if (!run)
      return error_response(409, "conflict", "stage '" + stage + "' needs a completed intervention run", "stage");
    const std::vector<double>* src = stage == "perturbed" ? &run->bundle.perturbed_input
                                     : stage == "before"  ? &run->bundle.before
                                     : stage == "after"   ? &run->bundle.after
                                                          : &run->bundle.diff;
    values.assign(src->begin() + static_cast<std::ptrdiff_t>(*idx * nv),
                  src->begin() + static_cast<std::ptrdiff_t>((*idx + 1) * nv));
    extra["run_id"] = run->run_id;
  } else {
    const AnomalyDataset* ds = stage == "raw" ? st.raw.get() : st.dataset.get();
    if (!ds) return error_response(409, "conflict", "no raw dataset is loaded", "stage");
    const auto t = q("time") ? parse_int(*q("time")) : std::optional<int>(0);
    if (!t || *t < 0 || *t >= ds->n_months)
      return error_response(400, "invalid_argument",
                            "time must be an integer in 0.." + std::to_string(ds->n_months - 1), "time");
    values.resize(nv);
    for (std::size_t v = 0; v < nv; ++v) values[v] = ds->at(slot, *t, v);
    extra["time"] = *t;
  }
  if (level != native) values = coarsen_to(values, level);

  const auto& grid = grid_for_level(level);
  std::vector<double> lat(grid.size()), lon(grid.size());
  for (std::size_t v = 0; v < grid.size(); ++v) {
    lat[v] = grid.vertices()[v].lat;
    lon[v] = grid.vertices()[v].lon;
  }
  json out = {{"role", role},       {"channel", channel},         {"stage", stage},
              {"level", level},     {"n_vertices", grid.size()},  {"units", slot < kNumInputs ? kInputChannels[slot].units : kOutputChannels[*idx].units},
              {"values", values},   {"lat", lat},                 {"lon", lon}};
  out.update(extra);
  return json_response(200, out);
}

HttpResponse Service::run(const HttpRequest& req) {
  const auto st = state_;
  InterventionScenario s;
  try {
    s = scenario_from_json(parse_body(req.body));
  } catch (const Error& e) {
    return from_error(e, 400);
  }
  if (!st->suite) return error_response(409, "conflict", "no lag suite is loaded");
  if (st->references.empty()) return error_response(409, "conflict", "no shift references are loaded");
  try {
    resolve_lag_set(s, *st->suite);
    baseline_input(*st->dataset, s);
    const auto mask = region_mask(grid_for_level(st->dataset->grid_level), s.region, st->regions);
    if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; }))
      return error_response(422, "empty_region",
                            "region contains no vertex at grid level " +
                                std::to_string(st->dataset->grid_level),
                            "region");
  } catch (const Error& e) {
    return from_error(e, 400);
  }

  std::lock_guard gate(writer_);
  const std::int64_t id = next_run_id_++;
  auto task = std::make_shared<std::packaged_task<RunResult()>>(
      [st, s, id] { return run_scenario(*st, s, id); });
  auto fut = task->get_future();
  std::thread([task] { (*task)(); }).detach();
  if (fut.wait_for(run_timeout_) != std::future_status::ready)
    return error_response(504, "timeout", "intervention run exceeded " +
                                              std::to_string(run_timeout_.count()) + " ms");
  auto result = std::make_shared<const RunResult>(fut.get());
  {
    std::lock_guard lock(run_mu_);
    last_run_ = result;
  }
  return json_response(200, result->response);
}

HttpResponse Service::records_post(const HttpRequest& req) {
  json body = parse_body(req.body);
  if (!body.is_object()) return error_response(400, "invalid_argument", "record must be a JSON object");
  if (!body.contains("scenario")) {
    const auto run = last_run();
    if (!run)
      return error_response(400, "invalid_argument", "scenario is required when no run exists", "scenario");
    InterventionScenario resolved = run->scenario;
    resolved.lag_set = run->bundle.lags;
    body["scenario"] = scenario_to_json(resolved);
    if (!body.contains("ood_flags")) {
      json flags = json::object();
      for (const auto& [id, sc] : run->shift) flags[id] = sc.ood;
      body["ood_flags"] = flags;
    }
    if (!body.contains("tipping_summary")) {
      json ts = json::array();
      for (const auto& a : run->tipping) ts.push_back({{"site_id", a.site_id}, {"at_risk", a.at_risk}});
      body["tipping_summary"] = ts;
    }
  }
  body.erase("record_id");
  body.erase("created_at");
  InterventionRecord rec;
  try {
    rec = record_from_json(body);
  } catch (const Error& e) {
    return from_error(e, 400);
  }
  std::lock_guard gate(writer_);
  const auto stored = state_->records->append(std::move(rec));
  return json_response(201, record_to_json(stored));
}

HttpResponse Service::records_get() const {
  json arr = json::array();
  for (const auto& r : state_->records->list()) arr.push_back(record_to_json(r));
  return json_response(200, {{"records", arr}});
}

HttpResponse Service::records_delete(const std::string& id) {
  std::int64_t v = 0;
  const auto res = std::from_chars(id.data(), id.data() + id.size(), v);
  if (res.ec != std::errc() || res.ptr != id.data() + id.size())
    return error_response(400, "invalid_argument", "record id must be an integer", "record_id");
  std::lock_guard gate(writer_);
  state_->records->remove(v);
  return json_response(200, {{"deleted", v}});
}

HttpResponse Service::records_csv() const {
  return {200, "text/csv; charset=utf-8", export_csv(state_->records->list())};
}

HttpResponse Service::shift_density(const HttpRequest& req) const {
  const auto it = req.query.find("channel");
  const std::string channel = it == req.query.end() ? "" : it->second;
  const ShiftReference* ref = nullptr;
  for (const auto& r : state_->references)
    if (r.channel_id == channel) ref = &r;
  if (!ref) {
    if (!input_index(channel))
      return error_response(404, "not_found", "unknown input channel '" + channel + "'", "channel");
    return error_response(409, "conflict", "no shift reference for '" + channel + "'", "channel");
  }
  int n = 40;
  if (const auto g = req.query.find("n"); g != req.query.end()) {
    const auto v = parse_int(g->second);
    if (!v || *v < 2 || *v > 200)
      return error_response(400, "invalid_argument", "n must be an integer in 2..200", "n");
    n = *v;
  }
  const auto grid = density_grid(*ref, n);
  json pts = json::array();
  const std::size_t step = std::max<std::size_t>(1, ref->n_train() / 500);
  for (std::size_t i = 0; i < ref->n_train(); i += step) {
    json p = json::array();
    for (int d = 0; d < ref->k; ++d) p.push_back(ref->projections(static_cast<Eigen::Index>(i), d));
    pts.push_back(p);
  }
  json out = {{"channel", channel},
              {"k", ref->k},
              {"explained_variance", ref->explained_variance},
              {"threshold", ref->threshold},
              {"x", grid.x},
              {"y", grid.y},
              {"log_density", grid.log_density},
              {"training_points", pts}};
  if (const auto run = last_run()) {
    const auto s = run->shift.find(channel);
    if (s != run->shift.end())
      out["perturbed"] = {{"coords", s->second.coords}, {"percentile", s->second.percentile}, {"ood", s->second.ood}};
  }
  return json_response(200, out);
}

HttpResponse Service::region_mask_endpoint(const HttpRequest& req) const {
  const json body = parse_body(req.body);
  if (!body.is_object() || !body.contains("region"))
    return error_response(400, "invalid_argument", "body needs a region", "region");
  RegionSpec r;
  try {
    r = region_from_json(body["region"], "region");
  } catch (const Error& e) {
    return from_error(e, 400);
  }
  const int native = state_->dataset->grid_level;
  int level = native;
  if (body.contains("level")) {
    if (!body["level"].is_number_integer() || body["level"].get<int>() < 0 || body["level"].get<int>() > kMaxGridLevel)
      return error_response(400, "invalid_argument", "level must be an integer in 0..5", "level");
    level = body["level"].get<int>();
  }
  const auto& grid = grid_for_level(level);
  std::vector<bool> mask;
  try {
    mask = region_mask(grid, r, state_->regions);
  } catch (const Error& e) {
    return from_error(e);
  }
  std::vector<int> m(mask.size());
  double frac = 0.0;
  std::size_t count = 0;
  for (std::size_t v = 0; v < mask.size(); ++v) {
    m[v] = mask[v] ? 1 : 0;
    if (mask[v]) {
      frac += grid.area_weights()[v];
      ++count;
    }
  }
  return json_response(200, {{"level", level}, {"n_vertices", grid.size()}, {"mask", m},
                             {"count", count}, {"area_fraction", frac}});
}

namespace {

void install_routes(httplib::Server& server, Service& svc) {
  auto bridge = [&svc](const httplib::Request& req, httplib::Response& res) {
    HttpRequest r;
    r.method = req.method;
    r.path = req.path;
    for (const auto& [k, v] : req.params) r.query.emplace(k, v);
    r.body = req.body;
    const HttpResponse out = svc.handle(r);
    res.status = out.status;
    res.set_content(out.body, out.content_type);
  };
  server.Get("/api/.*", bridge);
  server.Post("/api/.*", bridge);
  server.Delete("/api/.*", bridge);
  server.Put("/api/.*", bridge);
}

}  // namespace

void Service::listen(const std::string& host, int port) {
  if (!http_) http_ = std::make_unique<Http>();
  install_routes(http_->server, *this);
  if (!http_->server.listen(host, port))
    fail(ErrorCode::io_error, "cannot listen on " + host + ":" + std::to_string(port));
}

int Service::start_background(const std::string& host, int port) {
  if (!http_) http_ = std::make_unique<Http>();
  install_routes(http_->server, *this);
  if (port == 0) {
    port = http_->server.bind_to_any_port(host);
    if (port <= 0) fail(ErrorCode::io_error, "cannot bind a port on " + host);
  } else if (!http_->server.bind_to_port(host, port)) {
    fail(ErrorCode::io_error, "cannot bind " + host + ":" + std::to_string(port));
  }
  http_->thread = std::thread([this] { http_->server.listen_after_bind(); });
  http_->server.wait_until_ready();
  return port;
}

void Service::stop() {
  if (!http_) return;
  http_->server.stop();
  if (http_->thread.joinable()) http_->thread.join();
}

}  // namespace climemu
