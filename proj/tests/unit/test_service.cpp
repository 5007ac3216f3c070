#include <doctest.h>

#include <set>
#include <thread>

#include <httplib.h>
#undef _res  // resolv.h macro collides with Eigen internals

#include "climemu/anomaly_pipeline.hpp"
#include "climemu/error.hpp"
#include "climemu/service.hpp"
#include "support.hpp"

using namespace climemu;
using nlohmann::json;

namespace {

constexpr int kLevel = 2;

struct Artifacts {
  std::shared_ptr<const AnomalyDataset> raw;
  std::shared_ptr<const AnomalyDataset> anomaly;
  std::shared_ptr<const LagSuite> suite;
  std::vector<ShiftReference> refs;
};

const Artifacts& artifacts() {
  static const Artifacts a = [] {
    Artifacts out;
    const auto spec = SyntheticSpec::realistic(11, kLevel, 240);
    auto raw = generate_synthetic(spec);
    out.anomaly = std::make_shared<const AnomalyDataset>(compute_anomalies(raw));
    out.raw = std::make_shared<const AnomalyDataset>(std::move(raw));
    auto suite = std::make_shared<LagSuite>();
    suite->grid_level = kLevel;
    const auto nv = static_cast<Eigen::Index>(vertex_count(kLevel));
    for (int lag : {1, 2, 3}) {
      Eigen::MatrixXf A = Eigen::MatrixXf::Zero(3 * nv, 6 * nv);
      for (Eigen::Index v = 0; v < nv; ++v) {
        A(2 * nv + v, v) = 0.1f * lag;  // tas <- sw_cre_toa
        A(nv + v, 2 * nv + v) = -0.01f;  // pr <- sw_cre_surf
      }
      suite->models.emplace(lag, testing::linear_model(kLevel, A, lag));
    }
    out.suite = suite;
    out.refs = fit_references(*out.anomaly);
    return out;
  }();
  return a;
}

struct Fixture {
  testing::TempDir tmp{"svc"};
  std::unique_ptr<Service> svc;

  explicit Fixture(bool with_suite = true, bool with_raw = true) {
    const auto& a = artifacts();
    SessionState st;
    st.dataset = a.anomaly;
    if (with_raw) st.raw = a.raw;
    if (with_suite) {
      st.suite = a.suite;
      st.references = a.refs;
    }
    st.records = std::make_shared<RecordStore>(tmp / "records.jsonl");
    svc = std::make_unique<Service>(std::move(st));
  }

  HttpResponse call(const std::string& method, const std::string& path,
                    std::map<std::string, std::string> query = {}, const std::string& body = {}) {
    return svc->handle({method, path, std::move(query), body});
  }
};

json scenario_json(double value = -10.0) {
  return {{"region", {{"kind", "named"}, {"name", "SEP"}}},
          {"duration_years", 1},
          {"perturbations", {{"sw_cre_toa", {{"mode", "add"}, {"value", value}}}}},
          {"reference_time", 5}};
}

json body_of(const HttpResponse& r) { return json::parse(r.body); }

}  // namespace

TEST_SUITE("service") {

TEST_CASE("meta reports the session and matches the schema") {
  Fixture f;
  const auto r = f.call("GET", "/api/meta");
  REQUIRE(r.status == 200);
  const auto j = body_of(r);
  CHECK(testing::api_violation(j, "meta") == "");
  CHECK(j["channels"].size() == 9u);
  CHECK(j["native_level"] == kLevel);
  CHECK(j["available_lags"] == json({1, 2, 3}));
  CHECK(j["projections"].size() == 22u);
  CHECK(j["sites"].size() == 7u);
  CHECK(j["run_id"].is_null());
  CHECK(j["raw_available"] == true);
  CHECK(j["shift_channels"].size() == kNumInputs);
}

TEST_CASE("anomaly fields are served bit-exact and coarsen on request") {
  Fixture f;
  const auto r = f.call("GET", "/api/field", {{"role", "input"}, {"channel", "lw_cre_toa"}, {"time", "17"}});
  REQUIRE(r.status == 200);
  const auto j = body_of(r);
  CHECK(testing::api_violation(j, "field") == "");
  const auto& ds = *artifacts().anomaly;
  REQUIRE(j["values"].size() == ds.n_vertices());
  for (std::size_t v = 0; v < ds.n_vertices(); ++v)
    CHECK(j["values"][v].get<double>() == static_cast<double>(ds.at(kLwCreToa, 17, v)));

  const auto c = body_of(f.call("GET", "/api/field", {{"role", "output"}, {"channel", "tas"}, {"level", "1"}}));
  CHECK(c["values"].size() == 42u);
  CHECK(c["lat"].size() == 42u);
  const auto raw = body_of(f.call("GET", "/api/field", {{"role", "output"}, {"channel", "psl"}, {"stage", "raw"}}));
  CHECK(raw["values"][0].get<double>() > 90000.0);
}

TEST_CASE("field parameter errors") {
  Fixture f;
  auto code = [&](std::map<std::string, std::string> q) { return f.call("GET", "/api/field", std::move(q)).status; };
  CHECK(code({{"role", "sideways"}, {"channel", "tas"}}) == 400);
  CHECK(code({{"role", "output"}, {"channel", "ua"}}) == 404);
  CHECK(code({{"role", "input"}, {"channel", "tas"}}) == 404);
  CHECK(code({{"role", "output"}, {"channel", "tas"}, {"level", "3"}}) == 400);
  CHECK(code({{"role", "output"}, {"channel", "tas"}, {"time", "240"}}) == 400);
  CHECK(code({{"role", "output"}, {"channel", "tas"}, {"stage", "weird"}}) == 400);
  const auto e = body_of(f.call("GET", "/api/field", {{"role", "output"}, {"channel", "tas"}, {"level", "x"}}));
  CHECK(testing::api_violation(e, "error") == "");
  CHECK(e["field_path"] == "level");
}

TEST_CASE("run stages are gated until a run exists") {
  Fixture f;
  for (const char* stage : {"before", "after", "diff"})
    CHECK(f.call("GET", "/api/field", {{"role", "output"}, {"channel", "tas"}, {"stage", stage}}).status == 409);
  CHECK(f.call("GET", "/api/field", {{"role", "input"}, {"channel", "sw_cre_toa"}, {"stage", "perturbed"}}).status == 409);
  REQUIRE(f.call("POST", "/api/intervention/run", {}, scenario_json().dump()).status == 200);
  const auto d = body_of(f.call("GET", "/api/field", {{"role", "output"}, {"channel", "tas"}, {"stage", "diff"}}));
  CHECK(d["run_id"] == 1);
  CHECK(f.call("GET", "/api/field", {{"role", "input"}, {"channel", "tas"}, {"stage", "diff"}}).status == 404);
  CHECK(f.call("GET", "/api/field", {{"role", "input"}, {"channel", "sw_cre_toa"}, {"stage", "diff"}}).status == 400);
}

TEST_CASE("a session without a suite answers 409 to runs") {
  Fixture f(false, false);
  CHECK(f.call("POST", "/api/intervention/run", {}, scenario_json().dump()).status == 409);
  CHECK(f.call("GET", "/api/field", {{"role", "input"}, {"channel", "sw_cre_toa"}, {"stage", "raw"}}).status == 409);
  CHECK(f.call("GET", "/api/shift/density", {{"channel", "sw_cre_toa"}}).status == 409);
}

TEST_CASE("run response equals the in-process computation") {
  Fixture f;
  const auto r = f.call("POST", "/api/intervention/run", {}, scenario_json().dump());
  REQUIRE(r.status == 200);
  auto j = body_of(r);
  CHECK(testing::api_violation(j, "run") == "");
  CHECK(j["run_id"] == 1);
  auto direct = f.svc->execute(scenario_from_json(scenario_json())).response;
  j.erase("run_id");
  direct.erase("run_id");
  CHECK(j == direct);
  CHECK(j["lags"] == json({1, 2, 3}));
  // tas responds to sw_cre_toa with gains 0.1 + 0.2 + 0.3, only inside SEP.
  const auto run = f.svc->last_run();
  REQUIRE(run);
  const auto& g = grid_for_level(kLevel);
  const auto mask = region_mask(g, RegionSpec::named_region("SEP"));
  const std::size_t nv = g.size();
  for (std::size_t v = 0; v < nv; ++v) {
    CHECK(run->bundle.diff[2 * nv + v] == doctest::Approx(mask[v] ? -6.0 : 0.0).epsilon(1e-5));
    CHECK(run->bundle.diff[nv + v] == 0.0);
  }
}

TEST_CASE("malformed scenarios are 400 with a field path") {
  Fixture f;
  auto s = scenario_json();
  s["perturbations"]["sw_cre_toa"]["value"] = "lots";
  const auto r = f.call("POST", "/api/intervention/run", {}, s.dump());
  CHECK(r.status == 400);
  CHECK(body_of(r)["field_path"] == "perturbations.sw_cre_toa.value");
  CHECK(f.call("POST", "/api/intervention/run", {}, "{oops").status == 400);
  s = scenario_json();
  s["lag_set"] = {1, 9};
  CHECK(f.call("POST", "/api/intervention/run", {}, s.dump()).status == 400);
  s = scenario_json();
  s["region"] = {{"kind", "latlon_box"}, {"box", {{"lat_min", 0.1}, {"lat_max", 0.2}, {"lon_min", 0.1}, {"lon_max", 0.2}}}};
  const auto empty = f.call("POST", "/api/intervention/run", {}, s.dump());
  CHECK(empty.status == 422);
  CHECK(body_of(empty)["code"] == "empty_region");
}

TEST_CASE("concurrent runs get unique ids") {
  Fixture f;
  std::vector<std::thread> threads;
  std::vector<std::int64_t> ids(10, -1);
  for (int i = 0; i < 10; ++i)
    threads.emplace_back([&, i] {
      const auto r = f.call("POST", "/api/intervention/run", {}, scenario_json(-i - 1.0).dump());
      if (r.status == 200) ids[i] = body_of(r)["run_id"].get<std::int64_t>();
    });
  for (auto& t : threads) t.join();
  const std::set<std::int64_t> unique(ids.begin(), ids.end());
  CHECK(unique.size() == 10u);
  CHECK(*unique.begin() == 1);
}

TEST_CASE("records lifecycle through the API") {
  Fixture f;
  CHECK(f.call("POST", "/api/records", {}, R"({"notes": "x"})").status == 400);  // no run yet
  REQUIRE(f.call("POST", "/api/intervention/run", {}, scenario_json().dump()).status == 200);
  const auto created = f.call("POST", "/api/records", {}, R"({"notes": "first, \"quoted\""})");
  REQUIRE(created.status == 201);
  const auto rec = body_of(created);
  CHECK(testing::api_violation(rec, "record") == "");
  CHECK(rec["record_id"] == 1);
  CHECK(rec["scenario"]["lag_set"] == json({1, 2, 3}));
  CHECK(rec["tipping_summary"].size() == 7u);

  auto explicit_rec = json{{"scenario", scenario_json(2.0)}, {"notes", "second"}, {"record_id", 99}};
  CHECK(body_of(f.call("POST", "/api/records", {}, explicit_rec.dump()))["record_id"] == 2);

  const auto list = body_of(f.call("GET", "/api/records"));
  CHECK(testing::api_violation(list, "records") == "");
  CHECK(list["records"].size() == 2u);

  const auto csv = f.call("GET", "/api/records/export.csv");
  CHECK(csv.content_type == "text/csv; charset=utf-8");
  const auto rows = testing::parse_csv(csv.body);
  REQUIRE(rows.size() == 3u);
  CHECK(rows[1][8] == "first, \"quoted\"");

  const auto del = f.call("DELETE", "/api/records/1");
  CHECK(del.status == 200);
  CHECK(testing::api_violation(body_of(del), "record_deleted") == "");
  CHECK(f.call("DELETE", "/api/records/1").status == 404);
  CHECK(f.call("DELETE", "/api/records/abc").status == 400);
}

TEST_CASE("shift density and region mask endpoints") {
  Fixture f;
  const auto d = f.call("GET", "/api/shift/density", {{"channel", "sw_cre_toa"}, {"n", "12"}});
  REQUIRE(d.status == 200);
  const auto j = body_of(d);
  CHECK(testing::api_violation(j, "shift_density") == "");
  CHECK(j["x"].size() == 12u);
  CHECK(j["log_density"].size() == 144u);
  CHECK(f.call("GET", "/api/shift/density", {{"channel", "psl"}}).status == 404);
  CHECK(f.call("GET", "/api/shift/density", {{"channel", "sw_cre_toa"}, {"n", "1"}}).status == 400);

  const auto m = f.call("POST", "/api/regions/mask", {}, R"({"region": {"kind": "named", "name": "SEP"}, "level": 3})");
  REQUIRE(m.status == 200);
  const auto mj = body_of(m);
  CHECK(testing::api_violation(mj, "region_mask") == "");
  CHECK(mj["mask"].size() == 642u);
  CHECK(mj["count"].get<int>() > 0);
  CHECK(f.call("POST", "/api/regions/mask", {}, R"({"region": {"kind": "named", "name": "NOPE"}})").status == 404);
}

TEST_CASE("routing: wrong method is 405, unknown path is 404") {
  Fixture f;
  CHECK(f.call("POST", "/api/meta").status == 405);
  CHECK(f.call("GET", "/api/intervention/run").status == 405);
  CHECK(f.call("GET", "/api/nothing").status == 404);
}

TEST_CASE("mismatched artifacts are refused when the session is built") {
  SessionState st;
  st.dataset = artifacts().anomaly;
  auto suite = std::make_shared<LagSuite>();
  suite->grid_level = 0;
  suite->models.emplace(1, testing::linear_model(0, Eigen::MatrixXf::Zero(36, 72)));
  st.suite = suite;
  testing::TempDir tmp;
  st.records = std::make_shared<RecordStore>(tmp / "r.jsonl");
  CHECK(testing::error_code_of([&] { Service s(std::move(st)); }) == ErrorCode::shape_error);
}

TEST_CASE("non-finite values never reach a client") {
  CHECK(has_non_finite(json{{"a", {1.0, std::nan("")}}}));
  CHECK_FALSE(has_non_finite(json{{"a", {1.0, 2}}}));
}

TEST_CASE("the HTTP server answers the same requests") {
  Fixture f;
  const int port = f.svc->start_background("127.0.0.1", 0);
  REQUIRE(port > 0);
  httplib::Client cli("127.0.0.1", port);
  cli.set_read_timeout(60, 0);
  auto meta = cli.Get("/api/meta");
  REQUIRE(meta);
  CHECK(meta->status == 200);
  CHECK(json::parse(meta->body)["native_level"] == kLevel);
  auto run = cli.Post("/api/intervention/run", scenario_json().dump(), "application/json");
  REQUIRE(run);
  CHECK(run->status == 200);
  auto field = cli.Get("/api/field?role=output&channel=tas&stage=diff&level=1");
  REQUIRE(field);
  CHECK(field->status == 200);
  CHECK(json::parse(field->body)["values"].size() == 42u);
  auto rec = cli.Post("/api/records", R"({"notes": "via http"})", "application/json");
  REQUIRE(rec);
  CHECK(rec->status == 201);
  auto csv = cli.Get("/api/records/export.csv");
  REQUIRE(csv);
  CHECK(csv->get_header_value("Content-Type") == "text/csv; charset=utf-8");
  auto missing = cli.Delete("/api/records/42");
  REQUIRE(missing);
  CHECK(missing->status == 404);
  f.svc->stop();
}

}  // TEST_SUITE
