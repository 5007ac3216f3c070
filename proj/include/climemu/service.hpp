#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "climemu/dataset.hpp"
#include "climemu/distribution_shift.hpp"
#include "climemu/emulator.hpp"
#include "climemu/intervention.hpp"
#include "climemu/records.hpp"
#include "climemu/region.hpp"
#include "climemu/tipping.hpp"

namespace climemu {

/// Artifacts making up one session. Everything except `dataset` and
/// `records` is optional; endpoints that need a missing piece answer 409.
struct SessionState {
  std::shared_ptr<const AnomalyDataset> dataset;  // anomaly fields
  std::shared_ptr<const AnomalyDataset> raw;      // raw fields, optional
  std::shared_ptr<const LagSuite> suite;
  std::vector<ShiftReference> references;
  std::vector<TippingSite> sites = default_sites();
  RegionCatalog regions;
  std::vector<std::string> projections;
  std::shared_ptr<RecordStore> records;

  /// Throws shape_error naming the offending artifact when grid levels disagree.
  void validate() const;
};

struct ServiceOptions {
  std::filesystem::path anomaly_dir;
  std::optional<std::filesystem::path> raw_dir;
  std::optional<std::filesystem::path> suite_dir;
  std::optional<std::filesystem::path> shift_dir;
  std::optional<std::filesystem::path> sites_path;
  std::optional<std::filesystem::path> regions_path;
  std::optional<std::filesystem::path> projections_path;
  std::filesystem::path records_path = "records.jsonl";
};

SessionState load_session(const ServiceOptions& opts);

/// The 22 geographic projection names served to clients.
std::vector<std::string> default_projections();
std::vector<std::string> load_projections(const std::filesystem::path& path);

/// Shift references live in a directory as <channel_id>.shft.
void save_references(const std::vector<ShiftReference>& refs, const std::filesystem::path& dir);
std::vector<ShiftReference> load_references(const std::filesystem::path& dir);

struct HttpRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// Result of one intervention run, cached for /api/field stage queries.
struct RunResult {
  std::int64_t run_id = 0;
  InterventionScenario scenario;
  ResponseBundle bundle;
  std::map<std::string, ShiftScore> shift;
  std::vector<SiteAssessment> tipping;
  nlohmann::json response;
};

/// Transport-independent API. `handle` is safe to call from many threads;
/// runs and record mutations are serialised internally.
class Service {
 public:
  explicit Service(SessionState state,
                   std::chrono::milliseconds run_timeout = std::chrono::seconds(60));

  HttpResponse handle(const HttpRequest& req);

  /// Blocks serving HTTP on host:port until stop() is called.
  void listen(const std::string& host, int port);
  /// Binds (port 0 picks a free one) and serves on a background thread;
  /// returns the bound port.
  int start_background(const std::string& host = "127.0.0.1", int port = 0);
  void stop();
  ~Service();

  std::shared_ptr<const RunResult> last_run() const;
  const SessionState& state() const { return *state_; }

  /// Same computation as POST /api/intervention/run without caching.
  RunResult execute(const InterventionScenario& s) const;

 private:
  HttpResponse meta() const;
  HttpResponse field(const HttpRequest& req) const;
  HttpResponse run(const HttpRequest& req);
  HttpResponse records_post(const HttpRequest& req);
  HttpResponse records_get() const;
  HttpResponse records_delete(const std::string& id);
  HttpResponse records_csv() const;
  HttpResponse shift_density(const HttpRequest& req) const;
  HttpResponse region_mask_endpoint(const HttpRequest& req) const;

  std::shared_ptr<const SessionState> state_;
  std::chrono::milliseconds run_timeout_;
  std::mutex writer_;             // serialises runs and record mutations
  mutable std::mutex run_mu_;     // guards last_run_
  std::shared_ptr<const RunResult> last_run_;
  std::int64_t next_run_id_ = 1;

  struct Http;
  std::unique_ptr<Http> http_;
};

/// JSON error body {code, message, field_path?}.
HttpResponse error_response(int status, const std::string& code, const std::string& message,
                            const std::string& field_path = {});

/// True if the document contains NaN or infinity anywhere.
bool has_non_finite(const nlohmann::json& j);

/// Global area-weighted summary statistics of a 3 x n_vertices field.
nlohmann::json summarize_response(const ResponseBundle& bundle);

}  // namespace climemu
