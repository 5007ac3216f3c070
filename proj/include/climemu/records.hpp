#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "climemu/intervention.hpp"

namespace climemu {

struct SiteFlag {
  std::string site_id;
  bool at_risk = false;
  bool operator==(const SiteFlag&) const = default;
};

struct InterventionRecord {
  std::int64_t record_id = 0;
  std::string created_at;  // UTC, ISO 8601
  InterventionScenario scenario;
  std::map<std::string, bool> ood_flags;  // per perturbed channel
  std::vector<SiteFlag> tipping_summary;
  std::string notes;

  bool operator==(const InterventionRecord&) const = default;
};

nlohmann::json record_to_json(const InterventionRecord& r);
InterventionRecord record_from_json(const nlohmann::json& j);

/// Returns the current time as "YYYY-MM-DDTHH:MM:SSZ".
using Clock = std::function<std::string()>;
std::string utc_now_iso8601();

/// JSON-lines store. The first line holds {"next_id": N} so ids are never
/// reused; every mutation rewrites a temporary file and renames it over the
/// store, so a reader sees either the old or the new contents.
class RecordStore {
 public:
  explicit RecordStore(std::filesystem::path path, Clock clock = utc_now_iso8601);

  /// Assigns record_id and created_at, persists, and returns the stored record.
  InterventionRecord append(InterventionRecord r);
  std::vector<InterventionRecord> list() const;
  /// Throws not_found for an unknown id.
  void remove(std::int64_t id);
  std::int64_t next_id() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  void persist() const;

  std::filesystem::path path_;
  Clock clock_;
  mutable std::mutex mu_;
  std::vector<InterventionRecord> records_;
  std::int64_t next_id_ = 1;
};

inline constexpr const char* kCsvHeader =
    "record_id,created_at,region,duration_years,perturbations,lag_set,ood_any,sites_at_risk,notes";

/// Quotes a cell when it contains a comma, quote, CR or LF; inner quotes doubled.
std::string csv_escape(const std::string& cell);

/// The nine cells of one exported row, unescaped.
std::vector<std::string> csv_cells(const InterventionRecord& r);

/// Header plus one CRLF-terminated row per record.
std::string export_csv(const std::vector<InterventionRecord>& records);

}  // namespace climemu
