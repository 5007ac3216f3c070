#include "climemu/records.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

#include "climemu/error.hpp"

namespace climemu {

namespace {

std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string region_cell(const RegionSpec& r) {
  if (r.kind == RegionKind::named) return *r.name;
  return region_to_json(r).dump();
}

}  // namespace

std::string utc_now_iso8601() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::json record_to_json(const InterventionRecord& r) {
  nlohmann::json sites = nlohmann::json::array();
  for (const auto& s : r.tipping_summary) sites.push_back({{"site_id", s.site_id}, {"at_risk", s.at_risk}});
  return {{"record_id", r.record_id},
          {"created_at", r.created_at},
          {"scenario", scenario_to_json(r.scenario)},
          {"ood_flags", r.ood_flags},
          {"tipping_summary", sites},
          {"notes", r.notes}};
}

InterventionRecord record_from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrorCode::invalid_argument, "record must be a JSON object", "");
  InterventionRecord r;
  if (j.contains("record_id")) r.record_id = j["record_id"].get<std::int64_t>();
  r.created_at = j.value("created_at", std::string());
  if (!j.contains("scenario")) fail(ErrorCode::invalid_argument, "scenario is required", "scenario");
  try {
    r.scenario = scenario_from_json(j["scenario"]);
  } catch (const Error& e) {
    fail(e.code(), e.what(), e.field_path().empty() ? "scenario" : "scenario." + e.field_path());
  }
  if (j.contains("ood_flags")) {
    if (!j["ood_flags"].is_object())
      fail(ErrorCode::invalid_argument, "ood_flags must be an object", "ood_flags");
    for (const auto& [k, v] : j["ood_flags"].items()) {
      if (!v.is_boolean()) fail(ErrorCode::invalid_argument, "ood flag must be boolean", "ood_flags." + k);
      r.ood_flags[k] = v.get<bool>();
    }
  }
  if (j.contains("tipping_summary")) {
    const auto& ts = j["tipping_summary"];
    if (!ts.is_array())
      fail(ErrorCode::invalid_argument, "tipping_summary must be an array", "tipping_summary");
    for (std::size_t i = 0; i < ts.size(); ++i) {
      const std::string path = "tipping_summary[" + std::to_string(i) + "]";
      if (!ts[i].is_object() || !ts[i].contains("site_id") || !ts[i]["site_id"].is_string() ||
          !ts[i].contains("at_risk") || !ts[i]["at_risk"].is_boolean())
        fail(ErrorCode::invalid_argument, "expected {site_id, at_risk}", path);
      r.tipping_summary.push_back({ts[i]["site_id"].get<std::string>(), ts[i]["at_risk"].get<bool>()});
    }
  }
  if (j.contains("notes")) {
    if (!j["notes"].is_string()) fail(ErrorCode::invalid_argument, "notes must be a string", "notes");
    r.notes = j["notes"].get<std::string>();
  }
  return r;
}

RecordStore::RecordStore(std::filesystem::path path, Clock clock)
    : path_(std::move(path)), clock_(std::move(clock)) {
  std::ifstream is(path_);
  if (!is) return;  // a new store
  std::string line;
  bool first = true;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::corrupt_file, path_.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (first && j.contains("next_id")) {
      next_id_ = j["next_id"].get<std::int64_t>();
      first = false;
      continue;
    }
    first = false;
    records_.push_back(record_from_json(j));
    next_id_ = std::max(next_id_, records_.back().record_id + 1);
  }
}

void RecordStore::persist() const {
  std::filesystem::path tmp = path_;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) fail(ErrorCode::io_error, "cannot write " + tmp.string());
    os << nlohmann::json{{"next_id", next_id_}, {"schema_version", 1}}.dump() << '\n';
    for (const auto& r : records_) os << record_to_json(r).dump() << '\n';
    os.flush();
    if (!os) fail(ErrorCode::io_error, "failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path_);
}

InterventionRecord RecordStore::append(InterventionRecord r) {
  r.scenario.validate();
  std::lock_guard lock(mu_);
  r.record_id = next_id_;
  r.created_at = clock_();
  records_.push_back(r);
  ++next_id_;
  try {
    persist();
  } catch (...) {
    records_.pop_back();
    --next_id_;
    throw;
  }
  return r;
}

std::vector<InterventionRecord> RecordStore::list() const {
  std::lock_guard lock(mu_);
  return records_;
}

void RecordStore::remove(std::int64_t id) {
  std::lock_guard lock(mu_);
  const auto it = std::find_if(records_.begin(), records_.end(),
                               [&](const InterventionRecord& r) { return r.record_id == id; });
  if (it == records_.end())
    fail(ErrorCode::not_found, "no record with id " + std::to_string(id), "record_id");
  const InterventionRecord removed = *it;
  const auto pos = records_.erase(it);
  try {
    persist();
  } catch (...) {
    records_.insert(pos, removed);
    throw;
  }
}

std::int64_t RecordStore::next_id() const {
  std::lock_guard lock(mu_);
  return next_id_;
}

std::string csv_escape(const std::string& cell) {
  if (cell.find_first_of(",\"\r\n") == std::string::npos) return cell;
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::vector<std::string> csv_cells(const InterventionRecord& r) {
  std::vector<std::string> perts;
  for (const auto& [id, p] : r.scenario.perturbations)
    perts.push_back(id + ":" + to_string(p.mode) + ":" + shortest(p.value));
  std::vector<std::string> lags;
  for (int l : r.scenario.lag_set) lags.push_back(std::to_string(l));
  bool ood_any = false;
  for (const auto& [_, f] : r.ood_flags) ood_any = ood_any || f;
  std::vector<std::string> at_risk;
  for (const auto& s : r.tipping_summary)
    if (s.at_risk) at_risk.push_back(s.site_id);
  return {std::to_string(r.record_id),
          r.created_at,
          region_cell(r.scenario.region),
          std::to_string(r.scenario.duration_years),
          join(perts, ';'),
          join(lags, ';'),
          ood_any ? "true" : "false",
          join(at_risk, ';'),
          r.notes};
}

std::string export_csv(const std::vector<InterventionRecord>& records) {
  std::string out = kCsvHeader;
  out += "\r\n";
  for (const auto& r : records) {
    const auto cells = csv_cells(r);
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += csv_escape(cells[i]);
    }
    out += "\r\n";
  }
  return out;
}

}  // namespace climemu
