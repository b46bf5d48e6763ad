#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace procdata::ingest {

// One row of a flattened event log.
struct RawEvent {
  std::string seqid;
  std::string item_id;
  std::string event_type;
  std::string event_description;
  std::int64_t timestamp_ms = 0;  // elapsed since item presentation
  std::optional<std::string> booklet_id;
  std::optional<std::string> country_id;

  bool operator==(const RawEvent&) const = default;
};

inline constexpr const char* kSchemaVersion = "procdata.events/1";

struct EventTable {
  std::vector<RawEvent> rows;
  std::string schema_version = kSchemaVersion;

  bool operator==(const EventTable&) const = default;
};

enum class Format { Delimited, JsonLines };

// Maps canonical field names (seqid, item_id, event_type, event_description,
// timestamp_ms, booklet_id, country_id) onto the names used by the source.
// Fields absent from the map are looked up under their canonical name.
struct ColumnMap {
  std::map<std::string, std::string> source_names;

  std::string lookup(const std::string& canonical) const;
};

struct ParseOptions {
  Format format = Format::Delimited;
  char delimiter = ',';
  ColumnMap columns;
};

// Parses a flat event log. Rows come out in file order.
// Throws Error(MALFORMED_ROW | BAD_TIMESTAMP | MISSING_COLUMN) naming the
// offending line.
EventTable parse_log(std::istream& source, const ParseOptions& options = {});
EventTable parse_log_file(const std::string& path, const ParseOptions& options = {});

// Writes the canonical delimited form that parse_log reads back unchanged.
void write_log(std::ostream& out, const EventTable& table, char delimiter = ',');

enum class IssueCode { MissingField, NegativeTimestamp, NonMonotoneTimestamp, UnknownEventType };

const char* to_string(IssueCode code);

struct Issue {
  std::size_t row = 0;  // 0-based index into EventTable::rows
  IssueCode code = IssueCode::MissingField;
  std::string message;
};

struct ValidationReport {
  std::size_t row_count = 0;
  std::size_t group_count = 0;
  std::vector<Issue> issues;

  std::size_t count(IssueCode code) const;
};

// Scans the table without modifying it. When `known_event_types` is non-empty,
// rows with event types outside it are reported as UNKNOWN_EVENT_TYPE.
ValidationReport validate_events(const EventTable& table,
                                 const std::set<std::string>& known_event_types = {});

// Stable regrouping of rows by (item_id, seqid); within-group file order kept.
EventTable canonicalize(const EventTable& table);

}  // namespace procdata::ingest
