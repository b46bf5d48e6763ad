#include "procdata/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <tuple>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "procdata/error.hpp"
#include "procdata/util.hpp"

namespace procdata::ingest {
namespace {

const std::vector<std::string> kRequired = {"seqid", "item_id", "event_type", "timestamp_ms"};
const std::vector<std::string> kOptional = {"event_description", "booklet_id", "country_id"};

std::int64_t parse_timestamp(const std::string& text, std::size_t line) {
  std::int64_t value = 0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (text.empty() || ec != std::errc() || ptr != last) {
    throw Error(ErrorCode::BadTimestamp,
                "line " + std::to_string(line) + ": timestamp '" + text + "' is not an integer");
  }
  return value;
}

EventTable parse_delimited(std::istream& in, const ParseOptions& opt) {
  util::CsvReader reader(in, opt.delimiter);
  std::vector<std::string> header;
  EventTable table;
  if (!reader.next(header)) return table;

  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < header.size(); ++i) position.emplace(header[i], i);

  std::map<std::string, std::size_t> column;
  for (const auto& name : kRequired) {
    const std::string source = opt.columns.lookup(name);
    auto it = position.find(source);
    if (it == position.end())
      throw Error(ErrorCode::MissingColumn, "required column '" + source + "' not in header");
    column[name] = it->second;
  }
  for (const auto& name : kOptional) {
    auto it = position.find(opt.columns.lookup(name));
    if (it != position.end()) column[name] = it->second;
  }

  std::vector<std::string> fields;
  while (reader.next(fields)) {
    if (fields.size() == 1 && fields[0].empty()) continue;  // blank line
    if (fields.size() != header.size()) {
      throw Error(ErrorCode::MalformedRow, "line " + std::to_string(reader.line()) + ": expected " +
                                               std::to_string(header.size()) + " columns, got " +
                                               std::to_string(fields.size()));
    }
    RawEvent ev;
    ev.seqid = fields[column["seqid"]];
    ev.item_id = fields[column["item_id"]];
    ev.event_type = fields[column["event_type"]];
    ev.timestamp_ms = parse_timestamp(fields[column["timestamp_ms"]], reader.line());
    if (auto it = column.find("event_description"); it != column.end())
      ev.event_description = fields[it->second];
    if (auto it = column.find("booklet_id"); it != column.end() && !fields[it->second].empty())
      ev.booklet_id = fields[it->second];
    if (auto it = column.find("country_id"); it != column.end() && !fields[it->second].empty())
      ev.country_id = fields[it->second];
    table.rows.push_back(std::move(ev));
  }
  return table;
}

std::string json_text(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_null()) return {};
  return v.dump();
}

EventTable parse_jsonl(std::istream& in, const ParseOptions& opt) {
  EventTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::MalformedRow, "line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!obj.is_object())
      throw Error(ErrorCode::MalformedRow, "line " + std::to_string(lineno) + ": not a JSON object");
    auto field = [&](const std::string& canonical) -> const nlohmann::json* {
      auto it = obj.find(opt.columns.lookup(canonical));
      return it == obj.end() ? nullptr : &*it;
    };
    for (const auto& name : kRequired) {
      if (!field(name))
        throw Error(ErrorCode::MalformedRow, "line " + std::to_string(lineno) + ": missing field '" +
                                                 opt.columns.lookup(name) + "'");
    }
    RawEvent ev;
    ev.seqid = json_text(*field("seqid"));
    ev.item_id = json_text(*field("item_id"));
    ev.event_type = json_text(*field("event_type"));
    const auto& ts = *field("timestamp_ms");
    if (ts.is_number_integer()) {
      ev.timestamp_ms = ts.get<std::int64_t>();
    } else if (ts.is_string()) {
      ev.timestamp_ms = parse_timestamp(ts.get<std::string>(), lineno);
    } else {
      throw Error(ErrorCode::BadTimestamp,
                  "line " + std::to_string(lineno) + ": timestamp '" + ts.dump() + "' is not an integer");
    }
    if (const auto* d = field("event_description")) ev.event_description = json_text(*d);
    if (const auto* b = field("booklet_id"); b && !b->is_null()) ev.booklet_id = json_text(*b);
    if (const auto* c = field("country_id"); c && !c->is_null()) ev.country_id = json_text(*c);
    table.rows.push_back(std::move(ev));
  }
  return table;
}

}  // namespace

std::string ColumnMap::lookup(const std::string& canonical) const {
  auto it = source_names.find(canonical);
  return it == source_names.end() ? canonical : it->second;
}

EventTable parse_log(std::istream& source, const ParseOptions& options) {
  return options.format == Format::Delimited ? parse_delimited(source, options)
                                             : parse_jsonl(source, options);
}

EventTable parse_log_file(const std::string& path, const ParseOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open input file '" + path + "'");
  return parse_log(in, options);
}

void write_log(std::ostream& out, const EventTable& table, char delimiter) {
  util::CsvWriter w(out, delimiter);
  w.row({"seqid", "item_id", "event_type", "event_description", "timestamp_ms", "booklet_id",
         "country_id"});
  for (const auto& r : table.rows) {
    w.row({r.seqid, r.item_id, r.event_type, r.event_description, std::to_string(r.timestamp_ms),
           r.booklet_id.value_or(""), r.country_id.value_or("")});
  }
}

const char* to_string(IssueCode code) {
  switch (code) {
    case IssueCode::MissingField: return "MISSING_FIELD";
    case IssueCode::NegativeTimestamp: return "NEGATIVE_TIMESTAMP";
    case IssueCode::NonMonotoneTimestamp: return "NON_MONOTONE_TIMESTAMP";
    case IssueCode::UnknownEventType: return "UNKNOWN_EVENT_TYPE";
  }
  return "UNKNOWN";
}

std::size_t ValidationReport::count(IssueCode code) const {
  return static_cast<std::size_t>(
      std::count_if(issues.begin(), issues.end(), [&](const Issue& i) { return i.code == code; }));
}

ValidationReport validate_events(const EventTable& table, const std::set<std::string>& known) {
  ValidationReport report;
  report.row_count = table.rows.size();
  std::map<std::pair<std::string, std::string>, std::int64_t> last_ts;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& r = table.rows[i];
    for (auto [value, name] : {std::pair{&r.seqid, "seqid"}, std::pair{&r.item_id, "item_id"},
                               std::pair{&r.event_type, "event_type"}}) {
      if (value->empty())
        report.issues.push_back({i, IssueCode::MissingField, std::string(name) + " is empty"});
    }
    if (r.timestamp_ms < 0)
      report.issues.push_back({i, IssueCode::NegativeTimestamp,
                               "timestamp " + std::to_string(r.timestamp_ms) + " is negative"});
    if (!known.empty() && !r.event_type.empty() && !known.count(r.event_type))
      report.issues.push_back(
          {i, IssueCode::UnknownEventType, "event type '" + r.event_type + "' not in vocabulary"});

    auto key = std::make_pair(r.item_id, r.seqid);
    auto it = last_ts.find(key);
    if (it != last_ts.end() && r.timestamp_ms < it->second) {
      report.issues.push_back({i, IssueCode::NonMonotoneTimestamp,
                               "timestamp " + std::to_string(r.timestamp_ms) + " after " +
                                   std::to_string(it->second)});
    }
    last_ts[key] = r.timestamp_ms;
  }
  report.group_count = last_ts.size();
  return report;
}

EventTable canonicalize(const EventTable& table) {
  EventTable out = table;
  std::stable_sort(out.rows.begin(), out.rows.end(), [](const RawEvent& a, const RawEvent& b) {
    return std::tie(a.item_id, a.seqid) < std::tie(b.item_id, b.seqid);
  });
  return out;
}

}  // namespace procdata::ingest
