#include "procdata/preprocess.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <tuple>
#include <unordered_map>

#include "procdata/error.hpp"
#include "procdata/util.hpp"

namespace procdata::preprocess {
namespace {

struct CompiledExtraction {
  std::string event_type;
  std::regex re;
};

struct CompiledRecode {
  std::regex re;
  std::string replacement;
};

std::regex compile(const std::string& pattern) {
  try {
    return std::regex(pattern, std::regex::ECMAScript);
  } catch (const std::regex_error& e) {
    throw Error(ErrorCode::Config, "invalid pattern '" + pattern + "': " + e.what());
  }
}

std::vector<CompiledExtraction> compile(const std::vector<ExtractionRule>& rules) {
  std::vector<CompiledExtraction> out;
  for (const auto& r : rules) out.push_back({r.event_type, compile(r.pattern)});
  return out;
}

std::vector<CompiledRecode> compile(const std::vector<RecodeRule>& rules) {
  std::vector<CompiledRecode> out;
  for (const auto& r : rules) out.push_back({compile(r.pattern), r.replacement});
  return out;
}

void standardize_in_place(std::vector<Action>& actions, const std::vector<CompiledExtraction>& rules) {
  for (auto& a : actions) {
    a.action_event = util::to_lower(a.event_type);
    for (const auto& rule : rules) {
      if (!rule.event_type.empty() && rule.event_type != a.event_type) continue;
      std::smatch m;
      if (std::regex_search(a.event_description, m, rule.re) && m.size() > 1 && m[1].length() > 0) {
        a.action_event += "_" + util::to_lower(m[1].str());
        break;
      }
    }
  }
}

void recode_in_place(std::vector<Action>& actions, const std::vector<CompiledRecode>& rules) {
  for (auto& a : actions) {
    a.merged_event = a.action_event;
    for (const auto& rule : rules) {
      std::smatch m;
      if (std::regex_match(a.action_event, m, rule.re)) {
        a.merged_event = m.format(rule.replacement);
        break;
      }
    }
  }
}

Action to_action(const RawEvent& e) {
  Action a;
  a.seqid = e.seqid;
  a.event_type = e.event_type;
  a.event_description = e.event_description;
  a.timestamp_ms = e.timestamp_ms;
  return a;
}

std::int64_t floor_half(std::int64_t v) { return v >= 0 ? v / 2 : -((-v + 1) / 2); }

}  // namespace

std::vector<std::string> ActionSequence::labels(bool merged) const {
  std::vector<std::string> out;
  out.reserve(actions.size());
  for (const auto& a : actions) out.push_back(merged ? a.merged_event : a.action_event);
  return out;
}

std::vector<RawEvent> sort_and_correct_timestamps(const std::vector<RawEvent>& group, const Config& config,
                                                  std::vector<Warning>* warnings) {
  // segments[0] precedes the first restart; restarts[k] opens segments[k + 1].
  std::vector<std::vector<RawEvent>> segments(1);
  std::vector<RawEvent> restarts;
  for (const auto& e : group) {
    if (e.event_type == config.restart_event) {
      restarts.push_back(e);
      segments.emplace_back();
    } else {
      segments.back().push_back(e);
    }
  }
  auto by_time = [](const RawEvent& a, const RawEvent& b) { return a.timestamp_ms < b.timestamp_ms; };
  for (auto& seg : segments) std::stable_sort(seg.begin(), seg.end(), by_time);

  auto warn = [&](const RawEvent& e, const char* code, std::string detail) {
    if (warnings) warnings->push_back({code, e.item_id, e.seqid, std::move(detail)});
  };

  std::vector<RawEvent> out;
  out.reserve(group.size());
  out.insert(out.end(), segments[0].begin(), segments[0].end());

  for (std::size_t k = 0; k < restarts.size(); ++k) {
    RawEvent restart = restarts[k];
    const bool has_preceding = !out.empty();
    const std::int64_t preceding = has_preceding ? out.back().timestamp_ms : 0;

    // Next non-restart event; chained restarts look past empty segments.
    const RawEvent* following = nullptr;
    for (std::size_t s = k + 1; s < segments.size() && !following; ++s)
      if (!segments[s].empty()) following = &segments[s].front();

    std::int64_t corrected;
    if (following) {
      corrected = preceding + floor_half(following->timestamp_ms);
      if (!has_preceding) warn(restart, "RESTART_FIRST", "restart has no preceding event");
    } else {
      corrected = preceding + 1;
      warn(restart, "RESTART_AT_END", "restart has no following event");
    }
    warn(restart, "RESTART_CORRECTED",
         "raw " + std::to_string(restart.timestamp_ms) + " -> " + std::to_string(corrected));
    restart.timestamp_ms = corrected;
    out.push_back(restart);
    for (RawEvent e : segments[k + 1]) {
      e.timestamp_ms += corrected;
      out.push_back(std::move(e));
    }
  }
  return out;
}

std::vector<RawEvent> deduplicate(const std::vector<RawEvent>& group, KeypressPolicy policy,
                                  const std::set<std::string>& keypress_types) {
  std::set<std::tuple<std::string, std::string, std::int64_t>> seen;
  std::vector<RawEvent> out;
  out.reserve(group.size());
  for (const auto& e : group) {
    if (policy == KeypressPolicy::Keep && keypress_types.count(e.event_type)) {
      out.push_back(e);
      continue;
    }
    if (seen.emplace(e.event_type, e.event_description, e.timestamp_ms).second) out.push_back(e);
  }
  return out;
}

std::vector<Action> consolidate_threshold(const std::vector<RawEvent>& group, std::int64_t threshold_ms) {
  if (threshold_ms <= 0) throw Error(ErrorCode::InvalidArgument, "threshold_ms must be positive");
  std::vector<Action> out;
  std::int64_t core_ts = 0;
  for (const auto& e : group) {
    if (!out.empty() && e.timestamp_ms - core_ts <= threshold_ms) continue;
    out.push_back(to_action(e));
    core_ts = e.timestamp_ms;
  }
  return out;
}

void validate_rules(const std::vector<ConsolidationRule>& rules) {
  std::set<std::string> cores;
  for (const auto& r : rules) {
    if (r.ancillaries.empty())
      throw Error(ErrorCode::ConflictingRules, "rule for core '" + r.core + "' has no ancillaries");
    if (!cores.insert(r.core).second)
      throw Error(ErrorCode::ConflictingRules, "two rules share core event type '" + r.core + "'");
  }
}

std::vector<Action> consolidate_pattern(const std::vector<RawEvent>& group,
                                        const std::vector<ConsolidationRule>& rules) {
  validate_rules(rules);
  std::unordered_map<std::string, const ConsolidationRule*> by_core;
  for (const auto& r : rules) by_core.emplace(r.core, &r);

  std::vector<Action> out;
  out.reserve(group.size());
  std::size_t i = 0;
  while (i < group.size()) {
    const auto& e = group[i];
    std::size_t consumed = 1;
    if (auto it = by_core.find(e.event_type); it != by_core.end()) {
      const auto& anc = it->second->ancillaries;
      bool match = i + anc.size() < group.size();
      for (std::size_t k = 0; match && k < anc.size(); ++k)
        match = group[i + 1 + k].event_type == anc[k];
      if (match) consumed += anc.size();
    }
    out.push_back(to_action(e));
    i += consumed;
  }
  return out;
}

std::vector<Action> standardize_labels(std::vector<Action> actions, const std::vector<ExtractionRule>& rules) {
  standardize_in_place(actions, compile(rules));
  return actions;
}

std::vector<Action> apply_recodes(std::vector<Action> actions, const std::vector<RecodeRule>& rules) {
  recode_in_place(actions, compile(rules));
  return actions;
}

BuildResult build_sequences(const ingest::EventTable& table, const Config& config, unsigned workers) {
  if (config.consolidation == ConsolidationMode::Pattern) validate_rules(config.consolidation_rules);
  if (config.consolidation == ConsolidationMode::Threshold && config.threshold_ms <= 0)
    throw Error(ErrorCode::Config, "preprocess.threshold_ms must be positive");
  const auto extraction = compile(config.extraction_rules);
  const auto recodes = compile(config.recode_rules);

  std::map<std::pair<std::string, std::string>, std::vector<RawEvent>> groups;
  for (const auto& r : table.rows) groups[{r.item_id, r.seqid}].push_back(r);

  std::vector<const std::pair<const std::pair<std::string, std::string>, std::vector<RawEvent>>*> order;
  for (const auto& g : groups) order.push_back(&g);

  BuildResult result;
  result.sequences.resize(order.size());
  std::vector<std::vector<Warning>> warnings(order.size());

  util::parallel_for(order.size(), workers, [&](std::size_t gi) {
    const auto& [key, events] = *order[gi];
    auto& warn = warnings[gi];
    auto corrected = sort_and_correct_timestamps(events, config, &warn);

    std::int64_t t_sub = corrected.back().timestamp_ms;
    if (!config.submission_event.empty()) {
      for (auto it = corrected.rbegin(); it != corrected.rend(); ++it) {
        if (it->event_type == config.submission_event) {
          t_sub = it->timestamp_ms;
          break;
        }
      }
    }

    auto deduped = deduplicate(corrected, config.keypress_policy, config.keypress_types);
    std::erase_if(deduped, [&](const RawEvent& e) {
      return (!config.include_start_marker && e.event_type == config.start_event) ||
             (!config.include_end_events && e.event_type == config.end_event);
    });

    std::vector<Action> actions;
    switch (config.consolidation) {
      case ConsolidationMode::Threshold:
        actions = consolidate_threshold(deduped, config.threshold_ms);
        break;
      case ConsolidationMode::Pattern:
        actions = consolidate_pattern(deduped, config.consolidation_rules);
        break;
      case ConsolidationMode::None:
        for (const auto& e : deduped) actions.push_back(to_action(e));
        break;
    }
    standardize_in_place(actions, extraction);
    recode_in_place(actions, recodes);

    for (std::size_t k = 1; k < actions.size(); ++k) {
      if (actions[k].timestamp_ms == actions[k - 1].timestamp_ms) {
        warn.push_back({"KEYPRESS_TIE", key.first, key.second,
                        "tied timestamp " + std::to_string(actions[k].timestamp_ms)});
      }
    }

    ActionSequence seq;
    seq.item_id = key.first;
    seq.seqid = key.second;
    seq.t0_ms = 0;
    if (!actions.empty()) t_sub = std::max(t_sub, actions.back().timestamp_ms);
    seq.t_sub_ms = t_sub;
    seq.actions = std::move(actions);
    result.sequences[gi] = std::move(seq);
  });

  for (auto& w : warnings)
    result.warnings.insert(result.warnings.end(), std::make_move_iterator(w.begin()),
                           std::make_move_iterator(w.end()));
  return result;
}

void write_actions(std::ostream& out, const std::vector<ActionSequence>& sequences) {
  util::CsvWriter w(out);
  w.row({"SEQID", "item_id", "event_type", "event_description", "action_event", "merged_event",
         "timestamp_ms"});
  for (const auto& s : sequences)
    for (const auto& a : s.actions)
      w.row({a.seqid, s.item_id, a.event_type, a.event_description, a.action_event, a.merged_event,
             std::to_string(a.timestamp_ms)});
}

void write_sequence_index(std::ostream& out, const std::vector<ActionSequence>& sequences) {
  util::CsvWriter w(out);
  w.row({"item_id", "seqid", "t_sub_ms", "n_actions"});
  for (const auto& s : sequences)
    w.row({s.item_id, s.seqid, std::to_string(s.t_sub_ms), std::to_string(s.actions.size())});
}

namespace {

std::int64_t to_int(const std::string& text, std::size_t line) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size())
    throw Error(ErrorCode::BadTimestamp, "line " + std::to_string(line) + ": '" + text + "' is not an integer");
  return v;
}

std::map<std::string, std::size_t> header_index(const std::vector<std::string>& header,
                                                const std::vector<std::string>& required) {
  std::map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < header.size(); ++i) idx[header[i]] = i;
  for (const auto& r : required)
    if (!idx.count(r)) throw Error(ErrorCode::MissingColumn, "required column '" + r + "' not in header");
  return idx;
}

}  // namespace

std::vector<ActionSequence> read_sequences(std::istream& actions_in, std::istream* index_in) {
  std::map<std::pair<std::string, std::string>, ActionSequence> seqs;

  util::CsvReader reader(actions_in);
  std::vector<std::string> row;
  if (reader.next(row)) {
    auto idx = header_index(row, {"SEQID", "item_id", "event_type", "event_description", "action_event",
                                  "merged_event", "timestamp_ms"});
    const std::size_t width = row.size();
    while (reader.next(row)) {
      if (row.size() == 1 && row[0].empty()) continue;
      if (row.size() != width)
        throw Error(ErrorCode::MalformedRow, "line " + std::to_string(reader.line()) + ": wrong column count");
      Action a;
      a.seqid = row[idx["SEQID"]];
      a.event_type = row[idx["event_type"]];
      a.event_description = row[idx["event_description"]];
      a.action_event = row[idx["action_event"]];
      a.merged_event = row[idx["merged_event"]];
      a.timestamp_ms = to_int(row[idx["timestamp_ms"]], reader.line());
      auto& s = seqs[{row[idx["item_id"]], a.seqid}];
      s.item_id = row[idx["item_id"]];
      s.seqid = a.seqid;
      s.t_sub_ms = std::max(s.t_sub_ms, a.timestamp_ms);
      s.actions.push_back(std::move(a));
    }
  }

  if (index_in) {
    util::CsvReader ir(*index_in);
    if (ir.next(row)) {
      auto idx = header_index(row, {"item_id", "seqid", "t_sub_ms", "n_actions"});
      const std::size_t width = row.size();
      while (ir.next(row)) {
        if (row.size() == 1 && row[0].empty()) continue;
        if (row.size() != width)
          throw Error(ErrorCode::MalformedRow, "line " + std::to_string(ir.line()) + ": wrong column count");
        auto& s = seqs[{row[idx["item_id"]], row[idx["seqid"]]}];
        s.item_id = row[idx["item_id"]];
        s.seqid = row[idx["seqid"]];
        s.t_sub_ms = to_int(row[idx["t_sub_ms"]], ir.line());
        const auto n = to_int(row[idx["n_actions"]], ir.line());
        if (static_cast<std::size_t>(n) != s.actions.size())
          throw Error(ErrorCode::MalformedRow, "line " + std::to_string(ir.line()) + ": sequence " + s.seqid +
                                                   " declares " + std::to_string(n) + " actions, found " +
                                                   std::to_string(s.actions.size()));
      }
    }
  }

  std::vector<ActionSequence> out;
  out.reserve(seqs.size());
  for (auto& [k, s] : seqs) out.push_back(std::move(s));
  return out;
}

std::vector<ActionSequence> read_sequences_files(const std::string& actions_path, const std::string& index_path) {
  std::ifstream a(actions_path, std::ios::binary);
  if (!a) throw Error(ErrorCode::Io, "cannot open input file '" + actions_path + "'");
  if (index_path.empty()) return read_sequences(a, nullptr);
  std::ifstream i(index_path, std::ios::binary);
  if (!i) throw Error(ErrorCode::Io, "cannot open input file '" + index_path + "'");
  return read_sequences(a, &i);
}

}  // namespace procdata::preprocess
