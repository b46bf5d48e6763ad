#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "procdata/ingest.hpp"

namespace procdata::preprocess {

using ingest::RawEvent;

// One consolidated behavioral unit.
struct Action {
  std::string seqid;
  std::string event_type;
  std::string event_description;
  std::string action_event;  // standardized, lowercase
  std::string merged_event;  // coarse category used by model-based analyses
  std::int64_t timestamp_ms = 0;

  bool operator==(const Action&) const = default;
};

struct ActionSequence {
  std::string seqid;
  std::string item_id;
  std::vector<Action> actions;
  std::int64_t t0_ms = 0;
  std::int64_t t_sub_ms = 0;

  bool operator==(const ActionSequence&) const = default;

  std::vector<std::string> labels(bool merged) const;
};

// A core event immediately followed by `ancillaries` collapses into one action.
struct ConsolidationRule {
  std::string core;
  std::vector<std::string> ancillaries;
};

// Pulls the analytically relevant token out of event_description.
// Applies to rows whose event_type equals `event_type` (empty matches any).
// Capture group 1 of `pattern` supplies the token.
struct ExtractionRule {
  std::string event_type;
  std::string pattern;
};

// `pattern` must match the whole action_event; `replacement` may use $1..$9.
struct RecodeRule {
  std::string pattern;
  std::string replacement;
};

enum class KeypressPolicy { Keep, Drop };
enum class ConsolidationMode { None, Threshold, Pattern };

struct Config {
  std::string start_event = "start";
  std::string end_event = "end";
  std::string restart_event = "restart";
  // Event whose timestamp defines submission; empty means the last event.
  std::string submission_event = "end";
  std::set<std::string> keypress_types = {"KEYPRESS"};
  KeypressPolicy keypress_policy = KeypressPolicy::Keep;
  ConsolidationMode consolidation = ConsolidationMode::Threshold;
  std::int64_t threshold_ms = 50;
  std::vector<ConsolidationRule> consolidation_rules;
  std::vector<ExtractionRule> extraction_rules;
  std::vector<RecodeRule> recode_rules;
  bool include_start_marker = false;
  bool include_end_events = true;
};

struct Warning {
  std::string code;  // RESTART_CORRECTED, RESTART_AT_END, RESTART_FIRST, KEYPRESS_TIE, EMPTY_GROUP
  std::string item_id;
  std::string seqid;
  std::string detail;
};

// Timestamp correction for the events of one (item_id, seqid) group, given in
// file order. Events between restarts are stably sorted; each restart gets
// preceding adjusted time + half the following event's raw time, and that
// value offsets every later event until the next restart.
std::vector<RawEvent> sort_and_correct_timestamps(const std::vector<RawEvent>& group,
                                                  const Config& config = {},
                                                  std::vector<Warning>* warnings = nullptr);

std::vector<RawEvent> deduplicate(const std::vector<RawEvent>& group, KeypressPolicy policy,
                                  const std::set<std::string>& keypress_types = {"KEYPRESS"});

std::vector<Action> consolidate_threshold(const std::vector<RawEvent>& group, std::int64_t threshold_ms);

// Throws CONFLICTING_RULES when two rules share a core type or a rule has no ancillaries.
void validate_rules(const std::vector<ConsolidationRule>& rules);

std::vector<Action> consolidate_pattern(const std::vector<RawEvent>& group,
                                        const std::vector<ConsolidationRule>& rules);

std::vector<Action> standardize_labels(std::vector<Action> actions,
                                       const std::vector<ExtractionRule>& rules);

std::vector<Action> apply_recodes(std::vector<Action> actions, const std::vector<RecodeRule>& rules);

struct BuildResult {
  std::vector<ActionSequence> sequences;  // ordered by (item_id, seqid)
  std::vector<Warning> warnings;
};

BuildResult build_sequences(const ingest::EventTable& table, const Config& config, unsigned workers = 1);

// Action file: SEQID,item_id,event_type,event_description,action_event,merged_event,timestamp_ms
// Sequence index: item_id,seqid,t_sub_ms,n_actions (also carries empty sequences).
void write_actions(std::ostream& out, const std::vector<ActionSequence>& sequences);
void write_sequence_index(std::ostream& out, const std::vector<ActionSequence>& sequences);

// Rebuilds sequences from the two files above. When `index` is null the
// sequence set is derived from the action rows, with t_sub = last timestamp.
std::vector<ActionSequence> read_sequences(std::istream& actions, std::istream* index);
std::vector<ActionSequence> read_sequences_files(const std::string& actions_path,
                                                 const std::string& index_path);

}  // namespace procdata::preprocess
