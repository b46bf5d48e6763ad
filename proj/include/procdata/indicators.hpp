#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "procdata/preprocess.hpp"

namespace procdata::indicators {

using preprocess::ActionSequence;

struct IndicatorRecord {
  std::string seqid;
  std::string item_id;
  std::int64_t tot_ms = 0;
  std::optional<std::int64_t> tfa_ms;  // missing when the sequence has no actions
  std::size_t noa = 0;
};

std::int64_t time_on_task(const ActionSequence& seq);
std::optional<std::int64_t> time_to_first_action(const ActionSequence& seq);
std::size_t number_of_actions(const ActionSequence& seq);

IndicatorRecord indicator_record(const ActionSequence& seq);

// Order statistics with linear interpolation between adjacent values
// (the median of an even-sized sample is the mean of the two central values).
struct Summary {
  std::size_t n = 0;
  double mean = 0;
  double q1 = 0;
  double median = 0;
  double q3 = 0;
};

Summary summarize(std::vector<double> values);

struct ItemSummary {
  std::string item_id;
  std::size_t sequences = 0;
  Summary tot_ms;
  Summary tfa_ms;  // over non-missing values
  Summary noa;
};

struct IndicatorTable {
  std::vector<IndicatorRecord> records;  // ordered by (item_id, seqid)
  std::vector<ItemSummary> summaries;    // ordered by item_id
};

IndicatorTable indicator_table(const std::vector<ActionSequence>& sequences);

// seqid,item_id,tot_ms,tfa_ms,noa with an empty tfa_ms field when missing.
void write_records(std::ostream& out, const std::vector<IndicatorRecord>& records);
// One row per (item, indicator) with statistics in native units plus seconds
// to one decimal for the time indicators.
void write_summaries(std::ostream& out, const std::vector<ItemSummary>& summaries);

}  // namespace procdata::indicators
