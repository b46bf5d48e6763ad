#include "procdata/indicators.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <ostream>
#include <tuple>

#include "procdata/util.hpp"

namespace procdata::indicators {

std::int64_t time_on_task(const ActionSequence& seq) { return seq.t_sub_ms - seq.t0_ms; }

std::optional<std::int64_t> time_to_first_action(const ActionSequence& seq) {
  if (seq.actions.empty()) return std::nullopt;
  return seq.actions.front().timestamp_ms - seq.t0_ms;
}

std::size_t number_of_actions(const ActionSequence& seq) { return seq.actions.size(); }

IndicatorRecord indicator_record(const ActionSequence& seq) {
  return {seq.seqid, seq.item_id, time_on_task(seq), time_to_first_action(seq), number_of_actions(seq)};
}

namespace {

double quantile_sorted(const std::vector<double>& v, double p) {
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  const double frac = h - static_cast<double>(lo);
  if (frac == 0.0) return v[lo];
  // Midpoint of two equal-weight neighbours is computed symmetrically so the
  // even-n median is exactly (a + b) / 2.
  if (frac == 0.5) return (v[lo] + v[hi]) / 2.0;
  return v[lo] + frac * (v[hi] - v[lo]);
}

}  // namespace

Summary summarize(std::vector<double> values) {
  Summary s;
  s.n = values.size();
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  s.q1 = quantile_sorted(values, 0.25);
  s.median = quantile_sorted(values, 0.5);
  s.q3 = quantile_sorted(values, 0.75);
  return s;
}

IndicatorTable indicator_table(const std::vector<ActionSequence>& sequences) {
  IndicatorTable table;
  table.records.reserve(sequences.size());
  for (const auto& s : sequences) table.records.push_back(indicator_record(s));
  std::sort(table.records.begin(), table.records.end(), [](const auto& a, const auto& b) {
    return std::tie(a.item_id, a.seqid) < std::tie(b.item_id, b.seqid);
  });

  std::map<std::string, std::vector<const IndicatorRecord*>> by_item;
  for (const auto& r : table.records) by_item[r.item_id].push_back(&r);
  for (const auto& [item, recs] : by_item) {
    std::vector<double> tot, tfa, noa;
    for (const auto* r : recs) {
      tot.push_back(static_cast<double>(r->tot_ms));
      if (r->tfa_ms) tfa.push_back(static_cast<double>(*r->tfa_ms));
      noa.push_back(static_cast<double>(r->noa));
    }
    table.summaries.push_back({item, recs.size(), summarize(tot), summarize(tfa), summarize(noa)});
  }
  return table;
}

void write_records(std::ostream& out, const std::vector<IndicatorRecord>& records) {
  util::CsvWriter w(out);
  w.row({"seqid", "item_id", "tot_ms", "tfa_ms", "noa"});
  for (const auto& r : records)
    w.row({r.seqid, r.item_id, std::to_string(r.tot_ms), r.tfa_ms ? std::to_string(*r.tfa_ms) : "",
           std::to_string(r.noa)});
}

namespace {

std::string seconds(double ms) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f", ms / 1000.0);
  return buf;
}

}  // namespace

void write_summaries(std::ostream& out, const std::vector<ItemSummary>& summaries) {
  util::CsvWriter w(out);
  w.row({"item_id", "indicator", "n", "mean", "q1", "median", "q3", "median_s", "mean_s"});
  for (const auto& s : summaries) {
    auto emit = [&](const char* name, const Summary& x, bool time) {
      w.row({s.item_id, name, std::to_string(x.n), util::format_double(x.mean), util::format_double(x.q1),
             util::format_double(x.median), util::format_double(x.q3), time ? seconds(x.median) : "",
             time ? seconds(x.mean) : ""});
    };
    emit("tot_ms", s.tot_ms, true);
    emit("tfa_ms", s.tfa_ms, true);
    emit("noa", s.noa, false);
  }
}

}  // namespace procdata::indicators
