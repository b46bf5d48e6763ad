#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "procdata/indicators.hpp"

using namespace procdata;
using namespace procdata::indicators;

namespace {

ActionSequence seq(const std::string& id, std::int64_t t_sub, std::vector<std::int64_t> action_times) {
  ActionSequence s;
  s.seqid = id;
  s.item_id = "U01a";
  s.t_sub_ms = t_sub;
  for (auto t : action_times) {
    preprocess::Action a;
    a.seqid = id;
    a.timestamp_ms = t;
    s.actions.push_back(a);
  }
  return s;
}

}  // namespace

TEST(Indicators, TimeOnTask) {
  EXPECT_EQ(time_on_task(seq("a", 99000, {})), 99000);
  EXPECT_EQ(time_on_task(seq("a", 0, {})), 0);
  EXPECT_EQ(time_on_task(seq("a", 82900, {})), 82900);
}

TEST(Indicators, TimeToFirstAction) {
  EXPECT_EQ(time_to_first_action(seq("a", 9000, {4000, 5000})), 4000);
  EXPECT_FALSE(time_to_first_action(seq("a", 9000, {})).has_value());
  EXPECT_EQ(time_to_first_action(seq("a", 9000, {0})), 0);
}

TEST(Indicators, NumberOfActions) {
  EXPECT_EQ(number_of_actions(seq("a", 1, std::vector<std::int64_t>(33, 1))), 33u);
  EXPECT_EQ(number_of_actions(seq("a", 1, {})), 0u);
  EXPECT_EQ(number_of_actions(seq("a", 1, std::vector<std::int64_t>(7, 1))), 7u);
}

TEST(Indicators, SingleSequenceSummaryEqualsRecord) {
  const auto t = indicator_table({seq("a", 5000, {100, 200})});
  ASSERT_EQ(t.summaries.size(), 1u);
  EXPECT_DOUBLE_EQ(t.summaries[0].tot_ms.median, 5000);
  EXPECT_DOUBLE_EQ(t.summaries[0].tot_ms.q1, 5000);
  EXPECT_DOUBLE_EQ(t.summaries[0].noa.mean, 2);
}

TEST(Indicators, EvenSampleMedian) {
  const auto t = indicator_table({seq("a", 100, {}), seq("b", 200, {})});
  EXPECT_DOUBLE_EQ(t.summaries[0].tot_ms.median, 150);
}

// 1340 sequences built around planted medians: the two central order
// statistics of both NoA and ToT are set to the planted values.
TEST(Indicators, PlantedMediansReproduced) {
  std::mt19937_64 rng(11);
  std::vector<ActionSequence> corpus;
  std::vector<int> noa(1340);
  std::vector<std::int64_t> tot(1340);
  for (int i = 0; i < 1340; ++i) {
    noa[i] = i < 669 ? 5 + static_cast<int>(rng() % 28) : i < 671 ? 33 : 34 + static_cast<int>(rng() % 40);
    tot[i] = i < 669 ? 10000 + static_cast<std::int64_t>(rng() % 89000) : i < 671 ? 99000 : 99001 + static_cast<std::int64_t>(rng() % 80000);
  }
  std::shuffle(tot.begin(), tot.end(), rng);
  for (int i = 0; i < 1340; ++i) {
    std::vector<std::int64_t> times(static_cast<std::size_t>(noa[i]));
    for (int k = 0; k < noa[i]; ++k) times[static_cast<std::size_t>(k)] = 100 * (k + 1);
    corpus.push_back(seq("S" + std::to_string(10000 + i), std::max<std::int64_t>(tot[i], times.back()), times));
  }
  const auto t = indicator_table(corpus);
  EXPECT_DOUBLE_EQ(t.summaries[0].noa.median, 33);
  EXPECT_DOUBLE_EQ(t.summaries[0].tot_ms.median, 99000);
}

TEST(Indicators, SummaryQuartilesInterpolate) {
  const auto s = summarize({4, 1, 3, 2});
  EXPECT_DOUBLE_EQ(s.median, 2.5);
  EXPECT_DOUBLE_EQ(s.q1, 1.75);
  EXPECT_DOUBLE_EQ(s.q3, 3.25);
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
}
