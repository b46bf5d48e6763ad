#include <gtest/gtest.h>

#include <sstream>

#include "procdata/error.hpp"
#include "procdata/ingest.hpp"

using namespace procdata;
using namespace procdata::ingest;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST(Ingest, ParsesRowsInFileOrder) {
  std::istringstream in(
      "seqid,item_id,event_type,event_description,timestamp_ms\n"
      "S1,U01a,start,,0\n"
      "S1,U01a,MAIL_VIEWED,item101,4000\n"
      "S1,U01a,end,,9000\n");
  const auto t = parse_log(in);
  ASSERT_EQ(t.rows.size(), 3u);
  EXPECT_EQ(t.rows[0].event_type, "start");
  EXPECT_EQ(t.rows[1].event_description, "item101");
  EXPECT_EQ(t.rows[2].timestamp_ms, 9000);
  EXPECT_EQ(t.schema_version, kSchemaVersion);
}

TEST(Ingest, BadTimestampIsReported) {
  std::istringstream in("seqid,item_id,event_type,event_description,timestamp_ms\nS1,U01a,X,,12a4\n");
  EXPECT_EQ(code_of([&] { parse_log(in); }), ErrorCode::BadTimestamp);
}

TEST(Ingest, ColumnMapMatchesCanonicalHeaders) {
  const std::string body = "S1,U01a,MAIL_VIEWED,item101,4000\nS2,U01a,end,,10\n";
  std::istringstream canon("seqid,item_id,event_type,event_description,timestamp_ms\n" + body);
  std::istringstream alt("SEQID,item_id,event_type,event_description,timestamp_ms\n" + body);
  ParseOptions opt;
  opt.columns.source_names["seqid"] = "SEQID";
  EXPECT_EQ(parse_log(canon), parse_log(alt, opt));
}

TEST(Ingest, MissingColumnAndRaggedRow) {
  std::istringstream no_ts("seqid,item_id,event_type\nS1,U01a,X\n");
  EXPECT_EQ(code_of([&] { parse_log(no_ts); }), ErrorCode::MissingColumn);
  std::istringstream ragged("seqid,item_id,event_type,event_description,timestamp_ms\nS1,U01a,X,1\n");
  EXPECT_EQ(code_of([&] { parse_log(ragged); }), ErrorCode::MalformedRow);
}

TEST(Ingest, JsonLinesMatchesDelimited) {
  std::istringstream csv(
      "seqid,item_id,event_type,event_description,timestamp_ms\n"
      "S1,U01a,MAIL_VIEWED,\"a,b\",4000\n");
  std::istringstream jsonl(
      R"({"seqid":"S1","item_id":"U01a","event_type":"MAIL_VIEWED","event_description":"a,b","timestamp_ms":4000})"
      "\n");
  ParseOptions opt;
  opt.format = Format::JsonLines;
  EXPECT_EQ(parse_log(csv), parse_log(jsonl, opt));
}

TEST(Ingest, WriteThenParseRoundTrips) {
  EventTable t;
  t.rows.push_back({"S1", "U01a", "TOOLBAR", "menu=file, \"quoted\"", 5000, "B1", std::nullopt});
  t.rows.push_back({"S1", "U01a", "end", "", 7000, std::nullopt, "US"});
  std::stringstream buf;
  write_log(buf, t);
  EXPECT_EQ(parse_log(buf), t);
}

TEST(Validate, CleanGroupHasNoIssues) {
  EventTable t;
  for (int ts : {0, 10, 20}) t.rows.push_back({"S1", "U01a", "X", "", ts, {}, {}});
  const auto r = validate_events(t);
  EXPECT_TRUE(r.issues.empty());
  EXPECT_EQ(r.group_count, 1u);
}

TEST(Validate, NonMonotoneAtThirdRow) {
  EventTable t;
  for (int ts : {0, 5000, 0, 3000}) t.rows.push_back({"S1", "U01a", "X", "", ts, {}, {}});
  const auto r = validate_events(t);
  ASSERT_EQ(r.count(IssueCode::NonMonotoneTimestamp), 1u);
  EXPECT_EQ(r.issues[0].row, 2u);
}

TEST(Validate, EmptyEventTypeAtSecondRow) {
  EventTable t;
  t.rows.push_back({"S1", "U01a", "X", "", 0, {}, {}});
  t.rows.push_back({"S1", "U01a", "", "", 1, {}, {}});
  const auto r = validate_events(t);
  ASSERT_EQ(r.issues.size(), 1u);
  EXPECT_EQ(r.issues[0].code, IssueCode::MissingField);
  EXPECT_EQ(r.issues[0].row, 1u);
}
