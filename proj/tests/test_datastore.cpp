#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "farm/datastore.hpp"
#include "support.hpp"

using namespace farm;
using namespace farm::testing;
namespace fs = std::filesystem;

namespace {

Reading reading(Channel c, double v, std::int64_t t) { return {c, v, t, Quality::corrected}; }

}  // namespace

TEST(Datastore, RandomRecordsRoundTripThroughDisk) {
  TempDir dir;
  std::mt19937_64 rng(5);
  std::vector<Record> written;
  {
    Datastore ds(dir.path);
    for (int i = 0; i < 100000; ++i) {
      auto body = random_body(rng, i * 3);  // spans several day files
      const auto seq = ds.append(body);
      written.push_back({seq, std::move(body)});
    }
    ds.close();
  }
  const auto loaded = replay_dir(dir.path);
  EXPECT_EQ(loaded.skipped_tail_lines, 0u);
  ASSERT_EQ(loaded.records.size(), written.size());
  for (std::size_t i = 0; i < written.size(); ++i) ASSERT_EQ(loaded.records[i], written[i]) << i;
  EXPECT_GE(log_files(dir.path).size(), 3u);
}

TEST(Datastore, SequenceNumbersStartAtZeroAndResume) {
  TempDir dir;
  {
    Datastore ds(dir.path);
    EXPECT_EQ(ds.append(reading(Channel::co2, 400, 0)), 0u);
    EXPECT_EQ(ds.append(reading(Channel::co2, 401, 1)), 1u);
    ds.close();
  }
  Datastore again(dir.path);
  EXPECT_EQ(again.next_sequence(), 2u);
  EXPECT_EQ(again.append(reading(Channel::co2, 402, 2)), 2u);
  EXPECT_EQ(again.query(SeriesKind::reading, "co2", 0, 10).points.size(), 3u);
}

TEST(Datastore, HalfOpenRangeQuery) {
  Datastore ds = Datastore::from_records({});
  for (int t = 0; t < 5; ++t) ds.append(reading(Channel::air_temp, 20.0 + t, t));
  const auto s = ds.query(SeriesKind::reading, "air_temp", 2, 3);
  ASSERT_EQ(s.points.size(), 1u);
  EXPECT_EQ(s.points[0].t, 2);
  EXPECT_EQ(s.points[0].v, 22.0);
  EXPECT_TRUE(ds.query(SeriesKind::reading, "air_temp", 3, 3).points.empty());
  EXPECT_TRUE(ds.query(SeriesKind::reading, "nope", 0, 10).points.empty());
  EXPECT_THROW(ds.query(SeriesKind::reading, "air_temp", 3, 2), std::invalid_argument);
}

TEST(Datastore, FullDayInOrder) {
  TempDir dir;
  Datastore ds(dir.path);
  for (int t = 0; t < 86400; ++t) ds.append(reading(Channel::ph, 6.0 + (t % 100) * 0.01, t));
  const auto s = ds.query(SeriesKind::reading, "ph", 0, 86400);
  ASSERT_EQ(s.points.size(), 86400u);
  for (std::size_t i = 0; i < s.points.size(); ++i) ASSERT_EQ(s.points[i].t, static_cast<std::int64_t>(i));
}

TEST(Datastore, OutOfOrderAppendsStaySorted) {
  Datastore ds = Datastore::from_records({});
  for (int t : {5, 1, 3, 2, 4}) ds.append(reading(Channel::co2, t * 10.0, t));
  const auto s = ds.query(SeriesKind::reading, "co2", 0, 10);
  ASSERT_EQ(s.points.size(), 5u);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(s.points[i].t, i + 1);
}

TEST(Datastore, FaultsStayOutOfSeriesButReachRing) {
  Datastore ds = Datastore::from_records({});
  ds.append(Reading{Channel::ph, 0.0, 1, Quality::fault});
  EXPECT_TRUE(ds.query(SeriesKind::reading, "ph", 0, 10).points.empty());
  ASSERT_EQ(ds.recent(Channel::ph).size(), 1u);
}

TEST(Datastore, RingCapacity) {
  Datastore ds = Datastore::from_records({}, {.ring_capacity = 10});
  for (int t = 0; t < 25; ++t) ds.append(reading(Channel::co2, t, t));
  const auto r = ds.recent(Channel::co2);
  ASSERT_EQ(r.size(), 10u);
  EXPECT_EQ(r.front().timestamp, 15);
}

TEST(Datastore, CommandSeries) {
  Datastore ds = Datastore::from_records({});
  ActuatorCommandSet c;
  c.timestamp = 7;
  c[Actuator::led] = 0.175;
  ds.append(c);
  const auto s = ds.query(SeriesKind::command, "led", 0, 10);
  ASSERT_EQ(s.points.size(), 1u);
  EXPECT_EQ(s.points[0].v, 0.175);
}

TEST(Downsample, Cases) {
  Series s{"x", {{0, 1.0}, {1, 3.0}, {2, 5.0}, {3, 7.0}, {4, 9.0}}};
  EXPECT_EQ(downsample(s, 1), s);
  const auto d = downsample(s, 2);
  ASSERT_EQ(d.points.size(), 3u);
  EXPECT_EQ(d.points[0].v, 2.0);
  EXPECT_EQ(d.points[1].v, 6.0);
  EXPECT_EQ(d.points[2].v, 9.0);
  EXPECT_THROW(downsample(s, 0), std::invalid_argument);
  EXPECT_TRUE(downsample(Series{}, 60).points.empty());
}

TEST(Downsample, BucketCounts) {
  Series day;
  for (int t = 0; t < 86400; ++t) day.points.push_back({t, 1.0});
  // Frozen from tests/oracles/derive.py.
  EXPECT_EQ(downsample(day, 144).points.size(), 600u);
  Series span;
  for (int t = 0; t < 1000; ++t) span.points.push_back({t, 0.0});
  EXPECT_EQ(downsample(span, 60).points.size(), 17u);
  Series neg{"n", {{-3, 1.0}, {-1, 3.0}, {0, 5.0}}};
  const auto d = downsample(neg, 2);
  ASSERT_EQ(d.points.size(), 3u);
  EXPECT_EQ(d.points[0].t, -4);
  EXPECT_EQ(d.points[1].t, -2);
}

TEST(Datastore, TornFinalLineSkipped) {
  TempDir dir;
  {
    Datastore ds(dir.path);
    for (int t = 0; t < 10; ++t) ds.append(reading(Channel::co2, 400 + t, t));
    ds.close();
  }
  {
    std::ofstream out(dir.path / "telemetry-0.jsonl", std::ios::app);
    out << R"({"t":10,"ch":"co2","v":4)";
  }
  Datastore ds(dir.path);
  EXPECT_EQ(ds.skipped_on_open(), 1u);
  EXPECT_EQ(ds.query(SeriesKind::reading, "co2", 0, 100).points.size(), 10u);
  EXPECT_EQ(ds.next_sequence(), 10u);
}

TEST(Datastore, MalformedMiddleLineIsAnError) {
  TempDir dir;
  fs::create_directories(dir.path);
  {
    std::ofstream out(dir.path / "telemetry-0.jsonl");
    out << "{\"seq\":0,\"t\":0,\"ch\":\"co2\",\"v\":400,\"q\":\"raw\"}\n";
    out << "garbage\n";
    out << "{\"seq\":1,\"t\":1,\"ch\":\"co2\",\"v\":400,\"q\":\"raw\"}\n";
  }
  EXPECT_THROW(Datastore{dir.path}, DatastoreError);
  EXPECT_THROW(load_log_file(dir.path / "missing.jsonl"), DatastoreError);
}

TEST(Datastore, IgnoresUnrelatedFiles) {
  TempDir dir;
  fs::create_directories(dir.path);
  std::ofstream(dir.path / "notes.txt") << "hello";
  std::ofstream(dir.path / "telemetry-x.jsonl") << "junk";
  Datastore ds(dir.path);
  EXPECT_EQ(ds.next_sequence(), 0u);
}
