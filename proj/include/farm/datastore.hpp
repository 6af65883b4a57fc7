#pragma once

// Append-only telemetry log: one JSONL file per day (telemetry-<day>.jsonl)
// plus in-memory series for range queries and a ring buffer of recent
// readings for live graphs.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <variant>
#include <vector>

#include "farm/forecast.hpp"
#include "farm/telemetry.hpp"

namespace farm {

struct AlarmEvent {
  std::int64_t t = 0;
  std::string alarm;
  friend bool operator==(const AlarmEvent&, const AlarmEvent&) = default;
};

using RecordBody = std::variant<Reading, ActuatorCommandSet, AlarmEvent, ForecastReport>;

struct Record {
  std::uint64_t seq = 0;
  RecordBody body;

  std::int64_t timestamp() const {
    struct V {
      std::int64_t operator()(const Reading& r) const { return r.timestamp; }
      std::int64_t operator()(const ActuatorCommandSet& c) const { return c.timestamp; }
      std::int64_t operator()(const AlarmEvent& a) const { return a.t; }
      std::int64_t operator()(const ForecastReport& f) const { return f.computed_at; }
    };
    return std::visit(V{}, body);
  }

  friend bool operator==(const Record&, const Record&) = default;
};

inline json to_json(const Record& r) {
  json j;
  if (const auto* rd = std::get_if<Reading>(&r.body)) {
    j = to_json(*rd);
  } else if (const auto* c = std::get_if<ActuatorCommandSet>(&r.body)) {
    j = {{"t", c->timestamp}, {"cmd", to_json(*c)}};
  } else if (const auto* a = std::get_if<AlarmEvent>(&r.body)) {
    j = {{"t", a->t}, {"alarm", a->alarm}};
  } else {
    const auto& f = std::get<ForecastReport>(r.body);
    j = {{"t", f.computed_at}, {"forecast", to_json(f)}};
  }
  j["seq"] = r.seq;
  return j;
}

inline Record record_from_json(const json& j) {
  Record r;
  r.seq = j.at("seq").get<std::uint64_t>();
  const auto t = j.at("t").get<std::int64_t>();
  if (j.contains("ch")) {
    r.body = reading_from_json(j);
  } else if (j.contains("cmd")) {
    r.body = commands_from_json(j["cmd"], t);
  } else if (j.contains("alarm")) {
    r.body = AlarmEvent{t, j["alarm"].get<std::string>()};
  } else if (j.contains("forecast")) {
    auto f = forecast_from_json(j["forecast"]);
    f.computed_at = t;
    r.body = f;
  } else {
    throw std::invalid_argument("unrecognised record");
  }
  return r;
}

struct SeriesPoint {
  std::int64_t t = 0;
  double v = 0.0;
  friend bool operator==(const SeriesPoint&, const SeriesPoint&) = default;
};

struct Series {
  std::string key;
  std::vector<SeriesPoint> points;
  friend bool operator==(const Series&, const Series&) = default;
};

inline Series downsample(const Series& s, std::int64_t bucket_seconds) {
  if (bucket_seconds < 1) throw std::invalid_argument("downsample: bucket must be >= 1 s");
  Series out;
  out.key = s.key;
  std::optional<std::int64_t> cur;
  double sum = 0.0;
  std::size_t n = 0;
  auto bucket_of = [&](std::int64_t t) {
    std::int64_t q = t / bucket_seconds;
    if (t % bucket_seconds != 0 && t < 0) --q;
    return q * bucket_seconds;
  };
  for (const auto& p : s.points) {
    const auto b = bucket_of(p.t);
    if (cur && *cur != b) {
      out.points.push_back({*cur, sum / static_cast<double>(n)});
      sum = 0.0;
      n = 0;
    }
    cur = b;
    sum += p.v;
    ++n;
  }
  if (cur) out.points.push_back({*cur, sum / static_cast<double>(n)});
  return out;
}

enum class SeriesKind : std::uint8_t { reading, command };

inline std::optional<SeriesKind> parse_series_kind(std::string_view s) {
  if (s == "reading") return SeriesKind::reading;
  if (s == "command") return SeriesKind::command;
  return std::nullopt;
}

class DatastoreError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LoadResult {
  std::vector<Record> records;
  std::size_t skipped_tail_lines = 0;
};

// Reads one log file. A malformed final line is skipped (torn write); a
// malformed line elsewhere is an error.
inline LoadResult load_log_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatastoreError("cannot open " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) lines.push_back(std::move(line));
  LoadResult out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      out.records.push_back(record_from_json(json::parse(lines[i])));
    } catch (const std::exception& e) {
      if (i + 1 == lines.size()) {
        ++out.skipped_tail_lines;
        break;
      }
      throw DatastoreError(path.string() + ":" + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return out;
}

inline std::optional<std::int64_t> log_file_day(const std::filesystem::path& p) {
  const std::string name = p.filename().string();
  if (!name.starts_with("telemetry-") || !name.ends_with(".jsonl")) return std::nullopt;
  const std::string mid = name.substr(10, name.size() - 16);
  std::int64_t day = 0;
  auto [end, ec] = std::from_chars(mid.data(), mid.data() + mid.size(), day);
  if (ec != std::errc{} || end != mid.data() + mid.size()) return std::nullopt;
  return day;
}

inline std::vector<std::filesystem::path> log_files(const std::filesystem::path& dir) {
  std::vector<std::pair<std::int64_t, std::filesystem::path>> files;
  if (std::filesystem::exists(dir))
    for (const auto& e : std::filesystem::directory_iterator(dir))
      if (auto d = log_file_day(e.path())) files.emplace_back(*d, e.path());
  std::sort(files.begin(), files.end());
  std::vector<std::filesystem::path> out;
  for (auto& [d, p] : files) out.push_back(p);
  return out;
}

// Replays every log file in a directory, in day order.
inline LoadResult replay_dir(const std::filesystem::path& dir) {
  LoadResult all;
  for (const auto& f : log_files(dir)) {
    auto r = load_log_file(f);
    all.skipped_tail_lines += r.skipped_tail_lines;
    all.records.insert(all.records.end(), std::make_move_iterator(r.records.begin()), std::make_move_iterator(r.records.end()));
  }
  return all;
}

struct DatastoreOptions {
  std::size_t ring_capacity = 3600;
  std::chrono::milliseconds flush_interval{1000};
  bool persist = true;  // false keeps everything in memory only
};

// Single writer, many readers.
class Datastore {
 public:
  explicit Datastore(std::filesystem::path dir, DatastoreOptions opt = {}) : dir_(std::move(dir)), opt_(opt) {
    if (opt_.persist) {
      std::filesystem::create_directories(dir_);
      auto loaded = replay_dir(dir_);
      skipped_on_open_ = loaded.skipped_tail_lines;
      for (auto& r : loaded.records) index(r);
      if (!loaded.records.empty()) {
        std::uint64_t max_seq = 0;
        for (const auto& r : loaded.records) max_seq = std::max(max_seq, r.seq);
        next_seq_ = max_seq + 1;
      }
    }
  }

  // In-memory store built from existing records (used by replay).
  static Datastore from_records(const std::vector<Record>& records, DatastoreOptions opt = {}) {
    opt.persist = false;
    Datastore ds({}, opt);
    for (const auto& r : records) {
      ds.index(r);
      ds.next_seq_ = std::max(ds.next_seq_, r.seq + 1);
    }
    return ds;
  }

  Datastore(Datastore&& o) noexcept
      : dir_(std::move(o.dir_)), opt_(o.opt_), next_seq_(o.next_seq_), series_(std::move(o.series_)),
        ring_(std::move(o.ring_)), alarms_(std::move(o.alarms_)), skipped_on_open_(o.skipped_on_open_) {}

  ~Datastore() {
    try {
      flush();
    } catch (...) {
    }
  }

  std::uint64_t append(RecordBody body) {
    std::unique_lock lock(mu_);
    Record r{next_seq_, std::move(body)};
    if (opt_.persist) write(r);
    ++next_seq_;
    index_locked(r);
    return r.seq;
  }

  void flush() {
    std::unique_lock lock(mu_);
    if (out_.is_open()) {
      out_.flush();
      if (!out_) throw DatastoreError("flush failed");
    }
    last_flush_ = std::chrono::steady_clock::now();
  }

  void close() {
    flush();
    std::unique_lock lock(mu_);
    out_.close();
    open_day_.reset();
  }

  // Points with from_t <= t < to_t in time order. Unknown keys give an empty series.
  Series query(SeriesKind kind, std::string_view key, std::int64_t from_t, std::int64_t to_t) const {
    if (from_t > to_t) throw std::invalid_argument("query: from_t > to_t");
    std::shared_lock lock(mu_);
    Series out;
    out.key = std::string(key);
    auto it = series_.find(series_key(kind, key));
    if (it == series_.end()) return out;
    const auto& pts = it->second;
    auto lo = std::lower_bound(pts.begin(), pts.end(), from_t, [](const SeriesPoint& p, std::int64_t t) { return p.t < t; });
    auto hi = std::lower_bound(lo, pts.end(), to_t, [](const SeriesPoint& p, std::int64_t t) { return p.t < t; });
    out.points.assign(lo, hi);
    return out;
  }

  std::vector<Reading> recent(Channel c) const {
    std::shared_lock lock(mu_);
    const auto& r = ring_[index_of(c)];
    return {r.begin(), r.end()};
  }

  std::vector<AlarmEvent> alarms() const {
    std::shared_lock lock(mu_);
    return alarms_;
  }

  std::uint64_t next_sequence() const {
    std::shared_lock lock(mu_);
    return next_seq_;
  }

  std::size_t skipped_on_open() const { return skipped_on_open_; }
  const std::filesystem::path& dir() const { return dir_; }

  std::filesystem::path file_for_day(std::int64_t day) const { return dir_ / ("telemetry-" + std::to_string(day) + ".jsonl"); }

 private:
  static std::string series_key(SeriesKind kind, std::string_view key) {
    return (kind == SeriesKind::reading ? "r:" : "c:") + std::string(key);
  }

  static std::int64_t day_of(std::int64_t t) {
    return static_cast<std::int64_t>(std::floor(static_cast<double>(t) / kDaySeconds));
  }

  void write(const Record& r) {
    const auto day = day_of(r.timestamp());
    if (!open_day_ || *open_day_ != day) {
      if (out_.is_open()) out_.close();
      out_.open(file_for_day(day), std::ios::app);
      if (!out_) throw DatastoreError("cannot open " + file_for_day(day).string());
      open_day_ = day;
    }
    out_ << to_json(r).dump() << '\n';
    if (!out_) throw DatastoreError("write failed");
    const auto now = std::chrono::steady_clock::now();
    if (now - last_flush_ >= opt_.flush_interval) {
      out_.flush();
      last_flush_ = now;
    }
  }

  void index(const Record& r) {
    std::unique_lock lock(mu_);
    index_locked(r);
  }

  static void insert_point(std::vector<SeriesPoint>& pts, SeriesPoint p) {
    if (pts.empty() || pts.back().t < p.t) {
      pts.push_back(p);
      return;
    }
    auto it = std::lower_bound(pts.begin(), pts.end(), p.t, [](const SeriesPoint& a, std::int64_t t) { return a.t < t; });
    if (it != pts.end() && it->t == p.t) it->v = p.v;
    else pts.insert(it, p);
  }

  void index_locked(const Record& r) {
    if (const auto* rd = std::get_if<Reading>(&r.body)) {
      if (!rd->is_fault()) insert_point(series_[series_key(SeriesKind::reading, to_string(rd->channel))], {rd->timestamp, rd->value});
      auto& ring = ring_[index_of(rd->channel)];
      ring.push_back(*rd);
      while (ring.size() > opt_.ring_capacity) ring.pop_front();
    } else if (const auto* c = std::get_if<ActuatorCommandSet>(&r.body)) {
      for (Actuator a : kAllActuators) insert_point(series_[series_key(SeriesKind::command, to_string(a))], {c->timestamp, (*c)[a]});
    } else if (const auto* a = std::get_if<AlarmEvent>(&r.body)) {
      alarms_.push_back(*a);
    }
  }

  std::filesystem::path dir_;
  DatastoreOptions opt_;
  mutable std::shared_mutex mu_;
  std::uint64_t next_seq_ = 0;
  std::map<std::string, std::vector<SeriesPoint>, std::less<>> series_;
  std::array<std::deque<Reading>, kChannelCount> ring_{};
  std::vector<AlarmEvent> alarms_;
  std::ofstream out_;
  std::optional<std::int64_t> open_day_;
  std::chrono::steady_clock::time_point last_flush_ = std::chrono::steady_clock::now();
  std::size_t skipped_on_open_ = 0;
};

}  // namespace farm
