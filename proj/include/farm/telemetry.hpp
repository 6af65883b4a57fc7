#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>

#include <json.hpp>

namespace farm {

using json = nlohmann::json;

// Sensor channels. The first seven are sensed and controlled; solar_radiation
// is sensed only.
enum class Channel : std::uint8_t {
  co2,
  air_temp,
  air_humidity,
  soil_temp,
  soil_moisture,
  ph,
  illumination,
  solar_radiation,
};

inline constexpr std::size_t kChannelCount = 8;

inline constexpr std::array<Channel, kChannelCount> kAllChannels = {
    Channel::co2,          Channel::air_temp,      Channel::air_humidity,
    Channel::soil_temp,    Channel::soil_moisture, Channel::ph,
    Channel::illumination, Channel::solar_radiation,
};

inline constexpr std::array<Channel, 7> kControlledChannels = {
    Channel::co2,       Channel::air_temp,      Channel::air_humidity,
    Channel::soil_temp, Channel::soil_moisture, Channel::ph,
    Channel::illumination,
};

struct ChannelMeta {
  std::string_view name;
  std::string_view unit;
  double min;
  double max;
};

inline constexpr std::array<ChannelMeta, kChannelCount> kChannelTable = {{
    {"co2", "ppm", 0.0, 10000.0},
    {"air_temp", "degC", -10.0, 60.0},
    {"air_humidity", "%RH", 0.0, 100.0},
    {"soil_temp", "degC", -10.0, 60.0},
    {"soil_moisture", "%VWC", 0.0, 100.0},
    {"ph", "pH", 0.0, 14.0},
    {"illumination", "lux", 0.0, 200000.0},
    {"solar_radiation", "W/m2", 0.0, 2000.0},
}};

constexpr std::size_t index_of(Channel c) { return static_cast<std::size_t>(c); }

constexpr const ChannelMeta& channel_meta(Channel c) { return kChannelTable[index_of(c)]; }

constexpr std::string_view to_string(Channel c) { return channel_meta(c).name; }

inline std::optional<Channel> parse_channel(std::string_view name) {
  for (Channel c : kAllChannels)
    if (to_string(c) == name) return c;
  return std::nullopt;
}

enum class Actuator : std::uint8_t {
  air_heater,
  soil_heater,
  fan,
  pump,
  humidifier,
  led,
};

inline constexpr std::size_t kActuatorCount = 6;

inline constexpr std::array<Actuator, kActuatorCount> kAllActuators = {
    Actuator::air_heater, Actuator::soil_heater, Actuator::fan,
    Actuator::pump,       Actuator::humidifier,  Actuator::led,
};

constexpr std::size_t index_of(Actuator a) { return static_cast<std::size_t>(a); }

constexpr std::string_view to_string(Actuator a) {
  constexpr std::array<std::string_view, kActuatorCount> names = {
      "air_heater", "soil_heater", "fan", "pump", "humidifier", "led"};
  return names[index_of(a)];
}

inline std::optional<Actuator> parse_actuator(std::string_view name) {
  for (Actuator a : kAllActuators)
    if (to_string(a) == name) return a;
  return std::nullopt;
}

// Heaters and the LED take a continuous duty; the rest are switched.
constexpr bool is_continuous(Actuator a) {
  return a == Actuator::air_heater || a == Actuator::soil_heater || a == Actuator::led;
}

constexpr bool is_valid_level(Actuator a, double level) {
  if (is_continuous(a)) return level >= 0.0 && level <= 1.0;
  return level == 0.0 || level == 1.0;
}

enum class Quality : std::uint8_t { raw, corrected, fault };

constexpr std::string_view to_string(Quality q) {
  switch (q) {
    case Quality::raw: return "raw";
    case Quality::corrected: return "corrected";
    case Quality::fault: return "fault";
  }
  return "fault";
}

inline std::optional<Quality> parse_quality(std::string_view s) {
  if (s == "raw") return Quality::raw;
  if (s == "corrected") return Quality::corrected;
  if (s == "fault") return Quality::fault;
  return std::nullopt;
}

struct Reading {
  Channel channel = Channel::co2;
  double value = 0.0;  // meaningless when quality == fault
  std::int64_t timestamp = 0;
  Quality quality = Quality::raw;

  bool is_fault() const { return quality == Quality::fault; }

  friend bool operator==(const Reading& a, const Reading& b) {
    if (a.channel != b.channel || a.timestamp != b.timestamp || a.quality != b.quality) return false;
    return a.is_fault() || a.value == b.value;
  }
};

inline bool in_range(Channel c, double v) {
  const auto& m = channel_meta(c);
  return std::isfinite(v) && v >= m.min && v <= m.max;
}

inline Reading validate_reading(Reading r) {
  if (r.quality != Quality::fault && !in_range(r.channel, r.value)) {
    r.quality = Quality::fault;
    r.value = 0.0;
  }
  return r;
}

struct ReadingSet {
  std::int64_t timestamp = 0;
  std::array<Reading, kChannelCount> readings{};

  ReadingSet() {
    for (Channel c : kAllChannels) readings[index_of(c)].channel = c;
  }

  Reading& operator[](Channel c) { return readings[index_of(c)]; }
  const Reading& operator[](Channel c) const { return readings[index_of(c)]; }

  bool all_fault() const {
    for (const auto& r : readings)
      if (!r.is_fault()) return false;
    return true;
  }

  friend bool operator==(const ReadingSet&, const ReadingSet&) = default;
};

struct ActuatorCommandSet {
  std::int64_t timestamp = 0;
  std::array<double, kActuatorCount> levels{};

  double& operator[](Actuator a) { return levels[index_of(a)]; }
  double operator[](Actuator a) const { return levels[index_of(a)]; }

  friend bool operator==(const ActuatorCommandSet&, const ActuatorCommandSet&) = default;
};

inline constexpr double kDaySeconds = 86400.0;

struct SimClock {
  double t = 0.0;

  std::int64_t seconds() const { return static_cast<std::int64_t>(std::floor(t)); }
  double time_of_day() const { return std::fmod(t, kDaySeconds); }
  double hour_of_day() const { return time_of_day() / 3600.0; }
  std::int64_t day() const { return static_cast<std::int64_t>(std::floor(t / kDaySeconds)); }

  void advance(double dt) {
    if (!(dt >= 0.0)) throw std::invalid_argument("clock cannot run backwards");
    t += dt;
  }
};

// Shortest decimal text that parses back to the same double.
inline std::string format_decimal(double v) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc{}) throw std::runtime_error("format_decimal failed");
  return std::string(buf.data(), end);
}

inline std::optional<double> parse_decimal(std::string_view s) {
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline json to_json(const Reading& r) {
  json j = {{"t", r.timestamp}, {"ch", to_string(r.channel)}, {"q", to_string(r.quality)}};
  if (r.is_fault())
    j["v"] = nullptr;
  else
    j["v"] = r.value;
  return j;
}

inline Reading reading_from_json(const json& j) {
  Reading r;
  r.timestamp = j.at("t").get<std::int64_t>();
  auto ch = parse_channel(j.at("ch").get<std::string>());
  if (!ch) throw std::invalid_argument("unknown channel '" + j.at("ch").get<std::string>() + "'");
  r.channel = *ch;
  auto q = parse_quality(j.at("q").get<std::string>());
  if (!q) throw std::invalid_argument("unknown quality '" + j.at("q").get<std::string>() + "'");
  r.quality = *q;
  const auto& v = j.at("v");
  if (r.quality == Quality::fault) {
    r.value = 0.0;
  } else {
    if (!v.is_number()) throw std::invalid_argument("reading value must be a number");
    r.value = v.get<double>();
  }
  return r;
}

// {"co2": 412.0, ...}; fault channels map to null.
inline json values_json(const ReadingSet& rs) {
  json j = json::object();
  for (const auto& r : rs.readings) {
    if (r.is_fault())
      j[std::string(to_string(r.channel))] = nullptr;
    else
      j[std::string(to_string(r.channel))] = r.value;
  }
  return j;
}

inline json to_json(const ActuatorCommandSet& cmd) {
  json j = json::object();
  for (Actuator a : kAllActuators) j[std::string(to_string(a))] = cmd[a];
  return j;
}

inline ActuatorCommandSet commands_from_json(const json& j, std::int64_t timestamp = 0) {
  ActuatorCommandSet cmd;
  cmd.timestamp = timestamp;
  for (Actuator a : kAllActuators) {
    double level = j.at(std::string(to_string(a))).get<double>();
    if (!is_valid_level(a, level))
      throw std::invalid_argument("level out of bounds for " + std::string(to_string(a)));
    cmd[a] = level;
  }
  return cmd;
}

}  // namespace farm
