#pragma once

// Simulated grow chamber: first-order ODE model of the enclosure plus the
// sensor transducer model. Stands in for the physical farm in every test.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "farm/telemetry.hpp"

namespace farm {

enum class PlantStage : std::uint8_t { germination, vegetative, flowering, fruiting };

inline constexpr std::array<PlantStage, 4> kAllStages = {
    PlantStage::germination, PlantStage::vegetative, PlantStage::flowering, PlantStage::fruiting};

struct StageInfo {
  std::string_view name;
  double duration_days;
  double co2_factor;
  double water_factor;
};

// Default tomato ladder.
inline constexpr std::array<StageInfo, 4> kStageTable = {{
    {"germination", 14.0, 0.2, 0.3},
    {"vegetative", 30.0, 1.0, 1.0},
    {"flowering", 20.0, 0.8, 1.2},
    {"fruiting", 30.0, 0.6, 1.0},
}};

constexpr std::size_t index_of(PlantStage s) { return static_cast<std::size_t>(s); }
constexpr const StageInfo& stage_info(PlantStage s) { return kStageTable[index_of(s)]; }
constexpr std::string_view to_string(PlantStage s) { return stage_info(s).name; }
inline double stage_duration_s(PlantStage s) { return stage_info(s).duration_days * kDaySeconds; }

inline std::optional<PlantStage> parse_stage(std::string_view name) {
  for (PlantStage s : kAllStages)
    if (to_string(s) == name) return s;
  return std::nullopt;
}

// All rates per second.
struct ChamberParams {
  double k_loss = 5e-4;         // envelope heat loss, 1/s
  double p_heat = 5e-3;         // air heater, degC/s at full duty
  double k_vent = 2e-3;         // fan exchange, 1/s
  double k_cond = 2e-4;         // soil-air conduction, 1/s
  double p_soil = 2e-3;         // soil heater, degC/s at full duty
  double u_co2 = 0.05;          // ppm/s at reference lux
  double lux_ref = 10000.0;
  double r_resp = 0.005;        // ppm/s in the dark
  double dark_lux = 50.0;
  double h_hum = 0.01;          // %RH/s
  double d_pump = 0.2;          // %VWC/s
  double w_up = 5e-4;           // %VWC/s before stage factor
  double evap_rh = 1e-4;        // %RH/s per (%VWC * degC)
  double evap_soil = 2e-5;      // %VWC/s per degC
  double evap_base_c = 10.0;
  double l_max = 20000.0;       // lamp output at full duty, lux
  double k_lum = 120.0;         // lux per W/m2
  double ph_walk_sigma = 0.001; // per step
  double ph_walk_lo = 5.5;
  double ph_walk_hi = 7.5;

  // Empty chamber: no crop uptake, respiration, evaporation or pH drift.
  static ChamberParams passive() {
    ChamberParams p;
    p.u_co2 = 0.0;
    p.r_resp = 0.0;
    p.w_up = 0.0;
    p.evap_rh = 0.0;
    p.evap_soil = 0.0;
    p.ph_walk_sigma = 0.0;
    return p;
  }
};

struct AmbientConditions {
  double t_amb = 20.0;
  double rh_amb = 50.0;
  double co2_amb = 420.0;
  double lux_leak = 0.0;
};

struct AmbientProfileSpec {
  double mean_c = 20.0;
  double amp_c = 0.0;
  double rh_amb = 50.0;
  double co2_amb = 420.0;
  double lux_leak = 0.0;
};

// Diurnal sinusoid with its minimum at midnight.
inline AmbientConditions ambient_profile(double t, const AmbientProfileSpec& p) {
  if (t < 0.0) throw std::invalid_argument("ambient_profile: t must be >= 0");
  const double phase = 2.0 * std::numbers::pi * std::fmod(t, kDaySeconds) / kDaySeconds - std::numbers::pi / 2.0;
  return {p.mean_c + p.amp_c * std::sin(phase), p.rh_amb, p.co2_amb, p.lux_leak};
}

struct ChamberState {
  double t_air = 20.0;
  double t_soil = 20.0;
  double rh = 50.0;
  double co2 = 420.0;
  double moisture = 50.0;
  double ph_true = 6.5;
  double lux = 0.0;
  double radiation = 0.0;
  SimClock clock;

  double truth(Channel c) const {
    switch (c) {
      case Channel::co2: return co2;
      case Channel::air_temp: return t_air;
      case Channel::air_humidity: return rh;
      case Channel::soil_temp: return t_soil;
      case Channel::soil_moisture: return moisture;
      case Channel::ph: return ph_true;
      case Channel::illumination: return lux;
      case Channel::solar_radiation: return radiation;
    }
    return 0.0;
  }

  bool physically_equal(const ChamberState& o) const {
    return t_air == o.t_air && t_soil == o.t_soil && rh == o.rh && co2 == o.co2 &&
           moisture == o.moisture && ph_true == o.ph_true && lux == o.lux && radiation == o.radiation;
  }

  friend bool operator==(const ChamberState& a, const ChamberState& b) {
    return a.physically_equal(b) && a.clock.t == b.clock.t;
  }
};

inline void check_state(const ChamberState& s) {
  for (double v : {s.t_air, s.t_soil, s.rh, s.co2, s.moisture, s.ph_true, s.lux, s.radiation, s.clock.t})
    if (!std::isfinite(v)) throw std::invalid_argument("chamber state is not finite");
  if (s.rh < 0.0 || s.rh > 100.0) throw std::invalid_argument("chamber rh out of [0,100]");
  if (s.moisture < 0.0 || s.moisture > 100.0) throw std::invalid_argument("chamber moisture out of [0,100]");
  if (s.co2 < 0.0) throw std::invalid_argument("chamber co2 negative");
  if (s.ph_true < 3.0 || s.ph_true > 10.0) throw std::invalid_argument("chamber ph out of [3,10]");
}

inline double photo_factor(double lux, PlantStage stage, const ChamberParams& p) {
  return std::min(1.0, lux / p.lux_ref) * stage_info(stage).co2_factor;
}

inline double dark_factor(double lux, const ChamberParams& p) { return lux < p.dark_lux ? 1.0 : 0.0; }

// One explicit-Euler step. `process_rng` drives the pH random walk only.
inline ChamberState step(const ChamberState& s, const ActuatorCommandSet& a, const AmbientConditions& amb,
                         PlantStage stage, double dt, const ChamberParams& p, std::mt19937_64& process_rng) {
  if (!(dt > 0.0 && dt <= 5.0)) throw std::invalid_argument("step: dt must be in (0, 5]");
  check_state(s);

  const double heater = std::clamp(a[Actuator::air_heater], 0.0, 1.0);
  const double soil_heater = std::clamp(a[Actuator::soil_heater], 0.0, 1.0);
  const double fan = a[Actuator::fan] >= 0.5 ? 1.0 : 0.0;
  const double pump = a[Actuator::pump] >= 0.5 ? 1.0 : 0.0;
  const double humidifier = a[Actuator::humidifier] >= 0.5 ? 1.0 : 0.0;
  const double led = std::clamp(a[Actuator::led], 0.0, 1.0);

  ChamberState n = s;
  n.t_air = s.t_air + dt * (-p.k_loss * (s.t_air - amb.t_amb) + p.p_heat * heater +
                            p.k_vent * fan * (amb.t_amb - s.t_air));
  n.t_soil = s.t_soil + dt * (-p.k_cond * (s.t_soil - s.t_air) + p.p_soil * soil_heater);
  n.co2 = s.co2 + dt * (-p.u_co2 * photo_factor(s.lux, stage, p) + p.r_resp * dark_factor(s.lux, p) +
                        p.k_vent * fan * (amb.co2_amb - s.co2));
  n.co2 = std::max(0.0, n.co2);

  const double e_evap = p.evap_rh * s.moisture * std::max(0.0, s.t_air - p.evap_base_c);
  n.rh = std::clamp(s.rh + dt * (e_evap + p.h_hum * humidifier - p.k_vent * fan * (s.rh - amb.rh_amb)), 0.0, 100.0);

  const double w_up = p.w_up * stage_info(stage).water_factor;
  const double w_evap = p.evap_soil * std::max(0.0, s.t_soil - p.evap_base_c);
  n.moisture = std::clamp(s.moisture + dt * (-w_up - w_evap + p.d_pump * pump), 0.0, 100.0);

  if (p.ph_walk_sigma > 0.0) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    double ph = s.ph_true + p.ph_walk_sigma * gauss(process_rng);
    if (s.ph_true >= p.ph_walk_lo && s.ph_true <= p.ph_walk_hi) {
      if (ph > p.ph_walk_hi) ph = 2.0 * p.ph_walk_hi - ph;
      if (ph < p.ph_walk_lo) ph = 2.0 * p.ph_walk_lo - ph;
    }
    n.ph_true = std::clamp(ph, 3.0, 10.0);
  }

  n.lux = amb.lux_leak + p.l_max * led;
  n.radiation = n.lux / p.k_lum;
  n.clock.advance(dt);
  check_state(n);
  return n;
}

struct SensorChannelParams {
  double bias0 = 0.0;
  double bias_slope = 0.0;  // per degC of (t_amb - 25)
  double noise_sigma = 0.0; // channel units
};

inline constexpr double kSensorReferenceC = 25.0;

// Typical operating value per channel; noise sigma defaults to 0.5% of it.
inline constexpr std::array<double, kChannelCount> kNominalValues = {
    800.0, 25.0, 60.0, 22.0, 50.0, 6.5, 10000.0, 10000.0 / 120.0};

struct SensorParams {
  std::array<SensorChannelParams, kChannelCount> channels{};

  SensorChannelParams& operator[](Channel c) { return channels[index_of(c)]; }
  const SensorChannelParams& operator[](Channel c) const { return channels[index_of(c)]; }

  double relative_bias(Channel c, double t_amb) const {
    const auto& p = (*this)[c];
    return p.bias0 + p.bias_slope * (t_amb - kSensorReferenceC);
  }

  static SensorParams ideal() { return {}; }

  static SensorParams defaults() {
    SensorParams sp;
    constexpr std::array<double, kChannelCount> bias0 = {0.004, 0.002, 0.003, 0.001, 0.003, 0.0, 0.002, 0.002};
    constexpr std::array<double, kChannelCount> slope = {1.5e-4, 1e-4, 2e-4, 5e-5, 2e-4, 0.008, 1e-4, 2e-4};
    for (Channel c : kAllChannels) {
      auto i = index_of(c);
      sp.channels[i] = {bias0[i], slope[i], 0.005 * kNominalValues[i]};
    }
    return sp;
  }
};

inline ReadingSet sense(const ChamberState& s, const SensorParams& p, const AmbientConditions& amb,
                        std::mt19937_64& sensor_rng) {
  ReadingSet rs;
  rs.timestamp = s.clock.seconds();
  for (Channel c : kAllChannels) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double noise = gauss(sensor_rng);
    auto& r = rs[c];
    r.channel = c;
    r.timestamp = rs.timestamp;
    r.quality = Quality::raw;
    // Output saturates at the channel's range limits like an ADC rail, so a
    // healthy sensor near zero never reads as a fault.
    const double v = s.truth(c) * (1.0 + p.relative_bias(c, amb.t_amb)) + p[c].noise_sigma * noise;
    r.value = std::clamp(v, channel_meta(c).min, channel_meta(c).max);
  }
  return rs;
}

// ---------------------------------------------------------------------------
// Scenarios

struct ScheduleEntry {
  double t = 0.0;
  ActuatorCommandSet levels;
};

struct ScenarioSpec {
  double duration_s = 10.0;
  double dt_s = 1.0;
  std::uint64_t seed = 1;
  AmbientProfileSpec ambient;
  ChamberState initial_state;
  SensorParams sensor_params = SensorParams::defaults();
  PlantStage stage = PlantStage::germination;
  ChamberParams chamber;
  // Open-loop actuation, piecewise constant; the entry with the largest t <= now applies.
  std::vector<ScheduleEntry> schedule;

  ActuatorCommandSet scheduled(double t) const {
    ActuatorCommandSet cmd;
    for (const auto& e : schedule) {
      if (e.t <= t) cmd = e.levels;
      else break;
    }
    cmd.timestamp = static_cast<std::int64_t>(std::floor(t));
    return cmd;
  }
};

struct TraceEntry {
  ChamberState state;  // state at the sampling instant
  ReadingSet raw;
  ActuatorCommandSet cmd;  // applied over [t, t + dt)

  friend bool operator==(const TraceEntry&, const TraceEntry&) = default;
};

struct Trace {
  std::vector<TraceEntry> entries;
  ChamberState final_state;
};

using TickCallback =
    std::function<ActuatorCommandSet(const ReadingSet& raw, const SimClock& clock, const AmbientConditions& amb)>;

class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void check_spec(const ScenarioSpec& spec) {
  if (!(spec.duration_s > 0.0)) throw std::invalid_argument("scenario duration must be > 0");
  if (!(spec.dt_s > 0.0 && spec.dt_s <= 5.0)) throw std::invalid_argument("scenario dt must be in (0, 5]");
  check_state(spec.initial_state);
}

// Split one seed into independent sensor-noise and process streams.
struct SimRngs {
  std::mt19937_64 sensor;
  std::mt19937_64 process;

  explicit SimRngs(std::uint64_t seed) {
    std::seed_seq a{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x53u};
    std::seed_seq b{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x50u};
    sensor.seed(a);
    process.seed(b);
  }
};

inline Trace run_scenario(const ScenarioSpec& spec, const TickCallback& controller = {}) {
  check_spec(spec);
  SimRngs rngs(spec.seed);
  Trace trace;
  const auto steps = static_cast<std::size_t>(std::llround(spec.duration_s / spec.dt_s));
  trace.entries.reserve(steps);

  ChamberState s = spec.initial_state;
  for (std::size_t i = 0; i < steps; ++i) {
    const auto amb = ambient_profile(s.clock.t, spec.ambient);
    TraceEntry e;
    e.state = s;
    e.raw = sense(s, spec.sensor_params, amb, rngs.sensor);
    if (controller) {
      try {
        e.cmd = controller(e.raw, s.clock, amb);
      } catch (const std::exception& ex) {
        throw ScenarioError(std::string("controller failed: ") + ex.what());
      }
    } else {
      e.cmd = spec.scheduled(s.clock.t);
    }
    e.cmd.timestamp = s.clock.seconds();
    s = step(s, e.cmd, amb, spec.stage, spec.dt_s, spec.chamber, rngs.process);
    trace.entries.push_back(std::move(e));
  }
  trace.final_state = s;
  return trace;
}

// ---------------------------------------------------------------------------
// JSON

inline json to_json(const ChamberState& s) {
  return {{"t", s.clock.t},       {"t_air", s.t_air}, {"t_soil", s.t_soil},       {"rh", s.rh},
          {"co2", s.co2},         {"moisture", s.moisture}, {"ph_true", s.ph_true}, {"lux", s.lux},
          {"radiation", s.radiation}};
}

inline ChamberState chamber_state_from_json(const json& j, ChamberState base = {}) {
  base.t_air = j.value("t_air", base.t_air);
  base.t_soil = j.value("t_soil", base.t_soil);
  base.rh = j.value("rh", base.rh);
  base.co2 = j.value("co2", base.co2);
  base.moisture = j.value("moisture", base.moisture);
  base.ph_true = j.value("ph_true", base.ph_true);
  base.lux = j.value("lux", base.lux);
  base.radiation = j.value("radiation", base.lux / 120.0);
  base.clock.t = j.value("t", base.clock.t);
  return base;
}

inline json to_json(const SensorParams& sp) {
  json j = json::object();
  for (Channel c : kAllChannels)
    j[std::string(to_string(c))] = {
        {"bias0", sp[c].bias0}, {"bias_slope", sp[c].bias_slope}, {"noise_sigma", sp[c].noise_sigma}};
  return j;
}

// Accepts "ideal", "default", or a per-channel object overriding the defaults.
inline SensorParams sensor_params_from_json(const json& j) {
  if (j.is_string()) {
    if (j == "ideal") return SensorParams::ideal();
    if (j == "default") return SensorParams::defaults();
    throw std::invalid_argument("unknown sensor_params preset " + j.dump());
  }
  SensorParams sp = SensorParams::defaults();
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto c = parse_channel(it.key());
    if (!c) throw std::invalid_argument("sensor_params: unknown channel '" + it.key() + "'");
    auto& cp = sp[*c];
    cp.bias0 = it->value("bias0", cp.bias0);
    cp.bias_slope = it->value("bias_slope", cp.bias_slope);
    cp.noise_sigma = it->value("noise_sigma", cp.noise_sigma);
    if (cp.noise_sigma < 0.0) throw std::invalid_argument("sensor_params: noise_sigma must be >= 0");
  }
  return sp;
}

inline ChamberParams chamber_params_from_json(const json& j) {
  ChamberParams p = j.value("preset", std::string("default")) == "passive" ? ChamberParams::passive() : ChamberParams{};
#define FARM_FIELD(name) p.name = j.value(#name, p.name)
  FARM_FIELD(k_loss); FARM_FIELD(p_heat); FARM_FIELD(k_vent); FARM_FIELD(k_cond); FARM_FIELD(p_soil);
  FARM_FIELD(u_co2); FARM_FIELD(lux_ref); FARM_FIELD(r_resp); FARM_FIELD(dark_lux); FARM_FIELD(h_hum);
  FARM_FIELD(d_pump); FARM_FIELD(w_up); FARM_FIELD(evap_rh); FARM_FIELD(evap_soil); FARM_FIELD(evap_base_c);
  FARM_FIELD(l_max); FARM_FIELD(k_lum); FARM_FIELD(ph_walk_sigma); FARM_FIELD(ph_walk_lo); FARM_FIELD(ph_walk_hi);
#undef FARM_FIELD
  return p;
}

inline ActuatorCommandSet partial_commands_from_json(const json& j) {
  ActuatorCommandSet cmd;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "t") continue;
    auto a = parse_actuator(it.key());
    if (!a) throw std::invalid_argument("unknown actuator '" + it.key() + "'");
    double level = it->get<double>();
    if (!is_valid_level(*a, level)) throw std::invalid_argument("level out of bounds for " + it.key());
    cmd[*a] = level;
  }
  return cmd;
}

inline ScenarioSpec scenario_from_json(const json& j) {
  ScenarioSpec spec;
  spec.duration_s = j.at("duration_s").get<double>();
  spec.dt_s = j.at("dt_s").get<double>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("ambient")) {
    const auto& a = j["ambient"];
    spec.ambient.mean_c = a.value("mean_c", spec.ambient.mean_c);
    spec.ambient.amp_c = a.value("amp_c", spec.ambient.amp_c);
    spec.ambient.rh_amb = a.value("rh_amb", spec.ambient.rh_amb);
    spec.ambient.co2_amb = a.value("co2_amb", spec.ambient.co2_amb);
    spec.ambient.lux_leak = a.value("lux_leak", spec.ambient.lux_leak);
  }
  if (j.contains("initial_state")) spec.initial_state = chamber_state_from_json(j["initial_state"]);
  if (j.contains("sensor_params")) spec.sensor_params = sensor_params_from_json(j["sensor_params"]);
  if (j.contains("stage")) {
    auto st = parse_stage(j["stage"].get<std::string>());
    if (!st) throw std::invalid_argument("unknown stage " + j["stage"].dump());
    spec.stage = *st;
  }
  if (j.contains("chamber")) spec.chamber = chamber_params_from_json(j["chamber"]);
  if (j.contains("actuators")) spec.schedule.push_back({0.0, partial_commands_from_json(j["actuators"])});
  if (j.contains("schedule")) {
    for (const auto& e : j["schedule"]) spec.schedule.push_back({e.at("t").get<double>(), partial_commands_from_json(e)});
    std::stable_sort(spec.schedule.begin(), spec.schedule.end(),
                     [](const ScheduleEntry& a, const ScheduleEntry& b) { return a.t < b.t; });
  }
  check_spec(spec);
  return spec;
}

inline void write_trace_jsonl(std::ostream& out, const Trace& trace) {
  for (const auto& e : trace.entries) {
    json line = {{"t", e.state.clock.t}, {"state", to_json(e.state)}, {"raw", values_json(e.raw)}, {"cmd", to_json(e.cmd)}};
    out << line.dump() << '\n';
  }
}

}  // namespace farm
