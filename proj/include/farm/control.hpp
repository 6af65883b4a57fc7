#pragma once

// Closed-loop control law: per-stage recipes, hysteresis for switched
// actuators, feed-forward PWM duty for the grow lamp, stage progression,
// pollination pulses and operator overrides.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "farm/chamber.hpp"
#include "farm/telemetry.hpp"

namespace farm {

struct Photoperiod {
  double on_hour = 6.0;
  double off_hour = 22.0;

  bool active(double hour_of_day) const { return hour_of_day >= on_hour && hour_of_day < off_hour; }
  double fraction() const { return (off_hour - on_hour) / 24.0; }

  friend bool operator==(const Photoperiod&, const Photoperiod&) = default;
};

struct Pollination {
  int pulses_per_day = 0;
  double pulse_seconds = 60.0;

  friend bool operator==(const Pollination&, const Pollination&) = default;
};

// Setpoints and deadbands are indexed by Channel; solar_radiation is unused.
// For co2 the setpoint is an upper bound.
struct StagePlan {
  std::array<double, kChannelCount> setpoint{};
  std::array<double, kChannelCount> deadband{};
  Photoperiod photoperiod;
  Pollination pollination;

  double& sp(Channel c) { return setpoint[index_of(c)]; }
  double sp(Channel c) const { return setpoint[index_of(c)]; }
  double& db(Channel c) { return deadband[index_of(c)]; }
  double db(Channel c) const { return deadband[index_of(c)]; }

  friend bool operator==(const StagePlan&, const StagePlan&) = default;
};

struct Recipe {
  std::array<StagePlan, 4> stages{};
  double lamp_max_lux = 20000.0;
  double pump_pulse_s = 10.0;
  double pump_cooldown_s = 300.0;

  StagePlan& operator[](PlantStage s) { return stages[index_of(s)]; }
  const StagePlan& operator[](PlantStage s) const { return stages[index_of(s)]; }

  friend bool operator==(const Recipe&, const Recipe&) = default;
};

inline Recipe default_recipe() {
  StagePlan g;
  g.sp(Channel::air_temp) = 24.0;      g.db(Channel::air_temp) = 0.5;
  g.sp(Channel::soil_temp) = 23.0;     g.db(Channel::soil_temp) = 0.5;
  g.sp(Channel::air_humidity) = 70.0;  g.db(Channel::air_humidity) = 5.0;
  g.sp(Channel::co2) = 800.0;          g.db(Channel::co2) = 50.0;
  g.sp(Channel::soil_moisture) = 60.0; g.db(Channel::soil_moisture) = 5.0;
  g.sp(Channel::ph) = 6.5;             g.db(Channel::ph) = 0.5;
  g.sp(Channel::illumination) = 3500.0; g.db(Channel::illumination) = 200.0;
  g.photoperiod = {6.0, 22.0};

  Recipe r;
  r[PlantStage::germination] = g;

  StagePlan v = g;
  v.sp(Channel::air_temp) = 25.0;
  v.sp(Channel::illumination) = 10000.0;
  r[PlantStage::vegetative] = v;

  StagePlan f = g;
  f.sp(Channel::air_temp) = 23.0;
  f.sp(Channel::illumination) = 12000.0;
  f.pollination = {3, 60.0};
  r[PlantStage::flowering] = f;

  StagePlan fr = g;
  fr.sp(Channel::air_temp) = 24.0;
  fr.sp(Channel::illumination) = 12000.0;
  r[PlantStage::fruiting] = fr;
  return r;
}

struct FieldError {
  std::string field;
  std::string message;
};

inline std::vector<FieldError> validate_recipe(const Recipe& r) {
  std::vector<FieldError> errs;
  for (PlantStage s : kAllStages) {
    const auto& p = r[s];
    const std::string base(to_string(s));
    for (Channel c : kControlledChannels) {
      const std::string name(to_string(c));
      if (!(p.db(c) > 0.0)) errs.push_back({base + ".deadbands." + name, "deadband must be > 0"});
      if (!in_range(c, p.sp(c))) errs.push_back({base + ".setpoints." + name, "setpoint outside plausible range"});
    }
    if (!(p.photoperiod.on_hour >= 0.0 && p.photoperiod.on_hour < p.photoperiod.off_hour && p.photoperiod.off_hour <= 24.0))
      errs.push_back({base + ".photoperiod", "require 0 <= on_hour < off_hour <= 24"});
    if (p.pollination.pulses_per_day < 0) errs.push_back({base + ".pollination.pulses_per_day", "must be >= 0"});
    if (p.pollination.pulses_per_day > 0 && !(p.pollination.pulse_seconds > 0.0))
      errs.push_back({base + ".pollination.pulse_seconds", "must be > 0"});
    if (p.pollination.pulses_per_day > 0 && s != PlantStage::flowering)
      errs.push_back({base + ".pollination.pulses_per_day", "pollination is only allowed in flowering"});
  }
  if (!(r.lamp_max_lux > 0.0)) errs.push_back({"lamp_max_lux", "must be > 0"});
  if (!(r.pump_pulse_s > 0.0)) errs.push_back({"pump_pulse_s", "must be > 0"});
  if (!(r.pump_cooldown_s >= r.pump_pulse_s)) errs.push_back({"pump_cooldown_s", "must be >= pump_pulse_s"});
  return errs;
}

// ---------------------------------------------------------------------------
// Control laws

inline bool hysteresis(double value, double setpoint, double deadband, bool latch) {
  if (value < setpoint - deadband) return true;
  if (value > setpoint + deadband) return false;
  return latch;
}

inline double led_duty(double target_lux, double ambient_lux, double lamp_max_lux) {
  if (!(lamp_max_lux > 0.0)) throw std::invalid_argument("led_duty: lamp_max_lux must be > 0");
  return std::clamp((target_lux - ambient_lux) / lamp_max_lux, 0.0, 1.0);
}

// Start times (seconds of day) of the evenly spaced pollination pulses.
inline std::vector<double> pollination_starts(const StagePlan& p) {
  std::vector<double> starts;
  const int n = p.pollination.pulses_per_day;
  for (int k = 0; k < n; ++k)
    starts.push_back(3600.0 * p.photoperiod.on_hour + k * (3600.0 * (p.photoperiod.off_hour - p.photoperiod.on_hour)) / n);
  return starts;
}

inline bool pollination_active(const StagePlan& p, PlantStage stage, double time_of_day) {
  if (stage != PlantStage::flowering || p.pollination.pulses_per_day <= 0) return false;
  if (!p.photoperiod.active(time_of_day / 3600.0)) return false;
  for (double s : pollination_starts(p))
    if (time_of_day >= s && time_of_day < s + p.pollination.pulse_seconds) return true;
  return false;
}

struct Override {
  double level = 0.0;
  double expires_at = 0.0;

  friend bool operator==(const Override&, const Override&) = default;
};

struct ControllerState {
  PlantStage stage = PlantStage::germination;
  double stage_elapsed_s = 0.0;
  std::optional<double> last_t;

  // Hysteresis memory.
  bool heat_air = false;
  bool heat_soil = false;
  bool vent_co2 = false;
  bool humidify = false;

  std::optional<double> pump_fired_at;
  ActuatorCommandSet previous;  // last emitted levels, used to freeze on faults
  std::array<std::optional<Override>, kActuatorCount> overrides{};

  const std::optional<Override>& override_for(Actuator a) const { return overrides[index_of(a)]; }

  friend bool operator==(const ControllerState&, const ControllerState&) = default;
};

inline ControllerState advance_stage(ControllerState st, const SimClock& clock) {
  if (st.last_t) st.stage_elapsed_s += std::max(0.0, clock.t - *st.last_t);
  st.last_t = clock.t;
  while (st.stage != PlantStage::fruiting && st.stage_elapsed_s >= stage_duration_s(st.stage)) {
    st.stage = static_cast<PlantStage>(index_of(st.stage) + 1);
    st.stage_elapsed_s = 0.0;
  }
  return st;
}

inline ControllerState apply_override(ControllerState st, Actuator a, double level, double ttl_s, double now) {
  if (!is_valid_level(a, level)) throw std::invalid_argument("override level out of bounds for " + std::string(to_string(a)));
  if (!(ttl_s > 0.0)) throw std::invalid_argument("override ttl must be > 0");
  st.overrides[index_of(a)] = Override{level, now + ttl_s};
  return st;
}

inline ControllerState clear_override(ControllerState st, Actuator a) {
  st.overrides[index_of(a)].reset();
  return st;
}

struct TickResult {
  ActuatorCommandSet cmd;
  ControllerState state;
  std::vector<std::string> alarms;  // "<channel>-fault" or "all-fault"
  bool safe_state = false;
  bool led_saturated = false;       // target beyond lamp capacity
};

inline std::string fault_alarm(Channel c) { return std::string(to_string(c)) + "-fault"; }

// Pure: identical inputs give identical outputs.
inline TickResult tick(const ReadingSet& readings, const Recipe& recipe, const ControllerState& in, const SimClock& clock) {
  TickResult out;
  ControllerState st = advance_stage(in, clock);
  const double now = clock.t;
  for (auto& o : st.overrides)
    if (o && o->expires_at <= now) o.reset();

  const StagePlan& plan = recipe[st.stage];
  const double tod = clock.time_of_day();
  const bool light_period = plan.photoperiod.active(tod / 3600.0);
  ActuatorCommandSet cmd = st.previous;
  cmd.timestamp = clock.seconds();

  for (const auto& r : readings.readings)
    if (r.is_fault()) out.alarms.push_back(fault_alarm(r.channel));

  if (readings.all_fault()) {
    out.alarms = {"all-fault"};
    out.safe_state = true;
    cmd[Actuator::air_heater] = 0.0;
    cmd[Actuator::soil_heater] = 0.0;
    cmd[Actuator::fan] = 1.0;
    cmd[Actuator::pump] = 0.0;
    cmd[Actuator::humidifier] = 0.0;
    st.heat_air = st.heat_soil = st.humidify = false;
    st.vent_co2 = true;
    st.previous = cmd;
    out.cmd = cmd;
    out.state = st;
    return out;
  }

  auto ok = [&](Channel c) { return !readings[c].is_fault(); };
  auto value = [&](Channel c) { return readings[c].value; };

  if (ok(Channel::air_temp)) {
    st.heat_air = hysteresis(value(Channel::air_temp), plan.sp(Channel::air_temp), plan.db(Channel::air_temp), st.heat_air);
    cmd[Actuator::air_heater] = st.heat_air ? 1.0 : 0.0;
  }
  if (ok(Channel::soil_temp)) {
    st.heat_soil = hysteresis(value(Channel::soil_temp), plan.sp(Channel::soil_temp), plan.db(Channel::soil_temp), st.heat_soil);
    cmd[Actuator::soil_heater] = st.heat_soil ? 1.0 : 0.0;
  }
  if (ok(Channel::air_humidity)) {
    st.humidify = hysteresis(value(Channel::air_humidity), plan.sp(Channel::air_humidity), plan.db(Channel::air_humidity), st.humidify);
    cmd[Actuator::humidifier] = st.humidify ? 1.0 : 0.0;
  }
  // Ventilation runs the law mirrored: on above the band, off below it.
  if (ok(Channel::co2))
    st.vent_co2 = hysteresis(-value(Channel::co2), -plan.sp(Channel::co2), plan.db(Channel::co2), st.vent_co2);
  cmd[Actuator::fan] = (st.vent_co2 || pollination_active(plan, st.stage, tod)) ? 1.0 : 0.0;

  // Dosing pump: one fixed pulse, then a lockout. A faulted moisture channel
  // lets a running pulse finish but never starts a new one.
  const bool cooled = !st.pump_fired_at || now >= *st.pump_fired_at + recipe.pump_cooldown_s;
  if (ok(Channel::soil_moisture) && cooled &&
      value(Channel::soil_moisture) < plan.sp(Channel::soil_moisture) - plan.db(Channel::soil_moisture))
    st.pump_fired_at = now;
  cmd[Actuator::pump] = (st.pump_fired_at && now < *st.pump_fired_at + recipe.pump_pulse_s) ? 1.0 : 0.0;

  if (ok(Channel::illumination)) {
    const double target = light_period ? plan.sp(Channel::illumination) : 0.0;
    // Remove the lamp's own contribution from the measurement.
    const double lamp_part = recipe.lamp_max_lux * st.previous[Actuator::led];
    const double ambient = std::max(0.0, value(Channel::illumination) - lamp_part);
    cmd[Actuator::led] = led_duty(target, ambient, recipe.lamp_max_lux);
    out.led_saturated = target - ambient > recipe.lamp_max_lux;
  }

  for (Actuator a : kAllActuators)
    if (const auto& o = st.override_for(a)) cmd[a] = o->level;

  st.previous = cmd;
  out.cmd = cmd;
  out.state = st;
  return out;
}

// ---------------------------------------------------------------------------
// Recipe JSON

inline json to_json(const StagePlan& p) {
  json sp = json::object(), db = json::object();
  for (Channel c : kControlledChannels) {
    sp[std::string(to_string(c))] = p.sp(c);
    db[std::string(to_string(c))] = p.db(c);
  }
  return {{"setpoints", sp},
          {"deadbands", db},
          {"photoperiod", {{"on_hour", p.photoperiod.on_hour}, {"off_hour", p.photoperiod.off_hour}}},
          {"pollination", {{"pulses_per_day", p.pollination.pulses_per_day}, {"pulse_seconds", p.pollination.pulse_seconds}}}};
}

inline json to_json(const Recipe& r) {
  json j = json::object();
  for (PlantStage s : kAllStages) j[std::string(to_string(s))] = to_json(r[s]);
  j["lamp_max_lux"] = r.lamp_max_lux;
  j["pump_pulse_s"] = r.pump_pulse_s;
  j["pump_cooldown_s"] = r.pump_cooldown_s;
  return j;
}

class RecipeError : public std::runtime_error {
 public:
  explicit RecipeError(std::vector<FieldError> e)
      : std::runtime_error(e.empty() ? "invalid recipe" : e.front().field + ": " + e.front().message), errors(std::move(e)) {}
  std::vector<FieldError> errors;
};

// Stages missing from the document keep the defaults; every parse or
// invariant problem is reported per field.
inline Recipe recipe_from_json(const json& j) {
  std::vector<FieldError> errs;
  if (!j.is_object()) throw RecipeError(std::vector<FieldError>{{"", "recipe must be a JSON object"}});
  Recipe r = default_recipe();

  auto number = [&](const json& obj, const std::string& key, const std::string& path, double& target) {
    if (!obj.contains(key)) return;
    if (!obj[key].is_number()) {
      errs.push_back({path, "must be a number"});
      return;
    }
    target = obj[key].get<double>();
  };

  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    if (key == "lamp_max_lux" || key == "pump_pulse_s" || key == "pump_cooldown_s") continue;
    auto stage = parse_stage(key);
    if (!stage) {
      errs.push_back({key, "unknown stage"});
      continue;
    }
    if (!it->is_object()) {
      errs.push_back({key, "stage plan must be an object"});
      continue;
    }
    StagePlan& p = r[*stage];
    for (const char* section : {"setpoints", "deadbands"}) {
      if (!it->contains(section)) continue;
      const auto& sec = (*it)[section];
      for (auto f = sec.begin(); f != sec.end(); ++f) {
        auto c = parse_channel(f.key());
        const std::string path = key + "." + section + "." + f.key();
        if (!c || *c == Channel::solar_radiation) {
          errs.push_back({path, "unknown controlled channel"});
          continue;
        }
        number(sec, f.key(), path, std::string(section) == "setpoints" ? p.sp(*c) : p.db(*c));
      }
    }
    if (it->contains("photoperiod")) {
      const auto& pp = (*it)["photoperiod"];
      number(pp, "on_hour", key + ".photoperiod.on_hour", p.photoperiod.on_hour);
      number(pp, "off_hour", key + ".photoperiod.off_hour", p.photoperiod.off_hour);
    }
    if (it->contains("pollination")) {
      const auto& pol = (*it)["pollination"];
      double pulses = p.pollination.pulses_per_day;
      number(pol, "pulses_per_day", key + ".pollination.pulses_per_day", pulses);
      if (pulses != std::floor(pulses) || std::abs(pulses) > 86400.0)
        errs.push_back({key + ".pollination.pulses_per_day", "must be an integer in [0, 86400]"});
      else
        p.pollination.pulses_per_day = static_cast<int>(pulses);
      number(pol, "pulse_seconds", key + ".pollination.pulse_seconds", p.pollination.pulse_seconds);
    }
  }
  number(j, "lamp_max_lux", "lamp_max_lux", r.lamp_max_lux);
  number(j, "pump_pulse_s", "pump_pulse_s", r.pump_pulse_s);
  number(j, "pump_cooldown_s", "pump_cooldown_s", r.pump_cooldown_s);

  if (errs.empty()) errs = validate_recipe(r);
  if (!errs.empty()) throw RecipeError(std::move(errs));
  return r;
}

inline json to_json(const ControllerState& st) {
  json ov = json::object();
  for (Actuator a : kAllActuators)
    if (const auto& o = st.override_for(a)) ov[std::string(to_string(a))] = {{"level", o->level}, {"expires_at", o->expires_at}};
  return {{"stage", to_string(st.stage)},
          {"stage_elapsed_s", st.stage_elapsed_s},
          {"stage_day", std::floor(st.stage_elapsed_s / kDaySeconds)},
          {"overrides", ov}};
}

}  // namespace farm
