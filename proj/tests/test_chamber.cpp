#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "farm/chamber.hpp"

using namespace farm;

namespace {

// Frozen from tests/oracles/derive.py (closed form, cross-checked by an ODE solver).
constexpr double kHeaterStep3600 = 23.347011117784135;

ChamberState equilibrium() {
  ChamberState s;
  s.t_air = 20.0;
  s.t_soil = 20.0;
  s.co2 = 420.0;
  s.rh = 50.0;
  s.moisture = 50.0;
  return s;
}

AmbientConditions still_air(double t_amb) {
  AmbientConditions a;
  a.t_amb = t_amb;
  return a;
}

}  // namespace

TEST(Chamber, PassiveEquilibriumIsFixedPoint) {
  std::mt19937_64 rng(1);
  const ChamberState s0 = equilibrium();
  ChamberState s = s0;
  for (int i = 0; i < 100; ++i) s = step(s, {}, still_air(20.0), PlantStage::germination, 1.0, ChamberParams::passive(), rng);
  EXPECT_TRUE(s.physically_equal(s0));
  EXPECT_DOUBLE_EQ(s.clock.t, 100.0);
}

TEST(Chamber, LedDutyToLux) {
  std::mt19937_64 rng(1);
  ActuatorCommandSet a;
  a[Actuator::led] = 0.175;
  const auto s = step(equilibrium(), a, still_air(20.0), PlantStage::germination, 1.0, ChamberParams::passive(), rng);
  EXPECT_DOUBLE_EQ(s.lux, 3500.0);
  EXPECT_DOUBLE_EQ(s.radiation, 3500.0 / 120.0);
}

TEST(Chamber, HeaterStepMatchesClosedForm) {
  std::mt19937_64 rng(1);
  ChamberState s = equilibrium();
  s.t_air = 15.0;
  ActuatorCommandSet a;
  a[Actuator::air_heater] = 1.0;
  for (int i = 1; i <= 3600; ++i) {
    s = step(s, a, still_air(15.0), PlantStage::germination, 1.0, ChamberParams::passive(), rng);
    const double exact = 15.0 + 10.0 * (1.0 - std::exp(-5e-4 * i));
    ASSERT_NEAR(s.t_air, exact, 0.02) << "t=" << i;
  }
  EXPECT_NEAR(s.t_air, kHeaterStep3600, 0.02);
}

TEST(Chamber, PumpPulse) {
  std::mt19937_64 rng(1);
  ChamberState s = equilibrium();
  ActuatorCommandSet a;
  a[Actuator::pump] = 1.0;
  for (int i = 0; i < 10; ++i) s = step(s, a, still_air(20.0), PlantStage::germination, 1.0, ChamberParams::passive(), rng);
  EXPECT_NEAR(s.moisture, 52.0, 1e-12);
}

TEST(Chamber, RejectsBadStep) {
  std::mt19937_64 rng(1);
  ChamberParams p;
  EXPECT_THROW(step(equilibrium(), {}, still_air(20), PlantStage::germination, 0.0, p, rng), std::invalid_argument);
  EXPECT_THROW(step(equilibrium(), {}, still_air(20), PlantStage::germination, 6.0, p, rng), std::invalid_argument);
  ChamberState bad = equilibrium();
  bad.t_air = std::nan("");
  EXPECT_THROW(step(bad, {}, still_air(20), PlantStage::germination, 1.0, p, rng), std::invalid_argument);
}

TEST(Chamber, ClampsHoldUnderRandomActuation) {
  std::mt19937_64 rng(7), act_rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ChamberParams p;
  ChamberState s = equilibrium();
  AmbientProfileSpec amb{20.0, 8.0, 50.0, 420.0, 0.0};
  for (int i = 0; i < 20000; ++i) {
    ActuatorCommandSet a;
    a[Actuator::air_heater] = u(act_rng);
    a[Actuator::soil_heater] = u(act_rng);
    a[Actuator::led] = u(act_rng);
    a[Actuator::fan] = u(act_rng) < 0.5;
    a[Actuator::pump] = u(act_rng) < 0.5;
    a[Actuator::humidifier] = u(act_rng) < 0.5;
    s = step(s, a, ambient_profile(s.clock.t, amb), PlantStage::vegetative, 1.0 + 4.0 * u(act_rng), p, rng);
    ASSERT_GE(s.rh, 0.0);
    ASSERT_LE(s.rh, 100.0);
    ASSERT_GE(s.moisture, 0.0);
    ASSERT_LE(s.moisture, 100.0);
    ASSERT_GE(s.co2, 0.0);
  }
}

TEST(Chamber, AmbientProfile) {
  AmbientProfileSpec p{20.0, 5.0, 50.0, 420.0, 0.0};
  EXPECT_NEAR(ambient_profile(0.0, p).t_amb, 15.0, 1e-12);
  EXPECT_NEAR(ambient_profile(21600.0, p).t_amb, 20.0, 1e-12);
  EXPECT_NEAR(ambient_profile(43200.0, p).t_amb, 25.0, 1e-12);
  EXPECT_NEAR(ambient_profile(86400.0 + 43200.0, p).t_amb, 25.0, 1e-12);
}

TEST(Sensor, IdealTransducerReturnsTruth) {
  std::mt19937_64 rng(3);
  ChamberState s = equilibrium();
  s.lux = 1234.5;
  s.radiation = 10.2875;
  const auto rs = sense(s, SensorParams::ideal(), still_air(33.0), rng);
  for (Channel c : kAllChannels) EXPECT_EQ(rs[c].value, s.truth(c)) << to_string(c);
}

TEST(Sensor, PhBiasAtHotAmbient) {
  std::mt19937_64 rng(3);
  SensorParams p = SensorParams::ideal();
  p[Channel::ph].bias_slope = 0.008;
  ChamberState s = equilibrium();
  s.ph_true = 6.5;
  const auto rs = sense(s, p, still_air(40.0), rng);
  EXPECT_NEAR(rs[Channel::ph].value, 7.28, 1e-12);
  EXPECT_GT(rs[Channel::ph].value / 6.5 - 1.0, 0.10);
}

TEST(Sensor, DefaultPhSlope) {
  EXPECT_DOUBLE_EQ(SensorParams::defaults()[Channel::ph].bias_slope, 0.008);
  EXPECT_DOUBLE_EQ(SensorParams::defaults()[Channel::ph].bias0, 0.0);
}

TEST(Sensor, DeterministicUnderSeed) {
  std::mt19937_64 a(11), b(11);
  const auto s = equilibrium();
  EXPECT_EQ(sense(s, SensorParams::defaults(), still_air(20), a), sense(s, SensorParams::defaults(), still_air(20), b));
}

TEST(Sensor, SaturatesAtRangeLimits) {
  std::mt19937_64 rng(5);
  ChamberState s = equilibrium();
  s.lux = 0.0;
  s.radiation = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto rs = sense(s, SensorParams::defaults(), still_air(20), rng);
    ASSERT_GE(rs[Channel::illumination].value, 0.0);
    ASSERT_GE(rs[Channel::solar_radiation].value, 0.0);
  }
}

TEST(Scenario, EquilibriumTraceRepeatsState) {
  ScenarioSpec spec;
  spec.duration_s = 10;
  spec.dt_s = 1;
  spec.ambient = {20.0, 0.0, 50.0, 420.0, 0.0};
  spec.initial_state = equilibrium();
  spec.chamber = ChamberParams::passive();
  const auto tr = run_scenario(spec);
  ASSERT_EQ(tr.entries.size(), 10u);
  for (const auto& e : tr.entries) EXPECT_TRUE(e.state.physically_equal(spec.initial_state));
}

TEST(Scenario, SameSeedSameTrace) {
  ScenarioSpec spec;
  spec.duration_s = 500;
  spec.seed = 99;
  spec.ambient = {20.0, 5.0, 50.0, 420.0, 0.0};
  spec.schedule = {{0.0, {}}, {100.0, {}}};
  spec.schedule[1].levels[Actuator::air_heater] = 0.6;
  std::ostringstream a, b;
  write_trace_jsonl(a, run_scenario(spec));
  write_trace_jsonl(b, run_scenario(spec));
  EXPECT_EQ(a.str(), b.str());
  spec.seed = 100;
  std::ostringstream c;
  write_trace_jsonl(c, run_scenario(spec));
  EXPECT_NE(a.str(), c.str());
}

TEST(Scenario, HeaterStepTraceFollowsClosedForm) {
  ScenarioSpec spec;
  spec.duration_s = 3600;
  spec.ambient = {15.0, 0.0, 50.0, 420.0, 0.0};
  spec.initial_state = equilibrium();
  spec.initial_state.t_air = 15.0;
  spec.chamber = ChamberParams::passive();
  spec.sensor_params = SensorParams::ideal();
  spec.schedule = {{0.0, {}}};
  spec.schedule[0].levels[Actuator::air_heater] = 1.0;
  const auto tr = run_scenario(spec);
  for (const auto& e : tr.entries)
    ASSERT_NEAR(e.state.t_air, 15.0 + 10.0 * (1.0 - std::exp(-5e-4 * e.state.clock.t)), 0.02);
  EXPECT_NEAR(tr.final_state.t_air, kHeaterStep3600, 0.02);
}

TEST(Scenario, JsonParsing) {
  const json j = json::parse(R"({"duration_s":5,"dt_s":0.5,"seed":4,
    "ambient":{"mean_c":18,"amp_c":0},"initial_state":{"t_air":18},
    "sensor_params":"ideal","stage":"flowering","chamber":{"preset":"passive"},
    "schedule":[{"t":0,"led":0.5},{"t":2,"fan":1}]})");
  const auto spec = scenario_from_json(j);
  EXPECT_EQ(spec.duration_s, 5.0);
  EXPECT_EQ(spec.dt_s, 0.5);
  EXPECT_EQ(spec.stage, PlantStage::flowering);
  EXPECT_EQ(spec.chamber.r_resp, 0.0);
  EXPECT_EQ(spec.scheduled(1.0)[Actuator::led], 0.5);
  EXPECT_EQ(spec.scheduled(2.5)[Actuator::fan], 1.0);
  EXPECT_EQ(run_scenario(spec).entries.size(), 10u);
  EXPECT_THROW(scenario_from_json(json::parse(R"({"duration_s":5,"dt_s":9,"seed":1})")), std::exception);
  EXPECT_THROW(scenario_from_json(json::parse(R"({"duration_s":5,"dt_s":1,"seed":1,"stage":"sprouting"})")), std::exception);
}
