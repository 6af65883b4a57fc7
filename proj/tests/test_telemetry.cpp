#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "farm/telemetry.hpp"

using namespace farm;

TEST(Telemetry, InRangeReadingIsUnchanged) {
  Reading r{Channel::ph, 7.1, 5, Quality::raw};
  EXPECT_EQ(validate_reading(r), r);
  EXPECT_EQ(validate_reading(r).value, 7.1);
}

TEST(Telemetry, OutOfRangeBecomesFault) {
  EXPECT_TRUE(validate_reading({Channel::ph, 15.2, 0, Quality::raw}).is_fault());
  EXPECT_TRUE(validate_reading({Channel::air_humidity, -3.0, 0, Quality::raw}).is_fault());
  EXPECT_TRUE(validate_reading({Channel::co2, std::nan(""), 0, Quality::raw}).is_fault());
  EXPECT_TRUE(validate_reading({Channel::co2, std::numeric_limits<double>::infinity(), 0, Quality::raw}).is_fault());
}

TEST(Telemetry, BoundsAreInclusive) {
  EXPECT_FALSE(validate_reading({Channel::ph, 14.0, 0, Quality::raw}).is_fault());
  EXPECT_FALSE(validate_reading({Channel::ph, 0.0, 0, Quality::raw}).is_fault());
}

TEST(Telemetry, ChannelTable) {
  EXPECT_EQ(channel_meta(Channel::co2).unit, "ppm");
  EXPECT_EQ(channel_meta(Channel::co2).min, 0.0);
  EXPECT_EQ(channel_meta(Channel::co2).max, 10000.0);
  EXPECT_EQ(channel_meta(Channel::ph).unit, "pH");
  EXPECT_EQ(channel_meta(Channel::ph).max, 14.0);
  EXPECT_EQ(channel_meta(Channel::illumination).unit, "lux");
  EXPECT_EQ(channel_meta(Channel::illumination).max, 200000.0);
  EXPECT_EQ(channel_meta(Channel::air_temp).min, -10.0);
  EXPECT_EQ(channel_meta(Channel::solar_radiation).max, 2000.0);
  EXPECT_EQ(kAllChannels.size(), 8u);
  EXPECT_EQ(kControlledChannels.size(), 7u);
}

TEST(Telemetry, NamesRoundTrip) {
  for (Channel c : kAllChannels) EXPECT_EQ(parse_channel(to_string(c)), c);
  for (Actuator a : kAllActuators) EXPECT_EQ(parse_actuator(to_string(a)), a);
  EXPECT_FALSE(parse_channel("CO2"));
  EXPECT_FALSE(parse_actuator(""));
}

TEST(Telemetry, ActuatorLevels) {
  EXPECT_TRUE(is_valid_level(Actuator::led, 0.175));
  EXPECT_FALSE(is_valid_level(Actuator::led, 1.5));
  EXPECT_FALSE(is_valid_level(Actuator::led, -0.01));
  EXPECT_TRUE(is_valid_level(Actuator::fan, 1.0));
  EXPECT_FALSE(is_valid_level(Actuator::fan, 0.5));
  EXPECT_FALSE(is_valid_level(Actuator::pump, std::nan("")));
}

TEST(Telemetry, DecimalRoundTrip) {
  for (double v : {0.0, 0.175, 612.3, -3.25, 1e-300, 6.02e23, 0.1 + 0.2})
    EXPECT_EQ(parse_decimal(format_decimal(v)), v);
  EXPECT_EQ(parse_decimal("6.1e1"), 61.0);
  EXPECT_EQ(parse_decimal("+2"), 2.0);
  EXPECT_FALSE(parse_decimal(""));
  EXPECT_FALSE(parse_decimal("nan"));
  EXPECT_FALSE(parse_decimal("inf"));
  EXPECT_FALSE(parse_decimal("1.0x"));
  EXPECT_FALSE(parse_decimal(" 1"));
}

TEST(Telemetry, ReadingJsonRoundTrip) {
  Reading ok{Channel::soil_moisture, 41.25, 1234, Quality::corrected};
  EXPECT_EQ(reading_from_json(to_json(ok)), ok);
  Reading f{Channel::ph, 0.0, 9, Quality::fault};
  const json j = to_json(f);
  EXPECT_TRUE(j["v"].is_null());
  EXPECT_EQ(reading_from_json(j), f);
}

TEST(Telemetry, CommandJsonRoundTrip) {
  ActuatorCommandSet c;
  c.timestamp = 77;
  c[Actuator::led] = 0.175;
  c[Actuator::fan] = 1.0;
  EXPECT_EQ(commands_from_json(to_json(c), 77), c);
}

TEST(Telemetry, ClockDayArithmetic) {
  SimClock clk{86400.0 + 3600.0 * 6};
  EXPECT_EQ(clk.day(), 1);
  EXPECT_DOUBLE_EQ(clk.hour_of_day(), 6.0);
  EXPECT_EQ(clk.seconds(), 108000);
}
