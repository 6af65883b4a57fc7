#pragma once

// Yield / availability forecast driven by how long each controlled channel
// spent outside its recipe band during each growth stage.

#include <algorithm>
#include <array>
#include <cstdint>

#include "farm/control.hpp"

namespace farm {

// Out-of-band test for one controlled channel. Faulted readings count as out of band.
inline bool out_of_band(const StagePlan& plan, const Reading& r, double time_of_day) {
  if (r.is_fault()) return true;
  const Channel c = r.channel;
  switch (c) {
    case Channel::co2:
      return r.value > plan.sp(c) + plan.db(c);
    case Channel::illumination: {
      const double target = plan.photoperiod.active(time_of_day / 3600.0) ? plan.sp(c) : 0.0;
      return std::abs(r.value - target) > plan.db(c);
    }
    case Channel::solar_radiation:
      return false;
    default:
      return std::abs(r.value - plan.sp(c)) > plan.db(c);
  }
}

struct StageStress {
  std::uint64_t samples = 0;
  std::array<std::uint64_t, kChannelCount> out_counts{};  // controlled channels only

  double channel_stress(Channel c) const {
    return samples == 0 ? 0.0 : static_cast<double>(out_counts[index_of(c)]) / static_cast<double>(samples);
  }

  // Mean over the 7 controlled channels.
  double stress() const {
    double s = 0.0;
    for (Channel c : kControlledChannels) s += channel_stress(c);
    return s / static_cast<double>(kControlledChannels.size());
  }

  friend bool operator==(const StageStress&, const StageStress&) = default;
};

// Per-stage summary of a control history.
class StressHistory {
 public:
  void record(PlantStage stage, const StagePlan& plan, const ReadingSet& readings, double time_of_day) {
    auto& s = stages_[index_of(stage)];
    ++s.samples;
    for (Channel c : kControlledChannels)
      if (out_of_band(plan, readings[c], time_of_day)) ++s.out_counts[index_of(c)];
  }

  const StageStress& operator[](PlantStage s) const { return stages_[index_of(s)]; }
  StageStress& operator[](PlantStage s) { return stages_[index_of(s)]; }

  bool empty() const {
    for (const auto& s : stages_)
      if (s.samples) return false;
    return true;
  }

 private:
  std::array<StageStress, 4> stages_{};
};

struct ForecastReport {
  PlantStage stage = PlantStage::germination;
  double days_to_harvest = 0.0;
  double yield_factor = 1.0;
  std::array<double, 4> stage_stress{};
  bool low_confidence = false;
  std::int64_t computed_at = 0;

  friend bool operator==(const ForecastReport&, const ForecastReport&) = default;
};

inline ForecastReport forecast_yield(const StressHistory& history, PlantStage stage, double elapsed_days) {
  ForecastReport f;
  f.stage = stage;
  f.low_confidence = history.empty();
  for (PlantStage s : kAllStages) f.stage_stress[index_of(s)] = std::clamp(history[s].stress(), 0.0, 1.0);

  f.yield_factor = 1.0;
  for (PlantStage s : kAllStages) {
    if (index_of(s) > index_of(stage)) break;
    f.yield_factor *= 1.0 - f.stage_stress[index_of(s)];
  }
  f.yield_factor = std::clamp(f.yield_factor, 0.0, 1.0);

  double remaining = std::max(0.0, stage_info(stage).duration_days - elapsed_days);
  for (PlantStage s : kAllStages)
    if (index_of(s) > index_of(stage)) remaining += stage_info(s).duration_days;
  f.days_to_harvest = remaining * (1.0 + f.stage_stress[index_of(stage)]);
  return f;
}

inline json to_json(const ForecastReport& f) {
  json stress = json::object();
  for (PlantStage s : kAllStages) stress[std::string(to_string(s))] = f.stage_stress[index_of(s)];
  return {{"stage", to_string(f.stage)},         {"days_to_harvest", f.days_to_harvest},
          {"yield_factor", f.yield_factor},      {"stage_stress", stress},
          {"low_confidence", f.low_confidence},  {"t", f.computed_at}};
}

inline ForecastReport forecast_from_json(const json& j) {
  ForecastReport f;
  auto st = parse_stage(j.at("stage").get<std::string>());
  if (!st) throw std::invalid_argument("forecast: unknown stage");
  f.stage = *st;
  f.days_to_harvest = j.at("days_to_harvest").get<double>();
  f.yield_factor = j.at("yield_factor").get<double>();
  for (PlantStage s : kAllStages) f.stage_stress[index_of(s)] = j.at("stage_stress").at(std::string(to_string(s))).get<double>();
  f.low_confidence = j.value("low_confidence", false);
  f.computed_at = j.value("t", std::int64_t{0});
  return f;
}

}  // namespace farm
