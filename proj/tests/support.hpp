#pragma once

// Generators and oracles shared by the unit tests and the acceptance run.

#include <unistd.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "farm/bus.hpp"
#include "farm/compensation.hpp"
#include "farm/datastore.hpp"

namespace farm::testing {

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag = "farm") {
    static int n = 0;
    path = std::filesystem::temp_directory_path() / (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(n++));
    std::filesystem::remove_all(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

// ---- protocol fuzz

inline double random_level(Actuator a, std::mt19937_64& rng) {
  if (!is_continuous(a)) return static_cast<double>(rng() & 1u);
  switch (rng() % 4) {
    case 0: return 0.0;
    case 1: return 1.0;
    case 2: return std::ldexp(static_cast<double>(rng() >> 11), -53);  // any double in [0,1)
    default: return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  }
}

inline bus::Command random_command(std::mt19937_64& rng) {
  switch (rng() % 4) {
    case 0: return bus::ReadCmd{kAllChannels[rng() % kChannelCount]};
    case 1: {
      Actuator a = kAllActuators[rng() % kActuatorCount];
      return bus::SetCmd{a, random_level(a, rng)};
    }
    case 2: return bus::PingCmd{};
    default: return bus::InfoCmd{};
  }
}

inline double random_finite(std::mt19937_64& rng) {
  for (;;) {
    std::uint64_t bits = rng();
    double d;
    std::memcpy(&d, &bits, sizeof d);
    if (std::isfinite(d)) return d;
  }
}

inline std::string random_message(std::mt19937_64& rng) {
  std::string m;
  const auto n = rng() % 40;
  for (std::size_t i = 0; i < n; ++i) m.push_back(static_cast<char>(32 + rng() % 95));
  while (!m.empty() && m.front() == ' ') m.erase(m.begin());
  return m;
}

inline bus::Response random_response(std::mt19937_64& rng) {
  using bus::Response;
  switch (rng() % 4) {
    case 0: return Response::ok();
    case 1: return Response::ok(random_finite(rng));
    case 2: return Response::ok(std::uniform_real_distribution<double>(-1e4, 1e4)(rng));
    default: {
      bus::ErrCode codes[] = {bus::ErrCode::BADCMD, bus::ErrCode::BADCHAN, bus::ErrCode::BADVAL, bus::ErrCode::FAULT};
      return Response::err(codes[rng() % 4], random_message(rng));
    }
  }
}

// Half protocol-ish tokens, half raw bytes.
inline std::string random_byte_line(std::mt19937_64& rng) {
  static const std::string alphabet = "READSETPINGINFO OK ERR co2 led fan 0123456789.eE+-\n\r\t";
  std::string line;
  const auto n = rng() % 64;
  for (std::size_t k = 0; k < n; ++k)
    line.push_back(rng() % 2 ? static_cast<char>(rng() & 0xFF) : alphabet[rng() % alphabet.size()]);
  return line;
}

// ---- gradients

inline std::vector<TrainingPoint> normalized_batch(Channel c, std::size_t n, std::uint64_t seed) {
  auto data = generate_calibration(CalibrationSweep::uniform(10, 10, seed));
  auto& samples = data[index_of(c)];
  const auto norm = fit_normalization(samples);
  std::mt19937_64 rng(seed);
  std::shuffle(samples.begin(), samples.end(), rng);
  std::vector<TrainingPoint> pts;
  for (std::size_t i = 0; i < n; ++i) pts.push_back(to_training_point(norm, samples[i]));
  return pts;
}

inline std::vector<double> finite_difference(Network net, std::span<const TrainingPoint> batch, double h) {
  auto p = net.parameters();
  std::vector<double> g(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double orig = p[k];
    p[k] = orig + h;
    net.set_parameters(p);
    const double up = mse(net, batch);
    p[k] = orig - h;
    net.set_parameters(p);
    const double down = mse(net, batch);
    p[k] = orig;
    g[k] = (up - down) / (2.0 * h);
  }
  return g;
}

inline bool gradient_agrees(double analytic, double numeric) {
  const double diff = std::abs(analytic - numeric);
  return diff <= 1e-7 || diff <= 1e-4 * std::max(std::abs(analytic), std::abs(numeric));
}

// ---- datastore records

inline RecordBody random_body(std::mt19937_64& rng, std::int64_t t) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  switch (rng() % 4) {
    case 0: {
      const Channel c = kAllChannels[rng() % kChannelCount];
      const auto& m = channel_meta(c);
      const bool fault = rng() % 20 == 0;
      return Reading{c, fault ? 0.0 : m.min + u(rng) * (m.max - m.min), t, fault ? Quality::fault : Quality::corrected};
    }
    case 1: {
      ActuatorCommandSet cmd;
      cmd.timestamp = t;
      for (Actuator a : kAllActuators) cmd[a] = is_continuous(a) ? u(rng) : static_cast<double>(rng() % 2);
      return cmd;
    }
    case 2:
      return AlarmEvent{t, std::string(to_string(kAllChannels[rng() % kChannelCount])) + "-fault"};
    default: {
      ForecastReport f;
      f.stage = kAllStages[rng() % 4];
      f.days_to_harvest = u(rng) * 200;
      f.yield_factor = u(rng);
      for (auto& s : f.stage_stress) s = u(rng);
      f.low_confidence = rng() % 2;
      f.computed_at = t;
      return f;
    }
  }
}

}  // namespace farm::testing
