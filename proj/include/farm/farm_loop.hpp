#pragma once

// The control cycle: poll -> validate -> compensate -> decide -> actuate,
// plus logging, stress accounting and the periodic forecast.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <thread>
#include <variant>

#include "farm/bus.hpp"
#include "farm/compensation.hpp"
#include "farm/control.hpp"
#include "farm/datastore.hpp"
#include "farm/forecast.hpp"

namespace farm {

struct RecipeUpdate {
  Recipe recipe;
};
struct OverrideRequest {
  Actuator actuator;
  double level;
  double ttl_s;
};
using ControlMessage = std::variant<RecipeUpdate, OverrideRequest>;

struct StateSnapshot {
  std::int64_t t = 0;
  std::uint64_t tick = 0;
  ReadingSet raw;
  ReadingSet corrected;
  ActuatorCommandSet cmd;
  ControllerState controller;
  Recipe recipe;
  std::vector<std::string> alarms;
  std::optional<ForecastReport> forecast;
  bool compensation = false;
  bool safe_state = false;
  std::uint64_t log_errors = 0;
};

inline json to_json(const StateSnapshot& s) {
  json alarms = json::array();
  for (const auto& a : s.alarms) alarms.push_back(a);
  json j = {{"t", s.t},
            {"tick", s.tick},
            {"corrected", values_json(s.corrected)},
            {"raw", values_json(s.raw)},
            {"actuators", to_json(s.cmd)},
            {"stage", to_string(s.controller.stage)},
            {"stage_elapsed_s", s.controller.stage_elapsed_s},
            {"alarms", alarms},
            {"safe_state", s.safe_state},
            {"compensation", s.compensation ? "on" : "off"},
            {"log_errors", s.log_errors}};
  json ov = json::object();
  for (Actuator a : kAllActuators)
    if (const auto& o = s.controller.override_for(a))
      ov[std::string(to_string(a))] = {{"level", o->level}, {"expires_at", o->expires_at}};
  j["overrides"] = ov;
  j["forecast"] = s.forecast ? to_json(*s.forecast) : json(nullptr);
  return j;
}

inline constexpr double kForecastInterval = 60.0;

// Single-threaded control logic; owns the controller memory and stress history.
class FarmController {
 public:
  FarmController(Recipe recipe, std::optional<CompModel> model)
      : recipe_(std::move(recipe)), stress_recipe_(recipe_), model_(std::move(model)) {}

  // Setpoints the stress index is scored against (defaults to the control recipe).
  void set_stress_recipe(Recipe r) { stress_recipe_ = std::move(r); }

  void set_datastore(Datastore* ds) { datastore_ = ds; }

  // Thread-safe; applied at the top of the next tick.
  void submit(ControlMessage m) {
    std::lock_guard lock(inbox_mu_);
    inbox_.push_back(std::move(m));
  }

  ReadingSet compensate(const ReadingSet& raw, double t_amb) const {
    ReadingSet out = raw;
    for (Channel c : kAllChannels) {
      Reading r = validate_reading(raw[c]);
      if (r.is_fault()) {
        out[c] = r;
        continue;
      }
      if (model_) {
        out[c] = forward(*model_, c, r.value, t_amb, r.timestamp).reading;
      } else {
        r.quality = Quality::corrected;
        out[c] = r;
      }
    }
    return out;
  }

  struct Output {
    ReadingSet raw;
    ReadingSet corrected;
    TickResult result;
  };

  Output tick(const ReadingSet& raw, double t_amb, const SimClock& clock) {
    drain_inbox(clock.t);
    Output o;
    o.raw = raw;
    o.corrected = compensate(raw, t_amb);
    o.result = farm::tick(o.corrected, recipe_, state_, clock);
    state_ = o.result.state;

    stress_.record(state_.stage, stress_recipe_[state_.stage], o.corrected, clock.time_of_day());
    if (!forecast_ || clock.t - static_cast<double>(forecast_->computed_at) >= kForecastInterval) {
      forecast_ = forecast_yield(stress_, state_.stage, state_.stage_elapsed_s / kDaySeconds);
      forecast_->computed_at = clock.seconds();
      log(*forecast_);
    }

    if (datastore_) {
      for (const auto& r : o.corrected.readings) log(r);
      log(o.result.cmd);
      std::set<std::string> now(o.result.alarms.begin(), o.result.alarms.end());
      for (const auto& a : now)
        if (!active_alarms_.contains(a)) log(AlarmEvent{clock.seconds(), a});
      active_alarms_ = std::move(now);
    }

    ++ticks_;
    snapshot_.t = clock.seconds();
    snapshot_.tick = ticks_;
    snapshot_.raw = o.raw;
    snapshot_.corrected = o.corrected;
    snapshot_.cmd = o.result.cmd;
    snapshot_.controller = state_;
    snapshot_.recipe = recipe_;
    snapshot_.alarms = o.result.alarms;
    snapshot_.forecast = forecast_;
    snapshot_.compensation = model_.has_value();
    snapshot_.safe_state = o.result.safe_state;
    snapshot_.log_errors = log_errors_;
    return o;
  }

  const StateSnapshot& snapshot() const { return snapshot_; }
  const ControllerState& state() const { return state_; }
  ControllerState& state() { return state_; }
  const Recipe& recipe() const { return recipe_; }
  const std::optional<CompModel>& model() const { return model_; }
  const StressHistory& stress() const { return stress_; }
  const std::optional<ForecastReport>& forecast() const { return forecast_; }
  std::uint64_t log_errors() const { return log_errors_; }

 private:
  void drain_inbox(double now) {
    std::deque<ControlMessage> msgs;
    {
      std::lock_guard lock(inbox_mu_);
      msgs.swap(inbox_);
    }
    for (auto& m : msgs) {
      if (auto* r = std::get_if<RecipeUpdate>(&m)) {
        recipe_ = std::move(r->recipe);
        stress_recipe_ = recipe_;
      } else {
        const auto& o = std::get<OverrideRequest>(m);
        state_ = apply_override(state_, o.actuator, o.level, o.ttl_s, now);
      }
    }
  }

  void log(RecordBody body) {
    if (!datastore_) return;
    try {
      datastore_->append(std::move(body));
    } catch (const std::exception&) {
      ++log_errors_;
    }
  }

  Recipe recipe_;
  Recipe stress_recipe_;
  std::optional<CompModel> model_;
  ControllerState state_;
  StressHistory stress_;
  std::optional<ForecastReport> forecast_;
  Datastore* datastore_ = nullptr;
  std::set<std::string> active_alarms_;
  StateSnapshot snapshot_;
  std::uint64_t ticks_ = 0;
  std::uint64_t log_errors_ = 0;

  std::mutex inbox_mu_;
  std::deque<ControlMessage> inbox_;
};

// ---------------------------------------------------------------------------
// Deterministic closed loop against the simulator (no wall clock).

struct ClosedLoopSample {
  ChamberState truth;
  ReadingSet corrected;
  ActuatorCommandSet cmd;
  bool led_saturated = false;
};

struct ClosedLoopOptions {
  double duration_s = kDaySeconds;
  double dt_s = 1.0;
  bool keep_samples = true;
};

// Runs controller and simulator in lock-step through the text protocol.
inline std::vector<ClosedLoopSample> run_closed_loop(bus::SimBackend& backend, FarmController& controller,
                                                     const ClosedLoopOptions& opt,
                                                     const std::function<void(const ClosedLoopSample&)>& on_sample = {}) {
  bus::Dispatcher dispatcher(backend);
  bus::LoopbackClient client(dispatcher);
  std::vector<ClosedLoopSample> out;
  const auto steps = static_cast<std::size_t>(std::llround(opt.duration_s / opt.dt_s));
  if (opt.keep_samples) out.reserve(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const ChamberState truth = backend.state();
    const ReadingSet raw = bus::poll_all(client, truth.clock.seconds());
    const auto o = controller.tick(raw, backend.ambient().t_amb, truth.clock);
    bus::apply_all(client, o.result.cmd);
    backend.set_stage(controller.state().stage);
    ClosedLoopSample s{truth, o.corrected, o.result.cmd, o.result.led_saturated};
    if (on_sample) on_sample(s);
    if (opt.keep_samples) out.push_back(std::move(s));
    backend.advance(opt.dt_s);
  }
  return out;
}

// Counts switches of an on/off law that were not justified by the value
// leaving the band on the correct side.
inline std::size_t count_chatter(const std::vector<double>& values, const std::vector<bool>& on, double setpoint,
                                 double deadband) {
  std::size_t violations = 0;
  for (std::size_t i = 1; i < values.size() && i < on.size(); ++i) {
    if (on[i] == on[i - 1]) continue;
    if (on[i] && !(values[i] < setpoint - deadband)) ++violations;
    if (!on[i] && !(values[i] > setpoint + deadband)) ++violations;
  }
  return violations;
}

// ---------------------------------------------------------------------------
// Real-time service

// Runs FarmController periodically on its own thread; publishes immutable snapshots.
class FarmService {
 public:
  struct Options {
    std::chrono::milliseconds period{1000};
    double dt_s = 1.0;                        // simulated seconds per tick (embedded sim)
    std::optional<double> max_sim_seconds;    // stop after this much sim time
  };

  // `backend` is non-null for the embedded simulator; `client` talks to the devices.
  FarmService(FarmController& controller, bus::Client& client, bus::SimBackend* backend, Options opt)
      : controller_(controller), client_(client), backend_(backend), opt_(opt) {}

  ~FarmService() { stop(); }

  void start() {
    running_ = true;
    thread_ = std::thread([this] { loop(); });
  }

  void stop() {
    {
      std::lock_guard lock(wake_mu_);
      running_ = false;
    }
    wake_.notify_all();
    if (thread_.joinable()) thread_.join();
  }

  void wait() {
    if (thread_.joinable()) thread_.join();
  }

  bool running() const { return running_; }

  std::shared_ptr<const StateSnapshot> snapshot() const {
    std::lock_guard lock(snap_mu_);
    return snapshot_;
  }

  std::string last_error() const {
    std::lock_guard lock(snap_mu_);
    return last_error_;
  }

 private:
  void loop() {
    auto next = std::chrono::steady_clock::now();
    SimClock clock;
    while (running_) {
      try {
        if (backend_) clock = backend_->state().clock;
        else clock.t = std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
        ReadingSet raw = bus::poll_all(client_, clock.seconds());
        const double t_amb = backend_ ? backend_->ambient().t_amb : fallback_ambient(raw);
        auto o = controller_.tick(raw, t_amb, clock);
        bus::apply_all(client_, o.result.cmd);
        if (backend_) {
          backend_->set_stage(controller_.state().stage);
          backend_->advance(opt_.dt_s);
        }
        auto snap = std::make_shared<const StateSnapshot>(controller_.snapshot());
        {
          std::lock_guard lock(snap_mu_);
          snapshot_ = std::move(snap);
        }
      } catch (const std::exception& e) {
        std::lock_guard lock(snap_mu_);
        last_error_ = e.what();
      }
      if (opt_.max_sim_seconds && backend_ && backend_->state().clock.t >= *opt_.max_sim_seconds) break;
      next += opt_.period;
      std::unique_lock lock(wake_mu_);
      wake_.wait_until(lock, next, [this] { return !running_.load(); });
    }
    running_ = false;
  }

  // Without a reference thermometer the air-temperature reading stands in for ambient.
  static double fallback_ambient(const ReadingSet& raw) {
    const auto& r = raw[Channel::air_temp];
    return r.is_fault() ? kSensorReferenceC : r.value;
  }

  FarmController& controller_;
  bus::Client& client_;
  bus::SimBackend* backend_;
  Options opt_;
  std::atomic<bool> running_{false};
  std::thread thread_;
  std::mutex wake_mu_;
  std::condition_variable wake_;
  mutable std::mutex snap_mu_;
  std::shared_ptr<const StateSnapshot> snapshot_;
  std::string last_error_;
};

}  // namespace farm
