#pragma once

// farmctl subcommands. Each returns a process exit code:
// 0 success, 1 runtime failure, 2 usage or validation error.

#include <atomic>
#include <chrono>
#include <cmath>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>

#include "farm/api.hpp"
#include "farm/bus_socket.hpp"
#include "farm/chamber.hpp"
#include "farm/compensation.hpp"
#include "farm/config.hpp"
#include "farm/control.hpp"
#include "farm/datastore.hpp"
#include "farm/farm_loop.hpp"

namespace farm::cli {

enum ExitCode : int { kOk = 0, kRuntime = 1, kUsage = 2 };

inline std::atomic<bool>& stop_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}

inline void install_signal_handlers() {
  stop_flag() = false;
  auto handler = +[](int) { stop_flag() = true; };
  std::signal(SIGINT, handler);
  std::signal(SIGTERM, handler);
}

inline std::string pct(double fraction, int precision = 2) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << fraction * 100.0 << "%";
  return os.str();
}

// ---------------------------------------------------------------------------
// sim

struct SimOptions {
  std::filesystem::path scenario;
  std::filesystem::path out;
  std::optional<double> duration;
  std::optional<double> dt;
  std::optional<std::uint64_t> seed;
  bool json_output = false;
};

struct ClampViolations {
  std::size_t rh = 0, moisture = 0, co2 = 0;
  std::size_t total() const { return rh + moisture + co2; }
};

inline ClampViolations count_clamp_violations(const Trace& t) {
  ClampViolations v;
  auto check = [&](const ChamberState& s) {
    if (s.rh < 0.0 || s.rh > 100.0) ++v.rh;
    if (s.moisture < 0.0 || s.moisture > 100.0) ++v.moisture;
    if (s.co2 < 0.0) ++v.co2;
  };
  for (const auto& e : t.entries) check(e.state);
  check(t.final_state);
  return v;
}

// Closed-form air temperature for a constant heater duty with the fan off and
// constant ambient; nullopt when the scenario is not of that shape.
inline std::optional<double> heater_step_closed_form(const ScenarioSpec& spec, double t) {
  if (spec.ambient.amp_c != 0.0 || spec.schedule.size() != 1 || spec.schedule[0].t != 0.0) return std::nullopt;
  const auto& lv = spec.schedule[0].levels;
  if (lv[Actuator::fan] != 0.0) return std::nullopt;
  const double k = spec.chamber.k_loss;
  if (!(k > 0.0)) return std::nullopt;
  const double t_inf = spec.ambient.mean_c + spec.chamber.p_heat * lv[Actuator::air_heater] / k;
  return t_inf + (spec.initial_state.t_air - t_inf) * std::exp(-k * t);
}

inline constexpr double kClosedFormTolerance = 0.02;

inline int cmd_sim(const SimOptions& opt, std::ostream& out, std::ostream& err) {
  ScenarioSpec spec;
  try {
    json doc = read_json_file(opt.scenario);
    if (opt.duration) doc["duration_s"] = *opt.duration;
    if (opt.dt) doc["dt_s"] = *opt.dt;
    if (opt.seed) doc["seed"] = *opt.seed;
    spec = scenario_from_json(doc);
  } catch (const std::exception& e) {
    err << "farmctl sim: bad scenario " << opt.scenario << ": " << e.what() << "\n";
    return kUsage;
  }

  Trace trace;
  try {
    trace = run_scenario(spec);
    std::ofstream f(opt.out, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + opt.out.string());
    write_trace_jsonl(f, trace);
    f.flush();
    if (!f) throw std::runtime_error("write failed for " + opt.out.string());
  } catch (const std::exception& e) {
    err << "farmctl sim: " << e.what() << "\n";
    return kRuntime;
  }

  const auto clamps = count_clamp_violations(trace);
  json summary = {{"steps", trace.entries.size()}, {"final_state", to_json(trace.final_state)}, {"clamp_violations", clamps.total()}};
  if (auto expected = heater_step_closed_form(spec, trace.final_state.clock.t)) {
    double worst = 0.0;
    for (const auto& e : trace.entries)
      worst = std::max(worst, std::abs(e.state.t_air - *heater_step_closed_form(spec, e.state.clock.t)));
    worst = std::max(worst, std::abs(trace.final_state.t_air - *expected));
    summary["closed_form"] = {{"expected_final_t_air", *expected}, {"max_abs_error", worst}, {"within_tolerance", worst <= kClosedFormTolerance}};
  }

  if (opt.json_output) {
    out << summary.dump() << "\n";
  } else {
    const auto& s = trace.final_state;
    out << "steps            " << trace.entries.size() << "\n"
        << "final t          " << s.clock.t << " s\n"
        << "final t_air      " << s.t_air << " C\n"
        << "final t_soil     " << s.t_soil << " C\n"
        << "final rh         " << s.rh << " %\n"
        << "final co2        " << s.co2 << " ppm\n"
        << "final moisture   " << s.moisture << " %\n"
        << "final ph         " << s.ph_true << "\n"
        << "final lux        " << s.lux << "\n"
        << "clamp violations " << clamps.total() << "\n";
    if (summary.contains("closed_form")) {
      const auto& cf = summary["closed_form"];
      out << "closed-form t_air " << cf["expected_final_t_air"].get<double>() << " C, max |error| "
          << cf["max_abs_error"].get<double>() << " C -> " << (cf["within_tolerance"].get<bool>() ? "PASS" : "FAIL") << "\n";
    }
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::size_t samples = 10000;  // per channel
  std::size_t epochs = 200;
  std::uint64_t seed = 1;
  double lr = 0.01;
  std::size_t batch = 32;
  std::filesystem::path out = "model.json";
  bool json_output = false;
};

struct ChannelEvaluation {
  Channel channel;
  ErrorStats raw;
  ErrorStats compensated;
};

inline std::pair<std::size_t, std::size_t> sweep_shape(std::size_t samples) {
  const auto t_points = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(samples)))));
  const auto truth_points = (samples + t_points - 1) / t_points;
  return {t_points, truth_points};
}

inline constexpr std::size_t kHeldOutPoints = 50;

// Held-out evaluation on a grid offset from the training grid.
inline std::vector<ChannelEvaluation> evaluate_model(const CompModel& model, std::uint64_t seed) {
  const auto held = generate_calibration(CalibrationSweep::uniform(kHeldOutPoints, kHeldOutPoints, seed + 7919, true));
  std::vector<ChannelEvaluation> rows;
  for (Channel c : kAllChannels)
    rows.push_back({c, raw_error(held[index_of(c)]), compensated_error(model, held[index_of(c)])});
  return rows;
}

inline std::pair<CompModel, std::vector<TrainReport>> train_default_model(const TrainOptions& opt) {
  auto [t_points, truth_points] = sweep_shape(opt.samples);
  const auto data = generate_calibration(CalibrationSweep::uniform(t_points, truth_points, opt.seed));
  TrainHyper hyper;
  hyper.lr = opt.lr;
  hyper.epochs = opt.epochs;
  hyper.batch_size = opt.batch;
  hyper.seed = opt.seed;
  return train(data, hyper);
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << content;
  f.flush();
  if (!f) throw std::runtime_error("write failed for " + p.string());
}

inline int cmd_train(const TrainOptions& opt, std::ostream& out, std::ostream& err) {
  if (opt.samples < kMinSamplesPerChannel) {
    err << "farmctl train: --samples must be >= " << kMinSamplesPerChannel << " per channel\n";
    return kUsage;
  }
  if (opt.epochs == 0 || opt.batch == 0 || !(opt.lr > 0.0)) {
    err << "farmctl train: --epochs, --batch and --lr must be positive\n";
    return kUsage;
  }
  CompModel model;
  std::vector<TrainReport> reports;
  try {
    std::tie(model, reports) = train_default_model(opt);
  } catch (const TrainingError& e) {
    err << "farmctl train: " << e.what() << "\n" << to_json(e.report).dump() << "\n";
    return kRuntime;
  } catch (const std::exception& e) {
    err << "farmctl train: " << e.what() << "\n";
    return kRuntime;
  }

  try {
    write_file(opt.out, to_json(model).dump(2) + "\n");
  } catch (const std::exception& e) {
    err << "farmctl train: " << e.what() << "\n";
    return kRuntime;
  }

  const auto rows = evaluate_model(model, opt.seed);
  if (opt.json_output) {
    json j = json::array();
    for (std::size_t i = 0; i < rows.size(); ++i)
      j.push_back({{"channel", to_string(rows[i].channel)},
                   {"raw_mean_rel", rows[i].raw.mean_abs_rel},
                   {"raw_worst_rel", rows[i].raw.max_abs_rel},
                   {"comp_mean_rel", rows[i].compensated.mean_abs_rel},
                   {"comp_worst_rel", rows[i].compensated.max_abs_rel},
                   {"report", to_json(reports[i])}});
    out << json{{"model", opt.out.string()}, {"channels", j}}.dump() << "\n";
  } else {
    out << std::left << std::setw(17) << "channel" << std::setw(11) << "raw mean" << std::setw(11) << "raw worst"
        << std::setw(11) << "comp mean" << std::setw(11) << "comp worst" << "val mse\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& r = rows[i];
      out << std::left << std::setw(17) << to_string(r.channel) << std::setw(11) << pct(r.raw.mean_abs_rel)
          << std::setw(11) << pct(r.raw.max_abs_rel) << std::setw(11) << pct(r.compensated.mean_abs_rel) << std::setw(11)
          << pct(r.compensated.max_abs_rel) << reports[i].val_mse << "\n";
    }
    out << "model written to " << opt.out.string() << "\n";
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// experiment-germination

struct ExperimentOptions {
  double lux = 3500.0;
  std::uint64_t seed = 1;
  double duration_s = kDaySeconds;
  double ambient_mean = 20.0;
  double ambient_amp = 5.0;
  std::optional<std::filesystem::path> model_path;
  bool no_model = false;
  std::optional<std::filesystem::path> out;
  bool json_output = false;
};

struct ExperimentReport {
  double lux_target = 0.0;
  double mean_lux_photoperiod = 0.0;
  double mean_led_duty_photoperiod = 0.0;
  double max_led_duty_dark = 0.0;
  bool unreachable_setpoint = false;
  std::array<double, kChannelCount> in_band{};
  double illumination_stress = 0.0;
  std::size_t chatter_air_heater = 0;
  std::size_t chatter_soil_heater = 0;
  std::size_t photoperiod_samples = 0;
  bool compensation = false;
  ForecastReport forecast;
  double final_t_air = 0.0;
};

inline json to_json(const ExperimentReport& r) {
  json band = json::object();
  for (Channel c : kControlledChannels) band[std::string(to_string(c))] = r.in_band[index_of(c)];
  return {{"lux_target", r.lux_target},
          {"mean_lux_photoperiod", r.mean_lux_photoperiod},
          {"lux_relative_error", r.lux_target > 0.0 ? (r.mean_lux_photoperiod - r.lux_target) / r.lux_target : 0.0},
          {"mean_led_duty_photoperiod", r.mean_led_duty_photoperiod},
          {"max_led_duty_dark", r.max_led_duty_dark},
          {"unreachable_setpoint", r.unreachable_setpoint},
          {"in_band_fraction", band},
          {"illumination_stress", r.illumination_stress},
          {"chatter_violations", {{"air_heater", r.chatter_air_heater}, {"soil_heater", r.chatter_soil_heater}}},
          {"photoperiod_samples", r.photoperiod_samples},
          {"compensation", r.compensation},
          {"forecast", to_json(r.forecast)}};
}

inline ScenarioSpec germination_scenario(const ExperimentOptions& opt) {
  ScenarioSpec spec;
  spec.duration_s = opt.duration_s;
  spec.dt_s = 1.0;
  spec.seed = opt.seed;
  spec.ambient = {opt.ambient_mean, opt.ambient_amp, 50.0, 420.0, 0.0};
  spec.initial_state.t_air = 20.0;
  spec.initial_state.t_soil = 20.0;
  spec.initial_state.rh = 60.0;
  spec.initial_state.co2 = 420.0;
  spec.initial_state.moisture = 60.0;
  spec.initial_state.ph_true = 6.5;
  spec.stage = PlantStage::germination;
  return spec;
}

// Holds the germination stage at a given lamp target and scores it against
// the unmodified crop recipe.
inline ExperimentReport run_germination_experiment(const ExperimentOptions& opt, std::optional<CompModel> model) {
  const Recipe crop = default_recipe();
  Recipe control = crop;
  control[PlantStage::germination].sp(Channel::illumination) = opt.lux;

  ExperimentReport rep;
  rep.lux_target = opt.lux;
  rep.compensation = model.has_value();

  bus::SimBackend backend(germination_scenario(opt));
  FarmController controller(control, std::move(model));
  controller.set_stress_recipe(crop);

  const auto& plan = control[PlantStage::germination];
  std::vector<double> air, soil;
  std::vector<bool> air_on, soil_on;
  double lux_sum = 0.0, duty_sum = 0.0;

  ClosedLoopOptions lo;
  lo.duration_s = opt.duration_s;
  lo.keep_samples = false;
  run_closed_loop(backend, controller, lo, [&](const ClosedLoopSample& s) {
    air.push_back(s.corrected[Channel::air_temp].value);
    soil.push_back(s.corrected[Channel::soil_temp].value);
    air_on.push_back(s.cmd[Actuator::air_heater] > 0.0);
    soil_on.push_back(s.cmd[Actuator::soil_heater] > 0.0);
    if (plan.photoperiod.active(s.truth.clock.hour_of_day())) {
      ++rep.photoperiod_samples;
      lux_sum += s.truth.lux;
      duty_sum += s.cmd[Actuator::led];
      if (s.led_saturated) rep.unreachable_setpoint = true;
    } else {
      rep.max_led_duty_dark = std::max(rep.max_led_duty_dark, s.cmd[Actuator::led]);
    }
  });

  if (rep.photoperiod_samples) {
    rep.mean_lux_photoperiod = lux_sum / static_cast<double>(rep.photoperiod_samples);
    rep.mean_led_duty_photoperiod = duty_sum / static_cast<double>(rep.photoperiod_samples);
  }
  const auto& stress = controller.stress()[PlantStage::germination];
  for (Channel c : kControlledChannels) rep.in_band[index_of(c)] = 1.0 - stress.channel_stress(c);
  rep.illumination_stress = stress.channel_stress(Channel::illumination);
  rep.chatter_air_heater = count_chatter(air, air_on, plan.sp(Channel::air_temp), plan.db(Channel::air_temp));
  rep.chatter_soil_heater = count_chatter(soil, soil_on, plan.sp(Channel::soil_temp), plan.db(Channel::soil_temp));
  const auto& st = controller.state();
  rep.forecast = forecast_yield(controller.stress(), st.stage, st.stage_elapsed_s / kDaySeconds);
  rep.forecast.computed_at = backend.state().clock.seconds();
  rep.final_t_air = backend.state().t_air;
  return rep;
}

inline std::optional<CompModel> load_model(const std::filesystem::path& p) { return comp_model_from_json(read_json_file(p)); }

inline int cmd_experiment_germination(const ExperimentOptions& opt, std::ostream& out, std::ostream& err) {
  if (!(opt.lux >= 0.0) || !std::isfinite(opt.lux)) {
    err << "farmctl experiment-germination: --lux must be >= 0\n";
    return kUsage;
  }
  if (!(opt.duration_s > 0.0)) {
    err << "farmctl experiment-germination: --duration must be > 0\n";
    return kUsage;
  }
  std::optional<CompModel> model;
  try {
    if (opt.model_path) model = load_model(*opt.model_path);
  } catch (const std::exception& e) {
    err << "farmctl experiment-germination: " << e.what() << "\n";
    return kUsage;
  }

  ExperimentReport rep;
  try {
    if (!opt.model_path && !opt.no_model) {
      TrainOptions t;
      t.seed = opt.seed;
      model = train_default_model(t).first;
    }
    rep = run_germination_experiment(opt, std::move(model));
    if (opt.out) write_file(*opt.out, to_json(rep).dump(2) + "\n");
  } catch (const std::exception& e) {
    err << "farmctl experiment-germination: " << e.what() << "\n";
    return kRuntime;
  }

  if (opt.json_output) {
    out << to_json(rep).dump() << "\n";
    return kOk;
  }
  const double rel = rep.lux_target > 0.0 ? (rep.mean_lux_photoperiod - rep.lux_target) / rep.lux_target : 0.0;
  out << "germination experiment, lux target " << rep.lux_target << " (compensation " << (rep.compensation ? "on" : "off") << ")\n"
      << "  mean photoperiod illumination " << std::fixed << std::setprecision(1) << rep.mean_lux_photoperiod << " lux ("
      << std::showpos << pct(rel) << std::noshowpos << ")\n"
      << "  mean photoperiod LED duty     " << std::setprecision(4) << rep.mean_led_duty_photoperiod << "\n";
  if (rep.unreachable_setpoint) out << "  WARNING: lux target exceeds lamp capacity; LED saturated at full duty\n";
  out << "  chatter violations            air_heater " << rep.chatter_air_heater << ", soil_heater " << rep.chatter_soil_heater << "\n"
      << "  in-band fraction (vs crop recipe):\n";
  for (Channel c : kControlledChannels) out << "    " << std::left << std::setw(15) << to_string(c) << pct(rep.in_band[index_of(c)], 1) << "\n";
  out << "  illumination stress           " << std::setprecision(3) << rep.illumination_stress << "\n"
      << "  forecast: stage " << to_string(rep.forecast.stage) << ", yield factor " << rep.forecast.yield_factor
      << ", days to harvest " << std::setprecision(1) << rep.forecast.days_to_harvest << "\n";
  out.unsetf(std::ios::floatfield);
  return kOk;
}

// ---------------------------------------------------------------------------
// run

struct RunOptions {
  std::filesystem::path config;
  bool config_explicit = false;  // named by flag or FARMCTL_CONFIG; must then exist
  bool embedded_sim = false;
  std::chrono::milliseconds period{1000};
  std::optional<double> sim_duration;  // stop after this much simulated time
  std::optional<std::string> api_bind;
};

inline int cmd_run(const RunOptions& opt, std::ostream& out, std::ostream& err) {
  Config cfg;
  Recipe recipe = default_recipe();
  std::optional<CompModel> model;
  ScenarioSpec sim_spec;
  try {
    if (opt.config_explicit || std::filesystem::exists(opt.config)) cfg = load_config(opt.config);
    if (opt.api_bind) cfg.api_bind = *opt.api_bind;
    if (cfg.recipe_path) {
      if (!std::filesystem::exists(*cfg.recipe_path)) {
        err << "farmctl run: recipe file not found: " << cfg.recipe_path->string() << "\n";
        return kUsage;
      }
      recipe = recipe_from_json(read_json_file(*cfg.recipe_path));
    }
    if (cfg.model_path) {
      if (!std::filesystem::exists(*cfg.model_path)) {
        err << "farmctl run: model file not found: " << cfg.model_path->string() << "\n";
        return kUsage;
      }
      model = load_model(*cfg.model_path);
    }
    if (opt.embedded_sim) sim_spec = sim_spec_from_config(cfg.sim);
    api::split_bind(cfg.api_bind);
  } catch (const RecipeError& e) {
    err << "farmctl run: invalid recipe: ";
    for (const auto& fe : e.errors) err << fe.field << " (" << fe.message << ") ";
    err << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "farmctl run: " << e.what() << "\n";
    return kUsage;
  }

  install_signal_handlers();
  try {
    Datastore store(cfg.data_dir);
    if (store.skipped_on_open()) err << "farmctl run: skipped " << store.skipped_on_open() << " torn line(s) in " << cfg.data_dir << "\n";

    std::unique_ptr<bus::SimBackend> backend;
    std::unique_ptr<bus::Dispatcher> dispatcher;
    std::unique_ptr<bus::Client> client;
    if (opt.embedded_sim) {
      backend = std::make_unique<bus::SimBackend>(sim_spec);
      dispatcher = std::make_unique<bus::Dispatcher>(*backend);
      client = std::make_unique<bus::LoopbackClient>(*dispatcher);
    } else {
      client = std::make_unique<bus::SocketClient>(bus::parse_endpoint(cfg.bus_endpoint));
    }

    FarmController controller(recipe, model);
    controller.set_datastore(&store);
    const bool has_model = model.has_value();
    const CompModel model_copy = model.value_or(CompModel{});

    FarmService::Options so;
    so.period = opt.period;
    so.dt_s = sim_spec.dt_s;
    so.max_sim_seconds = opt.sim_duration;
    FarmService service(controller, *client, backend.get(), so);

    api::Context ctx;
    ctx.snapshot = [&service] { return service.snapshot(); };
    ctx.datastore = &store;
    ctx.model = has_model ? &model_copy : nullptr;
    ctx.submit = [&controller](ControlMessage m) { controller.submit(std::move(m)); };
    ctx.ui_dir = cfg.ui_dir;
    api::Server http(ctx);
    const int port = http.start(cfg.api_bind);

    service.start();
    out << "farmctl run: api on " << api::split_bind(cfg.api_bind).first << ":" << port << (opt.embedded_sim ? " (embedded sim)" : "")
        << ", bus " << (opt.embedded_sim ? std::string("in-process") : cfg.bus_endpoint) << ", data " << cfg.data_dir.string()
        << std::endl;
    while (!stop_flag() && service.running()) std::this_thread::sleep_for(std::chrono::milliseconds(20));
    service.stop();
    http.stop();
    store.close();
    if (auto e = service.last_error(); !e.empty()) err << "farmctl run: last loop error: " << e << "\n";
    out << "farmctl run: stopped cleanly" << std::endl;
  } catch (const std::exception& e) {
    err << "farmctl run: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// bus-sim: serve the chamber simulator over the device bus in real time.

struct BusSimOptions {
  std::optional<std::filesystem::path> scenario;
  std::string endpoint = "tcp://127.0.0.1:7700";
  std::chrono::milliseconds period{1000};
  std::optional<double> sim_duration;
};

inline int cmd_bus_sim(const BusSimOptions& opt, std::ostream& out, std::ostream& err) {
  ScenarioSpec spec;
  bus::Endpoint ep;
  try {
    spec = sim_spec_from_config(opt.scenario ? read_json_file(*opt.scenario) : json::object());
    ep = bus::parse_endpoint(opt.endpoint);
  } catch (const std::exception& e) {
    err << "farmctl bus-sim: " << e.what() << "\n";
    return kUsage;
  }
  install_signal_handlers();
  try {
    bus::SimBackend backend(spec);
    bus::Dispatcher dispatcher(backend);
    bus::Server server(dispatcher, ep);
    server.start();
    out << "farmctl bus-sim: serving on " << server.endpoint().str() << std::endl;
    auto next = std::chrono::steady_clock::now();
    while (!stop_flag()) {
      next += opt.period;
      std::this_thread::sleep_until(next);
      backend.advance(spec.dt_s);
      if (opt.sim_duration && backend.state().clock.t >= *opt.sim_duration) break;
    }
    server.stop();
  } catch (const std::exception& e) {
    err << "farmctl bus-sim: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// replay

struct ReplayOptions {
  std::filesystem::path log;  // a telemetry-*.jsonl file or a data directory
  double speed = 1.0;
  std::string api_bind = api::kDefaultBind;
  bool hold = false;  // keep serving after the end of the log
};

// Rebuilds snapshots from a recorded log as replay time advances.
class ReplayState {
 public:
  explicit ReplayState(std::vector<Record> records) : records_(std::move(records)) {
    current_.recipe = default_recipe();
    std::stable_sort(records_.begin(), records_.end(), [](const Record& a, const Record& b) { return a.timestamp() < b.timestamp(); });
    if (!records_.empty()) {
      t0_ = records_.front().timestamp();
      t_end_ = records_.back().timestamp();
    }
  }

  std::int64_t start() const { return t0_; }
  std::int64_t end() const { return t_end_; }
  bool empty() const { return records_.empty(); }

  // Applies every record with timestamp <= t and publishes a snapshot.
  void advance_to(double t) {
    std::lock_guard lock(mu_);
    while (cursor_ < records_.size() && static_cast<double>(records_[cursor_].timestamp()) <= t) {
      const auto& r = records_[cursor_++];
      if (const auto* rd = std::get_if<Reading>(&r.body)) {
        current_.corrected[rd->channel] = *rd;
        current_.t = rd->timestamp;
      } else if (const auto* c = std::get_if<ActuatorCommandSet>(&r.body)) {
        current_.cmd = *c;
        ++current_.tick;
      } else if (const auto* a = std::get_if<AlarmEvent>(&r.body)) {
        alarms_.push_back(*a);
      } else {
        current_.forecast = std::get<ForecastReport>(r.body);
        current_.controller.stage = current_.forecast->stage;
      }
      started_ = true;
    }
    now_ = t;
    for (auto& o : current_.controller.overrides)
      if (o && o->expires_at <= t) o.reset();
    current_.alarms.clear();
    for (const auto& a : alarms_)
      if (static_cast<double>(a.t) > t - 60.0 && static_cast<double>(a.t) <= t) current_.alarms.push_back(a.alarm);
    current_.safe_state = std::find(current_.alarms.begin(), current_.alarms.end(), "all-fault") != current_.alarms.end();
    if (started_) {
      auto snap = std::make_shared<StateSnapshot>(current_);
      for (Actuator a : kAllActuators)
        if (const auto& o = snap->controller.override_for(a)) snap->cmd[a] = o->level;
      snapshot_ = std::move(snap);
    }
  }

  void submit(const ControlMessage& m) {
    std::lock_guard lock(mu_);
    if (const auto* o = std::get_if<OverrideRequest>(&m))
      current_.controller = apply_override(current_.controller, o->actuator, o->level, o->ttl_s, now_);
    else
      current_.recipe = std::get<RecipeUpdate>(m).recipe;
    if (started_) {
      auto snap = std::make_shared<StateSnapshot>(current_);
      for (Actuator a : kAllActuators)
        if (const auto& ov = snap->controller.override_for(a)) snap->cmd[a] = ov->level;
      snapshot_ = std::move(snap);
    }
  }

  std::shared_ptr<const StateSnapshot> snapshot() const {
    std::lock_guard lock(mu_);
    return snapshot_;
  }

 private:
  std::vector<Record> records_;
  std::size_t cursor_ = 0;
  std::int64_t t0_ = 0;
  std::int64_t t_end_ = 0;
  double now_ = 0.0;
  bool started_ = false;
  std::vector<AlarmEvent> alarms_;
  StateSnapshot current_;
  mutable std::mutex mu_;
  std::shared_ptr<const StateSnapshot> snapshot_;
};

inline LoadResult load_replay_source(const std::filesystem::path& p) {
  if (std::filesystem::is_directory(p)) return replay_dir(p);
  return load_log_file(p);
}

inline int cmd_replay(const ReplayOptions& opt, std::ostream& out, std::ostream& err) {
  if (!(opt.speed > 0.0)) {
    err << "farmctl replay: --speed must be > 0\n";
    return kUsage;
  }
  LoadResult loaded;
  try {
    if (!std::filesystem::exists(opt.log)) throw DatastoreError("no such log: " + opt.log.string());
    loaded = load_replay_source(opt.log);
    api::split_bind(opt.api_bind);
  } catch (const std::exception& e) {
    err << "farmctl replay: malformed log: " << e.what() << "\n";
    return kUsage;
  }
  if (loaded.skipped_tail_lines) err << "farmctl replay: warning: skipped truncated last line\n";

  install_signal_handlers();
  try {
    const Datastore store = Datastore::from_records(loaded.records);
    ReplayState replay(loaded.records);

    api::Context ctx;
    ctx.snapshot = [&replay] { return replay.snapshot(); };
    ctx.datastore = &store;
    ctx.submit = [&replay](ControlMessage m) { replay.submit(m); };
    api::Server http(ctx);
    const int port = http.start(opt.api_bind);
    out << "farmctl replay: " << loaded.records.size() << " records, api on port " << port << ", speed x" << opt.speed << std::endl;

    const auto wall0 = std::chrono::steady_clock::now();
    const double span = static_cast<double>(replay.end() - replay.start());
    for (;;) {
      const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
      const double sim = std::min(span, elapsed * opt.speed);
      replay.advance_to(static_cast<double>(replay.start()) + sim);
      if (stop_flag()) break;
      if (sim >= span && !opt.hold) break;
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    http.stop();
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    out << "farmctl replay: done after " << wall << " s wall" << std::endl;
  } catch (const std::exception& e) {
    err << "farmctl replay: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}

}  // namespace farm::cli
