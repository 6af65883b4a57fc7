#include <iostream>

#include <CLI11.hpp>

#include "farm/commands.hpp"

int main(int argc, char** argv) {
  using namespace farm::cli;
  CLI::App app{"farmctl: home farm controller, simulator and tools"};
  app.require_subcommand(1);
  std::optional<std::string> config_flag;
  app.add_option("-c,--config", config_flag, "config file (default: $FARMCTL_CONFIG or ./farmctl.json)");

  SimOptions sim;
  auto* sim_cmd = app.add_subcommand("sim", "run a scenario through the chamber simulator");
  sim_cmd->add_option("scenario", sim.scenario, "scenario JSON")->required();
  sim_cmd->add_option("out", sim.out, "trace output (JSONL)")->required();
  sim_cmd->add_option("--duration", sim.duration, "override duration_s");
  sim_cmd->add_option("--dt", sim.dt, "override dt_s");
  sim_cmd->add_option("--seed", sim.seed, "override seed");
  sim_cmd->add_flag("--json", sim.json_output, "machine-readable summary");

  RunOptions run;
  std::optional<std::int64_t> period_ms;
  auto* run_cmd = app.add_subcommand("run", "run the control loop, datastore and API");
  run_cmd->add_flag("--embedded-sim", run.embedded_sim, "simulate the chamber in-process");
  run_cmd->add_option("--period-ms", period_ms, "control period in ms (default 1000)");
  run_cmd->add_option("--duration", run.sim_duration, "stop after this many simulated seconds (embedded sim)");
  run_cmd->add_option("--bind", run.api_bind, "API bind address host:port");

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "generate calibration data and train compensation models");
  train_cmd->add_option("--samples", tr.samples, "samples per channel");
  train_cmd->add_option("--epochs", tr.epochs);
  train_cmd->add_option("--seed", tr.seed);
  train_cmd->add_option("--lr", tr.lr);
  train_cmd->add_option("--batch", tr.batch);
  train_cmd->add_option("--out", tr.out, "model file");
  train_cmd->add_flag("--json", tr.json_output);

  ExperimentOptions ex;
  std::optional<std::string> ex_model, ex_out;
  auto* ex_cmd = app.add_subcommand("experiment-germination", "24 h closed-loop germination run at a fixed lux target");
  ex_cmd->add_option("--lux", ex.lux);
  ex_cmd->add_option("--seed", ex.seed);
  ex_cmd->add_option("--duration", ex.duration_s, "simulated seconds");
  ex_cmd->add_option("--model", ex_model, "compensation model (default: train one with --seed)");
  ex_cmd->add_flag("--no-model", ex.no_model, "run without compensation");
  ex_cmd->add_option("--out", ex_out, "write the JSON report here");
  ex_cmd->add_flag("--json", ex.json_output);

  ReplayOptions rp;
  auto* rp_cmd = app.add_subcommand("replay", "serve a recorded log through the API");
  rp_cmd->add_option("log", rp.log, "telemetry-*.jsonl file or data directory")->required();
  rp_cmd->add_option("--speed", rp.speed, "replay speed multiplier");
  rp_cmd->add_option("--bind", rp.api_bind, "API bind address host:port");
  rp_cmd->add_flag("--hold", rp.hold, "keep serving after the end of the log");

  BusSimOptions bs;
  std::optional<std::int64_t> bs_period_ms;
  auto* bs_cmd = app.add_subcommand("bus-sim", "serve the chamber simulator on the device bus");
  bs_cmd->add_option("--scenario", bs.scenario);
  bs_cmd->add_option("--endpoint", bs.endpoint, "tcp://host:port or unix:/path");
  bs_cmd->add_option("--period-ms", bs_period_ms);
  bs_cmd->add_option("--duration", bs.sim_duration);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  if (*sim_cmd) return cmd_sim(sim, std::cout, std::cerr);
  if (*train_cmd) return cmd_train(tr, std::cout, std::cerr);
  if (*ex_cmd) {
    if (ex_model) ex.model_path = *ex_model;
    if (ex_out) ex.out = *ex_out;
    return cmd_experiment_germination(ex, std::cout, std::cerr);
  }
  if (*rp_cmd) return cmd_replay(rp, std::cout, std::cerr);
  if (*bs_cmd) {
    if (bs_period_ms) bs.period = std::chrono::milliseconds(*bs_period_ms);
    return cmd_bus_sim(bs, std::cout, std::cerr);
  }
  run.config = farm::config_path(config_flag);
  run.config_explicit = config_flag || std::getenv("FARMCTL_CONFIG");
  if (period_ms) run.period = std::chrono::milliseconds(*period_ms);
  return cmd_run(run, std::cout, std::cerr);
}
