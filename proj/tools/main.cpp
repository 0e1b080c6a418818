#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "toa_fusion/errors.hpp"
#include "toa_fusion/experiment.hpp"

using namespace toa_fusion;

namespace {

struct Overrides {
  std::string config;
  std::string out;
  std::optional<long long> seed;
  std::optional<int> workers;
  std::string estimator;
};

void add_common(CLI::App* cmd, Overrides& o, bool config_required) {
  auto* c = cmd->add_option("--config", o.config, "INI experiment configuration");
  if (config_required) c->required();
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--seed", o.seed, "base random seed");
  cmd->add_option("--workers", o.workers, "parallel worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--estimator", o.estimator, "eskf, pgo or both")->check(CLI::IsMember({"eskf", "pgo", "both"}));
}

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (!o.out.empty()) c.out_dir = o.out;
  if (o.seed) {
    if (*o.seed < 0) throw ConfigError("--seed must be non-negative");
    c.seed = static_cast<std::uint64_t>(*o.seed);
  }
  if (o.workers) c.workers = *o.workers;
  if (!o.estimator.empty()) c.estimator = parse_estimator(o.estimator);
  validate(c);
  return c;
}

void print_metrics(const RunOutput& out) {
  std::cout << "estimator," << MetricsReport::csv_header() << "\n";
  for (const auto& e : out.estimators) std::cout << estimator_name(e.estimator) << "," << e.metrics.csv_row() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ToA + IMU pose estimation toolkit: ESKF and sliding-window pose-graph optimization"};
  app.require_subcommand(1);

  Overrides sim_o, run_o, sweep_o, traj_o;
  std::string gen_out;

  auto* sim = app.add_subcommand("simulate", "simulate ToA ranges for the configured trajectory and seeds");
  add_common(sim, sim_o, false);
  auto* run = app.add_subcommand("run", "simulate, estimate and evaluate one scenario");
  add_common(run, run_o, true);
  auto* sweep = app.add_subcommand("sweep", "scenario x BS-count x seed sweep with median aggregation");
  add_common(sweep, sweep_o, true);
  auto* gen_config = app.add_subcommand("gen-config", "print or write the default configuration");
  gen_config->add_option("--out", gen_out, "directory to write config.ini into (stdout when omitted)");
  auto* gen_traj = app.add_subcommand("gen-traj", "write synthetic imu.csv and groundtruth.csv");
  add_common(gen_traj, traj_o, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*sim) {
      for (const auto& p : cmd_simulate(resolve(sim_o))) std::cout << p.string() << "\n";
    } else if (*run) {
      print_metrics(cmd_run(resolve(run_o)));
    } else if (*sweep) {
      const ExperimentConfig c = resolve(sweep_o);
      const SweepResult r = cmd_sweep(c);
      std::cout << sweep_csv_header(true) << "\n";
      for (const auto& row : r.aggregate) std::cout << sweep_csv_row(row, c.sequence, true) << "\n";
    } else if (*gen_config) {
      if (gen_out.empty()) {
        std::cout << config_template();
      } else {
        std::filesystem::create_directories(gen_out);
        const auto path = std::filesystem::path(gen_out) / "config.ini";
        write_file_atomic(path, config_template());
        std::cout << path.string() << "\n";
      }
    } else if (*gen_traj) {
      const ExperimentConfig c = resolve(traj_o);
      cmd_gen_traj(c);
      std::cout << (c.out_dir / "imu.csv").string() << "\n" << (c.out_dir / "groundtruth.csv").string() << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.category());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
