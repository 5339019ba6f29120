#include <cstdio>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "bvio/config.hpp"
#include "bvio/experiments.hpp"
#include "bvio/io.hpp"
#include "bvio/metrics.hpp"

namespace fs = std::filesystem;
using namespace bvio;

namespace {

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int cmd_simulate(const std::string& spec_path, const std::string& out_dir) {
  const SimConfig cfg = load_sim_config(spec_path);
  const SimData sim = simulate(cfg.spec, cfg.rig, cfg.landmark_count, cfg.seed);
  const fs::path dir(out_dir);
  write_sensor_log(dir / "sensors.jsonl", sensor_log_from(sim));
  write_tum(dir / "groundtruth.tum", ground_truth_trajectory(sim));
  write_rig(dir / "rig.json", {cfg.rig, sim.truth.frame(0).state});
  for (const auto& w : sim.features.warnings) std::cerr << "warning: frame " << w.frame_id << ": " << w.message << '\n';
  std::printf("%zu frames, %zu IMU samples, %zu wheel samples -> %s\n", sim.features.frames.size(),
              sim.imu.samples.size(), sim.wheel.size(), dir.string().c_str());
  return 0;
}

void print_ate(const char* name, const Trajectory& est, const Trajectory& gt) {
  if (est.size() < 3) return;
  std::printf("%s ATE: %.4f m\n", name, ate(est, gt));
}

int cmd_run(const std::string& config_path) {
  const RunConfig cfg = load_run_config(config_path);
  const SensorLog log = read_sensor_log(cfg.paths.sensor_log);
  const RigFile rig = read_rig(cfg.paths.rig);
  const RunResult res = run_engine(log, rig, cfg);
  write_run_outputs(res, cfg, cfg.paths.output_dir);
  for (const auto& e : res.events) std::printf("%-16s t=%.2f frame %lld\n", e.event.c_str(), e.t, static_cast<long long>(e.frame));
  if (!cfg.paths.ground_truth.empty()) {
    const Trajectory gt = read_tum(cfg.paths.ground_truth);
    print_ate("forward", res.forward, gt);
    print_ate("refined", res.refined, gt);
    print_ate("realtime", res.realtime, gt);
  }
  std::printf("outputs in %s\n", cfg.paths.output_dir.string().c_str());
  return 0;
}

int cmd_obsv(const std::string& config_path) {
  const RunConfig cfg = load_run_config(config_path);
  const auto rows = run_obsv(read_sensor_log(cfg.paths.sensor_log), read_rig(cfg.paths.rig), cfg);
  const fs::path out = cfg.paths.output_dir / "obsv.csv";
  write_obsv_csv(out, rows);
  std::printf("%zu windows -> %s\n", rows.size(), out.string().c_str());
  return 0;
}

int cmd_eval(const std::string& est_path, const std::string& gt_path, const std::string& metric, double skip) {
  const Trajectory est = read_tum(est_path);
  const Trajectory gt = read_tum(gt_path);
  double v = 0.0;
  if (metric == "ate") {
    v = ate(est, gt);
  } else if (metric == "start") {
    v = start_aligned_error(est, gt, skip);
  } else {
    throw UsageError("--metric must be ate or start");
  }
  std::printf("%.3f\n", v);
  return 0;
}

int cmd_sweep(const std::string& range, const std::string& out_dir, std::uint64_t seed, int landmarks) {
  SweepConfig cfg;
  parse_angle_range(range, cfg);
  cfg.seed = seed;
  cfg.landmark_count = landmarks;
  const auto rows = run_sweep(cfg);
  const fs::path dir(out_dir);
  write_sweep_csv(dir / "sweep.csv", dir / "sweep_series.csv", rows);
  std::printf("turn_deg,mean_bias_error,mean_successive_diff\n");
  for (const auto& r : rows) std::printf("%g,%.6f,%.6f\n", r.angle_deg, r.mean_bias_error, r.mean_successive_diff);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bidirectional visual-inertial-odometer estimation"};
  app.require_subcommand(1);

  std::string spec_path, sim_out;
  auto* sim = app.add_subcommand("simulate", "Simulate sensor data from a TOML spec");
  sim->add_option("spec", spec_path, "Simulation spec (TOML)")->required()->check(CLI::ExistingFile);
  sim->add_option("-o,--output", sim_out, "Output directory")->required();

  std::string run_cfg;
  auto* run = app.add_subcommand("run", "Run the estimator on a sensor log");
  run->add_option("config", run_cfg, "Run config (TOML)")->required()->check(CLI::ExistingFile);

  std::string obsv_cfg;
  auto* obsv = app.add_subcommand("obsv", "Per-window observability report as CSV");
  obsv->add_option("config", obsv_cfg, "Run config (TOML)")->required()->check(CLI::ExistingFile);

  std::string est, gt, metric = "ate";
  double skip = 100.0;
  auto* eval = app.add_subcommand("eval", "Compare a TUM trajectory with ground truth");
  eval->add_option("--est", est, "Estimated trajectory (TUM)")->required()->check(CLI::ExistingFile);
  eval->add_option("--gt", gt, "Ground truth (TUM)")->required()->check(CLI::ExistingFile);
  eval->add_option("--metric", metric, "ate or start")->check(CLI::IsMember({"ate", "start"}));
  eval->add_option("--skip", skip, "Path length before the start frame for --metric start (m)");

  std::string range = "0:90:5", sweep_out = "sweep_out";
  std::uint64_t seed = 1;
  int landmarks = 1500;
  auto* sweep = app.add_subcommand("sweep", "Accelerometer-bias error against turning angle");
  sweep->add_option("--turning", range, "min:max:step in degrees");
  sweep->add_option("-o,--output", sweep_out, "Output directory");
  sweep->add_option("--seed", seed, "Simulation seed");
  sweep->add_option("--landmarks", landmarks, "Landmarks per sequence")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*sim) return cmd_simulate(spec_path, sim_out);
    if (*run) return cmd_run(run_cfg);
    if (*obsv) return cmd_obsv(obsv_cfg);
    if (*eval) return cmd_eval(est, gt, metric, skip);
    if (*sweep) return cmd_sweep(range, sweep_out, seed, landmarks);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsageError;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kUsageError;
}
