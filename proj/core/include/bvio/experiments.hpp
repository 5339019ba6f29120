#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "bvio/config.hpp"
#include "bvio/engine.hpp"
#include "bvio/io.hpp"
#include "bvio/metrics.hpp"
#include "bvio/obsv.hpp"

namespace bvio {

/// Initial extrinsics with `roll_error_deg` applied to Rbc about the body x
/// axis.
Extrinsics perturbed_extrinsics(const Extrinsics& truth, double roll_error_deg);

EngineSetup make_setup(const RigFile& rig, double roll_error_deg);

struct RunResult {
  Trajectory forward;
  Trajectory refined;  // only frames the backward pass refined
  Trajectory realtime;
  std::vector<PhaseEvent> events;
  std::vector<Vec3> accel_bias;  // newest-frame estimate after each forward step
  std::vector<double> marg_ratio;
  std::vector<std::string> diagnostics;
  Extrinsics final_extrinsics;
};

using StepObserver = std::function<void(const Engine&, const ForwardResult&)>;

/// Runs the engine over a whole sensor log and finishes the backward pass.
RunResult run_engine(const SensorLog& log, const RigFile& rig, const RunConfig& cfg,
                     const StepObserver& observer = {});

/// forward.tum, refined.tum, realtime.tum, events.jsonl, diagnostics.jsonl
/// and manifest.json under `dir`.
void write_run_outputs(const RunResult& result, const RunConfig& cfg, const std::filesystem::path& dir);

/// Config hash, seed, library version and the input paths.
std::string manifest_json(const RunConfig& cfg);

struct ObsvRow {
  double t = 0.0;
  FrameId frame = 0;
  ObsvReport report;
};

/// Forward-only run analysing the forward window every cfg.obsv_every frames.
std::vector<ObsvRow> run_obsv(const SensorLog& log, const RigFile& rig, const RunConfig& cfg);
void write_obsv_csv(const std::filesystem::path& path, const std::vector<ObsvRow>& rows);

struct SweepConfig {
  double angle_min = 0.0;
  double angle_max = 90.0;
  double angle_step = 5.0;
  double straight_before = 60.0;
  double straight_after = 60.0;
  double speed = 6.0;
  double turn_duration = 2.0;
  int landmark_count = 1500;
  std::uint64_t seed = 1;
  SensorRig rig = SensorRig::default_rig();
  EngineConfig engine = sweep_engine_config();

  /// Accelerometer bias free from the start, extrinsics fixed, forward only.
  static EngineConfig sweep_engine_config();
  std::vector<double> angles() const;
};

/// Parses "min:max:step" in degrees. Throws ConfigError.
void parse_angle_range(const std::string& text, SweepConfig& cfg);

struct SweepRow {
  double angle_deg = 0.0;
  double mean_bias_error = 0.0;        // post-turn mean of |ba - ba_true|
  double mean_successive_diff = 0.0;   // post-turn mean of |ba_k - ba_{k-1}|
  std::vector<double> successive_diff;  // per frame, whole run
};

SweepRow run_sweep_angle(const SweepConfig& cfg, double angle_deg);
std::vector<SweepRow> run_sweep(const SweepConfig& cfg);
/// Summary CSV (one row per angle) and the per-frame successive difference CSV.
void write_sweep_csv(const std::filesystem::path& summary, const std::filesystem::path& series,
                     const std::vector<SweepRow>& rows);

}  // namespace bvio
