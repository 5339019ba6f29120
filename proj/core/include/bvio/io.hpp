#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "bvio/engine.hpp"
#include "bvio/metrics.hpp"
#include "bvio/sim.hpp"

namespace bvio {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// "t tx ty tz qx qy qz qw" per line, 9 significant digits.
void write_tum(const std::filesystem::path& path, const Trajectory& traj);
/// Skips blank lines and lines starting with '#'. Throws IoError on malformed
/// lines.
Trajectory read_tum(const std::filesystem::path& path);

struct SensorLog {
  std::vector<ImuSample> imu;
  std::vector<WheelSample> wheel;
  std::vector<FeatureFrame> frames;
};

SensorLog sensor_log_from(const SimData& sim);
/// Per-frame engine inputs; each gap carries the samples from the previous
/// frame time through the frame time.
std::vector<FrameInput> frame_inputs(const SensorLog& log);
std::vector<FrameInput> frame_inputs(const SimData& sim);

/// One JSON object per line, tagged by "type": imu, wheel or img. Records
/// are written in time order.
void write_sensor_log(const std::filesystem::path& path, const SensorLog& log);
SensorLog read_sensor_log(const std::filesystem::path& path);

/// Sensor rig plus the ground-truth state at frame 0, which seeds the
/// estimator.
struct RigFile {
  SensorRig rig;
  MotionState initial_state;
};

void write_rig(const std::filesystem::path& path, const RigFile& rig);
RigFile read_rig(const std::filesystem::path& path);

/// JSON lines {event, t, frame}.
void write_events(const std::filesystem::path& path, const std::vector<PhaseEvent>& events);

Trajectory ground_truth_trajectory(const SimData& sim);

}  // namespace bvio
