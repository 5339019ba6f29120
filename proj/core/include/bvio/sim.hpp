#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "bvio/types.hpp"

namespace bvio {

struct Straight {
  double length = 10.0;  // m
  double speed = 2.0;    // m/s
};

/// Positive turn angles turn left (counter-clockwise about world +Z).
struct Arc {
  double turn_deg = 90.0;
  double radius = 10.0;  // m
  double speed = 2.0;    // m/s
};

struct Pause {
  double duration = 1.0;  // s
};

using Segment = std::variant<Straight, Arc, Pause>;

struct TrajectorySpec {
  std::vector<Segment> segments;
  double image_rate = 10.0;   // Hz
  double imu_rate = 100.0;    // Hz
  double wheel_rate = 100.0;  // Hz
  /// Longitudinal acceleration used when changing speed between segments.
  double max_accel = 1.0;  // m/s^2
  /// Opt-in roll/pitch sinusoidal excitation amplitude (deg); 0 keeps the
  /// motion exactly planar.
  double excitation_deg = 0.0;
  double excitation_hz = 0.5;
  /// Initial heading about world +Z (deg).
  double initial_heading_deg = 0.0;

  /// Throws std::invalid_argument describing the first violated invariant.
  void validate() const;
};

struct TruthSample {
  double t = 0.0;
  MotionState state;        // biases left zero; see ImuStream for true biases
  Vec3 omega = Vec3::Zero();    // body angular rate
  Vec3 acc_kin = Vec3::Zero();  // body-frame kinematic acceleration (gravity free)
};

/// Dense ground truth at the IMU rate. Within each IMU step the body rate and
/// kinematic acceleration are held at the mean of the two bounding samples,
/// and the states are the closed-form integral of that motion.
struct GroundTruth {
  double imu_dt = 0.01;
  int frame_stride = 10;  // IMU samples per image frame
  std::vector<TruthSample> samples;

  std::size_t frame_count() const { return samples.empty() ? 0 : (samples.size() - 1) / frame_stride + 1; }
  const TruthSample& frame(std::size_t f) const { return samples.at(f * frame_stride); }
  double frame_time(std::size_t f) const { return frame(f).t; }
  /// Cumulative path length at each frame (m).
  std::vector<double> frame_path_length() const;
};

struct SensorRig {
  Extrinsics extrinsics_true;
  CameraModel camera;
  Vec3 gravity_w = Vec3(0.0, 0.0, -9.81);
  Vec3 bias_a_true = Vec3(0.06, -0.05, 0.04);
  Vec3 bias_w_true = Vec3(0.002, -0.0015, 0.001);
  ImuNoise noise;
  double pixel_sigma = 1.0;
  bool simulate_bias_walk = false;
  double outlier_ratio = 0.0;

  /// Forward-looking camera, odometer on the right rear wheel.
  static SensorRig default_rig();
  /// Same geometry with every noise source and bias zeroed.
  static SensorRig noise_free_rig();
  void validate() const;
};

/// Rotation taking camera-frame vectors (z forward, x right, y down) into a
/// body frame with x forward, y left, z up.
Quat forward_camera_rotation();

struct ImuStream {
  std::vector<ImuSample> samples;
  std::vector<Vec3> true_ba;  // per sample
  std::vector<Vec3> true_bw;
};

struct FeatureFrame {
  std::int64_t frame_id = 0;
  double t = 0.0;
  std::vector<FeatureObservation> observations;
};

struct SimWarning {
  std::int64_t frame_id = 0;
  std::string message;
};

struct FeatureStream {
  std::vector<Vec3> landmarks_w;  // index = landmark id
  std::vector<FeatureFrame> frames;
  std::vector<SimWarning> warnings;
};

GroundTruth generate_truth(const TrajectorySpec& spec);
ImuStream synthesize_imu(const GroundTruth& truth, const SensorRig& rig, std::uint64_t seed);
std::vector<WheelSample> synthesize_wheel(const GroundTruth& truth, const SensorRig& rig, std::uint64_t seed);
FeatureStream synthesize_features(const GroundTruth& truth, const SensorRig& rig, int landmark_count,
                                  std::uint64_t seed);

/// Everything one simulated sequence needs.
struct SimData {
  TrajectorySpec spec;
  SensorRig rig;
  GroundTruth truth;
  ImuStream imu;
  std::vector<WheelSample> wheel;
  FeatureStream features;
};

SimData simulate(const TrajectorySpec& spec, const SensorRig& rig, int landmark_count, std::uint64_t seed);

/// Single-turn sequence used by the turning-angle sweep: straight, one left
/// arc of `turn_deg`, straight.
TrajectorySpec single_turn_spec(double turn_deg, double straight_before = 60.0, double straight_after = 60.0,
                                double speed = 6.0, double turn_duration = 2.0);

/// Camera pose in the world for a body state and camera extrinsics.
Pose camera_pose(const MotionState& body, const Extrinsics& ext);

}  // namespace bvio
