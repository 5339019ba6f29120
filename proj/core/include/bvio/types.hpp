#pragma once

#include <cstdint>
#include <vector>

#include "bvio/geometry.hpp"

namespace bvio {

using FrameId = std::int64_t;
using LandmarkId = std::int64_t;

/// Camera-IMU (Rbc, pbc) and IMU-odometer (Rbo, pbo) rigid transforms. Rbc
/// takes camera-frame vectors into the IMU (body) frame; pbc is the camera
/// origin in the body frame. Same for the odometer.
struct Extrinsics {
  Quat Rbc = Quat::Identity();
  Vec3 pbc = Vec3::Zero();
  Quat Rbo = Quat::Identity();
  Vec3 pbo = Vec3::Zero();
};

/// Pinhole camera without distortion.
struct CameraModel {
  double fx = 400.0;
  double fy = 400.0;
  double cx = 320.0;
  double cy = 240.0;
  int width = 640;
  int height = 480;

  Vec2 project(const Vec3& p_cam) const {
    return {fx * p_cam.x() / p_cam.z() + cx, fy * p_cam.y() / p_cam.z() + cy};
  }
  /// Normalized bearing (x, y, 1) for a pixel.
  Vec3 unproject(const Vec2& uv) const { return {(uv.x() - cx) / fx, (uv.y() - cy) / fy, 1.0}; }
  bool inside(const Vec2& uv) const {
    return uv.x() >= 0.0 && uv.y() >= 0.0 && uv.x() < width && uv.y() < height;
  }
  bool valid() const {
    return fx > 0.0 && fy > 0.0 && cx >= 0.0 && cy >= 0.0 && cx < width && cy < height;
  }
};

struct ImuSample {
  double t = 0.0;
  Vec3 gyro = Vec3::Zero();   // rad/s
  Vec3 accel = Vec3::Zero();  // m/s^2, specific force
};

struct WheelSample {
  double t = 0.0;
  double speed = 0.0;  // m/s along the odometer x axis
};

struct FeatureObservation {
  FrameId frame_id = 0;
  LandmarkId landmark_id = 0;
  Vec2 uv = Vec2::Zero();
};

/// Continuous-time noise densities plus the per-sample wheel speed sigma.
struct ImuNoise {
  double gyro_density = 1.7e-4;       // rad/s/sqrt(Hz)
  double accel_density = 2e-3;        // m/s^2/sqrt(Hz)
  double gyro_bias_walk = 2e-5;       // rad/s^2/sqrt(Hz)
  double accel_bias_walk = 3e-4;      // m/s^3/sqrt(Hz)
  double wheel_sigma = 0.02;          // m/s per sample
  /// Lateral/vertical odometer velocity sigma used only by the estimator's
  /// covariance model (the simulated wheel never slips).
  double wheel_lateral_sigma = 0.01;  // m/s
};

}  // namespace bvio
