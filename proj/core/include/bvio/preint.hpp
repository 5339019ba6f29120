#pragma once

#include <stdexcept>
#include <vector>

#include "bvio/types.hpp"

namespace bvio {

class PreintError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Mat18 = Eigen::Matrix<double, 18, 18>;

namespace preint_offset {
inline constexpr int kAlpha = 0;
inline constexpr int kBeta = 3;
inline constexpr int kTheta = 6;
inline constexpr int kEta = 9;
inline constexpr int kBa = 12;
inline constexpr int kBw = 15;
}  // namespace preint_offset

/// Joint IMU + wheel pre-integration between two image frames.
///
/// alpha/beta/gamma are the usual position-like, velocity-like and rotation
/// terms expressed in the first body frame. eta is the displacement of the
/// odometer origin, also in the first body frame; it is linear in the
/// odometer x axis, so eta == eta_basis * Rbo * e_x holds exactly for any Rbo
/// at the linearization biases.
struct Preintegrated {
  Vec3 alpha = Vec3::Zero();
  Vec3 beta = Vec3::Zero();
  Quat gamma = Quat::Identity();
  Vec3 eta = Vec3::Zero();
  Mat3 eta_basis = Mat3::Zero();
  double dt_total = 0.0;
  double t0 = 0.0;
  double t1 = 0.0;

  /// Ordered [dalpha, dbeta, dtheta, deta, dba, dbw].
  Mat18 cov = Mat18::Zero();

  Mat3 J_alpha_ba = Mat3::Zero();
  Mat3 J_alpha_bw = Mat3::Zero();
  Mat3 J_beta_ba = Mat3::Zero();
  Mat3 J_beta_bw = Mat3::Zero();
  Mat3 J_gamma_bw = Mat3::Zero();
  Mat3 J_eta_bw = Mat3::Zero();

  Vec3 lin_bias_a = Vec3::Zero();
  Vec3 lin_bias_w = Vec3::Zero();
  Quat lin_Rbo = Quat::Identity();
};

/// Trust region and re-integration thresholds for bias_correct.
struct BiasCorrectionLimits {
  double max_bias_change = 0.1;
  double max_rbo_change = 1e-4;  // rad
};

struct CorrectedPreint {
  Vec3 alpha;
  Vec3 beta;
  Quat gamma;
  Vec3 eta;
  /// Bias moved outside the first-order trust region, or Rbo moved enough
  /// that the bias Jacobians of eta are stale.
  bool reintegrate_required = false;
};

/// Pre-integrate samples spanning exactly one inter-frame interval.
/// `wheel` is resampled onto the IMU timestamps by linear interpolation.
/// Throws PreintError on an empty span, non-monotonic timestamps or an
/// interval longer than one second.
Preintegrated integrate(const std::vector<ImuSample>& imu, const std::vector<WheelSample>& wheel, const Vec3& bias_a,
                        const Vec3& bias_w, const Quat& Rbo, const ImuNoise& noise);

CorrectedPreint bias_correct(const Preintegrated& p, const Vec3& bias_a, const Vec3& bias_w, const Quat& Rbo,
                             const BiasCorrectionLimits& limits = {});

/// IMU samples covering [t0, t1]; boundaries are linearly interpolated when
/// they fall between samples.
std::vector<ImuSample> imu_between(const std::vector<ImuSample>& all, double t0, double t1);
std::vector<WheelSample> wheel_between(const std::vector<WheelSample>& all, double t0, double t1);
/// Wheel speed at `t` by linear interpolation, clamped at the ends.
double wheel_speed_at(const std::vector<WheelSample>& wheel, double t);

/// Compose consecutive nominal terms: [t0,t1] followed by [t1,t2].
Preintegrated compose_nominal(const Preintegrated& first, const Preintegrated& second);

}  // namespace bvio
