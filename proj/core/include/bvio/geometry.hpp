#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace bvio {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using Vec15 = Eigen::Matrix<double, 15, 1>;

/// Angles below this use truncated series in exp/log and the SO(3) Jacobians.
inline constexpr double kSmallAngle = 1e-6;

/// Skew-symmetric matrix such that skew(a) * b == a.cross(b).
Mat3 skew(const Vec3& v);

Mat3 exp_so3(const Vec3& phi);
Quat exp_quat(const Vec3& phi);

struct LogResult {
  Vec3 phi = Vec3::Zero();
  /// Rotation angle within 1e-9 of pi: the axis sign is arbitrary.
  bool degenerate = false;
};

LogResult log_so3_checked(const Mat3& R);
Vec3 log_so3(const Mat3& R);
Vec3 log_quat(const Quat& q);

/// Right Jacobian of SO(3): exp(phi + d) ~= exp(phi) * exp(Jr(phi) * d).
Mat3 right_jacobian(const Vec3& phi);
Mat3 right_jacobian_inv(const Vec3& phi);
/// Left Jacobian, equal to the integral of exp(s*phi) over s in [0,1].
Mat3 left_jacobian(const Vec3& phi);
/// Integral of (1 - s) * exp(s*phi) over s in [0,1]; the position analogue
/// of left_jacobian for constant-rate rotation.
Mat3 integrated_left_jacobian(const Vec3& phi);

/// Project a 3x3 matrix onto SO(3) and return it as a unit quaternion.
Quat quat_from_matrix(const Mat3& R);

/// Rigid pose: rotation of the body in the world plus the body origin in the
/// world.
struct Pose {
  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();

  Mat3 R() const { return rotation.toRotationMatrix(); }
  Pose inverse() const;
  Pose operator*(const Pose& other) const;
  Vec3 operator*(const Vec3& point) const { return rotation * point + translation; }
};

/// Per-frame navigation state. Local perturbation order is
/// [dp(3), dv(3), dtheta(3), dba(3), dbw(3)]; rotation increments are
/// right-multiplied body-frame angles.
struct MotionState {
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Quat q = Quat::Identity();
  Vec3 ba = Vec3::Zero();
  Vec3 bw = Vec3::Zero();

  Mat3 R() const { return q.toRotationMatrix(); }
  Pose pose() const { return {q, p}; }
};

namespace state_offset {
inline constexpr int kP = 0;
inline constexpr int kV = 3;
inline constexpr int kTheta = 6;
inline constexpr int kBa = 9;
inline constexpr int kBw = 12;
inline constexpr int kDim = 15;
}  // namespace state_offset

MotionState boxplus_state(const MotionState& x, const Vec15& delta);
/// Inverse of boxplus_state: the delta taking `base` to `x`.
Vec15 boxminus_state(const MotionState& x, const MotionState& base);

/// Rotate `q` by the right-multiplied local increment exp(dtheta).
Quat boxplus_rot(const Quat& q, const Vec3& dtheta);

}  // namespace bvio
