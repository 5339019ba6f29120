#include "bvio/geometry.hpp"

#include <Eigen/SVD>
#include <cmath>

namespace bvio {

namespace {

// Below this the closed forms of the Jacobian coefficients cancel badly.
constexpr double kSeriesAngle = 1e-3;

// (1 - cos t) / t^2
double coeff_a(double theta) {
  const double t2 = theta * theta;
  if (theta < kSeriesAngle) return 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
  return (1.0 - std::cos(theta)) / t2;
}

// (t - sin t) / t^3
double coeff_b(double theta) {
  const double t2 = theta * theta;
  if (theta < kSeriesAngle) return 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0;
  return (theta - std::sin(theta)) / (t2 * theta);
}

}  // namespace

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Mat3 exp_so3(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 K = skew(phi);
  if (theta < kSmallAngle) {
    // 4th-order series of sin(t)/t and (1-cos t)/t^2.
    return Mat3::Identity() + (1.0 - theta * theta / 6.0) * K + (0.5 - theta * theta / 24.0) * K * K;
  }
  return Mat3::Identity() + (std::sin(theta) / theta) * K + coeff_a(theta) * K * K;
}

Quat exp_quat(const Vec3& phi) {
  const double theta = phi.norm();
  const double half = 0.5 * theta;
  double scale;
  if (theta < kSmallAngle) {
    scale = 0.5 - theta * theta / 48.0;
  } else {
    scale = std::sin(half) / theta;
  }
  Quat q(std::cos(half), scale * phi.x(), scale * phi.y(), scale * phi.z());
  q.normalize();
  return q;
}

Vec3 log_quat(const Quat& q_in) {
  Quat q = q_in.normalized();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Vec3 v = q.vec();
  const double n = v.norm();
  if (n < 0.5 * kSmallAngle) {
    // atan2(n, w) / n ~= 1/w - n^2 / (3 w^3)
    const double w = q.w();
    return 2.0 * (1.0 / w - n * n / (3.0 * w * w * w)) * v;
  }
  const double theta = 2.0 * std::atan2(n, q.w());
  return (theta / n) * v;
}

LogResult log_so3_checked(const Mat3& R) {
  LogResult out;
  out.phi = log_quat(quat_from_matrix(R));
  out.degenerate = std::abs(out.phi.norm() - M_PI) < 1e-9;
  return out;
}

Vec3 log_so3(const Mat3& R) { return log_so3_checked(R).phi; }

Mat3 right_jacobian(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 K = skew(phi);
  return Mat3::Identity() - coeff_a(theta) * K + coeff_b(theta) * K * K;
}

Mat3 left_jacobian(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 K = skew(phi);
  return Mat3::Identity() + coeff_a(theta) * K + coeff_b(theta) * K * K;
}

Mat3 integrated_left_jacobian(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 K = skew(phi);
  double c2;
  if (theta < kSeriesAngle) {
    // (t^2/2 + cos t - 1) / t^4 loses precision well above kSmallAngle.
    const double t2 = theta * theta;
    c2 = 1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0;
  } else {
    c2 = (0.5 * theta * theta + std::cos(theta) - 1.0) / (theta * theta * theta * theta);
  }
  return 0.5 * Mat3::Identity() + coeff_b(theta) * K + c2 * K * K;
}

Mat3 right_jacobian_inv(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 K = skew(phi);
  double c;
  if (theta < kSeriesAngle) {
    c = 1.0 / 12.0 + theta * theta / 720.0;
  } else {
    c = 1.0 / (theta * theta) - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  }
  return Mat3::Identity() + 0.5 * K + c * K * K;
}

Quat quat_from_matrix(const Mat3& R) {
  // Orthonormalize first so slightly drifted inputs still map to SO(3).
  Eigen::JacobiSVD<Mat3> svd(R, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 Rn = svd.matrixU() * svd.matrixV().transpose();
  if (Rn.determinant() < 0.0) {
    Mat3 U = svd.matrixU();
    U.col(2) *= -1.0;
    Rn = U * svd.matrixV().transpose();
  }
  Quat q(Rn);
  q.normalize();
  return q;
}

Pose Pose::inverse() const {
  Pose out;
  out.rotation = rotation.conjugate();
  out.translation = -(out.rotation * translation);
  return out;
}

Pose Pose::operator*(const Pose& other) const {
  Pose out;
  out.rotation = (rotation * other.rotation).normalized();
  out.translation = rotation * other.translation + translation;
  return out;
}

Quat boxplus_rot(const Quat& q, const Vec3& dtheta) {
  if (dtheta.isZero(0.0)) return q;
  return (q * exp_quat(dtheta)).normalized();
}

MotionState boxplus_state(const MotionState& x, const Vec15& delta) {
  using namespace state_offset;
  MotionState out;
  out.p = x.p + delta.segment<3>(kP);
  out.v = x.v + delta.segment<3>(kV);
  out.q = boxplus_rot(x.q, delta.segment<3>(kTheta));
  out.ba = x.ba + delta.segment<3>(kBa);
  out.bw = x.bw + delta.segment<3>(kBw);
  return out;
}

Vec15 boxminus_state(const MotionState& x, const MotionState& base) {
  using namespace state_offset;
  Vec15 d;
  d.segment<3>(kP) = x.p - base.p;
  d.segment<3>(kV) = x.v - base.v;
  d.segment<3>(kTheta) = log_quat(base.q.conjugate() * x.q);
  d.segment<3>(kBa) = x.ba - base.ba;
  d.segment<3>(kBw) = x.bw - base.bw;
  return d;
}

}  // namespace bvio
