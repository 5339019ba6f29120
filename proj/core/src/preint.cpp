#include "bvio/preint.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace bvio {

namespace {

using Mat18x9 = Eigen::Matrix<double, 18, 9>;
using Mat9 = Eigen::Matrix<double, 9, 9>;
using Mat18x6 = Eigen::Matrix<double, 18, 6>;

// 8-point Gauss-Legendre rule mapped to [0, 1].
struct Quadrature {
  std::array<double, 8> s{};
  std::array<double, 8> w{};
  Quadrature() {
    const std::array<double, 4> x = {0.1834346424956498, 0.5255324099163290, 0.7966664774136267, 0.9602898564975363};
    const std::array<double, 4> wx = {0.3626837833783620, 0.3137066458778873, 0.2223810344533745, 0.1012285362903763};
    for (int i = 0; i < 4; ++i) {
      s[2 * i] = 0.5 * (1.0 - x[i]);
      s[2 * i + 1] = 0.5 * (1.0 + x[i]);
      w[2 * i] = 0.5 * wx[i];
      w[2 * i + 1] = 0.5 * wx[i];
    }
  }
};

const Quadrature& quadrature() {
  static const Quadrature q;
  return q;
}

// d/dphi [left_jacobian(phi) * a] and d/dphi [integrated_left_jacobian(phi) * a].
// Both integrands are entire in s, and |phi| per IMU step is tiny, so the
// 8-point rule is exact to rounding.
void rate_derivatives(const Vec3& phi, const Vec3& a, Mat3& d1, Mat3& d2) {
  const auto& q = quadrature();
  d1.setZero();
  d2.setZero();
  const Mat3 A = skew(a);
  for (int k = 0; k < 8; ++k) {
    const double s = q.s[k];
    const Mat3 term = exp_so3(s * phi) * A * right_jacobian(s * phi) * s;
    d1 -= q.w[k] * term;
    d2 -= q.w[k] * (1.0 - s) * term;
  }
}

void check_samples(const std::vector<ImuSample>& imu) {
  if (imu.size() < 2) throw PreintError("pre-integration needs at least two IMU samples");
  for (std::size_t i = 1; i < imu.size(); ++i) {
    if (!(imu[i].t > imu[i - 1].t)) throw PreintError("IMU timestamps are not strictly increasing");
  }
  if (imu.back().t - imu.front().t > 1.0 + 1e-9) {
    throw PreintError("pre-integration interval longer than 1 s");
  }
}

}  // namespace

double wheel_speed_at(const std::vector<WheelSample>& wheel, double t) {
  if (wheel.empty()) throw PreintError("no wheel samples");
  if (t <= wheel.front().t) return wheel.front().speed;
  if (t >= wheel.back().t) return wheel.back().speed;
  auto it = std::lower_bound(wheel.begin(), wheel.end(), t, [](const WheelSample& w, double v) { return w.t < v; });
  const auto& hi = *it;
  const auto& lo = *(it - 1);
  if (hi.t - lo.t <= 0.0) return hi.speed;
  const double r = (t - lo.t) / (hi.t - lo.t);
  return lo.speed + r * (hi.speed - lo.speed);
}

std::vector<ImuSample> imu_between(const std::vector<ImuSample>& all, double t0, double t1) {
  constexpr double kEps = 1e-9;
  std::vector<ImuSample> out;
  if (all.empty() || t1 <= t0) return out;
  auto interp = [&](double t) {
    auto it = std::lower_bound(all.begin(), all.end(), t, [](const ImuSample& s, double v) { return s.t < v; });
    if (it == all.begin()) return *it;
    if (it == all.end()) return all.back();
    const auto& hi = *it;
    const auto& lo = *(it - 1);
    const double r = (t - lo.t) / (hi.t - lo.t);
    ImuSample s;
    s.t = t;
    s.gyro = lo.gyro + r * (hi.gyro - lo.gyro);
    s.accel = lo.accel + r * (hi.accel - lo.accel);
    return s;
  };
  if (all.front().t > t0 + kEps || all.back().t < t1 - kEps) return out;
  auto first = std::lower_bound(all.begin(), all.end(), t0 - kEps, [](const ImuSample& s, double v) { return s.t < v; });
  if (std::abs(first->t - t0) > kEps) out.push_back(interp(t0));
  for (auto it = first; it != all.end() && it->t <= t1 + kEps; ++it) out.push_back(*it);
  if (std::abs(out.back().t - t1) > kEps) out.push_back(interp(t1));
  return out;
}

std::vector<WheelSample> wheel_between(const std::vector<WheelSample>& all, double t0, double t1) {
  constexpr double kEps = 1e-9;
  std::vector<WheelSample> out;
  if (all.empty()) return out;
  out.push_back({t0, wheel_speed_at(all, t0)});
  for (const auto& w : all) {
    if (w.t > t0 + kEps && w.t < t1 - kEps) out.push_back(w);
  }
  out.push_back({t1, wheel_speed_at(all, t1)});
  return out;
}

Preintegrated integrate(const std::vector<ImuSample>& imu, const std::vector<WheelSample>& wheel, const Vec3& bias_a,
                        const Vec3& bias_w, const Quat& Rbo, const ImuNoise& noise) {
  using namespace preint_offset;
  if (imu.empty()) throw PreintError("empty IMU span");
  check_samples(imu);
  if (wheel.empty()) throw PreintError("empty wheel span");
  for (std::size_t i = 1; i < wheel.size(); ++i) {
    if (!(wheel[i].t > wheel[i - 1].t)) throw PreintError("wheel timestamps are not strictly increasing");
  }

  Preintegrated p;
  p.lin_bias_a = bias_a;
  p.lin_bias_w = bias_w;
  p.lin_Rbo = Rbo.normalized();
  p.t0 = imu.front().t;
  p.t1 = imu.back().t;
  p.dt_total = p.t1 - p.t0;

  const Mat3 R_bo = p.lin_Rbo.toRotationMatrix();
  const Vec3 odo_axis = R_bo.col(0);

  std::vector<double> speed(imu.size());
  for (std::size_t i = 0; i < imu.size(); ++i) speed[i] = wheel_speed_at(wheel, imu[i].t);

  Mat18 P = Mat18::Zero();
  Mat18x9 C = Mat18x9::Zero();  // cross-covariance of the state error with the pending sample noise
  Mat18x6 Jb = Mat18x6::Zero();
  Jb.block<3, 3>(kBa, 0).setIdentity();
  Jb.block<3, 3>(kBw, 3).setIdentity();

  Mat3 Rg = Mat3::Identity();
  for (std::size_t i = 0; i + 1 < imu.size(); ++i) {
    const double dt = imu[i + 1].t - imu[i].t;
    const Vec3 w_bar = 0.5 * (imu[i].gyro + imu[i + 1].gyro) - bias_w;
    const Vec3 a_bar = 0.5 * (imu[i].accel + imu[i + 1].accel) - bias_a;
    const double s_bar = 0.5 * (speed[i] + speed[i + 1]);
    const Vec3 u = odo_axis * s_bar;
    const Vec3 phi = w_bar * dt;
    const Mat3 G1 = left_jacobian(phi);
    const Mat3 G2 = integrated_left_jacobian(phi);
    const Mat3 Eph = exp_so3(phi);
    const Mat3 Jr = right_jacobian(phi);
    Mat3 D1a, D2a, D1u, D2u;
    rate_derivatives(phi, a_bar, D1a, D2a);
    rate_derivatives(phi, u, D1u, D2u);

    Mat18 F = Mat18::Identity();
    F.block<3, 3>(kAlpha, kBeta) = Mat3::Identity() * dt;
    F.block<3, 3>(kAlpha, kTheta) = -Rg * skew(G2 * a_bar) * dt * dt;
    F.block<3, 3>(kAlpha, kBa) = -Rg * G2 * dt * dt;
    F.block<3, 3>(kAlpha, kBw) = -Rg * D2a * dt * dt * dt;
    F.block<3, 3>(kBeta, kTheta) = -Rg * skew(G1 * a_bar) * dt;
    F.block<3, 3>(kBeta, kBa) = -Rg * G1 * dt;
    F.block<3, 3>(kBeta, kBw) = -Rg * D1a * dt * dt;
    F.block<3, 3>(kTheta, kTheta) = Eph.transpose();
    F.block<3, 3>(kTheta, kBw) = -Jr * dt;
    F.block<3, 3>(kEta, kTheta) = -Rg * skew(G1 * u) * dt;
    F.block<3, 3>(kEta, kBw) = -Rg * D1u * dt * dt;

    // Sample-noise input [n_accel, n_gyro, n_odometer-velocity].
    Mat18x9 B = Mat18x9::Zero();
    B.block<3, 3>(kAlpha, 0) = Rg * G2 * dt * dt;
    B.block<3, 3>(kAlpha, 3) = Rg * D2a * dt * dt * dt;
    B.block<3, 3>(kBeta, 0) = Rg * G1 * dt;
    B.block<3, 3>(kBeta, 3) = Rg * D1a * dt * dt;
    B.block<3, 3>(kTheta, 3) = Jr * dt;
    B.block<3, 3>(kEta, 3) = Rg * D1u * dt * dt;
    B.block<3, 3>(kEta, 6) = Rg * G1 * R_bo * dt;

    Mat9 Q = Mat9::Zero();
    Q.block<3, 3>(0, 0) = Mat3::Identity() * noise.accel_density * noise.accel_density / dt;
    Q.block<3, 3>(3, 3) = Mat3::Identity() * noise.gyro_density * noise.gyro_density / dt;
    Q(6, 6) = noise.wheel_sigma * noise.wheel_sigma;
    Q(7, 7) = Q(8, 8) = noise.wheel_lateral_sigma * noise.wheel_lateral_sigma;

    Mat18 W = Mat18::Zero();
    W.block<3, 3>(kBa, kBa) = Mat3::Identity() * noise.accel_bias_walk * noise.accel_bias_walk * dt;
    W.block<3, 3>(kBw, kBw) = Mat3::Identity() * noise.gyro_bias_walk * noise.gyro_bias_walk * dt;

    // Each step sees the mean of two consecutive sample noises; the later one
    // is shared with the next step, hence the carried cross term C.
    const Mat18 FCB = F * C * B.transpose();
    P = F * P * F.transpose() + 0.5 * (FCB + FCB.transpose()) + 0.5 * B * Q * B.transpose() + W;
    C = 0.5 * B * Q;
    Jb = F * Jb;

    // Nominal terms.
    p.alpha += p.beta * dt + Rg * G2 * a_bar * dt * dt;
    p.beta += Rg * G1 * a_bar * dt;
    p.eta += Rg * G1 * u * dt;
    p.eta_basis += s_bar * dt * Rg * G1;
    p.gamma = (p.gamma * exp_quat(phi)).normalized();
    Rg = p.gamma.toRotationMatrix();
  }

  p.cov = 0.5 * (P + P.transpose());
  p.J_alpha_ba = Jb.block<3, 3>(kAlpha, 0);
  p.J_alpha_bw = Jb.block<3, 3>(kAlpha, 3);
  p.J_beta_ba = Jb.block<3, 3>(kBeta, 0);
  p.J_beta_bw = Jb.block<3, 3>(kBeta, 3);
  p.J_gamma_bw = Jb.block<3, 3>(kTheta, 3);
  p.J_eta_bw = Jb.block<3, 3>(kEta, 3);
  return p;
}

CorrectedPreint bias_correct(const Preintegrated& p, const Vec3& bias_a, const Vec3& bias_w, const Quat& Rbo,
                             const BiasCorrectionLimits& limits) {
  const Vec3 dba = bias_a - p.lin_bias_a;
  const Vec3 dbw = bias_w - p.lin_bias_w;
  CorrectedPreint out;
  out.alpha = p.alpha + p.J_alpha_ba * dba + p.J_alpha_bw * dbw;
  out.beta = p.beta + p.J_beta_ba * dba + p.J_beta_bw * dbw;
  out.gamma = (p.gamma * exp_quat(p.J_gamma_bw * dbw)).normalized();
  out.eta = p.eta_basis * (Rbo * Vec3::UnitX()) + p.J_eta_bw * dbw;
  const double rbo_change = log_quat(p.lin_Rbo.conjugate() * Rbo).norm();
  out.reintegrate_required = dba.norm() > limits.max_bias_change || dbw.norm() > limits.max_bias_change ||
                             rbo_change > limits.max_rbo_change;
  return out;
}

Preintegrated compose_nominal(const Preintegrated& a, const Preintegrated& b) {
  Preintegrated out = a;
  const Mat3 Ra = a.gamma.toRotationMatrix();
  out.alpha = a.alpha + a.beta * b.dt_total + Ra * b.alpha;
  out.beta = a.beta + Ra * b.beta;
  out.gamma = (a.gamma * b.gamma).normalized();
  out.eta = a.eta + Ra * b.eta;
  out.eta_basis = a.eta_basis + Ra * b.eta_basis;
  out.dt_total = a.dt_total + b.dt_total;
  out.t1 = b.t1;
  return out;
}

}  // namespace bvio
