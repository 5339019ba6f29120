#include "bvio/sim.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace bvio {

namespace {

constexpr double kDeg = M_PI / 180.0;

bool is_multiple(double big, double small) {
  const double ratio = big / small;
  return std::abs(ratio - std::round(ratio)) < 1e-9 && std::round(ratio) >= 1.0;
}

// Per-sample longitudinal acceleration and yaw rate. Speed changes happen
// only with zero yaw rate and yaw rate changes only at constant speed, so the
// body velocity stays along body x and the constant-input step model is exact.
struct PlanarProfile {
  double dt = 0.01;
  double speed = 0.0;  // speed at the last sample
  std::vector<double> ax{0.0};
  std::vector<double> wz{0.0};
  std::vector<double> v;

  void push(double a, double w) {
    ax.push_back(a);
    wz.push_back(w);
  }

  void ramp_to(double target, double max_accel) {
    const double dv = target - speed;
    if (std::abs(dv) < 1e-12) return;
    const int n = std::max(1, static_cast<int>(std::ceil(std::abs(dv) / (max_accel * dt) - 1e-9)));
    const double a = dv / (n * dt);
    for (int i = 0; i < n; ++i) push(a, 0.0);
    push(0.0, 0.0);
    speed = target;
  }

  void cruise(int steps) {
    for (int i = 0; i < steps; ++i) push(0.0, 0.0);
  }

  void turn(double angle, double rate) {
    if (std::abs(angle) < 1e-12) return;
    const int m = std::max(1, static_cast<int>(std::lround(std::abs(angle) / (std::abs(rate) * dt))));
    const double w = angle / (m * dt);
    for (int i = 0; i < m; ++i) push(0.0, w);
    push(0.0, 0.0);
  }
};

double first_speed(const std::vector<Segment>& segments) {
  if (segments.empty()) return 0.0;
  if (const auto* s = std::get_if<Straight>(&segments.front())) return s->speed;
  if (const auto* a = std::get_if<Arc>(&segments.front())) return a->speed;
  return 0.0;
}

// Distance covered by a speed ramp with the trapezoidal sample layout above.
double ramp_distance(double v0, double v1, double max_accel, double dt) {
  const double dv = v1 - v0;
  if (std::abs(dv) < 1e-12) return 0.0;
  const int n = std::max(1, static_cast<int>(std::ceil(std::abs(dv) / (max_accel * dt) - 1e-9)));
  return 0.5 * (v0 + v1) * (n + 1) * dt;
}

void zoh_step(MotionState& x, const Vec3& omega_bar, const Vec3& acc_bar, double dt) {
  const Vec3 phi = omega_bar * dt;
  const Mat3 R = x.R();
  const Vec3 dv = R * left_jacobian(phi) * acc_bar * dt;
  const Vec3 dp = x.v * dt + R * integrated_left_jacobian(phi) * acc_bar * dt * dt;
  x.p += dp;
  x.v += dv;
  x.q = (x.q * exp_quat(phi)).normalized();
}

}  // namespace

void TrajectorySpec::validate() const {
  if (!(image_rate > 0.0 && imu_rate > 0.0 && wheel_rate > 0.0)) {
    throw std::invalid_argument("sensor rates must be positive");
  }
  if (!is_multiple(imu_rate, image_rate) || !is_multiple(wheel_rate, image_rate)) {
    throw std::invalid_argument("image_rate must divide imu_rate and wheel_rate");
  }
  if (!is_multiple(imu_rate, wheel_rate)) {
    throw std::invalid_argument("wheel_rate must divide imu_rate");
  }
  if (!(max_accel > 0.0)) throw std::invalid_argument("max_accel must be positive");
  if (excitation_deg < 0.0 || excitation_deg > 5.0) throw std::invalid_argument("excitation_deg must be in [0, 5]");
  for (const auto& seg : segments) {
    if (const auto* s = std::get_if<Straight>(&seg)) {
      if (!(s->speed > 0.0)) throw std::invalid_argument("straight segment speed must be positive");
      if (s->length < 0.0) throw std::invalid_argument("straight segment length must be non-negative");
    } else if (const auto* a = std::get_if<Arc>(&seg)) {
      if (!(a->speed > 0.0)) throw std::invalid_argument("arc speed must be positive");
      if (!(a->radius > 0.0)) throw std::invalid_argument("arc radius must be positive (zero-radius arc)");
    } else if (const auto* p = std::get_if<Pause>(&seg)) {
      if (p->duration < 0.0) throw std::invalid_argument("pause duration must be non-negative");
    }
  }
}

std::vector<double> GroundTruth::frame_path_length() const {
  std::vector<double> out(frame_count(), 0.0);
  double acc = 0.0;
  for (std::size_t i = 1; i < samples.size(); ++i) {
    acc += (samples[i].state.p - samples[i - 1].state.p).norm();
    if (i % frame_stride == 0) out[i / frame_stride] = acc;
  }
  return out;
}

GroundTruth generate_truth(const TrajectorySpec& spec) {
  spec.validate();
  GroundTruth truth;
  truth.imu_dt = 1.0 / spec.imu_rate;
  truth.frame_stride = static_cast<int>(std::lround(spec.imu_rate / spec.image_rate));
  const double dt = truth.imu_dt;

  PlanarProfile prof;
  prof.dt = dt;
  prof.speed = first_speed(spec.segments);
  const double initial_speed = prof.speed;

  for (const auto& seg : spec.segments) {
    if (const auto* s = std::get_if<Straight>(&seg)) {
      const double ramp = ramp_distance(prof.speed, s->speed, spec.max_accel, dt);
      prof.ramp_to(s->speed, spec.max_accel);
      const double rest = std::max(0.0, s->length - ramp);
      prof.cruise(static_cast<int>(std::lround(rest / (s->speed * dt))));
    } else if (const auto* a = std::get_if<Arc>(&seg)) {
      prof.ramp_to(a->speed, spec.max_accel);
      prof.turn(a->turn_deg * kDeg, a->speed / a->radius);
    } else if (const auto* p = std::get_if<Pause>(&seg)) {
      prof.ramp_to(0.0, spec.max_accel);
      prof.cruise(static_cast<int>(std::lround(p->duration / dt)));
    }
  }
  // Pad so the last sample lands on an image frame.
  while ((prof.ax.size() - 1) % truth.frame_stride != 0) prof.push(0.0, 0.0);
  if (prof.ax.size() == 1) {
    for (int i = 0; i < truth.frame_stride; ++i) prof.push(0.0, 0.0);
  }

  // Speed at each sample by the trapezoid rule on ax (exact for the layout).
  const std::size_t n = prof.ax.size();
  std::vector<double> speed(n, initial_speed);
  for (std::size_t i = 1; i < n; ++i) speed[i] = speed[i - 1] + 0.5 * (prof.ax[i - 1] + prof.ax[i]) * dt;

  std::vector<Vec3> omega(n), acc(n);
  for (std::size_t i = 0; i < n; ++i) {
    omega[i] = Vec3(0.0, 0.0, prof.wz[i]);
    acc[i] = Vec3(prof.ax[i], prof.wz[i] * speed[i], 0.0);
  }

  const Quat q0(Eigen::AngleAxisd(spec.initial_heading_deg * kDeg, Vec3::UnitZ()));
  MotionState x;
  x.q = q0;
  x.v = q0 * Vec3(initial_speed, 0.0, 0.0);

  if (spec.excitation_deg > 0.0) {
    // Tilt the body with small roll/pitch sinusoids on top of the planar path.
    // The planar heading is integrated first; body rates and accelerations are
    // then re-expressed in the tilted body frame.
    std::vector<double> heading(n, spec.initial_heading_deg * kDeg);
    for (std::size_t i = 1; i < n; ++i) heading[i] = heading[i - 1] + 0.5 * (prof.wz[i - 1] + prof.wz[i]) * dt;
    const double amp = spec.excitation_deg * kDeg;
    const double w1 = 2.0 * M_PI * spec.excitation_hz;
    const double w2 = 2.0 * M_PI * spec.excitation_hz * 0.7;
    for (std::size_t i = 0; i < n; ++i) {
      const double t = i * dt;
      const double roll = amp * std::sin(w1 * t);
      const double pitch = amp * std::sin(w2 * t + 0.3);
      const double droll = amp * w1 * std::cos(w1 * t);
      const double dpitch = amp * w2 * std::cos(w2 * t + 0.3);
      const Mat3 Rx = Eigen::AngleAxisd(roll, Vec3::UnitX()).toRotationMatrix();
      const Mat3 Ry = Eigen::AngleAxisd(pitch, Vec3::UnitY()).toRotationMatrix();
      const Mat3 Rz = Eigen::AngleAxisd(heading[i], Vec3::UnitZ()).toRotationMatrix();
      omega[i] = Ry.transpose() * Rx.transpose() * Vec3(0.0, 0.0, prof.wz[i]) + Ry.transpose() * Vec3(droll, 0.0, 0.0) +
                 Vec3(0.0, dpitch, 0.0);
      const Vec3 acc_w = Rz * Vec3(prof.ax[i], prof.wz[i] * speed[i], 0.0);
      acc[i] = (Rz * Rx * Ry).transpose() * acc_w;
    }
    const double pitch0 = amp * std::sin(0.3);
    x.q = Quat(Eigen::AngleAxisd(spec.initial_heading_deg * kDeg, Vec3::UnitZ())) *
          Quat(Eigen::AngleAxisd(pitch0, Vec3::UnitY()));
    x.q.normalize();
  }

  truth.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    truth.samples[i].t = i * dt;
    truth.samples[i].state = x;
    truth.samples[i].omega = omega[i];
    truth.samples[i].acc_kin = acc[i];
    if (i + 1 < n) zoh_step(x, 0.5 * (omega[i] + omega[i + 1]), 0.5 * (acc[i] + acc[i + 1]), dt);
  }
  return truth;
}

Quat forward_camera_rotation() {
  Mat3 R;
  // Columns are the camera axes expressed in the body frame.
  R.col(0) = Vec3(0.0, -1.0, 0.0);
  R.col(1) = Vec3(0.0, 0.0, -1.0);
  R.col(2) = Vec3(1.0, 0.0, 0.0);
  return Quat(R).normalized();
}

SensorRig SensorRig::default_rig() {
  SensorRig rig;
  const Quat tilt(Eigen::AngleAxisd(1.0 * kDeg, Vec3::UnitY()));
  rig.extrinsics_true.Rbc = (tilt * forward_camera_rotation()).normalized();
  rig.extrinsics_true.pbc = Vec3(1.2, 0.1, 0.6);
  rig.extrinsics_true.Rbo = Quat::Identity();
  // Odometer on the right rear wheel; the body origin sits on the rear axle.
  rig.extrinsics_true.pbo = Vec3(0.0, -0.75, -0.35);
  return rig;
}

SensorRig SensorRig::noise_free_rig() {
  SensorRig rig = default_rig();
  rig.bias_a_true.setZero();
  rig.bias_w_true.setZero();
  rig.noise.gyro_density = 0.0;
  rig.noise.accel_density = 0.0;
  rig.noise.gyro_bias_walk = 0.0;
  rig.noise.accel_bias_walk = 0.0;
  rig.noise.wheel_sigma = 0.0;
  rig.pixel_sigma = 0.0;
  return rig;
}

void SensorRig::validate() const {
  const double g = gravity_w.norm();
  if (g < 9.7 || g > 9.9) throw std::invalid_argument("gravity magnitude must be in [9.7, 9.9]");
  if (!camera.valid()) throw std::invalid_argument("invalid camera model");
  if (noise.gyro_density < 0 || noise.accel_density < 0 || noise.gyro_bias_walk < 0 || noise.accel_bias_walk < 0 ||
      noise.wheel_sigma < 0 || pixel_sigma < 0) {
    throw std::invalid_argument("noise sigmas must be non-negative");
  }
  if (outlier_ratio < 0.0 || outlier_ratio > 1.0) throw std::invalid_argument("outlier_ratio must be in [0,1]");
}

ImuStream synthesize_imu(const GroundTruth& truth, const SensorRig& rig, std::uint64_t seed) {
  rig.validate();
  std::mt19937_64 rng(seed ^ 0x1a2b3c4dULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double dt = truth.imu_dt;
  const double sg = rig.noise.gyro_density / std::sqrt(dt);
  const double sa = rig.noise.accel_density / std::sqrt(dt);
  const double wg = rig.noise.gyro_bias_walk * std::sqrt(dt);
  const double wa = rig.noise.accel_bias_walk * std::sqrt(dt);

  ImuStream out;
  out.samples.reserve(truth.samples.size());
  Vec3 ba = rig.bias_a_true;
  Vec3 bw = rig.bias_w_true;
  auto draw = [&](double s) { return Vec3(s * normal(rng), s * normal(rng), s * normal(rng)); };
  for (const auto& ts : truth.samples) {
    ImuSample m;
    m.t = ts.t;
    m.gyro = ts.omega + bw;
    m.accel = ts.acc_kin - ts.state.R().transpose() * rig.gravity_w + ba;
    if (sg > 0.0) m.gyro += draw(sg);
    if (sa > 0.0) m.accel += draw(sa);
    out.samples.push_back(m);
    out.true_ba.push_back(ba);
    out.true_bw.push_back(bw);
    if (rig.simulate_bias_walk) {
      ba += draw(wa);
      bw += draw(wg);
    }
  }
  return out;
}

std::vector<WheelSample> synthesize_wheel(const GroundTruth& truth, const SensorRig& rig, std::uint64_t seed) {
  rig.validate();
  std::mt19937_64 rng(seed ^ 0x5e6f7a8bULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Mat3 Rob = rig.extrinsics_true.Rbo.toRotationMatrix().transpose();
  std::vector<WheelSample> out;
  out.reserve(truth.samples.size());
  for (const auto& ts : truth.samples) {
    const Vec3 v_body = ts.state.R().transpose() * ts.state.v;
    const Vec3 v_odo = Rob * (v_body + ts.omega.cross(rig.extrinsics_true.pbo));
    WheelSample w;
    w.t = ts.t;
    w.speed = v_odo.x();
    if (rig.noise.wheel_sigma > 0.0) w.speed += rig.noise.wheel_sigma * normal(rng);
    out.push_back(w);
  }
  return out;
}

Pose camera_pose(const MotionState& body, const Extrinsics& ext) {
  Pose out;
  out.rotation = (body.q * ext.Rbc).normalized();
  out.translation = body.q * ext.pbc + body.p;
  return out;
}

FeatureStream synthesize_features(const GroundTruth& truth, const SensorRig& rig, int landmark_count,
                                  std::uint64_t seed) {
  rig.validate();
  if (landmark_count <= 0) throw std::invalid_argument("landmark_count must be positive");
  std::mt19937_64 rng(seed ^ 0x9c8d7e6fULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Cumulative path length per IMU sample so landmarks spread uniformly
  // along the route rather than in time.
  const auto& s = truth.samples;
  std::vector<double> cum(s.size(), 0.0);
  for (std::size_t i = 1; i < s.size(); ++i) cum[i] = cum[i - 1] + (s[i].state.p - s[i - 1].state.p).norm();
  const double total = cum.back();

  // The camera looks ahead, so the route is extended past its end along
  // the final heading to keep the last frames covered.
  constexpr double kTailMargin = 80.0;
  const double span = total > 0.0 ? total + kTailMargin : 0.0;

  FeatureStream out;
  out.landmarks_w.reserve(landmark_count);
  for (int l = 0; l < landmark_count; ++l) {
    std::size_t idx = 0;
    double beyond = 0.0;
    if (span > 0.0) {
      const double target = unit(rng) * span;
      idx = static_cast<std::size_t>(std::lower_bound(cum.begin(), cum.end(), target) - cum.begin());
      idx = std::min(idx, s.size() - 1);
      beyond = std::max(0.0, target - total);
    }
    const MotionState& x = s[idx].state;
    const Vec3 heading = x.R().col(0);
    Vec3 left(-heading.y(), heading.x(), 0.0);
    if (left.norm() < 1e-9) left = Vec3::UnitY();
    left.normalize();
    const double side = unit(rng) < 0.5 ? -1.0 : 1.0;
    const double lateral = 5.0 + 35.0 * unit(rng);
    const double height = -2.0 + 10.0 * unit(rng);
    Vec3 pos = x.p + beyond * Vec3(heading.x(), heading.y(), 0.0) + side * lateral * left;
    pos.z() = x.p.z() + height;
    out.landmarks_w.push_back(pos);
  }

  const auto& cam = rig.camera;
  for (std::size_t f = 0; f < truth.frame_count(); ++f) {
    FeatureFrame frame;
    frame.frame_id = static_cast<std::int64_t>(f);
    frame.t = truth.frame_time(f);
    const Pose Twc = camera_pose(truth.frame(f).state, rig.extrinsics_true);
    const Mat3 Rcw = Twc.R().transpose();
    for (std::size_t l = 0; l < out.landmarks_w.size(); ++l) {
      const Vec3 pc = Rcw * (out.landmarks_w[l] - Twc.translation);
      if (pc.z() <= 0.5) continue;
      Vec2 uv = cam.project(pc);
      if (!cam.inside(uv)) continue;
      if (rig.outlier_ratio > 0.0 && unit(rng) < rig.outlier_ratio) {
        uv = Vec2(unit(rng) * (cam.width - 1), unit(rng) * (cam.height - 1));
      } else if (rig.pixel_sigma > 0.0) {
        uv += rig.pixel_sigma * Vec2(normal(rng), normal(rng));
        if (!cam.inside(uv)) continue;
      }
      frame.observations.push_back({frame.frame_id, static_cast<LandmarkId>(l), uv});
    }
    if (frame.observations.size() < 8) {
      out.warnings.push_back({frame.frame_id, "frame observes " + std::to_string(frame.observations.size()) +
                                                  " landmarks (< 8)"});
    }
    out.frames.push_back(std::move(frame));
  }
  return out;
}

SimData simulate(const TrajectorySpec& spec, const SensorRig& rig, int landmark_count, std::uint64_t seed) {
  SimData d;
  d.spec = spec;
  d.rig = rig;
  d.truth = generate_truth(spec);
  d.imu = synthesize_imu(d.truth, rig, seed);
  d.wheel = synthesize_wheel(d.truth, rig, seed);
  const int wheel_stride = static_cast<int>(std::lround(spec.imu_rate / spec.wheel_rate));
  if (wheel_stride > 1) {
    std::vector<WheelSample> thinned;
    for (std::size_t i = 0; i < d.wheel.size(); i += wheel_stride) thinned.push_back(d.wheel[i]);
    d.wheel = std::move(thinned);
  }
  d.features = synthesize_features(d.truth, rig, landmark_count, seed);
  return d;
}

TrajectorySpec single_turn_spec(double turn_deg, double straight_before, double straight_after, double speed,
                                double turn_duration) {
  TrajectorySpec spec;
  spec.segments.push_back(Straight{straight_before, speed});
  if (turn_deg > 0.0) {
    // Arc length = speed * duration, so the radius follows from the angle.
    const double radius = speed * turn_duration / (turn_deg * kDeg);
    spec.segments.push_back(Arc{turn_deg, radius, speed});
  } else {
    spec.segments.push_back(Straight{speed * turn_duration, speed});
  }
  spec.segments.push_back(Straight{straight_after, speed});
  return spec;
}

}  // namespace bvio
