#include <gtest/gtest.h>

#include <random>

#include "bvio/factors.hpp"
#include "bvio/preint.hpp"
#include "bvio/sim.hpp"
#include "test_support.hpp"

using namespace bvio;
using namespace bvio::testing;

TEST(Preint, ZeroResidualOnCleanTruth) {
  const SimData sim = simulate(single_turn_spec(90.0, 20.0, 20.0), clean_biased_rig(), 300, 7);
  const Extrinsics& ext = sim.rig.extrinsics_true;
  double worst = 0.0;
  for (std::size_t f = 0; f + 1 < sim.truth.frame_count(); ++f) {
    const MotionState a = truth_state(sim, f);
    const MotionState b = truth_state(sim, f + 1);
    const Preintegrated p = frame_preint(sim, f, a.ba, a.bw, ext.Rbo);
    const ImuOdoResult r = imuodo_residual(a, b, p, ext, sim.rig.gravity_w);
    worst = std::max(worst, r.residual.cwiseAbs().maxCoeff());
  }
  EXPECT_LT(worst, 1e-8);
}

TEST(Preint, BiasJacobiansMatchFiniteDifference) {
  const SimData sim = simulate(single_turn_spec(90.0, 10.0, 10.0), clean_biased_rig(), 100, 3);
  const Quat Rbo = sim.rig.extrinsics_true.Rbo;
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  const double h = 1e-5;
  for (std::size_t f : {5ul, sim.truth.frame_count() / 2, sim.truth.frame_count() - 3}) {
    const Vec3 ba(0.05 * n(rng), 0.05 * n(rng), 0.05 * n(rng));
    const Vec3 bw(0.01 * n(rng), 0.01 * n(rng), 0.01 * n(rng));
    const Preintegrated p = frame_preint(sim, f, ba, bw, Rbo);
    for (int k = 0; k < 6; ++k) {
      const Vec3 d = Vec3::Unit(k % 3) * h;
      const bool acc = k < 3;
      const Preintegrated hi = frame_preint(sim, f, acc ? ba + d : ba, acc ? bw : bw + d, Rbo);
      const Preintegrated lo = frame_preint(sim, f, acc ? ba - d : ba, acc ? bw : bw - d, Rbo);
      const Vec3 fd_alpha = (hi.alpha - lo.alpha) / (2 * h);
      const Vec3 fd_beta = (hi.beta - lo.beta) / (2 * h);
      const Vec3 fd_gamma = log_quat(lo.gamma.conjugate() * hi.gamma) / (2 * h);
      const Vec3 fd_eta = (hi.eta - lo.eta) / (2 * h);
      const int c = k % 3;
      const Vec3 an_alpha = acc ? p.J_alpha_ba.col(c) : p.J_alpha_bw.col(c);
      const Vec3 an_beta = acc ? p.J_beta_ba.col(c) : p.J_beta_bw.col(c);
      const Vec3 an_gamma = acc ? Vec3::Zero() : Vec3(p.J_gamma_bw.col(c));
      const Vec3 an_eta = acc ? Vec3::Zero() : Vec3(p.J_eta_bw.col(c));
      auto rel = [](const Vec3& a, const Vec3& b) { return (a - b).norm() / std::max(1e-6, b.norm()); };
      EXPECT_LT(rel(an_alpha, fd_alpha), 1e-4) << "frame " << f << " col " << k;
      EXPECT_LT(rel(an_beta, fd_beta), 1e-4) << "frame " << f << " col " << k;
      EXPECT_LT(rel(an_gamma, fd_gamma), 1e-4) << "frame " << f << " col " << k;
      EXPECT_LT(rel(an_eta, fd_eta), 1e-4) << "frame " << f << " col " << k;
    }
  }
}

TEST(Preint, EtaIsLinearInOdometerAxis) {
  const SimData sim = simulate(single_turn_spec(90.0, 10.0, 10.0), clean_biased_rig(), 100, 3);
  const std::size_t f = sim.truth.frame_count() / 2;
  const Quat Rbo2 = exp_quat(Vec3(0.01, -0.02, 0.03));
  const Preintegrated p = frame_preint(sim, f, Vec3::Zero(), Vec3::Zero(), Quat::Identity());
  const Preintegrated p2 = frame_preint(sim, f, Vec3::Zero(), Vec3::Zero(), Rbo2);
  const CorrectedPreint c = bias_correct(p, Vec3::Zero(), Vec3::Zero(), Rbo2);
  EXPECT_LT((c.eta - p2.eta).norm(), 1e-12);
  EXPECT_TRUE(c.reintegrate_required);
}

TEST(Preint, CovarianceMatchesMonteCarlo) {
  SensorRig clean = clean_biased_rig();
  const SimData sim = simulate(single_turn_spec(90.0, 10.0, 10.0), clean, 50, 5);
  ImuNoise model;
  model.wheel_lateral_sigma = 0.0;
  model.accel_bias_walk = 0.0;
  model.gyro_bias_walk = 0.0;

  // One 0.1 s segment inside the turn.
  const std::size_t f = sim.truth.frame_count() / 2;
  const double t0 = sim.truth.frame_time(f);
  const double t1 = sim.truth.frame_time(f + 1);
  const auto imu = imu_between(sim.imu.samples, t0, t1);
  const auto wheel = wheel_between(sim.wheel, t0, t1);
  const Vec3 ba = sim.rig.bias_a_true;
  const Vec3 bw = sim.rig.bias_w_true;
  const Quat Rbo = sim.rig.extrinsics_true.Rbo;
  const Preintegrated nominal = integrate(imu, wheel, ba, bw, Rbo, model);

  const double dt = imu[1].t - imu[0].t;
  std::mt19937_64 rng(99);
  std::normal_distribution<double> n(0.0, 1.0);
  const int draws = 10000;
  Eigen::Matrix<double, 12, 12> S = Eigen::Matrix<double, 12, 12>::Zero();
  for (int d = 0; d < draws; ++d) {
    auto noisy_imu = imu;
    std::vector<WheelSample> noisy_wheel;
    for (auto& s : noisy_imu) {
      for (int k = 0; k < 3; ++k) {
        s.accel(k) += n(rng) * model.accel_density / std::sqrt(dt);
        s.gyro(k) += n(rng) * model.gyro_density / std::sqrt(dt);
      }
      noisy_wheel.push_back({s.t, wheel_speed_at(wheel, s.t) + n(rng) * model.wheel_sigma});
    }
    const Preintegrated p = integrate(noisy_imu, noisy_wheel, ba, bw, Rbo, model);
    Eigen::Matrix<double, 12, 1> e;
    e << p.alpha - nominal.alpha, p.beta - nominal.beta, log_quat(nominal.gamma.conjugate() * p.gamma),
        p.eta - nominal.eta;
    S += e * e.transpose();
  }
  S /= draws;
  const Eigen::Matrix<double, 12, 12> P = nominal.cov.topLeftCorner<12, 12>();
  const double rel = (S - P).norm() / P.norm();
  EXPECT_LT(rel, 0.15);

  // Whitened comparison exercises every block, not only the largest.
  Eigen::LLT<Eigen::Matrix<double, 12, 12>> llt(P);
  ASSERT_EQ(llt.info(), Eigen::Success);
  const Eigen::Matrix<double, 12, 12> L = llt.matrixL();
  const Eigen::Matrix<double, 12, 12> Li = L.inverse();
  const Eigen::Matrix<double, 12, 12> M = Li * S * Li.transpose();
  const double white = (M - Eigen::Matrix<double, 12, 12>::Identity()).norm() / std::sqrt(12.0);
  EXPECT_LT(white, 0.15);
}

TEST(Preint, RejectsBadSpans) {
  EXPECT_THROW(integrate({}, {{0.0, 1.0}}, Vec3::Zero(), Vec3::Zero(), Quat::Identity(), {}), PreintError);
  std::vector<ImuSample> back{{0.1, Vec3::Zero(), Vec3::Zero()}, {0.0, Vec3::Zero(), Vec3::Zero()}};
  EXPECT_THROW(integrate(back, {{0.0, 1.0}, {0.1, 1.0}}, Vec3::Zero(), Vec3::Zero(), Quat::Identity(), {}),
               PreintError);
  std::vector<ImuSample> longspan{{0.0, Vec3::Zero(), Vec3::Zero()}, {2.0, Vec3::Zero(), Vec3::Zero()}};
  EXPECT_THROW(integrate(longspan, {{0.0, 1.0}, {2.0, 1.0}}, Vec3::Zero(), Vec3::Zero(), Quat::Identity(), {}),
               PreintError);
}

TEST(Preint, ComposeMatchesJointIntegration) {
  const SimData sim = simulate(single_turn_spec(90.0, 10.0, 10.0), clean_biased_rig(), 50, 5);
  const std::size_t f = sim.truth.frame_count() / 2;
  const Vec3 ba = sim.rig.bias_a_true, bw = sim.rig.bias_w_true;
  const Quat Rbo = sim.rig.extrinsics_true.Rbo;
  const Preintegrated a = frame_preint(sim, f, ba, bw, Rbo);
  const Preintegrated b = frame_preint(sim, f + 1, ba, bw, Rbo);
  const double t0 = sim.truth.frame_time(f), t2 = sim.truth.frame_time(f + 2);
  const Preintegrated joint =
      integrate(imu_between(sim.imu.samples, t0, t2), wheel_between(sim.wheel, t0, t2), ba, bw, Rbo, {});
  const Preintegrated c = compose_nominal(a, b);
  EXPECT_LT((c.alpha - joint.alpha).norm(), 1e-12);
  EXPECT_LT((c.beta - joint.beta).norm(), 1e-12);
  EXPECT_LT((c.eta - joint.eta).norm(), 1e-12);
  EXPECT_LT(log_quat(c.gamma.conjugate() * joint.gamma).norm(), 1e-12);
}
