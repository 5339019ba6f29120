#include <gtest/gtest.h>

#include <Eigen/Cholesky>
#include <random>

#include "bvio/solver.hpp"
#include "test_support.hpp"

using namespace bvio;
using namespace bvio::testing;

namespace {

const SimData& turn_sim() {
  static const SimData sim = simulate(single_turn_spec(90.0, 20.0, 20.0), clean_biased_rig(), 400, 17);
  return sim;
}

std::size_t turn_frame(const SimData& sim) { return sim.truth.frame_count() / 2 - 5; }

double max_abs_residual(const Window& w, const SolverConfig& cfg) {
  double worst = 0.0;
  for (std::size_t i = 0; i + 1 < w.frames.size(); ++i) {
    const auto r = imuodo_residual(w.frames[i].state, w.frames[i + 1].state, w.preints[i].p, w.ext, w.gravity_w);
    worst = std::max(worst, r.residual.cwiseAbs().maxCoeff());
  }
  for (const auto& [id, wl] : w.landmarks) {
    for (const auto& [fid, uv] : wl.obs) {
      if (fid == wl.lm.anchor_frame) continue;
      const auto r = reproj_residual(w.frame(wl.lm.anchor_frame).state, w.frame(fid).state, fid, w.ext, w.camera,
                                     wl.lm, uv);
      if (r.valid) worst = std::max(worst, r.residual.cwiseAbs().maxCoeff() / cfg.pixel_sigma);
    }
  }
  return worst;
}

}  // namespace

TEST(Solver, TruthIsAFixedPoint) {
  const SimData& sim = turn_sim();
  Window w = truth_window(sim, turn_frame(sim), 10);
  ASSERT_GT(w.landmarks.size(), 20u);
  SolverConfig cfg;
  EXPECT_LT(max_abs_residual(w, cfg), 1e-8);
  const OptimizeStats st = optimize(w, cfg);
  EXPECT_LE(st.iterations, 2);
  EXPECT_LT(st.final_cost, 1e-10);
}

TEST(Solver, RecoversTruthFromPerturbation) {
  const SimData& sim = turn_sim();
  const std::size_t first = turn_frame(sim);
  Window w = truth_window(sim, first, 10);
  w.policy.fix_extrinsics = true;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t i = 1; i < w.frames.size(); ++i) {
    Vec15 d = Vec15::Zero();
    d.head<3>() = Vec3(n(rng), n(rng), n(rng)).normalized() * 0.05;
    d.segment<3>(state_offset::kTheta) = Vec3(n(rng), n(rng), n(rng)).normalized() * (0.5 * M_PI / 180.0);
    w.frames[i].state = boxplus_state(w.frames[i].state, d);
  }
  SolverConfig cfg;
  optimize(w, cfg);
  optimize(w, cfg);
  for (std::size_t i = 0; i < w.frames.size(); ++i) {
    EXPECT_LT((w.frames[i].state.p - truth_state(sim, first + i).p).norm(), 1e-6) << "frame " << i;
  }
}

TEST(Solver, FixedBlocksAreBitIdentical) {
  const SimData sim = simulate(single_turn_spec(0.0, 40.0, 0.0), SensorRig::default_rig(), 300, 3);
  Window w = truth_window(sim, 20, 10);
  w.policy = {true, true, true};
  for (auto& f : w.frames) f.state.ba = Vec3(0.1, 0.2, 0.3);
  const Extrinsics before = w.ext;
  SolverConfig cfg;
  optimize(w, cfg);
  for (const auto& f : w.frames) EXPECT_EQ(f.state.ba, Vec3::Zero());
  EXPECT_EQ(before.Rbc.coeffs(), w.ext.Rbc.coeffs());
  EXPECT_EQ(before.pbc, w.ext.pbc);
  EXPECT_EQ(before.Rbo.coeffs(), w.ext.Rbo.coeffs());
  EXPECT_EQ(before.pbo, w.ext.pbo);
}

TEST(Solver, NoisyWindowCostDecreases) {
  const SimData sim = simulate(single_turn_spec(90.0, 20.0, 20.0), SensorRig::default_rig(), 400, 8);
  Window w = truth_window(sim, turn_frame(sim), 10);
  SolverConfig cfg;
  const OptimizeStats st = optimize(w, cfg);
  EXPECT_LE(st.final_cost, st.initial_cost);
  EXPECT_LE(st.iterations, cfg.max_iterations);
  const std::string js = stats_json(w, st, 0.1);
  EXPECT_NE(js.find("\"iterations\""), std::string::npos);
}

TEST(Solver, SchurSolveMatchesDenseSolve) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const int nx = 4 * 15 + 12, nl = 20;
    const MatX A = MatX::Random(3 * (nx + nl), nx + nl);
    MatX H = A.transpose() * A;
    // Landmarks couple only to themselves.
    for (int i = 0; i < nl; ++i) {
      for (int j = 0; j < nl; ++j) {
        if (i != j) H(nx + i, nx + j) = 0.0;
      }
    }
    H.bottomRightCorner(nl, nl).diagonal().array() += 50.0;
    H.topLeftCorner(nx, nx).diagonal().array() += 50.0;
    const VecX g = VecX::Random(nx + nl);
    VecX hx, hl;
    schur_solve(H.topLeftCorner(nx, nx), H.topRightCorner(nx, nl), H.bottomRightCorner(nl, nl).diagonal(),
                g.head(nx), g.tail(nl), hx, hl);
    const VecX dense = H.ldlt().solve(-g);
    VecX h(nx + nl);
    h << hx, hl;
    EXPECT_LT((h - dense).norm() / dense.norm(), 1e-8);
  }
}

TEST(Solver, MarginalizationMatchesQuadraticCompletion) {
  const SimData sim = simulate(single_turn_spec(90.0, 20.0, 20.0), SensorRig::default_rig(), 300, 9);
  const std::size_t first = turn_frame(sim);
  Window w = truth_window(sim, first, 4, {}, 20);
  // Move away from truth so the gradient is not negligible.
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& f : w.frames) {
    Vec15 d;
    for (int k = 0; k < 15; ++k) d(k) = 0.01 * n(rng);
    f.state = boxplus_state(f.state, d);
  }
  SolverConfig cfg;
  const FrameId drop = w.frames.front().id;
  const MarginalPrior prior = marginalize(w, drop, cfg);
  ASSERT_FALSE(prior.empty());

  FactorSelection sel;
  sel.touching = {drop};
  sel.roll_prior = false;
  const NormalEquations ne = build_normal_equations(w, cfg, sel);

  // Columns: eliminated = dropped state + landmarks anchored at it.
  std::vector<int> m_idx;
  for (int k = 0; k < 15; ++k) m_idx.push_back(k);
  for (std::size_t l = 0; l < ne.landmark_ids.size(); ++l) {
    if (w.landmarks.at(ne.landmark_ids[l]).lm.anchor_frame == drop) m_idx.push_back(ne.landmark_offset + l);
  }
  // Retained columns in prior order.
  std::vector<int> r_idx;
  for (const auto& b : prior.lin_point) {
    int base = 0;
    switch (b.ref.kind) {
      case BlockKind::kState:
        base = 15 * w.index_of(b.ref.id);
        break;
      case BlockKind::kRbc:
        base = ne.ext_offset;
        break;
      case BlockKind::kPbc:
        base = ne.ext_offset + 3;
        break;
      case BlockKind::kRbo:
        base = ne.ext_offset + 6;
        break;
      case BlockKind::kPbo:
        base = ne.ext_offset + 9;
        break;
      default:
        FAIL();
    }
    for (int k = 0; k < block_dim(b.ref.kind); ++k) r_idx.push_back(base + k);
  }
  const int nm = m_idx.size(), nr = r_idx.size();
  MatX Hmm(nm, nm), Hmr(nm, nr), Hrr(nr, nr);
  VecX gm(nm), gr(nr);
  for (int i = 0; i < nm; ++i) {
    gm(i) = ne.g(m_idx[i]);
    for (int j = 0; j < nm; ++j) Hmm(i, j) = ne.H(m_idx[i], m_idx[j]);
    for (int j = 0; j < nr; ++j) Hmr(i, j) = ne.H(m_idx[i], r_idx[j]);
  }
  for (int i = 0; i < nr; ++i) {
    gr(i) = ne.g(r_idx[i]);
    for (int j = 0; j < nr; ++j) Hrr(i, j) = ne.H(r_idx[i], r_idx[j]);
  }
  const Eigen::LDLT<MatX> Hmm_ldlt(Hmm);

  for (int trial = 0; trial < 20; ++trial) {
    VecX dr(nr);
    for (int k = 0; k < nr; ++k) dr(k) = 0.01 * n(rng);
    // Optimal completion of the eliminated block for this dr.
    const VecX dm = Hmm_ldlt.solve(-(gm + Hmr * dr));
    VecX d(nm + nr);
    d << dm, dr;
    MatX Hfull(nm + nr, nm + nr);
    Hfull << Hmm, Hmr, Hmr.transpose(), Hrr;
    VecX gfull(nm + nr);
    gfull << gm, gr;
    const double full = 2.0 * gfull.dot(d) + d.dot(Hfull * d);
    // Same completion at dr = 0 removes the constant.
    const VecX dm0 = Hmm_ldlt.solve(-gm);
    const double full0 = 2.0 * gm.dot(dm0) + dm0.dot(Hmm * dm0);
    const double prior_q = (prior.r - prior.J * dr).squaredNorm() - prior.r.squaredNorm();
    EXPECT_NEAR(prior_q, full - full0, 1e-8 * std::max(1.0, std::abs(full - full0)));
  }
}

TEST(Solver, TwoFrameMarginalCovarianceMatchesDenseInverse) {
  const SimData& sim = turn_sim();
  Window w = truth_window(sim, turn_frame(sim), 2);
  w.landmarks.clear();
  w.prior = {};
  w.policy.fix_extrinsics = true;
  SolverConfig cfg;
  cfg.rbo_roll_weight = 0.0;
  const ImuOdoResult res = imuodo_residual(w.frames[0].state, w.frames[1].state, w.preints[0].p, w.ext, w.gravity_w);
  // A prior on frame 0 of strength comparable to the factor keeps the marginal
  // from being a near-total cancellation, which no double-precision route
  // (including the oracle) could resolve.
  const Vec15 sig = gauge_sigmas();
  w.prior = make_state_prior(w.frames[0].id, w.frames[0].state, sig);
  const MarginalPrior m = marginalize(w, w.frames[0].id, cfg);
  // Dense system over [x0, x1, Rbo, pbo].
  Eigen::Matrix<double, 18, 36> J;
  J << res.sqrt_info * res.J_k, res.sqrt_info * res.J_k1, res.sqrt_info * res.J_Rbo, res.sqrt_info * res.J_pbo;
  MatX H = J.transpose() * J;
  H.topLeftCorner(15, 15) += sig.cwiseInverse().cwiseAbs2().asDiagonal();
  ASSERT_EQ(m.lin_point.size(), 3u);
  ASSERT_EQ(m.lin_point[0].ref.kind, BlockKind::kState);
  ASSERT_EQ(m.lin_point[1].ref.kind, BlockKind::kRbo);
  ASSERT_EQ(m.lin_point[2].ref.kind, BlockKind::kPbo);
  const MatX Hmm_inv = H.topLeftCorner(15, 15).inverse();
  const MatX marg = H.bottomRightCorner(21, 21) - H.bottomLeftCorner(21, 15) * Hmm_inv * H.topRightCorner(15, 21);
  const MatX Hm = m.J.transpose() * m.J;
  EXPECT_LT((Hm - marg).norm() / marg.norm(), 1e-8);

  // Covariance of frame 1 with the extrinsics held, from the full 30x30
  // inverse, in a basis scaled to unit diagonal to keep it well conditioned.
  const MatX H30 = H.topLeftCorner(30, 30);
  const VecX scale = H30.diagonal().cwiseSqrt().cwiseInverse();
  const MatX cov30 = (scale.asDiagonal() * H30 * scale.asDiagonal()).inverse();
  const MatX cov_dense = cov30.bottomRightCorner(15, 15);
  const VecX s1 = scale.tail(15);
  const MatX cov_prior = (s1.asDiagonal() * Hm.topLeftCorner(15, 15) * s1.asDiagonal()).inverse();
  EXPECT_LT((cov_prior - cov_dense).norm() / cov_dense.norm(), 1e-6);
}

TEST(Solver, MarginalizeAndDiscardKeepTruthFixedPoint) {
  const SimData& sim = turn_sim();
  Window w = truth_window(sim, turn_frame(sim), 10);
  SolverConfig cfg;
  marginalize_frame(w, w.frames.front().id, cfg);
  w.check_invariants();
  EXPECT_EQ(w.frames.size(), 9u);
  EXPECT_LT(evaluate_costs(w, cfg).total(), 1e-10);
  discard_frame(w, w.frames[w.frames.size() - 2].id, cfg);
  w.check_invariants();
  EXPECT_LT(evaluate_costs(w, cfg).total(), 1e-10);
  marginalize_frame(w, w.frames.back().id, cfg);
  w.check_invariants();
  EXPECT_LT(evaluate_costs(w, cfg).total(), 1e-10);
  EXPECT_LE(optimize(w, cfg).iterations, 2);
  EXPECT_THROW(marginalize(w, 999999, cfg), SolverError);
  EXPECT_THROW(marginalize(w, w.frames[2].id, cfg), SolverError);
}

TEST(Solver, BoundMarginalPrior) {
  MarginalPrior p;
  BlockValue b;
  b.ref = {BlockKind::kPbo, 0};
  p.lin_point = {b};
  p.J = MatX::Identity(3, 3);
  p.r = VecX::Ones(3);
  EXPECT_FALSE(bound_marginal_prior(p, 0.39, 1.0));
  EXPECT_EQ(p.r, VecX::Ones(3));
  EXPECT_TRUE(bound_marginal_prior(p, 0.5, 1.0));
  EXPECT_DOUBLE_EQ(p.r.norm(), 0.85 * std::sqrt(3.0));
  EXPECT_DOUBLE_EQ(p.J.norm(), 0.85 * std::sqrt(3.0));
  // The minimizer dx = J^-1 r is unchanged.
  EXPECT_LT((p.J.colPivHouseholderQr().solve(p.r) - VecX::Ones(3)).norm(), 1e-15);
}

TEST(Solver, KeyframeRule) {
  EXPECT_FALSE(is_keyframe(0.0, 200));
  EXPECT_TRUE(is_keyframe(20.0, 200));
  EXPECT_TRUE(is_keyframe(0.0, 30));
}

TEST(Solver, ReanchorShiftsInverseDepth) {
  SensorRig rig = SensorRig::noise_free_rig();
  Extrinsics ext;
  ext.Rbc = forward_camera_rotation();
  ext.pbc.setZero();
  WindowLandmark wl;
  wl.lm.anchor_frame = 0;
  wl.lm.first_obs = Vec2(rig.camera.cx, rig.camera.cy);
  wl.lm.inv_depth = 0.1;
  wl.obs[0] = wl.lm.first_obs;
  wl.obs[1] = wl.lm.first_obs;
  MotionState a, b;
  WindowLandmark same = wl;
  ASSERT_TRUE(reanchor_landmark(same, 1, a, b, ext, rig.camera));
  EXPECT_NEAR(same.lm.inv_depth, 0.1, 1e-15);
  b.p = Vec3(1.0, 0.0, 0.0);  // body x is the optical axis
  ASSERT_TRUE(reanchor_landmark(wl, 1, a, b, ext, rig.camera));
  EXPECT_NEAR(wl.lm.inv_depth, 1.0 / 9.0, 1e-12);
  EXPECT_EQ(wl.lm.anchor_frame, 1);
}
