#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "bvio/engine.hpp"
#include "bvio/io.hpp"
#include "test_support.hpp"

namespace bvio {
namespace {

using testing::truth_state;

Pose random_pose(std::mt19937& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Pose p;
  p.rotation = exp_quat(Vec3(n(rng), n(rng), n(rng)));
  p.translation = Vec3(n(rng), n(rng), n(rng)) * 10.0;
  return p;
}

Pose relative(const Pose& a, const Pose& b) { return a.inverse() * b; }

void expect_pose_near(const Pose& a, const Pose& b, double tol) {
  EXPECT_LT((a.translation - b.translation).norm(), tol);
  EXPECT_LT(log_quat(a.rotation.conjugate() * b.rotation).norm(), tol);
}

std::vector<TrajectoryEntry> random_log(int n, int refined_from, std::mt19937& rng) {
  std::vector<TrajectoryEntry> log;
  for (int i = 0; i < n; ++i) {
    TrajectoryEntry e;
    e.id = i;
    e.t = 0.1 * i;
    e.forward = random_pose(rng);
    if (i <= refined_from) e.refined = random_pose(rng);
    log.push_back(e);
  }
  return log;
}

TEST(Stitch, JunctionIsExactAndRelativePosesArePreserved) {
  std::mt19937 rng(3);
  const auto log = random_log(30, 12, rng);
  const auto out = realtime_stitch(log, 12);
  EXPECT_EQ((out[12].translation - log[12].refined->translation).norm(), 0.0);
  EXPECT_EQ(out[12].rotation.coeffs(), log[12].refined->rotation.coeffs());
  for (int i = 0; i < 12; ++i) {
    EXPECT_EQ(out[i].translation, log[i].refined->translation);
  }
  for (int a = 12; a < 30; a += 5) {
    for (int b = a + 1; b < 30; b += 3) {
      expect_pose_near(relative(out[a], out[b]), relative(log[a].forward, log[b].forward), 1e-9);
    }
  }
}

TEST(Stitch, IdentityWhenRefinedEqualsForward) {
  std::mt19937 rng(5);
  auto log = random_log(10, -1, rng);
  log[0].refined = log[0].forward;
  const auto out = realtime_stitch(log, 0);
  for (int i = 0; i < 10; ++i) expect_pose_near(out[i], log[i].forward, 1e-12);
}

TEST(Stitch, UnrefinedJunctionThrows) {
  std::mt19937 rng(7);
  const auto log = random_log(10, 3, rng);
  EXPECT_THROW(realtime_stitch(log, 5), EngineError);
  EXPECT_THROW(realtime_stitch(log, 40), EngineError);
}

TEST(Stitch, TrajectoryLogRejectsGaps) {
  TrajectoryLog log;
  log.append(0, 0.0, Pose{}, true);
  EXPECT_THROW(log.append(2, 0.2, Pose{}, true), EngineError);
  EXPECT_THROW(log.set_refined(5, Pose{}), EngineError);
  log.append(1, 0.1, Pose{}, false);
  log.set_refined(1, Pose{});
  log.set_refined(0, Pose{});
  EXPECT_EQ(*log.smallest_refined(), 0);
}

Window yaw_window(const std::vector<double>& yaw_deg) {
  Window w;
  for (std::size_t i = 0; i < yaw_deg.size(); ++i) {
    WindowFrame f;
    f.id = static_cast<FrameId>(i);
    f.state.q = exp_quat(Vec3(0.0, 0.0, yaw_deg[i] * M_PI / 180.0));
    w.frames.push_back(f);
  }
  return w;
}

TEST(DetectTurning, StraightMotion) {
  const auto r = detect_turning(yaw_window({0, 0, 0, 0}));
  EXPECT_LT(r.angle_deg, 1e-6);
  EXPECT_FALSE(r.turned);
}

TEST(DetectTurning, SimArcWindows) {
  TrajectorySpec spec;
  spec.segments = {Straight{10.0, 5.0}, Arc{90.0, 10.0, 5.0}, Straight{10.0, 5.0}};
  const GroundTruth truth = generate_truth(spec);
  // Sweep 10-frame windows over the arc; the in-window yaw change from truth
  // decides the expected outcome.
  bool saw_turn = false, saw_partial = false;
  for (std::size_t first = 0; first + 10 <= truth.frame_count(); ++first) {
    Window w;
    double max_yaw = 0.0;
    for (std::size_t f = first; f < first + 10; ++f) {
      WindowFrame wf;
      wf.id = static_cast<FrameId>(f);
      wf.state = truth.frame(f).state;
      w.frames.push_back(wf);
    }
    for (const auto& a : w.frames) {
      for (const auto& b : w.frames) {
        const Vec3 ya = a.state.R().col(0), yb = b.state.R().col(0);
        max_yaw = std::max(max_yaw, std::abs(std::atan2(ya.cross(yb).z(), ya.dot(yb))) * 180.0 / M_PI);
      }
    }
    const auto r = detect_turning(w);
    EXPECT_NEAR(r.angle_deg, max_yaw, 1e-6);
    EXPECT_EQ(r.turned, max_yaw > 20.0);
    saw_turn |= r.turned;
    saw_partial |= max_yaw > 10.0 && max_yaw < 20.0;
  }
  EXPECT_TRUE(saw_turn);
  EXPECT_TRUE(saw_partial);
}

TEST(DetectTurning, TwentyFiveDegreeSpan) {
  const auto r = detect_turning(yaw_window({0, 5, 10, 15, 20, 25}));
  EXPECT_NEAR(r.angle_deg, 25.0, 1e-9);
  EXPECT_TRUE(r.turned);
}

TEST(BiasConvergence, Examples) {
  BiasConvergenceConfig cfg;
  std::vector<Vec3> constant(25, Vec3(0.1, -0.2, 0.05));
  EXPECT_TRUE(bias_converged(constant, cfg));
  EXPECT_FALSE(bias_converged(std::vector<Vec3>(constant.begin(), constant.begin() + 19), cfg));

  std::vector<Vec3> oscillating;
  for (int i = 0; i < 40; ++i) oscillating.push_back(Vec3(0.05 * (i % 2 ? 1 : -1), 0.0, 0.0));
  EXPECT_FALSE(bias_converged(oscillating, cfg));

  // x_k = 0.5^k: the widest spread of the last 20 is x_{n-20} - x_{n-1}.
  std::vector<Vec3> geometric;
  int first_true = -1;
  for (int k = 0; k < 40; ++k) {
    geometric.push_back(Vec3(std::pow(0.5, k), 0.0, 0.0));
    const int n = static_cast<int>(geometric.size());
    const bool expected = n >= 20 && (geometric[n - 20] - geometric[n - 1]).norm() < cfg.tol;
    EXPECT_EQ(bias_converged(geometric, cfg), expected) << k;
    if (expected && first_true < 0) first_true = k;
  }
  EXPECT_EQ(first_true, 26);
}

TEST(Propagation, BackwardInvertsForward) {
  const SimData sim = simulate(single_turn_spec(90.0, 10.0, 10.0, 5.0, 2.0), testing::clean_biased_rig(), 200, 1);
  for (std::size_t f : {3, 25, 40}) {
    const MotionState a = truth_state(sim, f);
    const Preintegrated p = testing::frame_preint(sim, f, a.ba, a.bw, sim.rig.extrinsics_true.Rbo);
    const MotionState b = propagate_forward(a, p, sim.rig.gravity_w);
    const MotionState b_truth = truth_state(sim, f + 1);
    EXPECT_LT((b.p - b_truth.p).norm(), 1e-6);
    EXPECT_LT((b.v - b_truth.v).norm(), 1e-6);
    const MotionState back = propagate_backward(b, p, sim.rig.gravity_w);
    EXPECT_LT((back.p - a.p).norm(), 1e-9);
    EXPECT_LT((back.v - a.v).norm(), 1e-9);
    EXPECT_LT(log_quat(back.q.conjugate() * a.q).norm(), 1e-12);
  }
}

TEST(Triangulation, RecoversTruthDepth) {
  const SimData sim = simulate(single_turn_spec(90.0, 20.0, 10.0, 5.0, 2.0), SensorRig::noise_free_rig(), 400, 2);
  const auto& ext = sim.rig.extrinsics_true;
  int checked = 0;
  for (const auto& oa : sim.features.frames[2].observations) {
    for (const auto& ob : sim.features.frames[12].observations) {
      if (oa.landmark_id != ob.landmark_id) continue;
      const MotionState a = truth_state(sim, 2), b = truth_state(sim, 12);
      const auto d = triangulate_depth(a, b, oa.uv, ob.uv, ext, sim.rig.camera, 1.0);
      if (!d) continue;
      const Vec3 pc = camera_pose(a, ext).inverse() * sim.features.landmarks_w[oa.landmark_id];
      EXPECT_NEAR(*d, pc.z(), 1e-6 * pc.z());
      ++checked;
    }
  }
  EXPECT_GT(checked, 10);
  const MotionState s = truth_state(sim, 0);
  EXPECT_FALSE(triangulate_depth(s, s, Vec2(300, 200), Vec2(300, 200), ext, sim.rig.camera, 1.0));
}

TEST(Reanchor, LatestAnchorReprojectsOnNoiseFreeData) {
  const SimData sim = simulate(single_turn_spec(90.0, 20.0, 10.0, 5.0, 2.0), SensorRig::noise_free_rig(), 400, 4);
  Window w = testing::truth_window(sim, 5, 8);
  ASSERT_GT(w.landmarks.size(), 20u);
  anchor_landmarks_at_latest(w);
  for (const auto& [id, wl] : w.landmarks) {
    EXPECT_EQ(wl.lm.anchor_frame, wl.obs.rbegin()->first);
    for (const auto& [f, uv] : wl.obs) {
      if (f == wl.lm.anchor_frame) continue;
      const auto r = reproj_residual(w.frame(wl.lm.anchor_frame).state, w.frame(f).state, f, w.ext, w.camera, wl.lm, uv);
      ASSERT_TRUE(r.valid);
      EXPECT_LT(r.residual.norm(), 1e-8);
    }
  }
}

TEST(EngineConfigTest, Validation) {
  EngineConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.window_size = 2;
  EXPECT_THROW(cfg.validate(), EngineError);
  cfg = {};
  cfg.bound.mu = 1.0;
  EXPECT_THROW(cfg.validate(), EngineError);
  cfg = {};
  cfg.t2 = 0.0;
  EXPECT_THROW(cfg.validate(), EngineError);
}

EngineSetup truth_setup(const SimData& sim) {
  EngineSetup s;
  s.initial_state = sim.truth.frame(0).state;
  s.initial_extrinsics = sim.rig.extrinsics_true;
  s.camera = sim.rig.camera;
  s.gravity_w = sim.rig.gravity_w;
  return s;
}

struct EngineRun {
  std::vector<PhaseEvent> events;
  std::vector<TrajectoryEntry> log;
  std::vector<Vec3> ba_per_frame;
  std::vector<Pose> realtime;
  FrameId spawn_oldest = -1;
};

EngineRun run_engine(const SimData& sim, const EngineConfig& cfg) {
  Engine e(cfg, truth_setup(sim));
  EngineRun out;
  for (const auto& in : frame_inputs(sim)) {
    e.forward_step(in);
    out.ba_per_frame.push_back(e.forward_window().frames.back().state.ba);
  }
  e.finish();
  out.events = e.events();
  if (e.backward_spawn_frame()) out.spawn_oldest = *e.backward_spawn_frame();
  out.log = e.log().snapshot();
  out.realtime = e.realtime();
  return out;
}

EngineConfig short_config() {
  EngineConfig cfg;
  cfg.t2 = 3.0;
  cfg.max_landmarks = 60;
  return cfg;
}

SimData turn_sequence(const SensorRig& rig, std::uint64_t seed) {
  TrajectorySpec spec;
  spec.segments = {Straight{24.0, 4.0}, Arc{90.0, 8.0, 4.0}, Straight{40.0, 4.0}};
  return simulate(spec, rig, 1500, seed);
}

TEST(Engine, RejectsOutOfOrderAndUncoveredFrames) {
  const SimData sim = turn_sequence(SensorRig::noise_free_rig(), 1);
  auto inputs = frame_inputs(sim);
  Engine e(short_config(), truth_setup(sim));
  EXPECT_THROW(e.forward_step(inputs[1]), EngineError);
  e.forward_step(inputs[0]);
  FrameInput gap = inputs[1];
  gap.imu.erase(gap.imu.begin());
  EXPECT_THROW(e.forward_step(gap), EngineError);
  gap = inputs[1];
  gap.wheel.clear();
  EXPECT_THROW(e.forward_step(gap), EngineError);
}

TEST(Engine, StraightSequenceStaysPreTurn) {
  TrajectorySpec spec;
  spec.segments = {Straight{40.0, 4.0}};
  const SimData sim = simulate(spec, SensorRig::default_rig(), 800, 3);
  const EngineRun run = run_engine(sim, short_config());
  EXPECT_TRUE(run.events.empty());
  for (const auto& ba : run.ba_per_frame) EXPECT_EQ(ba, Vec3::Zero());
}

class NoiseFreeTurn : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    sim_ = new SimData(turn_sequence(SensorRig::noise_free_rig(), 11));
    run_ = new EngineRun(run_engine(*sim_, short_config()));
  }
  static void TearDownTestSuite() {
    delete run_;
    delete sim_;
  }
  static SimData* sim_;
  static EngineRun* run_;
};
SimData* NoiseFreeTurn::sim_ = nullptr;
EngineRun* NoiseFreeTurn::run_ = nullptr;

TEST_F(NoiseFreeTurn, PhaseEventsInOrder) {
  const auto& ev = run_->events;
  ASSERT_EQ(ev.size(), 5u);
  const char* names[] = {"TurnDetected", "BiasConverged", "ExtrinsicsFree", "BackwardRunning", "BackwardDone"};
  for (int i = 0; i < 5; ++i) EXPECT_EQ(ev[i].event, names[i]);
  for (int i = 1; i < 5; ++i) EXPECT_GE(ev[i].t, ev[i - 1].t);
  EXPECT_GE(ev[3].t, ev[2].t + 3.0 - 1e-9);
  EXPECT_LT(ev[3].t, ev[2].t + 3.0 + 0.1 + 1e-9);
}

TEST_F(NoiseFreeTurn, RefinedPosesMatchTruth) {
  const FrameId spawn = run_->events[3].frame;
  int refined = 0;
  for (const auto& e : run_->log) {
    const MotionState truth = sim_->truth.frame(e.id).state;
    EXPECT_LT((e.forward.translation - truth.p).norm(), 1e-4) << e.id;
    if (!e.refined) continue;
    ++refined;
    EXPECT_LT(e.id, spawn);
    EXPECT_LT((e.refined->translation - truth.p).norm(), 1e-4) << e.id;
    EXPECT_LT(log_quat(e.refined->rotation.conjugate() * truth.q).norm() * 180.0 / M_PI, 0.01) << e.id;
  }
  EXPECT_GT(refined, spawn / 2);
  ASSERT_TRUE(run_->log[0].refined);
  EXPECT_EQ(run_->log[0].refined->translation, run_->log[0].forward.translation);
  EXPECT_EQ(run_->log[0].refined->rotation.coeffs(), run_->log[0].forward.rotation.coeffs());
  EXPECT_EQ(run_->realtime[0].translation, run_->log[0].forward.translation);
  EXPECT_EQ(run_->realtime[0].rotation.coeffs(), run_->log[0].forward.rotation.coeffs());
}

TEST_F(NoiseFreeTurn, EveryFrameBeforeTheSnapshotIsRefined) {
  const FrameId spawn = run_->events[3].frame;
  ASSERT_GE(run_->spawn_oldest, 0);
  for (FrameId i = 0; i <= run_->spawn_oldest; ++i) EXPECT_TRUE(run_->log[i].refined.has_value()) << i;
  for (FrameId i = spawn; i < static_cast<FrameId>(run_->log.size()); ++i) EXPECT_FALSE(run_->log[i].refined) << i;
}

TEST(Engine, DeterministicRunsAreBitIdentical) {
  const SimData sim = turn_sequence(SensorRig::default_rig(), 21);
  const EngineRun a = run_engine(sim, short_config());
  const EngineRun b = run_engine(sim, short_config());
  ASSERT_EQ(a.events.size(), b.events.size());
  for (std::size_t i = 0; i < a.events.size(); ++i) {
    EXPECT_EQ(a.events[i].event, b.events[i].event);
    EXPECT_EQ(a.events[i].t, b.events[i].t);
  }
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].forward.translation, b.log[i].forward.translation);
    EXPECT_EQ(a.log[i].forward.rotation.coeffs(), b.log[i].forward.rotation.coeffs());
    ASSERT_EQ(a.log[i].refined.has_value(), b.log[i].refined.has_value());
    if (a.log[i].refined) EXPECT_EQ(a.log[i].refined->translation, b.log[i].refined->translation);
  }
}

TEST(Engine, ThreadedModeMatchesDeterministicRefinement) {
  const SimData sim = turn_sequence(SensorRig::noise_free_rig(), 11);
  EngineConfig cfg = short_config();
  cfg.deterministic = false;
  const EngineRun run = run_engine(sim, cfg);
  ASSERT_EQ(run.events.size(), 5u);
  EXPECT_EQ(run.events.back().event, "BackwardDone");
  for (const auto& e : run.log) {
    if (e.refined) EXPECT_LT((e.refined->translation - sim.truth.frame(e.id).state.p).norm(), 1e-4);
  }
}

}  // namespace
}  // namespace bvio
