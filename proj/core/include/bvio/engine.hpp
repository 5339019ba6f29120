#pragma once

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "bvio/sim.hpp"
#include "bvio/solver.hpp"

namespace bvio {

class EngineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Phase { kPreTurn, kTurnDetected, kBiasConverged, kExtrinsicsFree, kBackwardRunning, kBackwardDone };

const char* phase_name(Phase p);

struct PhaseEvent {
  std::string event;
  double t = 0.0;
  FrameId frame = 0;
};

struct PhaseState {
  Phase phase = Phase::kPreTurn;
  std::optional<double> turn_time;
  std::optional<double> extrinsics_free_time;

  /// Throws EngineError unless `next` comes after the current phase.
  void advance(Phase next);
};

struct TrajectoryEntry {
  FrameId id = 0;
  double t = 0.0;
  Pose forward;
  std::optional<Pose> refined;
  bool keyframe = true;
};

/// Shared by the forward and backward estimators: forward appends frames and
/// updates their estimates, backward sets refined poses for older frames.
class TrajectoryLog {
 public:
  void append(FrameId id, double t, const Pose& forward, bool keyframe);
  void update_forward(FrameId id, const Pose& forward);
  void set_keyframe(FrameId id, bool keyframe);
  /// Throws EngineError if the frame is unknown.
  void set_refined(FrameId id, const Pose& refined);
  std::vector<TrajectoryEntry> snapshot() const;
  std::optional<FrameId> smallest_refined() const;
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::vector<TrajectoryEntry> entries_;
  std::optional<FrameId> smallest_refined_;
};

/// Re-bases frames at or after `j` so that frame j lands on its refined pose;
/// earlier frames keep their refined-or-forward pose. Throws EngineError if j
/// has no refined pose.
std::vector<Pose> realtime_stitch(const std::vector<TrajectoryEntry>& log, FrameId j);

/// Refined pose where available, forward pose otherwise.
std::vector<Pose> refined_or_forward(const std::vector<TrajectoryEntry>& log);

struct TurnResult {
  double angle_deg = 0.0;
  bool turned = false;
};

/// Largest |z| of log(Ri^T Rj) over frame pairs in the window, in degrees.
TurnResult detect_turning(const Window& w, double threshold_deg = 20.0);

struct BiasConvergenceConfig {
  int window = 20;
  double tol = 0.01;  // m/s^2
};

/// True iff the last N estimates differ pairwise by less than tol (max norm
/// of the difference).
bool bias_converged(const std::vector<Vec3>& history, const BiasConvergenceConfig& cfg = {});

/// Inputs for one image frame: its features and the raw samples covering the
/// gap since the previous frame (both ends included).
struct FrameInput {
  FeatureFrame features;
  std::vector<ImuSample> imu;
  std::vector<WheelSample> wheel;
};

struct RecordedInputs {
  std::vector<FeatureFrame> frames;  // index = frame id
  std::vector<ImuSample> imu;
  std::vector<WheelSample> wheel;
};

struct EngineConfig {
  int window_size = 10;
  double t2 = 30.0;  // s between freeing the extrinsics and starting the backward pass
  double turn_threshold_deg = 20.0;
  BiasConvergenceConfig bias;
  BoundConfig bound;
  KeyframeConfig keyframe;
  SolverConfig solver;
  /// Longest interval a merged pre-integration may span when a non-keyframe
  /// is discarded.
  double max_preint_span = 0.5;
  double min_triangulation_deg = 1.0;
  /// New tracks are not promoted to landmarks beyond this many.
  int max_landmarks = 150;
  bool deterministic = true;
  bool forward_only = false;
  /// Hold b_a at zero until a turn is detected.
  bool zero_bias_before_turn = true;
  /// Release the extrinsics once the bias converges; when false they stay at
  /// their initial values.
  bool free_extrinsics = true;
  /// Deterministic mode: backward steps run after each forward step.
  int backward_steps_per_forward = 1;
  /// Prior sigmas on the initial state [p, v, theta, ba, bw].
  Vec15 initial_sigma = (Vec15() << Vec3::Constant(1e-3), Vec3::Constant(0.05), Vec3::Constant(1e-3),
                         Vec3::Constant(0.2), Vec3::Constant(0.01))
                            .finished();

  void validate() const;
};

struct EngineSetup {
  MotionState initial_state;  // frame 0
  Extrinsics initial_extrinsics;
  CameraModel camera;
  Vec3 gravity_w = Vec3(0.0, 0.0, -9.81);
};

struct ForwardResult {
  FrameId frame = 0;
  Pose pose;
  std::vector<PhaseEvent> events;
  OptimizeStats stats;
  double marg_ratio = 0.0;
};

class BackwardEstimator;

class Engine {
 public:
  Engine(const EngineConfig& cfg, const EngineSetup& setup);
  ~Engine();
  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  /// First call must carry frame 0 (imu/wheel may be empty). Throws
  /// EngineError on out-of-order frames or missing sensor coverage.
  ForwardResult forward_step(const FrameInput& in);

  /// Finish any running backward pass (runs it to completion or joins the
  /// thread).
  void finish();

  const Window& forward_window() const { return window_; }
  const PhaseState& phase() const { return phase_; }
  const std::vector<PhaseEvent>& events() const { return events_; }
  const TrajectoryLog& log() const { return log_; }
  const RecordedInputs& recorded() const { return recorded_; }
  const std::vector<Vec3>& bias_history() const { return bias_history_; }
  bool backward_started() const { return backward_ != nullptr; }
  /// Oldest frame of the snapshot the backward pass started from.
  std::optional<FrameId> backward_spawn_frame() const;
  /// Diagnostic JSON per optimize() call.
  const std::vector<std::string>& diagnostics() const { return diagnostics_; }
  /// Current real-time trajectory: stitched at the backward frontier if any
  /// frame has been refined, else the forward estimates.
  std::vector<Pose> realtime() const;

 private:
  void apply_policy();
  void update_phase(double t, FrameId id, std::vector<PhaseEvent>& out);
  void manage_window();
  void spawn_backward();
  void run_backward_steps(int n);
  void push_event(const std::string& name, double t, FrameId id, std::vector<PhaseEvent>& out);

  EngineConfig cfg_;
  EngineSetup setup_;
  Window window_;
  PhaseState phase_;
  TrajectoryLog log_;
  RecordedInputs recorded_;
  std::vector<PhaseEvent> events_;
  std::vector<Vec3> bias_history_;
  std::vector<std::string> diagnostics_;
  std::map<LandmarkId, std::map<FrameId, Vec2>> pending_;
  std::vector<FeatureObservation> last_keyframe_obs_;
  std::unique_ptr<BackwardEstimator> backward_;
  std::thread backward_thread_;
  std::atomic<bool> backward_done_{false};
  bool backward_done_event_sent_ = false;
};

/// Backward estimator: walks from the oldest frame of a forward-window
/// snapshot back to frame 0, writing refined poses.
class BackwardEstimator {
 public:
  BackwardEstimator(const Window& snapshot, const RecordedInputs& recorded, const EngineConfig& cfg,
                    TrajectoryLog& log);

  /// Process one earlier frame. Returns false once frame 0 has been processed.
  bool step();
  bool done() const { return done_; }
  const Window& window() const { return window_; }
  FrameId spawn_frame() const { return spawn_oldest_; }
  FrameId snapshot_newest() const { return snapshot_newest_; }

 private:
  void finish_all();
  void write_refined(const WindowFrame& f);

  Window window_;
  RecordedInputs recorded_;
  EngineConfig cfg_;
  TrajectoryLog& log_;
  std::map<LandmarkId, std::map<FrameId, Vec2>> pending_;
  FrameId spawn_oldest_ = 0;
  FrameId snapshot_newest_ = 0;
  FrameId last_keyframe_ = 0;
  bool done_ = false;
};

/// Re-anchor every landmark of `w` to its latest observation in the window.
/// Landmarks whose shifted depth is not above kMinDepth are removed.
void anchor_landmarks_at_latest(Window& w);

/// Depth of a landmark seen at uv_a and uv_b from two body states, measured
/// along the optical axis of camera a; nullopt when the rays are nearly
/// parallel (below min_angle_deg) or the point is behind either camera.
std::optional<double> triangulate_depth(const MotionState& a, const MotionState& b, const Vec2& uv_a, const Vec2& uv_b,
                                        const Extrinsics& ext, const CameraModel& cam, double min_angle_deg);

/// State at the start of a gap given the state at its end and the
/// pre-integration over the gap (exact inverse of the nominal propagation).
MotionState propagate_backward(const MotionState& end, const Preintegrated& p, const Vec3& gravity_w);
MotionState propagate_forward(const MotionState& start, const Preintegrated& p, const Vec3& gravity_w);

}  // namespace bvio
