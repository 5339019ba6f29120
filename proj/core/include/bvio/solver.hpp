#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "bvio/factors.hpp"
#include "bvio/preint.hpp"
#include "bvio/types.hpp"

namespace bvio {

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ParamPolicy {
  bool fix_accel_bias = false;
  bool fix_extrinsics = false;
  bool zero_accel_bias = false;  // implies fix_accel_bias
  /// Frames whose position and orientation are held constant.
  std::vector<FrameId> fixed_pose_frames;

  void validate() const;
};

struct WindowFrame {
  FrameId id = 0;
  double t = 0.0;
  MotionState state;
  bool keyframe = true;
};

/// Pre-integration between consecutive window frames, with the raw samples
/// kept for re-integration.
struct WindowPreint {
  Preintegrated p;
  std::vector<ImuSample> imu;
  std::vector<WheelSample> wheel;
};

struct WindowLandmark {
  Landmark lm;
  std::map<FrameId, Vec2> obs;  // includes the anchor observation
};

struct Window {
  std::vector<WindowFrame> frames;  // ascending id
  std::vector<WindowPreint> preints;  // preints[i] joins frames[i] and frames[i+1]
  std::map<LandmarkId, WindowLandmark> landmarks;
  Extrinsics ext;
  MarginalPrior prior;
  ParamPolicy policy;
  CameraModel camera;
  Vec3 gravity_w = Vec3(0.0, 0.0, -9.81);
  /// Reference for the weak prior on the roll of Rbo about the odometer axis,
  /// which no wheel measurement constrains.
  Quat rbo_roll_ref = Quat::Identity();

  int index_of(FrameId id) const;  // -1 if absent
  const WindowFrame& frame(FrameId id) const;
  WindowFrame& frame(FrameId id);
  /// Throws SolverError naming the first violated invariant.
  void check_invariants() const;
  /// Current value of a parameter block, or nullptr when it is not in the window.
  BlockValue block_value(const BlockRef& ref, bool* found) const;
};

struct SolverConfig {
  int max_iterations = 10;
  double rel_cost_tol = 1e-6;
  double step_tol = 1e-8;
  double initial_radius = 1.0;
  double radius_shrink = 0.25;
  double radius_grow = 2.0;
  double pixel_sigma = 1.0;
  double huber_delta = 0.0;  // in whitened units; 0 disables the robust loss
  double rbo_roll_weight = 1e-2;
  ImuNoise noise;  // used when a pre-integration is re-integrated
  BiasCorrectionLimits limits;
};

struct TermCosts {
  double reprojection = 0.0;
  double imu_odometer = 0.0;
  double prior = 0.0;
  double roll_prior = 0.0;

  double total() const { return reprojection + imu_odometer + prior + roll_prior; }
};

struct OptimizeStats {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  TermCosts terms;
  int iterations = 0;
  int reintegrations = 0;
  bool converged = false;
};

TermCosts evaluate_costs(const Window& w, const SolverConfig& cfg);

/// Dogleg over the free parameters with landmarks eliminated by Schur
/// complement. Throws SolverError when the damped normal equations cannot be
/// factored.
OptimizeStats optimize(Window& w, const SolverConfig& cfg);

/// Solve [Hxx Hxl; Hxl^T diag(hll)] [hx; hl] = -[gx; gl] by eliminating the
/// diagonal block. A vanishing damping is added if the reduced system is
/// singular; throws SolverError if it stays indefinite.
void schur_solve(const MatX& Hxx, const MatX& Hxl, const VecX& hll, const VecX& gx, const VecX& gl, VecX& hx,
                 VecX& hl);

/// Normal equations of a window at its current values, in full local
/// coordinates: 15 per frame (window order), then Rbc, pbc, Rbo, pbo, then one
/// per landmark (map order). Fixed blocks are included.
struct NormalEquations {
  MatX H;
  VecX g;
  double cost = 0.0;
  int frame_dim = 0;
  int ext_offset = 0;
  int landmark_offset = 0;
  std::vector<LandmarkId> landmark_ids;
};

struct FactorSelection {
  bool preints = true;
  bool reprojection = true;
  bool prior = true;
  bool roll_prior = true;
  /// When non-empty, only pre-integrations touching these frames and
  /// reprojections of landmarks anchored at them are used.
  std::vector<FrameId> touching;
};

NormalEquations build_normal_equations(const Window& w, const SolverConfig& cfg, const FactorSelection& sel = {});

/// Prior from eliminating `drop` (an end frame of the window) together with the
/// landmarks anchored at it. Does not modify the window.
MarginalPrior marginalize(const Window& w, FrameId drop, const SolverConfig& cfg);

/// Marginalize `drop`, install the new prior, remove the frame and re-anchor
/// its landmarks to the closest remaining frame observing them.
void marginalize_frame(Window& w, FrameId drop, const SolverConfig& cfg);

/// Remove an interior frame without keeping its visual information: the
/// neighbouring pre-integrations are merged and re-integrated, and the frame is
/// marginalized out of the prior if the prior involves it.
void discard_frame(Window& w, FrameId id, const SolverConfig& cfg);

/// Move a landmark to a new anchor frame, keeping its world point. Returns
/// false when the new depth is not above kMinDepth.
bool reanchor_landmark(WindowLandmark& lm, FrameId new_anchor, const MotionState& old_anchor_state,
                       const MotionState& new_anchor_state, const Extrinsics& ext, const CameraModel& cam);

struct BoundConfig {
  double mu = 0.85;
  double ratio = 0.4;
};

/// Scales r and J by mu when marg_cost / total_cost exceeds the ratio.
/// Returns true if the prior was scaled.
bool bound_marginal_prior(MarginalPrior& prior, double marg_cost, double total_cost, const BoundConfig& cfg = {});

struct KeyframeConfig {
  double min_parallax_px = 10.0;
  int min_tracked = 50;
};

/// `parallax_px` is the mean parallax of tracked features against the last
/// keyframe.
bool is_keyframe(double parallax_px, int tracked, const KeyframeConfig& cfg = {});

/// Mean pixel displacement of features seen in both frames; 0 with no overlap.
double mean_parallax(const std::vector<FeatureObservation>& a, const std::vector<FeatureObservation>& b,
                     int* common = nullptr);

std::string stats_json(const Window& w, const OptimizeStats& stats, double marg_ratio);

/// Re-integrate a window pre-integration at the given biases and Rbo.
void reintegrate(WindowPreint& wp, const Vec3& ba, const Vec3& bw, const Quat& Rbo, const ImuNoise& noise);

}  // namespace bvio
