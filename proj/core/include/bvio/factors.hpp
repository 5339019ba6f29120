#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "bvio/preint.hpp"
#include "bvio/types.hpp"

namespace bvio {

class FactorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Landmark parameterized by inverse depth along the bearing of its anchor
/// observation.
struct Landmark {
  LandmarkId id = 0;
  FrameId anchor_frame = 0;
  Vec2 first_obs = Vec2::Zero();  // pixel observation in the anchor frame
  double inv_depth = 0.1;         // 1/m
};

inline constexpr double kMinInvDepth = 1e-4;
/// Points closer than this to a camera make the reprojection invalid.
inline constexpr double kMinDepth = 0.1;

enum class BlockKind { kState, kRbc, kPbc, kRbo, kPbo, kLandmark };

struct BlockRef {
  BlockKind kind = BlockKind::kState;
  std::int64_t id = 0;  // frame id for states, landmark id for landmarks

  bool operator==(const BlockRef& o) const { return kind == o.kind && id == o.id; }
  bool operator<(const BlockRef& o) const { return kind != o.kind ? kind < o.kind : id < o.id; }
};

int block_dim(BlockKind kind);

/// Value of one parameter block; only the member matching `ref.kind` is used.
struct BlockValue {
  BlockRef ref;
  MotionState state;
  Quat rot = Quat::Identity();
  Vec3 vec = Vec3::Zero();
  double scalar = 0.0;
};

/// Local difference `value - base` in the block's tangent space.
VecX block_delta(const BlockValue& value, const BlockValue& base);

/// Linear prior e = r - J * dx over the retained blocks, where dx is the local
/// difference of the current values from `lin_point`.
struct MarginalPrior {
  VecX r;
  MatX J;
  std::vector<BlockValue> lin_point;

  bool empty() const { return lin_point.empty() || r.size() == 0; }
  int dim() const;
  /// Offsets of each lin_point block inside the prior's columns.
  std::vector<int> offsets() const;
  bool involves(const BlockRef& ref) const;
};

/// Independent Gaussian prior on one state: J = diag(1/sigma), r = 0.
MarginalPrior make_state_prior(FrameId id, const MotionState& s, const Vec15& sigma);

using BlockLookup = std::function<const BlockValue*(const BlockRef&)>;

struct PriorEval {
  VecX r;
  MatX J;  // derivative w.r.t. local perturbations of the current values
};

/// Throws FactorError when a prior block is missing from `lookup`.
PriorEval marginal_residual(const MarginalPrior& prior, const BlockLookup& lookup);
/// Cost ||r - J dx||^2 of the prior at the given values.
double marginal_cost(const MarginalPrior& prior, const BlockLookup& lookup);

using Mat2x6 = Eigen::Matrix<double, 2, 6>;
using Mat2x3 = Eigen::Matrix<double, 2, 3>;

/// Reprojection of a landmark anchored at frame i into frame j, in pixels.
/// Pose Jacobians are over [dp(3), dtheta(3)] of each state.
struct ReprojResult {
  Vec2 residual = Vec2::Zero();
  bool valid = true;
  Mat2x6 J_pose_i = Mat2x6::Zero();
  Mat2x6 J_pose_j = Mat2x6::Zero();
  Mat2x3 J_Rbc = Mat2x3::Zero();
  Mat2x3 J_pbc = Mat2x3::Zero();
  Vec2 J_inv_depth = Vec2::Zero();
  double depth_j = 0.0;
};

/// Throws FactorError when frame_j equals the anchor frame.
ReprojResult reproj_residual(const MotionState& state_i, const MotionState& state_j, FrameId frame_j,
                             const Extrinsics& ext, const CameraModel& cam, const Landmark& lm, const Vec2& obs_j);

/// Point of a landmark in the world frame.
Vec3 landmark_world(const MotionState& anchor, const Extrinsics& ext, const CameraModel& cam, const Landmark& lm);

using Vec18 = Eigen::Matrix<double, 18, 1>;
using Mat18x15 = Eigen::Matrix<double, 18, 15>;
using Mat18x3 = Eigen::Matrix<double, 18, 3>;

/// Unwhitened IMU-odometer residual, rows [pos(3), vel(3), rot(3), odo(3),
/// ba(3), bw(3)], with Jacobians and the whitening matrix.
struct ImuOdoResult {
  Vec18 residual = Vec18::Zero();
  Mat18x15 J_k = Mat18x15::Zero();
  Mat18x15 J_k1 = Mat18x15::Zero();
  Mat18x3 J_Rbo = Mat18x3::Zero();
  Mat18x3 J_pbo = Mat18x3::Zero();
  /// S with S^T S = cov^-1; whitened residual is S * residual.
  Mat18 sqrt_info = Mat18::Identity();
  bool reintegrate_required = false;
};

/// `gravity_w` is the physical gravity vector (e.g. (0,0,-9.81)).
ImuOdoResult imuodo_residual(const MotionState& state_k, const MotionState& state_k1, const Preintegrated& p,
                             const Extrinsics& ext, const Vec3& gravity_w);

/// Upper-triangular S with S^T S = cov^-1. Throws FactorError if cov is not
/// positive definite.
Mat18 sqrt_information(const Mat18& cov);

struct RollPriorResult {
  double residual = 0.0;
  Eigen::RowVector3d J = Eigen::RowVector3d::Zero();
};

/// sqrt(weight) * x-component of log(ref^T * Rbo).
RollPriorResult roll_prior_residual(const Quat& Rbo, const Quat& ref, double weight);

}  // namespace bvio
