#include "bvio/factors.hpp"

#include <Eigen/Cholesky>
#include <cmath>

namespace bvio {

int block_dim(BlockKind kind) {
  switch (kind) {
    case BlockKind::kState:
      return 15;
    case BlockKind::kLandmark:
      return 1;
    default:
      return 3;
  }
}

VecX block_delta(const BlockValue& value, const BlockValue& base) {
  switch (value.ref.kind) {
    case BlockKind::kState:
      return boxminus_state(value.state, base.state);
    case BlockKind::kRbc:
    case BlockKind::kRbo:
      return log_quat(base.rot.conjugate() * value.rot);
    case BlockKind::kPbc:
    case BlockKind::kPbo:
      return value.vec - base.vec;
    case BlockKind::kLandmark: {
      VecX d(1);
      d(0) = value.scalar - base.scalar;
      return d;
    }
  }
  return {};
}

int MarginalPrior::dim() const {
  int n = 0;
  for (const auto& b : lin_point) n += block_dim(b.ref.kind);
  return n;
}

std::vector<int> MarginalPrior::offsets() const {
  std::vector<int> out;
  int n = 0;
  for (const auto& b : lin_point) {
    out.push_back(n);
    n += block_dim(b.ref.kind);
  }
  return out;
}

bool MarginalPrior::involves(const BlockRef& ref) const {
  for (const auto& b : lin_point) {
    if (b.ref == ref) return true;
  }
  return false;
}

MarginalPrior make_state_prior(FrameId id, const MotionState& s, const Vec15& sigma) {
  if ((sigma.array() <= 0.0).any()) throw FactorError("prior sigmas must be positive");
  MarginalPrior p;
  BlockValue v;
  v.ref = {BlockKind::kState, id};
  v.state = s;
  p.lin_point = {v};
  p.J = sigma.cwiseInverse().asDiagonal();
  p.r = VecX::Zero(15);
  return p;
}

PriorEval marginal_residual(const MarginalPrior& prior, const BlockLookup& lookup) {
  const int n = prior.dim();
  VecX dx(n);
  // d(dx)/d(local perturbation) is identity except for rotation blocks, where
  // log(base^-1 * R * exp(e)) moves by Jr^-1(dtheta) * e.
  MatX D = MatX::Identity(n, n);
  int off = 0;
  for (const auto& base : prior.lin_point) {
    const BlockValue* cur = lookup(base.ref);
    if (cur == nullptr) throw FactorError("marginal prior block missing from the current parameters");
    const int d = block_dim(base.ref.kind);
    const VecX delta = block_delta(*cur, base);
    dx.segment(off, d) = delta;
    if (base.ref.kind == BlockKind::kState) {
      D.block<3, 3>(off + state_offset::kTheta, off + state_offset::kTheta) =
          right_jacobian_inv(delta.segment<3>(state_offset::kTheta));
    } else if (base.ref.kind == BlockKind::kRbc || base.ref.kind == BlockKind::kRbo) {
      D.block<3, 3>(off, off) = right_jacobian_inv(delta.head<3>());
    }
    off += d;
  }
  PriorEval out;
  out.r = prior.r - prior.J * dx;
  out.J = -prior.J * D;
  return out;
}

double marginal_cost(const MarginalPrior& prior, const BlockLookup& lookup) {
  if (prior.empty()) return 0.0;
  return marginal_residual(prior, lookup).r.squaredNorm();
}

Vec3 landmark_world(const MotionState& anchor, const Extrinsics& ext, const CameraModel& cam, const Landmark& lm) {
  const Vec3 pc = cam.unproject(lm.first_obs) / lm.inv_depth;
  return anchor.q * (ext.Rbc * pc + ext.pbc) + anchor.p;
}

ReprojResult reproj_residual(const MotionState& si, const MotionState& sj, FrameId frame_j, const Extrinsics& ext,
                             const CameraModel& cam, const Landmark& lm, const Vec2& obs_j) {
  if (frame_j == lm.anchor_frame) throw FactorError("reprojection into the anchor frame itself");
  const Mat3 Ri = si.R();
  const Mat3 Rj = sj.R();
  const Mat3 Rbc = ext.Rbc.toRotationMatrix();
  const Mat3 Rcb = Rbc.transpose();
  const double lambda = lm.inv_depth;
  const Vec3 bearing = cam.unproject(lm.first_obs);

  const Vec3 pc_i = bearing / lambda;
  const Vec3 pb_i = Rbc * pc_i + ext.pbc;
  const Vec3 pw = Ri * pb_i + si.p;
  const Vec3 pb_j = Rj.transpose() * (pw - sj.p);
  const Vec3 pc_j = Rcb * (pb_j - ext.pbc);

  ReprojResult out;
  out.depth_j = pc_j.z();
  if (pc_j.z() <= kMinDepth) {
    out.valid = false;
    return out;
  }
  out.residual = cam.project(pc_j) - obs_j;

  const double z = pc_j.z();
  Mat2x3 dproj;
  dproj << cam.fx / z, 0.0, -cam.fx * pc_j.x() / (z * z),
           0.0, cam.fy / z, -cam.fy * pc_j.y() / (z * z);

  const Mat3 Rcj_w = Rcb * Rj.transpose();
  Eigen::Matrix<double, 3, 6> d_pose_i, d_pose_j;
  d_pose_i.leftCols<3>() = Rcj_w;
  d_pose_i.rightCols<3>() = -Rcj_w * Ri * skew(pb_i);
  d_pose_j.leftCols<3>() = -Rcj_w;
  d_pose_j.rightCols<3>() = Rcb * skew(pb_j);

  const Mat3 chain = Rcj_w * Ri;  // body_i -> camera_j
  const Mat3 d_Rbc = -chain * Rbc * skew(pc_i) + skew(pc_j);
  const Mat3 d_pbc = chain - Rcb;
  const Vec3 d_lambda = chain * Rbc * (-bearing / (lambda * lambda));

  out.J_pose_i = dproj * d_pose_i;
  out.J_pose_j = dproj * d_pose_j;
  out.J_Rbc = dproj * d_Rbc;
  out.J_pbc = dproj * d_pbc;
  out.J_inv_depth = dproj * d_lambda;
  return out;
}

Mat18 sqrt_information(const Mat18& cov) {
  Eigen::LLT<Mat18> llt_cov(cov);
  if (llt_cov.info() != Eigen::Success) throw FactorError("pre-integration covariance is not positive definite");
  const Mat18 info = llt_cov.solve(Mat18::Identity());
  Eigen::LLT<Mat18> llt_info(0.5 * (info + info.transpose()));
  if (llt_info.info() != Eigen::Success) throw FactorError("pre-integration information is not positive definite");
  return llt_info.matrixU();
}

ImuOdoResult imuodo_residual(const MotionState& sk, const MotionState& sk1, const Preintegrated& p,
                             const Extrinsics& ext, const Vec3& gravity_w) {
  using namespace state_offset;
  constexpr int rP = 0, rV = 3, rQ = 6, rO = 9, rBa = 12, rBw = 15;

  const CorrectedPreint c = bias_correct(p, sk.ba, sk.bw, ext.Rbo);
  const double dt = p.dt_total;
  const Mat3 Rk = sk.R();
  const Mat3 Rk1 = sk1.R();
  const Mat3 RkT = Rk.transpose();
  const Mat3 Rbo = ext.Rbo.toRotationMatrix();

  ImuOdoResult out;
  out.reintegrate_required = c.reintegrate_required;

  const Vec3 xp = sk1.p - sk.p - 0.5 * gravity_w * dt * dt - sk.v * dt;
  const Vec3 xv = sk1.v - gravity_w * dt - sk.v;
  const Quat qerr = (c.gamma.conjugate() * sk.q.conjugate() * sk1.q).normalized();
  const Mat3 Rrel = RkT * Rk1;

  out.residual.segment<3>(rP) = RkT * xp - c.alpha;
  out.residual.segment<3>(rV) = RkT * xv - c.beta;
  out.residual.segment<3>(rQ) = 2.0 * qerr.vec();
  out.residual.segment<3>(rO) = RkT * (sk1.p - sk.p) + (Rrel - Mat3::Identity()) * ext.pbo - c.eta;
  out.residual.segment<3>(rBa) = sk1.ba - sk.ba;
  out.residual.segment<3>(rBw) = sk1.bw - sk.bw;

  // d(2 vec(Q (x) [1, d/2])) / dd for a right increment on Q.
  const Mat3 q_right = qerr.w() * Mat3::Identity() + skew(qerr.vec());
  // d(2 vec([1, -d/2] (x) Q)) / dd for a left decrement on Q.
  const Mat3 q_left_neg = -qerr.w() * Mat3::Identity() + skew(qerr.vec());

  const Vec3 dbw = sk.bw - p.lin_bias_w;
  const Mat3 Jr_gamma = right_jacobian(p.J_gamma_bw * dbw);

  auto& Jk = out.J_k;
  Jk.block<3, 3>(rP, kP) = -RkT;
  Jk.block<3, 3>(rP, kV) = -RkT * dt;
  Jk.block<3, 3>(rP, kTheta) = skew(RkT * xp);
  Jk.block<3, 3>(rP, kBa) = -p.J_alpha_ba;
  Jk.block<3, 3>(rP, kBw) = -p.J_alpha_bw;

  Jk.block<3, 3>(rV, kV) = -RkT;
  Jk.block<3, 3>(rV, kTheta) = skew(RkT * xv);
  Jk.block<3, 3>(rV, kBa) = -p.J_beta_ba;
  Jk.block<3, 3>(rV, kBw) = -p.J_beta_bw;

  Jk.block<3, 3>(rQ, kTheta) = -q_right * Rrel.transpose();
  Jk.block<3, 3>(rQ, kBw) = q_left_neg * Jr_gamma * p.J_gamma_bw;

  Jk.block<3, 3>(rO, kP) = -RkT;
  Jk.block<3, 3>(rO, kTheta) = skew(RkT * (sk1.p - sk.p + Rk1 * ext.pbo));
  Jk.block<3, 3>(rO, kBw) = -p.J_eta_bw;

  Jk.block<3, 3>(rBa, kBa) = -Mat3::Identity();
  Jk.block<3, 3>(rBw, kBw) = -Mat3::Identity();

  auto& Jk1 = out.J_k1;
  Jk1.block<3, 3>(rP, kP) = RkT;
  Jk1.block<3, 3>(rV, kV) = RkT;
  Jk1.block<3, 3>(rQ, kTheta) = q_right;
  Jk1.block<3, 3>(rO, kP) = RkT;
  Jk1.block<3, 3>(rO, kTheta) = -Rrel * skew(ext.pbo);
  Jk1.block<3, 3>(rBa, kBa) = Mat3::Identity();
  Jk1.block<3, 3>(rBw, kBw) = Mat3::Identity();

  out.J_Rbo.block<3, 3>(rO, 0) = p.eta_basis * Rbo * skew(Vec3::UnitX());
  out.J_pbo.block<3, 3>(rO, 0) = Rrel - Mat3::Identity();

  out.sqrt_info = sqrt_information(p.cov);
  return out;
}

RollPriorResult roll_prior_residual(const Quat& Rbo, const Quat& ref, double weight) {
  if (weight < 0.0) throw FactorError("roll prior weight must be non-negative");
  const Vec3 d = log_quat(ref.conjugate() * Rbo);
  const double s = std::sqrt(weight);
  RollPriorResult out;
  out.residual = s * d.x();
  out.J = s * right_jacobian_inv(d).row(0);
  return out;
}

}  // namespace bvio
