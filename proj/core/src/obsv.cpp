#include "bvio/obsv.hpp"

#include <Eigen/Eigenvalues>
#include <chrono>
#include <cmath>

#include "bvio/engine.hpp"

namespace bvio {

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

bool is_straight(const Window& w) {
  for (std::size_t i = 1; i < w.frames.size(); ++i) {
    if (log_quat(w.frames[i - 1].state.q.conjugate() * w.frames[i].state.q).norm() >= 1e-6) return false;
  }
  return true;
}

std::vector<VecX> null_directions(const WindowHessian& h, const Extrinsics& ext, const Vec3& d) {
  const int n = static_cast<int>(h.H.rows());
  std::vector<VecX> out;
  for (int col : {h.pbo_col(), h.pbc_col()}) {
    for (int k = 0; k < 3; ++k) {
      VecX v = VecX::Zero(n);
      v(col + k) = 1.0;
      out.push_back(v);
    }
  }
  out.push_back(roll_direction(h, ext, d));
  return out;
}

}  // namespace

WindowHessian assemble_hessian(const Window& w, bool include_prior, const SolverConfig& cfg) {
  FactorSelection sel;
  sel.prior = include_prior;
  sel.roll_prior = include_prior;
  Window copy = w;
  // Extrinsic columns must carry their factors even while the estimator holds
  // them fixed.
  copy.policy.fix_extrinsics = false;
  const NormalEquations ne = build_normal_equations(copy, cfg, sel);
  WindowHessian out;
  out.H = 0.5 * (ne.H + ne.H.transpose());
  out.frame_count = static_cast<int>(w.frames.size());
  out.ext_offset = ne.ext_offset;
  out.landmark_offset = ne.landmark_offset;
  return out;
}

Vec3 driving_direction(const Window& w) {
  if (w.frames.size() < 2) throw ObsvError("driving direction needs at least two frames");
  if ((w.frames.back().state.p - w.frames.front().state.p).norm() <= 0.1) {
    throw ObsvError("window displacement too small for a driving direction");
  }
  Vec3 sum = Vec3::Zero();
  for (std::size_t i = 0; i < w.frames.size(); ++i) {
    for (std::size_t j = i + 1; j < w.frames.size(); ++j) {
      const auto& si = w.frames[i].state;
      const auto& sj = w.frames[j].state;
      const Vec3 dir = sj.q.conjugate() * (sj.p - si.p);
      if (dir.norm() > 1e-9) sum += dir.normalized();
    }
  }
  if (sum.norm() < 1e-12) throw ObsvError("driving direction is undefined");
  return sum.normalized();
}

VecX roll_direction(const WindowHessian& h, const Extrinsics& ext, const Vec3& driving_dir) {
  VecX v = VecX::Zero(h.H.rows());
  v.segment<3>(h.rbc_col()) = (ext.Rbc.conjugate() * driving_dir).normalized();
  return v;
}

RollRatio roll_ratio(const WindowHessian& h, const Extrinsics& ext, const Vec3& driving_dir) {
  if (h.H.size() == 0 || h.H.cwiseAbs().maxCoeff() == 0.0) throw ObsvError("Hessian is zero");
  Eigen::SelfAdjointEigenSolver<MatX> es(h.H);
  const VecX target = roll_direction(h, ext, driving_dir);
  const VecX cosines = (es.eigenvectors().transpose() * target).cwiseAbs();
  int best = 0;
  cosines.maxCoeff(&best);
  RollRatio out;
  out.eigenvalue = es.eigenvalues()(best);
  out.ratio = out.eigenvalue / es.eigenvalues().maxCoeff();
  out.cosine = cosines(best);
  out.eigenvector = es.eigenvectors().col(best);
  return out;
}

std::vector<VecX> analytic_null_directions(const Window& w, const WindowHessian& h, const Vec3& driving_dir) {
  if (!is_straight(w)) throw ObsvError("analytic null directions need a straight-line window");
  return null_directions(h, w.ext, driving_dir);
}

std::vector<VecX> gauge_directions(const Window& w, const WindowHessian& h) {
  const int n = static_cast<int>(h.H.rows());
  MatX G = MatX::Zero(n, 4);
  const Vec3 ez = Vec3::UnitZ();
  for (int f = 0; f < h.frame_count; ++f) {
    const MotionState& s = w.frames[f].state;
    const int c = 15 * f;
    G.block<3, 3>(c + state_offset::kP, 0) = Mat3::Identity();
    G.block<3, 1>(c + state_offset::kP, 3) = ez.cross(s.p);
    G.block<3, 1>(c + state_offset::kV, 3) = ez.cross(s.v);
    G.block<3, 1>(c + state_offset::kTheta, 3) = s.q.conjugate() * ez;
  }
  Eigen::HouseholderQR<MatX> qr(G);
  const MatX Q = qr.householderQ() * MatX::Identity(n, 4);
  std::vector<VecX> out;
  for (int k = 0; k < 4; ++k) out.push_back(Q.col(k));
  return out;
}

ObsvReport analyze_window(const Window& w, const ObsvConfig& cfg, const SolverConfig& solver) {
  ObsvReport rep;
  const WindowHessian h = assemble_hessian(w, cfg.include_prior, solver);
  if (h.H.cwiseAbs().maxCoeff() == 0.0) throw ObsvError("Hessian is zero");

  auto t0 = std::chrono::steady_clock::now();
  Eigen::SelfAdjointEigenSolver<MatX> es(h.H);
  rep.eig_ms = elapsed_ms(t0);
  t0 = std::chrono::steady_clock::now();
  detect_turning(w);
  rep.turning_ms = elapsed_ms(t0);

  rep.eigenvalues = es.eigenvalues();
  const double lmax = rep.eigenvalues.maxCoeff();
  const double thresh = cfg.small_eig_rel * lmax;
  std::vector<int> small;
  for (int i = 0; i < rep.eigenvalues.size(); ++i) {
    if (rep.eigenvalues(i) < thresh) small.push_back(i);
    const double res = (h.H * es.eigenvectors().col(i) - rep.eigenvalues(i) * es.eigenvectors().col(i)).norm();
    rep.max_eig_residual = std::max(rep.max_eig_residual, res / lmax);
  }
  rep.small_eig_count = static_cast<int>(small.size());
  const int gauge = cfg.include_prior && !w.prior.empty() ? 0 : 4;
  rep.non_gauge_small_count = std::max(0, rep.small_eig_count - gauge);

  const Vec3 d = driving_direction(w);
  rep.roll_ratio = roll_ratio(h, w.ext, d).ratio;
  MatX Vs(h.H.rows(), static_cast<int>(small.size()));
  for (std::size_t k = 0; k < small.size(); ++k) Vs.col(k) = es.eigenvectors().col(small[k]);
  for (const VecX& v : null_directions(h, w.ext, d)) {
    rep.direction_overlaps.push_back(std::min(1.0, (Vs.transpose() * v).squaredNorm()));
  }
  return rep;
}

}  // namespace bvio
