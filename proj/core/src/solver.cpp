#include "bvio/solver.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <json.hpp>
#include <limits>

namespace bvio {

namespace {

constexpr int kExtDim = 12;
constexpr int kRbcOff = 0, kPbcOff = 3, kRboOff = 6, kPboOff = 9;

struct Seg {
  int col;
  int width;
};

struct BlockSpan {
  BlockRef ref;
  int col;
  int dim;
};

std::vector<BlockSpan> block_spans(const Window& w) {
  std::vector<BlockSpan> out;
  int col = 0;
  for (const auto& f : w.frames) {
    out.push_back({{BlockKind::kState, f.id}, col, 15});
    col += 15;
  }
  for (BlockKind k : {BlockKind::kRbc, BlockKind::kPbc, BlockKind::kRbo, BlockKind::kPbo}) {
    out.push_back({{k, 0}, col, 3});
    col += 3;
  }
  for (const auto& [id, lm] : w.landmarks) {
    out.push_back({{BlockKind::kLandmark, id}, col, 1});
    col += 1;
  }
  return out;
}

int ext_col(const Window& w, BlockKind k) {
  const int base = 15 * static_cast<int>(w.frames.size());
  switch (k) {
    case BlockKind::kRbc:
      return base + kRbcOff;
    case BlockKind::kPbc:
      return base + kPbcOff;
    case BlockKind::kRbo:
      return base + kRboOff;
    case BlockKind::kPbo:
      return base + kPboOff;
    default:
      throw SolverError("not an extrinsic block");
  }
}

template <typename DerivedJ, typename DerivedR>
void accumulate(MatX& H, VecX& g, const std::vector<Seg>& segs, const Eigen::MatrixBase<DerivedJ>& J,
                const Eigen::MatrixBase<DerivedR>& r) {
  int a_off = 0;
  for (const Seg& a : segs) {
    g.segment(a.col, a.width).noalias() += J.middleCols(a_off, a.width).transpose() * r;
    int b_off = 0;
    for (const Seg& b : segs) {
      H.block(a.col, b.col, a.width, b.width).noalias() +=
          J.middleCols(a_off, a.width).transpose() * J.middleCols(b_off, b.width);
      b_off += b.width;
    }
    a_off += a.width;
  }
}

bool touches(const FactorSelection& sel, FrameId id) {
  return sel.touching.empty() || std::find(sel.touching.begin(), sel.touching.end(), id) != sel.touching.end();
}

// Robust weight and cost for a whitened residual of squared norm s.
void huber(double s, double delta, double& weight, double& cost) {
  if (delta <= 0.0 || s <= delta * delta) {
    weight = 1.0;
    cost = s;
    return;
  }
  const double n = std::sqrt(s);
  weight = delta / n;
  cost = 2.0 * delta * n - delta * delta;
}

// Current values for every block the prior refers to.
PriorEval eval_prior(const Window& w, const MarginalPrior& prior) {
  std::vector<BlockValue> values;
  values.reserve(prior.lin_point.size());
  for (const auto& b : prior.lin_point) {
    bool found = false;
    values.push_back(w.block_value(b.ref, &found));
    if (!found) throw SolverError("marginal prior refers to a block that is not in the window");
  }
  auto lookup = [&values](const BlockRef& ref) -> const BlockValue* {
    for (const auto& v : values) {
      if (v.ref == ref) return &v;
    }
    return nullptr;
  };
  return marginal_residual(prior, lookup);
}

Seg prior_seg(const Window& w, const BlockRef& ref) {
  switch (ref.kind) {
    case BlockKind::kState:
      return {15 * w.index_of(ref.id), 15};
    case BlockKind::kLandmark:
      throw SolverError("landmark blocks in a marginal prior are not supported");
    default:
      return {ext_col(w, ref.kind), 3};
  }
}

void apply_landmark_reanchor(Window& w, FrameId removed, const MotionState& removed_state) {
  for (auto it = w.landmarks.begin(); it != w.landmarks.end();) {
    WindowLandmark& wl = it->second;
    wl.obs.erase(removed);
    bool keep = wl.obs.size() >= 2;
    if (keep && wl.lm.anchor_frame == removed) {
      FrameId best = wl.obs.begin()->first;
      for (const auto& [fid, uv] : wl.obs) {
        const auto d = std::llabs(fid - removed);
        const auto db = std::llabs(best - removed);
        if (d < db || (d == db && fid > best)) best = fid;
      }
      keep = reanchor_landmark(wl, best, removed_state, w.frame(best).state, w.ext, w.camera);
    }
    it = keep ? std::next(it) : w.landmarks.erase(it);
  }
}

// Eliminate the flagged blocks from (H, g) and factor the rest into a prior.
MarginalPrior schur_to_prior(const Window& w, const NormalEquations& ne, const std::vector<BlockSpan>& spans,
                             const std::vector<bool>& eliminate) {
  std::vector<int> l_idx, m_idx, r_idx;
  std::vector<BlockValue> retained;
  for (std::size_t b = 0; b < spans.size(); ++b) {
    const auto& s = spans[b];
    const bool touched = ne.H.block(0, s.col, ne.H.rows(), s.dim).cwiseAbs().maxCoeff() > 0.0;
    if (!touched) continue;
    if (eliminate[b]) {
      auto& dst = s.ref.kind == BlockKind::kLandmark ? l_idx : m_idx;
      for (int k = 0; k < s.dim; ++k) dst.push_back(s.col + k);
    } else {
      if (s.ref.kind == BlockKind::kLandmark) throw SolverError("marginalization would retain a landmark block");
      for (int k = 0; k < s.dim; ++k) r_idx.push_back(s.col + k);
      bool found = false;
      retained.push_back(w.block_value(s.ref, &found));
    }
  }
  MarginalPrior prior;
  if (r_idx.empty()) return prior;

  // Landmark blocks are scalar and mutually uncoupled, so they go first by
  // division; the remaining eliminated blocks use a pseudo-inverse.
  std::vector<int> x_idx = m_idx;
  x_idx.insert(x_idx.end(), r_idx.begin(), r_idx.end());
  const int nm = static_cast<int>(m_idx.size());
  const int nr = static_cast<int>(r_idx.size());
  const int nx = nm + nr;
  const int nl = static_cast<int>(l_idx.size());
  MatX Hxx(nx, nx), Hxl(nx, nl);
  VecX gx(nx), hll(nl), gl(nl);
  for (int i = 0; i < nx; ++i) {
    gx(i) = ne.g(x_idx[i]);
    for (int j = 0; j < nx; ++j) Hxx(i, j) = ne.H(x_idx[i], x_idx[j]);
    for (int j = 0; j < nl; ++j) Hxl(i, j) = ne.H(x_idx[i], l_idx[j]);
  }
  for (int j = 0; j < nl; ++j) {
    hll(j) = ne.H(l_idx[j], l_idx[j]);
    gl(j) = ne.g(l_idx[j]);
  }
  if (nl > 0) {
    const double ltol = 1e-12 * std::max(1.0, hll.cwiseAbs().maxCoeff());
    VecX inv = VecX::Zero(nl);
    for (int j = 0; j < nl; ++j) {
      if (hll(j) > ltol) inv(j) = 1.0 / hll(j);
    }
    const MatX K = Hxl * inv.asDiagonal();
    Hxx.noalias() -= K * Hxl.transpose();
    gx.noalias() -= K * gl;
  }

  MatX Hs = Hxx.bottomRightCorner(nr, nr);
  VecX gs = gx.tail(nr);
  if (nm > 0) {
    const MatX Hmm = Hxx.topLeftCorner(nm, nm);
    const MatX Hrm = Hxx.bottomLeftCorner(nr, nm);
    const VecX gm = gx.head(nm);
    Eigen::SelfAdjointEigenSolver<MatX> es(0.5 * (Hmm + Hmm.transpose()));
    const VecX& lam = es.eigenvalues();
    const double tol = 1e-12 * std::max(1.0, lam.cwiseAbs().maxCoeff());
    VecX inv = VecX::Zero(nm);
    for (int i = 0; i < nm; ++i) {
      if (lam(i) > tol) inv(i) = 1.0 / lam(i);
    }
    const MatX Hmm_pinv = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
    const MatX K = Hrm * Hmm_pinv;
    Hs.noalias() -= K * Hrm.transpose();
    gs.noalias() -= K * gm;
  }
  Hs = 0.5 * (Hs + Hs.transpose());

  // Factor in a Jacobi-scaled basis; the eigenvalues span many decades and the
  // weak directions lose all precision otherwise.
  VecX scale(nr);
  for (int i = 0; i < nr; ++i) scale(i) = Hs(i, i) > 0.0 ? 1.0 / std::sqrt(Hs(i, i)) : 1.0;
  const MatX Hn = scale.asDiagonal() * Hs * scale.asDiagonal();
  Eigen::SelfAdjointEigenSolver<MatX> es(0.5 * (Hn + Hn.transpose()));
  std::vector<int> keep;
  for (int i = 0; i < nr; ++i) {
    if (es.eigenvalues()(i) > 1e-10) keep.push_back(i);
  }
  const int nk = static_cast<int>(keep.size());
  prior.J = MatX::Zero(nk, nr);
  prior.r = VecX::Zero(nk);
  const VecX gn = scale.cwiseProduct(gs);
  const VecX unscale = scale.cwiseInverse();
  for (int k = 0; k < nk; ++k) {
    const double lam = es.eigenvalues()(keep[k]);
    const VecX v = es.eigenvectors().col(keep[k]);
    prior.J.row(k) = std::sqrt(lam) * v.cwiseProduct(unscale).transpose();
    prior.r(k) = -v.dot(gn) / std::sqrt(lam);
  }
  prior.lin_point = std::move(retained);
  return prior;
}

void apply_step(Window& w, const std::vector<int>& free_cols, const VecX& hx, const std::vector<int>& lm_cols_active,
                const VecX& hl, const NormalEquations& ne) {
  const int nfull_x = ne.landmark_offset;
  VecX dx = VecX::Zero(nfull_x);
  for (std::size_t i = 0; i < free_cols.size(); ++i) dx(free_cols[i]) = hx(static_cast<Eigen::Index>(i));
  for (std::size_t i = 0; i < w.frames.size(); ++i) {
    const Vec15 d = dx.segment<15>(15 * static_cast<Eigen::Index>(i));
    if (d.isZero(0.0)) continue;
    w.frames[i].state = boxplus_state(w.frames[i].state, d);
  }
  if (!w.policy.fix_extrinsics) {
    const int e = ne.ext_offset;
    w.ext.Rbc = boxplus_rot(w.ext.Rbc, dx.segment<3>(e + kRbcOff));
    w.ext.pbc += dx.segment<3>(e + kPbcOff);
    w.ext.Rbo = boxplus_rot(w.ext.Rbo, dx.segment<3>(e + kRboOff));
    w.ext.pbo += dx.segment<3>(e + kPboOff);
  }
  for (std::size_t i = 0; i < lm_cols_active.size(); ++i) {
    const LandmarkId id = ne.landmark_ids[lm_cols_active[i]];
    double& lam = w.landmarks.at(id).lm.inv_depth;
    lam = std::max(kMinInvDepth, lam + hl(static_cast<Eigen::Index>(i)));
  }
}

}  // namespace

void ParamPolicy::validate() const {
  if (zero_accel_bias && !fix_accel_bias) throw SolverError("zero_accel_bias requires fix_accel_bias");
}

int Window::index_of(FrameId id) const {
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].id == id) return static_cast<int>(i);
  }
  return -1;
}

const WindowFrame& Window::frame(FrameId id) const {
  const int i = index_of(id);
  if (i < 0) throw SolverError("frame " + std::to_string(id) + " is not in the window");
  return frames[i];
}

WindowFrame& Window::frame(FrameId id) {
  const int i = index_of(id);
  if (i < 0) throw SolverError("frame " + std::to_string(id) + " is not in the window");
  return frames[i];
}

void Window::check_invariants() const {
  if (frames.size() < 2) throw SolverError("window needs at least two frames");
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (frames[i].id <= frames[i - 1].id) throw SolverError("window frames are not in ascending order");
  }
  if (preints.size() + 1 != frames.size()) throw SolverError("each consecutive frame pair needs one pre-integration");
  for (const auto& [id, wl] : landmarks) {
    if (wl.obs.size() < 2) throw SolverError("landmark " + std::to_string(id) + " has fewer than two observations");
    if (!wl.obs.count(wl.lm.anchor_frame)) throw SolverError("landmark anchor observation missing");
    for (const auto& [fid, uv] : wl.obs) {
      if (index_of(fid) < 0) throw SolverError("landmark observed in a frame outside the window");
    }
  }
  policy.validate();
}

BlockValue Window::block_value(const BlockRef& ref, bool* found) const {
  BlockValue v;
  v.ref = ref;
  bool ok = true;
  switch (ref.kind) {
    case BlockKind::kState: {
      const int i = index_of(ref.id);
      ok = i >= 0;
      if (ok) v.state = frames[i].state;
      break;
    }
    case BlockKind::kRbc:
      v.rot = ext.Rbc;
      break;
    case BlockKind::kPbc:
      v.vec = ext.pbc;
      break;
    case BlockKind::kRbo:
      v.rot = ext.Rbo;
      break;
    case BlockKind::kPbo:
      v.vec = ext.pbo;
      break;
    case BlockKind::kLandmark: {
      auto it = landmarks.find(ref.id);
      ok = it != landmarks.end();
      if (ok) v.scalar = it->second.lm.inv_depth;
      break;
    }
  }
  if (found) *found = ok;
  return v;
}

void reintegrate(WindowPreint& wp, const Vec3& ba, const Vec3& bw, const Quat& Rbo, const ImuNoise& noise) {
  wp.p = integrate(wp.imu, wp.wheel, ba, bw, Rbo, noise);
}

NormalEquations build_normal_equations(const Window& w, const SolverConfig& cfg, const FactorSelection& sel) {
  const int nf = static_cast<int>(w.frames.size());
  NormalEquations ne;
  ne.frame_dim = 15 * nf;
  ne.ext_offset = ne.frame_dim;
  ne.landmark_offset = ne.frame_dim + kExtDim;
  for (const auto& [id, lm] : w.landmarks) ne.landmark_ids.push_back(id);
  const int n = ne.landmark_offset + static_cast<int>(ne.landmark_ids.size());
  ne.H = MatX::Zero(n, n);
  ne.g = VecX::Zero(n);

  const int e = ne.ext_offset;
  if (sel.preints) {
    for (int i = 0; i + 1 < nf; ++i) {
      if (!touches(sel, w.frames[i].id) && !touches(sel, w.frames[i + 1].id)) continue;
      const ImuOdoResult res =
          imuodo_residual(w.frames[i].state, w.frames[i + 1].state, w.preints[i].p, w.ext, w.gravity_w);
      Eigen::Matrix<double, 18, 36> J;
      J << res.sqrt_info * res.J_k, res.sqrt_info * res.J_k1, res.sqrt_info * res.J_Rbo, res.sqrt_info * res.J_pbo;
      const Vec18 r = res.sqrt_info * res.residual;
      ne.cost += r.squaredNorm();
      accumulate(ne.H, ne.g, {{15 * i, 15}, {15 * (i + 1), 15}, {e + kRboOff, 3}, {e + kPboOff, 3}}, J, r);
    }
  }

  if (sel.reprojection) {
    const double inv_sigma = 1.0 / cfg.pixel_sigma;
    for (std::size_t l = 0; l < ne.landmark_ids.size(); ++l) {
      const WindowLandmark& wl = w.landmarks.at(ne.landmark_ids[l]);
      if (!touches(sel, wl.lm.anchor_frame)) continue;
      const int ia = w.index_of(wl.lm.anchor_frame);
      const int lcol = ne.landmark_offset + static_cast<int>(l);
      for (const auto& [fid, uv] : wl.obs) {
        if (fid == wl.lm.anchor_frame) continue;
        const int ij = w.index_of(fid);
        const ReprojResult res =
            reproj_residual(w.frames[ia].state, w.frames[ij].state, fid, w.ext, w.camera, wl.lm, uv);
        if (!res.valid) continue;
        Vec2 r = res.residual * inv_sigma;
        double weight, cost;
        huber(r.squaredNorm(), cfg.huber_delta, weight, cost);
        ne.cost += cost;
        const double s = inv_sigma * std::sqrt(weight);
        r *= std::sqrt(weight);
        Eigen::Matrix<double, 2, 19> J;
        J << res.J_pose_i.leftCols<3>(), res.J_pose_i.rightCols<3>(), res.J_pose_j.leftCols<3>(),
            res.J_pose_j.rightCols<3>(), res.J_Rbc, res.J_pbc, res.J_inv_depth;
        J *= s;
        accumulate(ne.H, ne.g,
                   {{15 * ia + state_offset::kP, 3},
                    {15 * ia + state_offset::kTheta, 3},
                    {15 * ij + state_offset::kP, 3},
                    {15 * ij + state_offset::kTheta, 3},
                    {e + kRbcOff, 3},
                    {e + kPbcOff, 3},
                    {lcol, 1}},
                   J, r);
      }
    }
  }

  if (sel.prior && !w.prior.empty()) {
    const PriorEval pe = eval_prior(w, w.prior);
    ne.cost += pe.r.squaredNorm();
    std::vector<Seg> segs;
    for (const auto& b : w.prior.lin_point) segs.push_back(prior_seg(w, b.ref));
    accumulate(ne.H, ne.g, segs, pe.J, pe.r);
  }

  if (sel.roll_prior && cfg.rbo_roll_weight > 0.0 && !w.policy.fix_extrinsics) {
    const RollPriorResult rp = roll_prior_residual(w.ext.Rbo, w.rbo_roll_ref, cfg.rbo_roll_weight);
    Eigen::Matrix<double, 1, 1> r;
    r << rp.residual;
    ne.cost += rp.residual * rp.residual;
    accumulate(ne.H, ne.g, {{e + kRboOff, 3}}, rp.J, r);
  }
  return ne;
}

TermCosts evaluate_costs(const Window& w, const SolverConfig& cfg) {
  TermCosts c;
  for (std::size_t i = 0; i + 1 < w.frames.size(); ++i) {
    const ImuOdoResult res =
        imuodo_residual(w.frames[i].state, w.frames[i + 1].state, w.preints[i].p, w.ext, w.gravity_w);
    c.imu_odometer += (res.sqrt_info * res.residual).squaredNorm();
  }
  const double inv_sigma = 1.0 / cfg.pixel_sigma;
  for (const auto& [id, wl] : w.landmarks) {
    const int ia = w.index_of(wl.lm.anchor_frame);
    for (const auto& [fid, uv] : wl.obs) {
      if (fid == wl.lm.anchor_frame) continue;
      const ReprojResult res =
          reproj_residual(w.frames[ia].state, w.frame(fid).state, fid, w.ext, w.camera, wl.lm, uv);
      if (!res.valid) continue;
      double weight, cost;
      huber((res.residual * inv_sigma).squaredNorm(), cfg.huber_delta, weight, cost);
      c.reprojection += cost;
    }
  }
  if (!w.prior.empty()) c.prior = eval_prior(w, w.prior).r.squaredNorm();
  if (cfg.rbo_roll_weight > 0.0 && !w.policy.fix_extrinsics) {
    const double r = roll_prior_residual(w.ext.Rbo, w.rbo_roll_ref, cfg.rbo_roll_weight).residual;
    c.roll_prior = r * r;
  }
  return c;
}

void schur_solve(const MatX& Hxx, const MatX& Hxl, const VecX& hll, const VecX& gx, const VecX& gl, VecX& hx,
                 VecX& hl) {
  const Eigen::Index nx = Hxx.rows();
  const VecX hll_inv = hll.cwiseInverse();
  MatX S = Hxx;
  S.noalias() -= Hxl * hll_inv.asDiagonal() * Hxl.transpose();
  S = 0.5 * (S + S.transpose());
  const VecX gs = gx - Hxl * hll_inv.cwiseProduct(gl);
  const double dmax = nx > 0 ? std::max(1.0, S.diagonal().cwiseAbs().maxCoeff()) : 1.0;
  bool solved = nx == 0;
  hx = VecX::Zero(nx);
  for (int attempt = 0; attempt < 10 && !solved; ++attempt) {
    const double damping = dmax * 1e-14 * std::pow(10.0, attempt);
    Eigen::LLT<MatX> llt(S + damping * MatX::Identity(nx, nx));
    if (llt.info() != Eigen::Success) continue;
    hx = llt.solve(-gs);
    solved = hx.allFinite();
  }
  if (!solved) throw SolverError("normal equations are indefinite after damping");
  hl = -(gl + Hxl.transpose() * hx).cwiseProduct(hll_inv);
}

OptimizeStats optimize(Window& w, const SolverConfig& cfg) {
  w.check_invariants();
  OptimizeStats stats;
  if (w.policy.zero_accel_bias) {
    for (auto& f : w.frames) f.state.ba.setZero();
  }
  for (std::size_t i = 0; i < w.preints.size(); ++i) {
    const MotionState& s = w.frames[i].state;
    if (bias_correct(w.preints[i].p, s.ba, s.bw, w.ext.Rbo, cfg.limits).reintegrate_required) {
      reintegrate(w.preints[i], s.ba, s.bw, w.ext.Rbo, cfg.noise);
      ++stats.reintegrations;
    }
  }

  std::vector<int> free_cols;
  const auto& fixed_pose = w.policy.fixed_pose_frames;
  for (std::size_t i = 0; i < w.frames.size(); ++i) {
    const bool pose_fixed = std::find(fixed_pose.begin(), fixed_pose.end(), w.frames[i].id) != fixed_pose.end();
    for (int k = 0; k < 15; ++k) {
      const bool is_ba = k >= state_offset::kBa && k < state_offset::kBa + 3;
      const bool is_pose = k < state_offset::kV || (k >= state_offset::kTheta && k < state_offset::kBa);
      if (is_ba && w.policy.fix_accel_bias) continue;
      if (is_pose && pose_fixed) continue;
      free_cols.push_back(15 * static_cast<int>(i) + k);
    }
  }
  if (!w.policy.fix_extrinsics) {
    const int e = 15 * static_cast<int>(w.frames.size());
    for (int k = 0; k < kExtDim; ++k) free_cols.push_back(e + k);
  }
  const int nx = static_cast<int>(free_cols.size());

  double cost = evaluate_costs(w, cfg).total();
  stats.initial_cost = cost;
  double radius = cfg.initial_radius;

  for (int it = 0; it < cfg.max_iterations; ++it) {
    ++stats.iterations;
    const NormalEquations ne = build_normal_equations(w, cfg);

    std::vector<int> lm_active;
    for (std::size_t l = 0; l < ne.landmark_ids.size(); ++l) {
      if (ne.H(ne.landmark_offset + l, ne.landmark_offset + l) > 1e-12) lm_active.push_back(static_cast<int>(l));
    }
    const int nl = static_cast<int>(lm_active.size());

    MatX Hxx(nx, nx), Hxl(nx, nl);
    VecX gx(nx), gl(nl), hll(nl);
    for (int i = 0; i < nx; ++i) {
      gx(i) = ne.g(free_cols[i]);
      for (int j = 0; j < nx; ++j) Hxx(i, j) = ne.H(free_cols[i], free_cols[j]);
      for (int j = 0; j < nl; ++j) Hxl(i, j) = ne.H(free_cols[i], ne.landmark_offset + lm_active[j]);
    }
    for (int j = 0; j < nl; ++j) {
      const int c = ne.landmark_offset + lm_active[j];
      gl(j) = ne.g(c);
      hll(j) = ne.H(c, c);
    }

    VecX hx_gn, hl_gn;
    schur_solve(Hxx, Hxl, hll, gx, gl, hx_gn, hl_gn);

    const auto quad = [&](const VecX& ax, const VecX& al) {
      return ax.dot(Hxx * ax) + 2.0 * ax.dot(Hxl * al) + al.dot(hll.cwiseProduct(al));
    };
    const double gg = gx.squaredNorm() + gl.squaredNorm();
    const double gn_norm = std::sqrt(hx_gn.squaredNorm() + hl_gn.squaredNorm());

    VecX hx, hl;
    if (gn_norm <= radius) {
      hx = hx_gn;
      hl = hl_gn;
    } else {
      const double gHg = quad(gx, gl);
      const double alpha = gHg > 0.0 ? gg / gHg : 0.0;
      const double sd_norm = alpha * std::sqrt(gg);
      if (gHg <= 0.0 || sd_norm >= radius) {
        const double s = radius / std::sqrt(std::max(gg, std::numeric_limits<double>::min()));
        hx = -s * gx;
        hl = -s * gl;
      } else {
        const VecX ax = -alpha * gx, al = -alpha * gl;
        const VecX bx = hx_gn - ax, bl = hl_gn - al;
        const double a2 = bx.squaredNorm() + bl.squaredNorm();
        const double b1 = ax.dot(bx) + al.dot(bl);
        const double c0 = ax.squaredNorm() + al.squaredNorm() - radius * radius;
        const double beta = (-b1 + std::sqrt(std::max(0.0, b1 * b1 - a2 * c0))) / a2;
        hx = ax + beta * bx;
        hl = al + beta * bl;
      }
    }
    const double step_norm = std::sqrt(hx.squaredNorm() + hl.squaredNorm());
    if (step_norm < cfg.step_tol) {
      stats.converged = true;
      break;
    }
    const double predicted = -(2.0 * (gx.dot(hx) + gl.dot(hl)) + quad(hx, hl));

    Window trial = w;
    apply_step(trial, free_cols, hx, lm_active, hl, ne);
    const double trial_cost = evaluate_costs(trial, cfg).total();
    if (trial_cost < cost) {
      const double rho = predicted > 0.0 ? (cost - trial_cost) / predicted : 0.0;
      const double rel = (cost - trial_cost) / std::max(cost, std::numeric_limits<double>::min());
      w = std::move(trial);
      cost = trial_cost;
      if (rho > 0.75) {
        radius = std::max(radius, cfg.radius_grow * step_norm);
      } else if (rho < 0.25) {
        radius *= cfg.radius_shrink;
      }
      if (rel < cfg.rel_cost_tol) {
        stats.converged = true;
        break;
      }
    } else {
      radius = cfg.radius_shrink * std::min(radius, step_norm);
      if (radius < cfg.step_tol) {
        stats.converged = true;
        break;
      }
    }
  }
  stats.terms = evaluate_costs(w, cfg);
  stats.final_cost = stats.terms.total();
  return stats;
}

MarginalPrior marginalize(const Window& w, FrameId drop, const SolverConfig& cfg) {
  const int idx = w.index_of(drop);
  if (idx < 0) throw SolverError("frame " + std::to_string(drop) + " is not in the window");
  if (idx != 0 && idx + 1 != static_cast<int>(w.frames.size())) {
    throw SolverError("only the oldest or newest frame can be marginalized");
  }
  FactorSelection sel;
  sel.touching = {drop};
  sel.roll_prior = false;
  NormalEquations ne = build_normal_equations(w, cfg, sel);
  const auto spans = block_spans(w);
  std::vector<bool> elim(spans.size(), false);
  for (std::size_t b = 0; b < spans.size(); ++b) {
    const auto& ref = spans[b].ref;
    if (ref.kind == BlockKind::kState && ref.id == drop) elim[b] = true;
    if (ref.kind == BlockKind::kLandmark && w.landmarks.at(ref.id).lm.anchor_frame == drop) elim[b] = true;
  }
  return schur_to_prior(w, ne, spans, elim);
}

bool reanchor_landmark(WindowLandmark& wl, FrameId new_anchor, const MotionState& old_anchor_state,
                       const MotionState& new_anchor_state, const Extrinsics& ext, const CameraModel& cam) {
  const Vec3 pw = landmark_world(old_anchor_state, ext, cam, wl.lm);
  const Vec3 pb = new_anchor_state.q.conjugate() * (pw - new_anchor_state.p);
  const Vec3 pc = ext.Rbc.conjugate() * (pb - ext.pbc);
  if (pc.z() <= kMinDepth) return false;
  wl.lm.anchor_frame = new_anchor;
  wl.lm.first_obs = wl.obs.at(new_anchor);
  wl.lm.inv_depth = 1.0 / pc.z();
  return true;
}

void marginalize_frame(Window& w, FrameId drop, const SolverConfig& cfg) {
  MarginalPrior prior = marginalize(w, drop, cfg);
  const int idx = w.index_of(drop);
  const MotionState dropped = w.frames[idx].state;
  w.frames.erase(w.frames.begin() + idx);
  if (!w.preints.empty()) {
    w.preints.erase(idx == 0 ? w.preints.begin() : w.preints.end() - 1);
  }
  apply_landmark_reanchor(w, drop, dropped);
  w.prior = std::move(prior);
}

void discard_frame(Window& w, FrameId id, const SolverConfig& cfg) {
  const int idx = w.index_of(id);
  if (idx <= 0 || idx + 1 >= static_cast<int>(w.frames.size())) {
    throw SolverError("only interior frames can be discarded");
  }
  if (w.prior.involves({BlockKind::kState, id})) {
    FactorSelection sel;
    sel.preints = false;
    sel.reprojection = false;
    sel.roll_prior = false;
    const NormalEquations ne = build_normal_equations(w, cfg, sel);
    const auto spans = block_spans(w);
    std::vector<bool> elim(spans.size(), false);
    for (std::size_t b = 0; b < spans.size(); ++b) {
      elim[b] = spans[b].ref.kind == BlockKind::kState && spans[b].ref.id == id;
    }
    w.prior = schur_to_prior(w, ne, spans, elim);
  }

  WindowPreint merged;
  const WindowPreint& a = w.preints[idx - 1];
  const WindowPreint& b = w.preints[idx];
  merged.imu = a.imu;
  merged.imu.insert(merged.imu.end(), b.imu.begin() + 1, b.imu.end());
  merged.wheel = a.wheel;
  for (const auto& s : b.wheel) {
    if (s.t > merged.wheel.back().t) merged.wheel.push_back(s);
  }
  const MotionState& s0 = w.frames[idx - 1].state;
  reintegrate(merged, s0.ba, s0.bw, w.ext.Rbo, cfg.noise);

  const MotionState removed = w.frames[idx].state;
  w.preints[idx - 1] = std::move(merged);
  w.preints.erase(w.preints.begin() + idx);
  w.frames.erase(w.frames.begin() + idx);
  apply_landmark_reanchor(w, id, removed);
}

bool bound_marginal_prior(MarginalPrior& prior, double marg_cost, double total_cost, const BoundConfig& cfg) {
  if (prior.empty() || total_cost <= 0.0) return false;
  if (marg_cost / total_cost <= cfg.ratio) return false;
  prior.r *= cfg.mu;
  prior.J *= cfg.mu;
  return true;
}

bool is_keyframe(double parallax_px, int tracked, const KeyframeConfig& cfg) {
  return parallax_px > cfg.min_parallax_px || tracked < cfg.min_tracked;
}

double mean_parallax(const std::vector<FeatureObservation>& a, const std::vector<FeatureObservation>& b,
                     int* common) {
  std::map<LandmarkId, Vec2> index;
  for (const auto& o : a) index[o.landmark_id] = o.uv;
  double sum = 0.0;
  int n = 0;
  for (const auto& o : b) {
    auto it = index.find(o.landmark_id);
    if (it == index.end()) continue;
    sum += (o.uv - it->second).norm();
    ++n;
  }
  if (common) *common = n;
  return n > 0 ? sum / n : 0.0;
}

std::string stats_json(const Window& w, const OptimizeStats& stats, double marg_ratio) {
  nlohmann::json j;
  std::vector<FrameId> ids;
  for (const auto& f : w.frames) ids.push_back(f.id);
  j["frames"] = ids;
  j["costs"] = {{"reprojection", stats.terms.reprojection},
                {"imu_odometer", stats.terms.imu_odometer},
                {"prior", stats.terms.prior},
                {"roll_prior", stats.terms.roll_prior},
                {"total", stats.final_cost}};
  j["iterations"] = stats.iterations;
  j["marg_ratio"] = marg_ratio;
  return j.dump();
}

}  // namespace bvio
