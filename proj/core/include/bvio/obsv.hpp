#pragma once

#include <stdexcept>
#include <vector>

#include "bvio/solver.hpp"

namespace bvio {

class ObsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Gauss-Newton Hessian of a window over all local parameters, including
/// fixed blocks. Columns follow NormalEquations: 15 per frame, then Rbc, pbc,
/// Rbo, pbo, then one per landmark.
struct WindowHessian {
  MatX H;
  int frame_count = 0;
  int ext_offset = 0;
  int landmark_offset = 0;

  int rbc_col() const { return ext_offset; }
  int pbc_col() const { return ext_offset + 3; }
  int rbo_col() const { return ext_offset + 6; }
  int pbo_col() const { return ext_offset + 9; }
};

/// `include_prior` adds the marginal prior and the Rbo roll prior.
WindowHessian assemble_hessian(const Window& w, bool include_prior, const SolverConfig& cfg = {});

/// Mean body-frame direction of travel over frame pairs. Throws ObsvError when
/// the window moves less than 0.1 m.
Vec3 driving_direction(const Window& w);

/// Unit vector on the Rbc block for a roll about the body-frame driving
/// direction.
VecX roll_direction(const WindowHessian& h, const Extrinsics& ext, const Vec3& driving_dir);

struct RollRatio {
  double ratio = 0.0;
  double eigenvalue = 0.0;
  double cosine = 0.0;
  VecX eigenvector;
};

/// Eigenvalue of the eigenvector closest to the roll direction divided by the
/// largest eigenvalue. Throws ObsvError for a zero Hessian.
RollRatio roll_ratio(const WindowHessian& h, const Extrinsics& ext, const Vec3& driving_dir);

/// pbo (3), pbc (3) and the Rbc roll about the driving direction, as unit
/// vectors. Throws ObsvError unless every inter-frame rotation in the window
/// is below 1e-6 rad.
std::vector<VecX> analytic_null_directions(const Window& w, const WindowHessian& h, const Vec3& driving_dir);

/// Global translation (3) and yaw about gravity (1), orthonormalized.
std::vector<VecX> gauge_directions(const Window& w, const WindowHessian& h);

struct ObsvConfig {
  bool include_prior = false;
  double small_eig_rel = 1e-9;
};

struct ObsvReport {
  VecX eigenvalues;  // ascending
  double roll_ratio = 0.0;
  int small_eig_count = 0;
  /// Small eigenvalues left after removing the gauge freedoms the factors do
  /// not fix (4 without a prior, else 0).
  int non_gauge_small_count = 0;
  /// Squared norm of each analytic direction's projection onto the
  /// small-eigenvalue subspace, in analytic_null_directions order.
  std::vector<double> direction_overlaps;
  double max_eig_residual = 0.0;  // max ||Hv - lambda v|| / lambda_max
  double eig_ms = 0.0;
  double turning_ms = 0.0;
};

ObsvReport analyze_window(const Window& w, const ObsvConfig& cfg = {}, const SolverConfig& solver = {});

}  // namespace bvio
