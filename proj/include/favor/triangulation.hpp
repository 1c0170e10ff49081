#pragma once

#include <Eigen/Core>

#include <cstdint>

#include "favor/tracking.hpp"

namespace favor {

struct Landmark {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  std::int64_t track_id = 0;
  double mean_reprojection_error = 0.0;  // pixels, over inlier observations
  int iterations = 0;
};

/// Landmark as bearing (a, b) and inverse depth rho in the anchor camera:
/// p_anchor = (a, b, 1) / rho. The anchor is the track's first observation.
struct InverseDepthParam {
  int anchor_frame = 0;
  Eigen::Vector2d bearing = Eigen::Vector2d::Zero();
  double rho = 1.0;

  Eigen::Vector3d vector() const { return {bearing.x(), bearing.y(), rho}; }
};

struct TriangulationConfig {
  double robust_scale = 2.0;  // Geman-McClure c, pixels
  int max_iters = 100;
  double initial_lambda = 1e-3;
  double step_tolerance = 1e-10;
  double cost_tolerance = 1e-12;
};

/// Geman-McClure kernel on a residual norm r: r^2 / (1 + r^2 / c^2).
inline double geman_mcclure(double r, double c) {
  const double r2 = r * r;
  return r2 / (1.0 + r2 / (c * c));
}

Eigen::Vector3d dlt_triangulate(const Track& track, const CameraIntrinsics& intr);

InverseDepthParam to_inverse_depth(const Track& track, const Eigen::Vector3d& world);
Eigen::Vector3d from_inverse_depth(const Track& track, const InverseDepthParam& param);

/// Stacked pixel residuals (projection - keypoint), 2 per observation. Observations
/// behind their camera produce NaN entries.
Eigen::VectorXd reprojection_residuals(const Track& track, const CameraIntrinsics& intr,
                                       const InverseDepthParam& param);
/// d(residuals)/d(a, b, rho), 2n x 3.
Eigen::MatrixXd reprojection_jacobian(const Track& track, const CameraIntrinsics& intr,
                                      const InverseDepthParam& param);

/// Sum of Geman-McClure terms; observations behind the camera count as the kernel's bound c^2.
double robust_cost(const Track& track, const CameraIntrinsics& intr, const InverseDepthParam& param, double c);

Landmark refine_landmark(const Track& track, const Eigen::Vector3d& init, const CameraIntrinsics& intr,
                         const TriangulationConfig& cfg = {});

}  // namespace favor
