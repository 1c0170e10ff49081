#include "favor/triangulation.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>

namespace favor {

Eigen::Vector3d dlt_triangulate(const Track& track, const CameraIntrinsics& intr) {
  const auto& obs = track.observations;
  if (obs.size() < 2) throw Error(ErrorCode::DegenerateGeometry, "triangulation needs two observations");

  double baseline = 0.0;
  for (std::size_t i = 0; i < obs.size(); ++i)
    for (std::size_t j = i + 1; j < obs.size(); ++j)
      baseline = std::max(baseline, (obs[i].pose.center() - obs[j].pose.center()).norm());
  if (baseline < 1e-6) throw Error(ErrorCode::DegenerateGeometry, "zero baseline");

  // Rows in normalized image coordinates; each camera contributes x * P3 - P1 and y * P3 - P2.
  Eigen::MatrixXd a(2 * obs.size(), 4);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const Pose w2c = obs[i].pose.inverse();
    Eigen::Matrix<double, 3, 4> p;
    p << w2c.rotation, w2c.translation;
    const double x = (obs[i].keypoint.position.x() - intr.cx) / intr.fx;
    const double y = (obs[i].keypoint.position.y() - intr.cy) / intr.fy;
    a.row(2 * i) = x * p.row(2) - p.row(0);
    a.row(2 * i + 1) = y * p.row(2) - p.row(1);
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::Vector4d s = svd.singularValues().head<4>();
  if (s[2] - s[3] <= 1e-9 * s[0]) throw Error(ErrorCode::DegenerateGeometry, "ambiguous null direction");
  const Eigen::Vector4d h = svd.matrixV().col(3);
  if (std::abs(h[3]) < 1e-12 * h.head<3>().norm()) throw Error(ErrorCode::DegenerateGeometry, "point at infinity");
  return h.head<3>() / h[3];
}

InverseDepthParam to_inverse_depth(const Track& track, const Eigen::Vector3d& world) {
  const Eigen::Vector3d pc = track.observations.front().pose.to_camera(world);
  if (!(pc.z() > 0.0)) throw Error(ErrorCode::NegativeDepth, "landmark behind the anchor camera");
  InverseDepthParam p;
  p.anchor_frame = track.observations.front().frame_index;
  p.bearing = {pc.x() / pc.z(), pc.y() / pc.z()};
  p.rho = 1.0 / pc.z();
  return p;
}

Eigen::Vector3d from_inverse_depth(const Track& track, const InverseDepthParam& param) {
  const Pose& anchor = track.observations.front().pose;
  return anchor.to_world(Eigen::Vector3d(param.bearing.x(), param.bearing.y(), 1.0) / param.rho);
}

namespace {

// Camera-frame direction of the landmark scaled by rho; stays finite as rho -> 0.
Eigen::Vector3d scaled_camera_point(const Pose& anchor, const Pose& cam, const InverseDepthParam& p) {
  const Eigen::Vector3d m(p.bearing.x(), p.bearing.y(), 1.0);
  return cam.rotation.transpose() * (anchor.rotation * m + p.rho * (anchor.translation - cam.translation));
}

}  // namespace

Eigen::VectorXd reprojection_residuals(const Track& track, const CameraIntrinsics& intr,
                                       const InverseDepthParam& param) {
  const auto& obs = track.observations;
  const Pose& anchor = obs.front().pose;
  Eigen::VectorXd r(2 * obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const Eigen::Vector3d h = scaled_camera_point(anchor, obs[i].pose, param);
    if (!(h.z() > 0.0)) {
      r.segment<2>(2 * i).setConstant(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    r[2 * i] = intr.fx * h.x() / h.z() + intr.cx - obs[i].keypoint.position.x();
    r[2 * i + 1] = intr.fy * h.y() / h.z() + intr.cy - obs[i].keypoint.position.y();
  }
  return r;
}

Eigen::MatrixXd reprojection_jacobian(const Track& track, const CameraIntrinsics& intr,
                                      const InverseDepthParam& param) {
  const auto& obs = track.observations;
  const Pose& anchor = obs.front().pose;
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(2 * obs.size(), 3);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const Pose& cam = obs[i].pose;
    const Eigen::Vector3d h = scaled_camera_point(anchor, cam, param);
    if (!(h.z() > 0.0)) continue;
    Eigen::Matrix<double, 2, 3> dproj;
    dproj << intr.fx / h.z(), 0.0, -intr.fx * h.x() / (h.z() * h.z()), 0.0, intr.fy / h.z(),
        -intr.fy * h.y() / (h.z() * h.z());
    Eigen::Matrix3d dh;
    const Eigen::Matrix3d rel = cam.rotation.transpose() * anchor.rotation;
    dh.col(0) = rel.col(0);
    dh.col(1) = rel.col(1);
    dh.col(2) = cam.rotation.transpose() * (anchor.translation - cam.translation);
    j.block<2, 3>(2 * i, 0) = dproj * dh;
  }
  return j;
}

double robust_cost(const Track& track, const CameraIntrinsics& intr, const InverseDepthParam& param, double c) {
  const Eigen::VectorXd r = reprojection_residuals(track, intr, param);
  double cost = 0.0;
  for (Eigen::Index i = 0; i < r.size() / 2; ++i) {
    const Eigen::Vector2d ri = r.segment<2>(2 * i);
    cost += ri.allFinite() ? geman_mcclure(ri.norm(), c) : c * c;
  }
  return cost;
}

Landmark refine_landmark(const Track& track, const Eigen::Vector3d& init, const CameraIntrinsics& intr,
                         const TriangulationConfig& cfg) {
  if (track.observations.empty()) throw Error(ErrorCode::InvalidArgument, "empty track");
  const double c = cfg.robust_scale;
  InverseDepthParam param = to_inverse_depth(track, init);
  double cost = robust_cost(track, intr, param, c);
  double lambda = cfg.initial_lambda;
  const std::size_t n = track.size();

  int iter = 0;
  bool converged = false;
  while (iter < cfg.max_iters && !converged) {
    ++iter;
    // Iteratively reweighted normal equations for the Geman-McClure cost.
    const Eigen::VectorXd r = reprojection_residuals(track, intr, param);
    const Eigen::MatrixXd jac = reprojection_jacobian(track, intr, param);
    Eigen::Matrix3d hess = Eigen::Matrix3d::Zero();
    Eigen::Vector3d grad = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::Vector2d ri = r.segment<2>(2 * i);
      if (!ri.allFinite()) continue;
      const double s = 1.0 + ri.squaredNorm() / (c * c);
      const double w = 1.0 / (s * s);
      const Eigen::Matrix<double, 2, 3> ji = jac.block<2, 3>(2 * i, 0);
      hess += w * ji.transpose() * ji;
      grad += w * ji.transpose() * ri;
    }

    bool accepted = false;
    while (!accepted && lambda < 1e16) {
      Eigen::Matrix3d damped = hess;
      damped.diagonal() += lambda * hess.diagonal().cwiseMax(1e-12);
      const Eigen::Vector3d step = damped.ldlt().solve(-grad);
      if (!step.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      if (step.norm() < cfg.step_tolerance) {
        converged = true;
        break;
      }
      InverseDepthParam trial = param;
      trial.bearing += step.head<2>();
      trial.rho += step[2];
      const double trial_cost = robust_cost(track, intr, trial, c);
      if (trial_cost < cost) {
        if (trial.rho <= 1e-8) throw Error(ErrorCode::NegativeDepth, "inverse depth driven to zero");
        const double rel = (cost - trial_cost) / std::max(cost, std::numeric_limits<double>::min());
        param = trial;
        cost = trial_cost;
        lambda = std::max(lambda / 10.0, 1e-12);
        accepted = true;
        if (rel < cfg.cost_tolerance || cost == 0.0) converged = true;
      } else {
        lambda *= 10.0;
      }
    }
    // Damping exhausted without a decrease: the current state is a local minimum.
    if (!accepted && !converged) converged = true;
  }
  if (!converged) throw Error(ErrorCode::NonConvergence, "landmark refinement hit max_iters");

  Landmark lm;
  lm.position = from_inverse_depth(track, param);
  lm.track_id = track.id;
  lm.iterations = iter;
  const Eigen::VectorXd r = reprojection_residuals(track, intr, param);
  double sum = 0.0, sum_all = 0.0;
  int inliers = 0, finite = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector2d ri = r.segment<2>(2 * i);
    if (!ri.allFinite()) continue;
    const double e = ri.norm();
    sum_all += e;
    ++finite;
    if (e < 3.0 * c) {
      sum += e;
      ++inliers;
    }
  }
  lm.mean_reprojection_error = inliers > 0 ? sum / inliers : (finite > 0 ? sum_all / finite : 0.0);
  return lm;
}

}  // namespace favor
