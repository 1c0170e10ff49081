#include "favor/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace favor {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw Error(ErrorCode::InvalidArgument, "focal lengths must be positive");
  if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidArgument, "image size must be positive");
  if (!(cx > 0.0 && cx < width && cy > 0.0 && cy < height))
    throw Error(ErrorCode::InvalidArgument, "principal point outside the image");
}

Eigen::Matrix3d CameraIntrinsics::matrix() const {
  Eigen::Matrix3d k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

bool try_project(const Pose& pose, const CameraIntrinsics& intr, const Eigen::Vector3d& point,
                 Eigen::Vector2d& pixel) {
  const Eigen::Vector3d pc = pose.to_camera(point);
  if (!(pc.z() > 0.0)) return false;
  pixel = {intr.fx * pc.x() / pc.z() + intr.cx, intr.fy * pc.y() / pc.z() + intr.cy};
  return true;
}

Eigen::Vector2d project(const Pose& pose, const CameraIntrinsics& intr, const Eigen::Vector3d& point) {
  Eigen::Vector2d pixel;
  if (!try_project(pose, intr, point, pixel))
    throw Error(ErrorCode::NonPositiveDepth, "point behind the camera");
  return pixel;
}

Ray ray_through_pixel(const Pose& pose, const CameraIntrinsics& intr, const Eigen::Vector2d& pixel) {
  const Eigen::Vector3d bearing((pixel.x() - intr.cx) / intr.fx, (pixel.y() - intr.cy) / intr.fy, 1.0);
  Ray ray;
  ray.origin = pose.center();
  ray.direction = (pose.rotation * bearing).normalized();
  return ray;
}

std::optional<RayInterval> ray_box_intersect(const Ray& ray, const Eigen::Vector3d& center,
                                             double side) {
  const double half = 0.5 * side;
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  for (int axis = 0; axis < 3; ++axis) {
    const double lo = center[axis] - half;
    const double hi = center[axis] + half;
    const double o = ray.origin[axis];
    const double d = ray.direction[axis];
    if (d == 0.0) {
      if (o < lo || o > hi) return std::nullopt;
      continue;
    }
    const double inv = 1.0 / d;
    double t0 = (lo - o) * inv;
    double t1 = (hi - o) * inv;
    if (t0 > t1) std::swap(t0, t1);
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
  }
  t_near = std::max(t_near, 0.0);
  if (!(t_far > t_near)) return std::nullopt;
  return RayInterval{t_near, t_far};
}

Eigen::Matrix3d exp_so3(const Eigen::Vector3d& omega) {
  const double angle = omega.norm();
  if (angle < 1e-12) {
    Eigen::Matrix3d skew;
    skew << 0, -omega.z(), omega.y(), omega.z(), 0, -omega.x(), -omega.y(), omega.x(), 0;
    return Eigen::Matrix3d::Identity() + skew;
  }
  return Eigen::AngleAxisd(angle, omega / angle).toRotationMatrix();
}

Eigen::Vector3d log_so3(const Eigen::Matrix3d& rotation) {
  const Eigen::AngleAxisd aa(rotation);
  return aa.angle() * aa.axis();
}

double rotation_error_deg(const Pose& a, const Pose& b) {
  const Eigen::Matrix3d rel = a.rotation.transpose() * b.rotation;
  const double c = std::clamp(0.5 * (rel.trace() - 1.0), -1.0, 1.0);
  return std::acos(c) * 180.0 / M_PI;
}

double translation_error(const Pose& a, const Pose& b) { return (a.center() - b.center()).norm(); }

Pose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up) {
  const Eigen::Vector3d z = (target - eye).normalized();
  Eigen::Vector3d x = z.cross(up);
  if (x.norm() < 1e-12) x = z.unitOrthogonal();
  x.normalize();
  const Eigen::Vector3d y = z.cross(x);
  Eigen::Matrix3d r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return Pose(r, eye);
}

}  // namespace favor
