#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <optional>

#include "favor/error.hpp"

namespace favor {

template <typename Scalar>
using Vector2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar>
using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;

/// Pinhole camera without distortion. Pixel centers sit on integer coordinates.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.5;
  double cy = 0.5;
  int width = 1;
  int height = 1;

  /// Throws InvalidArgument unless fx, fy > 0 and the principal point lies inside the image.
  void validate() const;
  double focal() const { return 0.5 * (fx + fy); }
  Eigen::Matrix3d matrix() const;
  bool operator==(const CameraIntrinsics&) const = default;
};

/// Rigid camera-to-world transform: x_world = rotation * x_cam + translation.
/// The camera looks along +z with +x right and +y down.
template <typename Scalar>
struct Pose_ {
  Matrix3<Scalar> rotation = Matrix3<Scalar>::Identity();
  Vector3<Scalar> translation = Vector3<Scalar>::Zero();

  Pose_() = default;
  Pose_(const Matrix3<Scalar>& r, const Vector3<Scalar>& t) : rotation(r), translation(t) {}

  static Pose_ Identity() { return Pose_(); }

  const Vector3<Scalar>& center() const { return translation; }

  Vector3<Scalar> to_camera(const Vector3<Scalar>& world) const {
    return rotation.transpose() * (world - translation);
  }
  Vector3<Scalar> to_world(const Vector3<Scalar>& cam) const { return rotation * cam + translation; }

  Pose_ inverse() const {
    const Matrix3<Scalar> rt = rotation.transpose();
    return Pose_(rt, -(rt * translation));
  }

  Pose_ operator*(const Pose_& rhs) const {
    return Pose_(rotation * rhs.rotation, rotation * rhs.translation + translation);
  }

  template <typename Other>
  Pose_<Other> cast() const {
    return Pose_<Other>(rotation.template cast<Other>(), translation.template cast<Other>());
  }

  bool is_valid(Scalar tol = Scalar(1e-9)) const {
    const Matrix3<Scalar> gram = rotation.transpose() * rotation;
    return (gram - Matrix3<Scalar>::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(rotation.determinant() - Scalar(1)) <= tol && translation.allFinite();
  }
};

using Pose = Pose_<double>;

template <typename Scalar>
struct Ray_ {
  Vector3<Scalar> origin = Vector3<Scalar>::Zero();
  Vector3<Scalar> direction = Vector3<Scalar>::UnitZ();

  Vector3<Scalar> at(Scalar t) const { return origin + t * direction; }
};

using Ray = Ray_<double>;

struct RayInterval {
  double t_near = 0.0;
  double t_far = 0.0;
};

/// Pinhole projection of a world point. Throws NonPositiveDepth when the point is not in front.
Eigen::Vector2d project(const Pose& pose, const CameraIntrinsics& intr, const Eigen::Vector3d& point);

/// Projection without the depth check; returns false for z <= 0.
bool try_project(const Pose& pose, const CameraIntrinsics& intr, const Eigen::Vector3d& point,
                 Eigen::Vector2d& pixel);

Ray ray_through_pixel(const Pose& pose, const CameraIntrinsics& intr, const Eigen::Vector2d& pixel);

/// Slab test against the axis-aligned cube of edge `side` centered at `center`.
/// t_near is clamped to 0 when the origin lies inside the cube.
std::optional<RayInterval> ray_box_intersect(const Ray& ray, const Eigen::Vector3d& center,
                                             double side);

Eigen::Matrix3d exp_so3(const Eigen::Vector3d& omega);
Eigen::Vector3d log_so3(const Eigen::Matrix3d& rotation);

/// Angle of the relative rotation between two poses, in degrees.
double rotation_error_deg(const Pose& a, const Pose& b);
double translation_error(const Pose& a, const Pose& b);

/// Camera at `eye` looking at `target`; `up` fixes the roll (image -y points towards up).
Pose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
             const Eigen::Vector3d& up = Eigen::Vector3d::UnitZ());

}  // namespace favor
