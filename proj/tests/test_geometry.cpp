#include "doctest.h"
#include "favor/error.hpp"
#include "favor/geometry.hpp"
#include "test_util.hpp"

using namespace favor;
using favor::test::random_pose;
using favor::test::random_vector;

namespace {

double point_ray_distance(const Ray& ray, const Eigen::Vector3d& p) {
  const Eigen::Vector3d d = ray.direction.normalized();
  const Eigen::Vector3d v = p - ray.origin;
  return (v - v.dot(d) * d).norm();
}

bool inside_cube(const Eigen::Vector3d& p, const Eigen::Vector3d& c, double side) {
  return ((p - c).cwiseAbs().array() <= 0.5 * side).all();
}

}  // namespace

TEST_CASE("project: principal point and focal scaling") {
  const CameraIntrinsics k{100, 100, 50, 50, 100, 100};
  const Eigen::Vector2d a = project(Pose::Identity(), k, {0, 0, 1});
  CHECK(a.x() == doctest::Approx(50));
  CHECK(a.y() == doctest::Approx(50));
  const Eigen::Vector2d b = project(Pose::Identity(), k, {0.5, 0, 1});
  CHECK(b.x() == doctest::Approx(100));
  CHECK(b.y() == doctest::Approx(50));
}

TEST_CASE("project: non-positive depth throws") {
  const CameraIntrinsics k{100, 100, 50, 50, 100, 100};
  CHECK_THROWS_AS(project(Pose::Identity(), k, {0, 0, -1}), Error);
  CHECK_THROWS_AS(project(Pose::Identity(), k, {1, 0, 0}), Error);
  try {
    project(Pose::Identity(), k, {0, 0, 0});
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonPositiveDepth);
  }
}

TEST_CASE("project / ray_through_pixel round trip") {
  std::mt19937_64 rng(7);
  const auto k = favor::test::test_intrinsics();
  for (int i = 0; i < 1000; ++i) {
    const Pose pose = random_pose(rng);
    const Eigen::Vector3d cam = random_vector(rng, -1.0, 1.0) + Eigen::Vector3d(0, 0, 3.0);
    const Eigen::Vector3d p = pose.to_world(cam);
    const Ray ray = ray_through_pixel(pose, k, project(pose, k, p));
    CHECK(point_ray_distance(ray, p) < 1e-9 * std::max(1.0, p.norm()));
  }
}

TEST_CASE("ray_through_pixel: optical axis and rotation equivariance") {
  const auto k = favor::test::test_intrinsics();
  const Ray axis = ray_through_pixel(Pose::Identity(), k, {k.cx, k.cy});
  CHECK((axis.direction.normalized() - Eigen::Vector3d::UnitZ()).norm() < 1e-15);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const Pose r = random_pose(rng);
    const Eigen::Vector2d px(100.0 + i, 50.0 + 2 * i);
    const Ray base = ray_through_pixel(Pose(Eigen::Matrix3d::Identity(), r.translation), k, px);
    const Ray rotated = ray_through_pixel(r, k, px);
    CHECK((rotated.direction - r.rotation * base.direction).norm() < 1e-14);
  }
}

TEST_CASE("ray_box_intersect: axis-aligned hit and parallel miss") {
  Ray ray{{0, 0, -2}, {0, 0, 1}};
  const auto hit = ray_box_intersect(ray, Eigen::Vector3d::Zero(), 1.0);
  REQUIRE(hit.has_value());
  CHECK(hit->t_near == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(hit->t_far == doctest::Approx(2.5).epsilon(1e-15));
  Ray off{{5, 0, -2}, {0, 0, 1}};
  CHECK_FALSE(ray_box_intersect(off, Eigen::Vector3d::Zero(), 1.0).has_value());
  Ray behind{{0, 0, 2}, {0, 0, 1}};
  CHECK_FALSE(ray_box_intersect(behind, Eigen::Vector3d::Zero(), 1.0).has_value());
}

TEST_CASE("ray_box_intersect: origin inside clamps t_near to zero") {
  Ray ray{{0.1, 0.0, 0.0}, {0, 0, 1}};
  const auto hit = ray_box_intersect(ray, Eigen::Vector3d::Zero(), 1.0);
  REQUIRE(hit.has_value());
  CHECK(hit->t_near == 0.0);
  CHECK(hit->t_far == doctest::Approx(0.5));
}

TEST_CASE("ray_box_intersect agrees with dense point sampling") {
  std::mt19937_64 rng(11);
  const Eigen::Vector3d c(0.2, -0.1, 0.3);
  const double side = 1.0;
  const double step = 2e-3;
  int compared = 0;
  for (int i = 0; i < 10000; ++i) {
    Ray ray;
    ray.origin = random_vector(rng, -3.0, 3.0);
    ray.direction = random_vector(rng, -1.0, 1.0).normalized();
    const auto hit = ray_box_intersect(ray, c, side);
    // Chords shorter than the sampling step are below the oracle's resolution.
    if (hit && hit->t_far - hit->t_near < 2 * step) continue;
    bool sampled = false;
    for (double t = 0.0; t <= 12.0 && !sampled; t += step) sampled = inside_cube(ray.at(t), c, side);
    CHECK(sampled == hit.has_value());
    if (hit) {
      // Entry (unless clamped) and exit lie on the surface.
      const double exit_dist = ((ray.at(hit->t_far) - c).cwiseAbs().maxCoeff());
      CHECK(std::abs(exit_dist - 0.5 * side) < 1e-9);
      if (hit->t_near > 0.0) CHECK(std::abs((ray.at(hit->t_near) - c).cwiseAbs().maxCoeff() - 0.5 * side) < 1e-9);
    }
    ++compared;
  }
  CHECK(compared > 9000);
}

TEST_CASE("pose algebra: associativity and inverse") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    const Pose a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
    const Pose l = (a * b) * c, r = a * (b * c);
    CHECK((l.rotation - r.rotation).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((l.translation - r.translation).cwiseAbs().maxCoeff() < 1e-12);
    const Pose id = a * a.inverse();
    CHECK((id.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(id.translation.cwiseAbs().maxCoeff() < 1e-12);
    CHECK(a.is_valid());
  }
}

TEST_CASE("so3 exp/log round trip and error metrics") {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 200; ++i) {
    Eigen::Vector3d w = random_vector(rng, -1.0, 1.0);
    w *= 3.0 / std::max(1.0, w.norm());
    CHECK((log_so3(exp_so3(w)) - w).norm() < 1e-9);
  }
  const Pose a = Pose::Identity();
  const Pose b(exp_so3(Eigen::Vector3d(0, 0, M_PI / 6)), Eigen::Vector3d(3, 4, 0));
  CHECK(rotation_error_deg(a, b) == doctest::Approx(30.0));
  CHECK(translation_error(a, b) == doctest::Approx(5.0));
}

TEST_CASE("look_at points the optical axis at the target") {
  const Pose p = look_at({5, 1, 2}, {0, 0, 0});
  const Eigen::Vector3d cam = p.to_camera(Eigen::Vector3d::Zero());
  CHECK(cam.x() == doctest::Approx(0).epsilon(1e-12));
  CHECK(cam.y() == doctest::Approx(0).epsilon(1e-12));
  CHECK(cam.z() > 0);
  CHECK(p.is_valid());
  // Image -y points towards world +z.
  CHECK(p.rotation.col(1).z() < 0);
}

TEST_CASE("intrinsics validation") {
  CHECK_NOTHROW(favor::test::test_intrinsics().validate());
  CHECK_THROWS_AS((CameraIntrinsics{-1, 1, 0.5, 0.5, 1, 1}.validate()), Error);
  CHECK_THROWS_AS((CameraIntrinsics{1, 1, 5, 0.5, 2, 2}.validate()), Error);
}
