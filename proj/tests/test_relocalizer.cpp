#include "doctest.h"
#include "favor/error.hpp"
#include "favor/relocalizer.hpp"
#include "test_util.hpp"

using namespace favor;

namespace {

// A camera at distance ~5 looking roughly at the origin.
Pose random_camera(std::mt19937_64& rng) {
  const Eigen::Vector3d eye = 5.0 * test::random_vector(rng, -1.0, 1.0).normalized();
  return look_at(eye, 0.2 * test::random_vector(rng, -1.0, 1.0), Eigen::Vector3d(0.1, 0.2, 1.0).normalized());
}

std::vector<Correspondence> perfect_correspondences(std::mt19937_64& rng, const Pose& pose,
                                                    const CameraIntrinsics& k, int n) {
  std::vector<Correspondence> out;
  while (static_cast<int>(out.size()) < n) {
    const Eigen::Vector3d x = test::random_vector(rng, -1.0, 1.0);
    Eigen::Vector2d uv;
    if (!try_project(pose, k, x, uv)) continue;
    if (uv.x() < 0 || uv.y() < 0 || uv.x() > k.width - 1 || uv.y() > k.height - 1) continue;
    Correspondence c;
    c.landmark_id = static_cast<std::int64_t>(out.size());
    c.world_point = x;
    c.query_pixel = uv;
    c.similarity = 1.0;
    out.push_back(c);
  }
  return out;
}

DescriptorMap map_with(const std::vector<Keypoint>& kps, const std::vector<Eigen::VectorXd>& descs, int channels) {
  DescriptorMap m(64, 48, channels);
  for (std::size_t i = 0; i < kps.size(); ++i) {
    const Eigen::Vector2i p = nearest_pixel(kps[i].position);
    m.at(p.x(), p.y()) = descs[i].cast<float>();
  }
  return m;
}

}  // namespace

TEST_CASE("match: identity, threshold and planted pairs") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 1.0);
  const int c = 16, n = 10;
  std::vector<Eigen::VectorXd> descs;
  std::vector<Keypoint> kps;
  std::vector<RenderedFeature> rendered;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd d(c);
    for (int k = 0; k < c; ++k) d[k] = g(rng);
    descs.push_back(d.normalized());
    kps.push_back(Keypoint{Eigen::Vector2d(4 + 5 * i, 3 + 4 * i), 1.0});
    rendered.push_back(RenderedFeature{100 + i, Eigen::Vector3d(i, 0, 0), Eigen::Vector2d::Zero(), 3.0 * d, 1.0});
  }
  const DescriptorMap m = map_with(kps, descs, c);
  const auto ident = match(rendered, kps, m, 0.7);
  REQUIRE(ident.size() == n);
  for (int i = 0; i < n; ++i) {
    CHECK(ident[i].rendered_index == i);
    CHECK(ident[i].query_index == i);
    CHECK(ident[i].landmark_id == 100 + i);
    CHECK(ident[i].similarity == doctest::Approx(1.0));
    CHECK(ident[i].query_pixel == kps[i].position);
  }
  CHECK(match(rendered, kps, m, 1.0 + 1e-9).empty());

  // Rendered features in shuffled order, plus an unrelated distractor.
  std::vector<RenderedFeature> shuffled(rendered.rbegin(), rendered.rend());
  Eigen::VectorXd other(c);
  for (int k = 0; k < c; ++k) other[k] = g(rng);
  shuffled.push_back(RenderedFeature{999, Eigen::Vector3d::Zero(), Eigen::Vector2d::Zero(), other, 1.0});
  const auto planted = match(shuffled, kps, m, 0.7);
  REQUIRE(planted.size() == n);
  for (const auto& p : planted) CHECK(p.landmark_id == 100 + p.query_index);

  std::vector<RenderedFeature> wrong = rendered;
  wrong[0].descriptor = Eigen::VectorXd::Ones(c + 1);
  CHECK_THROWS_AS(match(wrong, kps, m, 0.7), Error);
  CHECK(match({}, kps, m, 0.7).empty());
}

TEST_CASE("P3P recovers the pose from exact correspondences") {
  const CameraIntrinsics k = test::test_intrinsics();
  std::mt19937_64 rng(2);
  int recovered = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Pose truth = trial == 0 ? look_at({0, -5, 0}, {0, 0, 0}) : random_camera(rng);
    const auto corr = perfect_correspondences(rng, truth, k, 4);
    const auto poses = pnp_minimal(corr, k);
    REQUIRE(poses.size() == 1);
    CHECK(poses[0].is_valid(1e-9));
    const double dt = translation_error(poses[0], truth);
    const double dr = (poses[0].rotation - truth.rotation).norm();
    CHECK(dt < 1e-4);
    CHECK(dr < 1e-4);
    if (dt < 1e-6 && dr < 1e-8) ++recovered;
  }
  CHECK(recovered >= 195);

  // Three points give every candidate; one of them is the truth.
  const Pose truth = random_camera(rng);
  const auto corr = perfect_correspondences(rng, truth, k, 3);
  const auto candidates = pnp_minimal(corr, k);
  REQUIRE(!candidates.empty());
  CHECK(candidates.size() <= 4);
  double best = 1e9;
  for (const auto& p : candidates) best = std::min(best, translation_error(p, truth));
  CHECK(best < 1e-6);
}

TEST_CASE("P3P rejects collinear points") {
  const CameraIntrinsics k = test::test_intrinsics();
  const Pose pose = look_at({0, -5, 0.5}, {0, 0, 0});
  std::vector<Eigen::Vector3d> world = {{-0.5, 0, 0}, {0, 0, 0}, {0.5, 0, 0}};
  std::vector<Eigen::Vector2d> pixels;
  for (const auto& x : world) pixels.push_back(project(pose, k, x));
  try {
    pnp_minimal(world, pixels, k);
    FAIL("expected DegenerateConfiguration");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateConfiguration);
  }
}

TEST_CASE("refine_pose converges from a nearby pose") {
  const CameraIntrinsics k = test::test_intrinsics();
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Pose truth = random_camera(rng);
    const auto corr = perfect_correspondences(rng, truth, k, 30);
    std::vector<Eigen::Vector3d> world;
    std::vector<Eigen::Vector2d> pixels;
    for (const auto& c : corr) {
      world.push_back(c.world_point);
      pixels.push_back(c.query_pixel);
    }
    const Pose init(truth.rotation * exp_so3(0.03 * test::random_vector(rng, -1.0, 1.0)),
                    truth.translation + 0.1 * test::random_vector(rng, -1.0, 1.0));
    const Pose refined = refine_pose(init, world, pixels, k);
    CHECK(translation_error(refined, truth) < 1e-8);
    CHECK((refined.rotation - truth.rotation).norm() < 1e-10);
  }
}

TEST_CASE("reprojection_error behind the camera is infinite") {
  const CameraIntrinsics k = test::test_intrinsics();
  CHECK(std::isinf(reprojection_error(Pose::Identity(), k, Eigen::Vector3d(0, 0, -1), Eigen::Vector2d(0, 0))));
  CHECK(reprojection_error(Pose::Identity(), k, Eigen::Vector3d(0, 0, 2), Eigen::Vector2d(k.cx + 3, k.cy + 4)) ==
        doctest::Approx(5.0));
}

TEST_CASE("RANSAC: perfect data, 30 percent outliers and too few points") {
  const CameraIntrinsics k = test::test_intrinsics();
  std::mt19937_64 rng(4);
  const Pose truth = random_camera(rng);
  const auto clean = perfect_correspondences(rng, truth, k, 100);
  RansacConfig cfg;
  cfg.seed = 1;
  const PoseEstimate a = ransac_pose(clean, k, cfg);
  CHECK(a.inlier_count == 100);
  CHECK(translation_error(a.pose, truth) < 1e-8);

  auto mixed = perfect_correspondences(rng, truth, k, 70);
  std::uniform_real_distribution<double> ux(0, k.width - 1), uy(0, k.height - 1);
  for (int i = 0; i < 30; ++i) {
    Correspondence c;
    c.landmark_id = 1000 + i;
    c.world_point = test::random_vector(rng, -1.0, 1.0);
    const double x = ux(rng), y = uy(rng);
    c.query_pixel = Eigen::Vector2d(x, y);
    mixed.push_back(c);
  }
  const PoseEstimate b = ransac_pose(mixed, k, cfg);
  CHECK(b.inlier_count >= 70);
  CHECK(b.inlier_count <= 73);
  CHECK(translation_error(b.pose, truth) < 1e-6);
  CHECK(rotation_error_deg(b.pose, truth) < 1e-5);
  int true_inliers = 0;
  for (int idx : b.inlier_indices) {
    CHECK(reprojection_error(b.pose, k, mixed[idx].world_point, mixed[idx].query_pixel) <= cfg.threshold);
    true_inliers += idx < 70 ? 1 : 0;
  }
  CHECK(true_inliers == 70);
  CHECK(b.inlier_ids.size() == b.inlier_indices.size());

  const PoseEstimate c = ransac_pose(mixed, k, cfg);
  CHECK(c.inlier_indices == b.inlier_indices);
  CHECK(c.pose.rotation == b.pose.rotation);
  CHECK(c.pose.translation == b.pose.translation);

  try {
    ransac_pose(std::span<const Correspondence>(clean.data(), 3), k, cfg);
    FAIL("expected InsufficientCorrespondences");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InsufficientCorrespondences);
  }
}

TEST_CASE("iterative_localize on an empty map fails cleanly") {
  VoxelMap map;
  map.intrinsics = test::test_intrinsics();
  map.channels = 8;
  DescriptorMap qm(640, 480, 8);
  std::vector<Keypoint> kps{{Eigen::Vector2d(10, 10), 1.0}};
  try {
    iterative_localize(map, kps, qm, Pose::Identity());
    FAIL("expected LocalizationFailed");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::LocalizationFailed);
  }
}
