#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

#include "favor/descriptors.hpp"
#include "favor/geometry.hpp"
#include "favor/renderer.hpp"
#include "favor/voxel.hpp"

namespace favor {

struct Correspondence {
  std::int64_t landmark_id = 0;
  Eigen::Vector3d world_point = Eigen::Vector3d::Zero();
  Eigen::Vector2d query_pixel = Eigen::Vector2d::Zero();
  double similarity = 0.0;
  int rendered_index = -1;
  int query_index = -1;
};

/// Mutual-maximum matching on the cosine similarity matrix, thresholded at tau.
std::vector<Correspondence> match(std::span<const RenderedFeature> rendered, std::span<const Keypoint> query_keypoints,
                                  const DescriptorMap& query_map, double tau);

/// P3P from the first three correspondences (up to four poses). With a fourth
/// correspondence the single pose that best reprojects it is returned.
std::vector<Pose> pnp_minimal(std::span<const Eigen::Vector3d> world, std::span<const Eigen::Vector2d> pixels,
                              const CameraIntrinsics& intr);
std::vector<Pose> pnp_minimal(std::span<const Correspondence> correspondences, const CameraIntrinsics& intr);

/// Gauss-Newton/LM on the squared reprojection error of the given correspondences.
Pose refine_pose(const Pose& init, std::span<const Eigen::Vector3d> world, std::span<const Eigen::Vector2d> pixels,
                 const CameraIntrinsics& intr, int max_iters = 20);

/// Reprojection error norm; +inf for points behind the camera.
double reprojection_error(const Pose& pose, const CameraIntrinsics& intr, const Eigen::Vector3d& world,
                          const Eigen::Vector2d& pixel);

struct RansacConfig {
  double threshold = 3.0;  // pixels
  int max_iters = 1000;
  double confidence = 0.999;
  int local_refinements = 3;
  std::uint64_t seed = 0;
};

struct IterationRecord {
  Pose pose;
  int correspondences = 0;
  int inliers = 0;
  double median_residual = 0.0;  // pixels, over inliers
};

struct PoseEstimate {
  Pose pose;
  int inlier_count = 0;
  std::vector<std::int64_t> inlier_ids;
  std::vector<int> inlier_indices;  // into the correspondence list
  int iterations_run = 0;
  double median_residual = 0.0;
  std::vector<IterationRecord> per_iteration;
};

PoseEstimate ransac_pose(std::span<const Correspondence> correspondences, const CameraIntrinsics& intr,
                         const RansacConfig& cfg = {});

struct LocalizeConfig {
  double tau = 0.7;
  int iterations = 3;
  RenderSettings render;
  RansacConfig ransac;
};

/// Render at the current estimate, match, solve; repeated `cfg.iterations` times.
/// A failed iteration after the first keeps the previous estimate and stops.
PoseEstimate iterative_localize(const VoxelMap& map, std::span<const Keypoint> query_keypoints,
                                const DescriptorMap& query_map, const Pose& prior, const LocalizeConfig& cfg = {});

}  // namespace favor
