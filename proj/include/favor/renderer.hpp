#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <vector>

#include "favor/geometry.hpp"
#include "favor/voxel.hpp"

namespace favor {

// Density activation: sigma * delta = softplus(raw + shift) * delta / side, i.e. density
// is measured per voxel side. The shift makes raw = 0 give alpha = 1e-2 per sample at 8
// samples per ray.
inline constexpr double kInitialAlpha = 1e-2;
inline constexpr int kDefaultSamples = 8;
inline const double kDensityShift = std::log(std::expm1(-kDefaultSamples * std::log1p(-kInitialAlpha)));

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Density (per meter) of a raw lattice value for a voxel of the given side.
inline double density_activation(double raw, double side) { return softplus(raw + kDensityShift) / side; }

/// Geometry of one ray through a voxel: N midpoint samples and their lattice stencils.
struct RayStencil {
  double t_near = 0.0;
  double t_far = 0.0;
  double delta = 0.0;  // |p_f - p_n| / N, meters
  std::vector<Eigen::Vector3d> positions;
  std::vector<TrilinearStencil> stencils;

  int samples() const { return static_cast<int>(stencils.size()); }
};

/// Throws NoIntersection if the ray misses the cube.
RayStencil ray_stencil(const VoxelLandmark& voxel, const Ray& ray, int samples);

struct RaySamples {
  std::vector<Eigen::Vector3d> positions;
  double delta = 0.0;
  Eigen::VectorXd raw_density;
  Eigen::MatrixXd descriptors;  // N x C
};

RaySamples sample_ray(const VoxelLandmark& voxel, const Ray& ray, int samples);

/// Per-sample compositing quantities for a ray.
struct Composite {
  Eigen::VectorXd optical_depth;  // sigma_t * delta
  Eigen::VectorXd alpha;          // 1 - exp(-sigma_t * delta)
  Eigen::VectorXd transmittance;  // T_t
  Eigen::VectorXd weight;         // T_t * alpha_t
  double opacity = 0.0;
};

Composite composite_density(const VoxelLandmark& voxel, const RayStencil& stencil);

struct RayRender {
  Eigen::VectorXd descriptor;
  double opacity = 0.0;
  Eigen::VectorXd alphas;
};

RayRender render_ray(const VoxelLandmark& voxel, const Ray& ray, int samples = kDefaultSamples);
RayRender render_stencil(const VoxelLandmark& voxel, const RayStencil& stencil);

/// S*S x C rendered patch around the projected voxel center; rows follow Patch layout.
/// Throws OutOfFrustum if the window does not fit in the image.
Eigen::MatrixXd render_patch(const VoxelLandmark& voxel, const Pose& pose, const CameraIntrinsics& intr,
                             int patch_size, int samples = kDefaultSamples);

/// Mean per-element cosine between two patches over elements that are non-zero in both.
double mean_patch_cosine(const Eigen::MatrixXd& rendered, const Eigen::MatrixXd& target);

struct RenderedFeature {
  std::int64_t landmark_id = 0;
  Eigen::Vector3d world_point = Eigen::Vector3d::Zero();
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  Eigen::VectorXd descriptor;
  double opacity = 0.0;
};

struct RenderSettings {
  int samples = kDefaultSamples;
  double opacity_min = 0.1;
};

/// One camera-to-center ray per voxel whose center projects into the image.
/// No occlusion reasoning; features below opacity_min are dropped.
std::vector<RenderedFeature> render_visible(const VoxelMap& map, const Pose& pose,
                                            const RenderSettings& settings = {});

}  // namespace favor
