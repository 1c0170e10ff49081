#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

#include "favor/renderer.hpp"
#include "favor/tracking.hpp"
#include "favor/voxel.hpp"

namespace favor {

struct LossWeights {
  double mse = 1.0;
  double cosine = 1.0;
  double tv = 1e-2;
  double entropy = 1e-3;
};

struct TrainConfig {
  int epochs = 2000;
  int rays_per_epoch = 1024;
  int samples = kDefaultSamples;
  double lr_desc = 0.1;
  double lr_density = 0.1;
  LossWeights weights;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-8;
  bool per_node_lr = true;
  std::uint64_t seed = 0;

  /// Throws InvalidArgument on negative weights or a non-positive budget.
  void validate() const;
};

struct LossBreakdown {
  double mse = 0.0;
  double cosine = 0.0;
  double tv = 0.0;
  double entropy = 0.0;
  double total = 0.0;
  bool zero_rendered = false;  // cosine undefined; counted as 1
};

/// Mean squared difference of lattice neighbours along x, y and z, pooled over
/// every descriptor channel and the density lattice.
double total_variation(const VoxelLandmark& voxel);

/// Mean binary entropy of clamped per-sample alphas.
double alpha_entropy(const Eigen::Ref<const Eigen::VectorXd>& alphas);

LossBreakdown compute_loss(const Eigen::Ref<const Eigen::VectorXd>& rendered,
                           const Eigen::Ref<const Eigen::VectorXd>& target, const VoxelLandmark& voxel,
                           const Eigen::Ref<const Eigen::VectorXd>& ray_alphas, const LossWeights& weights);

struct VoxelGradient {
  Eigen::MatrixXd desc;     // R^3 x C
  Eigen::VectorXd density;  // R^3

  static VoxelGradient zeros_like(const VoxelLandmark& voxel);
};

struct RayLossGradient {
  LossBreakdown loss;
  VoxelGradient gradient;
};

/// Exact gradient of compute_loss(render_ray(voxel, ray), target, ...).total
/// with respect to both lattices.
RayLossGradient backward(const VoxelLandmark& voxel, const Ray& ray, const Eigen::Ref<const Eigen::VectorXd>& target,
                         const LossWeights& weights, int samples = kDefaultSamples);

/// A training ray: fixed geometry through the voxel plus its target descriptor.
struct TrainingRay {
  RayStencil stencil;
  Eigen::VectorXd target;
};

/// Every (observation, patch element) ray of the track that hits the voxel.
std::vector<TrainingRay> training_rays(const VoxelLandmark& voxel, const Track& track,
                                       const CameraIntrinsics& intr, int samples);

/// Mean of the per-ray losses over the batch (TV counted once) and its gradient.
RayLossGradient batch_backward(const VoxelLandmark& voxel, std::span<const TrainingRay* const> batch,
                               const LossWeights& weights);

struct TrainResult {
  VoxelLandmark voxel;
  std::vector<LossBreakdown> history;  // one entry per epoch, loss before that epoch's update
};

TrainResult train_voxel(VoxelLandmark voxel, const Track& track, const CameraIntrinsics& intr,
                        const TrainConfig& cfg);

/// Rows: epoch mse cosine tv entropy total.
void write_loss_history(std::ostream& out, std::span<const LossBreakdown> history);

}  // namespace favor
