#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "favor/geometry.hpp"
#include "favor/tracking.hpp"

namespace favor {

/// The 8 lattice nodes around a point and their trilinear weights.
/// Node (a, b, c) has flat index a + R * (b + R * c), with a along world x.
struct TrilinearStencil {
  std::array<int, 8> index{};
  std::array<double, 8> weight{};
};

inline constexpr double kLatticeSlack = 1e-9;

inline int node_index(int resolution, int a, int b, int c) { return a + resolution * (b + resolution * c); }

/// Throws OutOfBounds if `point` lies further than kLatticeSlack outside the cube.
TrilinearStencil trilinear_stencil(int resolution, const Eigen::Vector3d& center, double side,
                                   const Eigen::Vector3d& point);

/// Blends rows of an (R^3 x K) node matrix.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> apply_stencil(const Eigen::MatrixBase<Derived>& nodes,
                                                                          const TrilinearStencil& stencil) {
  using Scalar = typename Derived::Scalar;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(nodes.cols());
  for (int k = 0; k < 8; ++k) out += Scalar(stencil.weight[k]) * nodes.row(stencil.index[k]).transpose();
  return out;
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> trilinear_sample(const Eigen::MatrixBase<Derived>& nodes,
                                                                             int resolution,
                                                                             const Eigen::Vector3d& center,
                                                                             double side,
                                                                             const Eigen::Vector3d& point) {
  return apply_stencil(nodes, trilinear_stencil(resolution, center, side, point));
}

struct VoxelLandmark {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double side = 1.0;
  int resolution = 3;
  Eigen::MatrixXd desc_nodes;     // R^3 x C
  Eigen::VectorXd density_nodes;  // R^3, raw (pre-activation)
  std::int64_t track_id = 0;

  int node_count() const { return resolution * resolution * resolution; }
  int channels() const { return static_cast<int>(desc_nodes.cols()); }
  Eigen::Vector3d node_position(int a, int b, int c) const;
  bool operator==(const VoxelLandmark&) const;
};

struct VoxelMap {
  std::vector<VoxelLandmark> voxels;
  CameraIntrinsics intrinsics;
  int channels = 0;
  int resolution = 3;
  int patch_size = 7;
  std::string extractor = "synthetic";
};

struct VoxelInit {
  double noise_sigma = 1e-3;
  double density_raw = 0.0;
  std::uint64_t seed = 0;
};

/// min over observations of S * |camera_center - landmark| / f.
double voxel_size(const Track& track, const Eigen::Vector3d& landmark, int patch_size, double focal);

VoxelLandmark create_voxel(const Track& track, const Eigen::Vector3d& landmark, int patch_size,
                           const CameraIntrinsics& intr, int resolution, const VoxelInit& init = {});

}  // namespace favor
