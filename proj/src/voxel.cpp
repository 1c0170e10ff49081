#include "favor/voxel.hpp"

#include <algorithm>
#include <limits>
#include <random>

#include "favor/random.hpp"

namespace favor {

namespace {

// Lattice coordinate in [0, R-1] along one axis, plus the lower cell index and fraction.
void axis_coordinate(double offset, double side, int resolution, int& cell, double& frac) {
  const double cells = resolution - 1;
  double u = (offset / side + 0.5) * cells;
  u = std::clamp(u, 0.0, cells);
  const double nearest = std::round(u);
  if (std::abs(u - nearest) <= 1e-12 * cells) u = nearest;
  cell = std::min(static_cast<int>(std::floor(u)), resolution - 2);
  frac = u - cell;
}

}  // namespace

TrilinearStencil trilinear_stencil(int resolution, const Eigen::Vector3d& center, double side,
                                   const Eigen::Vector3d& point) {
  if (resolution < 2) throw Error(ErrorCode::InvalidArgument, "lattice resolution must be >= 2");
  const Eigen::Vector3d offset = point - center;
  if ((offset.cwiseAbs().array() > 0.5 * side + kLatticeSlack).any() || !offset.allFinite())
    throw Error(ErrorCode::OutOfBounds, "sample outside the voxel");

  int cell[3];
  double frac[3];
  for (int axis = 0; axis < 3; ++axis) axis_coordinate(offset[axis], side, resolution, cell[axis], frac[axis]);

  TrilinearStencil s;
  int k = 0;
  for (int dc = 0; dc < 2; ++dc) {
    const double wc = dc ? frac[2] : 1.0 - frac[2];
    for (int db = 0; db < 2; ++db) {
      const double wb = db ? frac[1] : 1.0 - frac[1];
      for (int da = 0; da < 2; ++da) {
        const double wa = da ? frac[0] : 1.0 - frac[0];
        s.index[k] = node_index(resolution, cell[0] + da, cell[1] + db, cell[2] + dc);
        s.weight[k] = wa * wb * wc;
        ++k;
      }
    }
  }
  return s;
}

Eigen::Vector3d VoxelLandmark::node_position(int a, int b, int c) const {
  const double cells = resolution - 1;
  return center + (Eigen::Vector3d(a, b, c) / cells - Eigen::Vector3d::Constant(0.5)) * side;
}

bool VoxelLandmark::operator==(const VoxelLandmark& o) const {
  return center == o.center && side == o.side && resolution == o.resolution && track_id == o.track_id &&
         desc_nodes.rows() == o.desc_nodes.rows() && desc_nodes.cols() == o.desc_nodes.cols() &&
         desc_nodes == o.desc_nodes && density_nodes.size() == o.density_nodes.size() &&
         density_nodes == o.density_nodes;
}

double voxel_size(const Track& track, const Eigen::Vector3d& landmark, int patch_size, double focal) {
  if (track.observations.empty()) throw Error(ErrorCode::InvalidArgument, "empty track");
  if (!(focal > 0.0)) throw Error(ErrorCode::InvalidArgument, "focal length must be positive");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& o : track.observations)
    best = std::min(best, patch_size * (o.pose.center() - landmark).norm() / focal);
  return best;
}

VoxelLandmark create_voxel(const Track& track, const Eigen::Vector3d& landmark, int patch_size,
                           const CameraIntrinsics& intr, int resolution, const VoxelInit& init) {
  if (resolution < 2) throw Error(ErrorCode::InvalidArgument, "lattice resolution must be >= 2");
  VoxelLandmark v;
  v.center = landmark;
  v.side = voxel_size(track, landmark, patch_size, intr.focal());
  if (!(v.side > 0.0)) throw Error(ErrorCode::DegenerateGeometry, "voxel side is zero");
  v.resolution = resolution;
  v.track_id = track.id;

  const int channels = track.observations.front().patch.channels();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(channels);
  for (const auto& o : track.observations) {
    if (o.patch.channels() != channels) throw Error(ErrorCode::ChannelMismatch, "track mixes channel counts");
    mean += o.patch.center();
  }
  mean /= static_cast<double>(track.size());

  std::mt19937_64 rng(init.seed);
  std::normal_distribution<double> noise(0.0, init.noise_sigma);
  v.desc_nodes.resize(v.node_count(), channels);
  for (int n = 0; n < v.node_count(); ++n)
    for (int c = 0; c < channels; ++c) v.desc_nodes(n, c) = mean[c] + noise(rng);
  v.density_nodes = Eigen::VectorXd::Constant(v.node_count(), init.density_raw);
  return v;
}

}  // namespace favor
