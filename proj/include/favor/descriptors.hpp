#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <vector>

#include "favor/geometry.hpp"

namespace favor {

/// Dense H x W x C field of float descriptors, stored row-major (y, x, channel).
class DescriptorMap {
 public:
  static constexpr int kMinChannels = 8;
  static constexpr int kMaxChannels = 256;

  DescriptorMap() = default;
  DescriptorMap(int width, int height, int channels);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  bool empty() const { return data_.empty(); }

  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  Eigen::Map<const Eigen::VectorXf> at(int x, int y) const {
    return Eigen::Map<const Eigen::VectorXf>(data_.data() + offset(x, y), channels_);
  }
  Eigen::Map<Eigen::VectorXf> at(int x, int y) {
    return Eigen::Map<Eigen::VectorXf>(data_.data() + offset(x, y), channels_);
  }

  const std::vector<float>& data() const { return data_; }
  std::vector<float>& data() { return data_; }

  bool operator==(const DescriptorMap&) const = default;

 private:
  std::size_t offset(int x, int y) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<float> data_;
};

struct Keypoint {
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  double score = 1.0;
};

/// Nearest integer pixel of a sub-pixel location (ties round up).
Eigen::Vector2i nearest_pixel(const Eigen::Vector2d& position);

/// Descriptor stored at the keypoint's nearest pixel. Throws OutOfBounds outside the map.
Eigen::VectorXd descriptor_at(const DescriptorMap& map, const Keypoint& kp);

/// S x S window of descriptors; row (y * S + x) holds the C-vector of window element (x, y).
struct Patch {
  int size = 0;
  Eigen::MatrixXd data;
  Keypoint center_keypoint;

  int channels() const { return static_cast<int>(data.cols()); }
  int center_index() const { return (size / 2) * size + size / 2; }
  Eigen::VectorXd center() const { return data.row(center_index()).transpose(); }
};

Patch crop_patch(const DescriptorMap& map, const Keypoint& kp, int size);

/// Cosine similarity; throws ZeroVector if either input has norm below 1e-12.
double similarity(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b);

// ---------------------------------------------------------------------------
// Synthetic descriptor oracle.

struct SyntheticLandmark {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::VectorXd descriptor;  // unit base descriptor
  Eigen::VectorXd tangent;     // unit, orthogonal to descriptor; rotation target
  Eigen::Vector3d view_axis = Eigen::Vector3d::UnitX();
};

/// Closed-form descriptor source. Each landmark paints a Gaussian blob whose
/// direction rotates from its base descriptor towards a seeded tangent by
/// view_dependence * 3pi * (view_axis . viewing_direction) radians.
class SyntheticScene {
 public:
  static constexpr double kViewGain = 3.0 * M_PI;
  static constexpr double kBackgroundNorm = 0.05;

  SyntheticScene() = default;

  /// Seeded random unit base descriptors for the given positions.
  SyntheticScene(const std::vector<Eigen::Vector3d>& positions, int channels, std::uint64_t seed,
                 double view_dependence, double falloff_sigma);

  /// Explicit base descriptors (normalized on construction).
  SyntheticScene(const std::vector<Eigen::Vector3d>& positions, const std::vector<Eigen::VectorXd>& descriptors,
                 std::uint64_t seed, double view_dependence, double falloff_sigma);

  const std::vector<SyntheticLandmark>& landmarks() const { return landmarks_; }
  int channels() const { return channels_; }
  std::uint64_t seed() const { return seed_; }
  double view_dependence() const { return view_dependence_; }
  double falloff_sigma() const { return falloff_sigma_; }
  bool empty() const { return landmarks_.empty(); }

  /// Descriptor contributed by landmark `index` when seen from `camera_center`.
  Eigen::VectorXd landmark_descriptor(std::size_t index, const Eigen::Vector3d& camera_center) const;

 private:
  void derive_perturbations();

  std::vector<SyntheticLandmark> landmarks_;
  int channels_ = 0;
  std::uint64_t seed_ = 0;
  double view_dependence_ = 0.0;
  double falloff_sigma_ = 4.0;
};

struct SyntheticView {
  DescriptorMap map;
  std::vector<Keypoint> keypoints;
  std::vector<int> landmark_ids;  // ground-truth landmark per keypoint
};

SyntheticView synth_render_view(const SyntheticScene& scene, const Pose& pose, const CameraIntrinsics& intr);

// FVDM: "FVDM", u32 version, u32 H, u32 W, u32 C, H*W*C float32 row-major, little-endian.
inline constexpr std::uint32_t kDescriptorMapVersion = 1;
void write_descriptor_map(const std::filesystem::path& path, const DescriptorMap& map);
DescriptorMap read_descriptor_map(const std::filesystem::path& path);

}  // namespace favor
