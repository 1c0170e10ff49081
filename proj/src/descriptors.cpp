#include "favor/descriptors.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "binary_io.hpp"
#include "favor/random.hpp"

namespace favor {

DescriptorMap::DescriptorMap(int width, int height, int channels)
    : width_(width), height_(height), channels_(channels) {
  if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidArgument, "descriptor map must be non-empty");
  if (channels < kMinChannels || channels > kMaxChannels)
    throw Error(ErrorCode::InvalidArgument, "channel count outside [8, 256]");
  data_.assign(static_cast<std::size_t>(width) * height * channels, 0.0f);
}

Eigen::Vector2i nearest_pixel(const Eigen::Vector2d& position) {
  return {static_cast<int>(std::floor(position.x() + 0.5)), static_cast<int>(std::floor(position.y() + 0.5))};
}

Eigen::VectorXd descriptor_at(const DescriptorMap& map, const Keypoint& kp) {
  const Eigen::Vector2i px = nearest_pixel(kp.position);
  if (!map.contains(px.x(), px.y())) throw Error(ErrorCode::OutOfBounds, "keypoint outside the descriptor map");
  return map.at(px.x(), px.y()).cast<double>();
}

Patch crop_patch(const DescriptorMap& map, const Keypoint& kp, int size) {
  if (size < 1 || size % 2 == 0) throw Error(ErrorCode::InvalidArgument, "patch size must be odd");
  const Eigen::Vector2i c = nearest_pixel(kp.position);
  const int half = size / 2;
  if (c.x() - half < 0 || c.y() - half < 0 || c.x() + half >= map.width() || c.y() + half >= map.height())
    throw Error(ErrorCode::BorderViolation, "patch window exits the image");

  Patch patch;
  patch.size = size;
  patch.center_keypoint = kp;
  patch.data.resize(size * size, map.channels());
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      patch.data.row(y * size + x) = map.at(c.x() - half + x, c.y() - half + y).cast<double>().transpose();
  return patch;
}

double similarity(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::ChannelMismatch, "descriptor lengths differ");
  const double na = a.norm();
  const double nb = b.norm();
  if (na < 1e-12 || nb < 1e-12) throw Error(ErrorCode::ZeroVector, "similarity of a zero vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

// ---------------------------------------------------------------------------

namespace {

Eigen::VectorXd random_unit(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd v(dim);
  do {
    for (int i = 0; i < dim; ++i) v[i] = normal(rng);
  } while (v.norm() < 1e-6);
  return v.normalized();
}

std::uint64_t hash_pose(const Pose& pose) {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  auto mix = [&h](double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    h = splitmix64(h ^ bits);
  };
  for (int i = 0; i < 9; ++i) mix(pose.rotation.data()[i]);
  for (int i = 0; i < 3; ++i) mix(pose.translation[i]);
  return h;
}

}  // namespace

SyntheticScene::SyntheticScene(const std::vector<Eigen::Vector3d>& positions, int channels, std::uint64_t seed,
                               double view_dependence, double falloff_sigma)
    : channels_(channels), seed_(seed), view_dependence_(view_dependence), falloff_sigma_(falloff_sigma) {
  if (channels < DescriptorMap::kMinChannels || channels > DescriptorMap::kMaxChannels)
    throw Error(ErrorCode::InvalidArgument, "channel count outside [8, 256]");
  std::mt19937_64 rng(derive_seed(seed, 1));
  landmarks_.reserve(positions.size());
  for (const auto& p : positions) {
    SyntheticLandmark lm;
    lm.position = p;
    lm.descriptor = random_unit(rng, channels);
    landmarks_.push_back(std::move(lm));
  }
  derive_perturbations();
}

SyntheticScene::SyntheticScene(const std::vector<Eigen::Vector3d>& positions,
                               const std::vector<Eigen::VectorXd>& descriptors, std::uint64_t seed,
                               double view_dependence, double falloff_sigma)
    : seed_(seed), view_dependence_(view_dependence), falloff_sigma_(falloff_sigma) {
  if (positions.size() != descriptors.size())
    throw Error(ErrorCode::InvalidArgument, "positions and descriptors differ in length");
  if (!descriptors.empty()) channels_ = static_cast<int>(descriptors.front().size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (descriptors[i].size() != channels_) throw Error(ErrorCode::ChannelMismatch, "mixed descriptor lengths");
    if (descriptors[i].norm() < 1e-12) throw Error(ErrorCode::ZeroVector, "zero base descriptor");
    SyntheticLandmark lm;
    lm.position = positions[i];
    lm.descriptor = descriptors[i].normalized();
    landmarks_.push_back(std::move(lm));
  }
  derive_perturbations();
}

void SyntheticScene::derive_perturbations() {
  if (!(view_dependence_ >= 0.0 && view_dependence_ < 1.0))
    throw Error(ErrorCode::InvalidArgument, "view_dependence must lie in [0, 1)");
  if (!(falloff_sigma_ > 0.0)) throw Error(ErrorCode::InvalidArgument, "falloff_sigma must be positive");
  std::mt19937_64 rng(derive_seed(seed_, 2));
  for (auto& lm : landmarks_) {
    Eigen::VectorXd t = random_unit(rng, channels_);
    t -= t.dot(lm.descriptor) * lm.descriptor;
    while (t.norm() < 1e-6) {
      t = random_unit(rng, channels_);
      t -= t.dot(lm.descriptor) * lm.descriptor;
    }
    lm.tangent = t.normalized();
    lm.view_axis = random_unit(rng, 3);
  }
}

Eigen::VectorXd SyntheticScene::landmark_descriptor(std::size_t index, const Eigen::Vector3d& camera_center) const {
  const SyntheticLandmark& lm = landmarks_.at(index);
  if (view_dependence_ == 0.0) return lm.descriptor;
  const Eigen::Vector3d view = (lm.position - camera_center).normalized();
  const double angle = view_dependence_ * kViewGain * lm.view_axis.dot(view);
  return std::cos(angle) * lm.descriptor + std::sin(angle) * lm.tangent;
}

SyntheticView synth_render_view(const SyntheticScene& scene, const Pose& pose, const CameraIntrinsics& intr) {
  if (scene.empty()) throw Error(ErrorCode::InvalidArgument, "empty synthetic scene");
  const int w = intr.width;
  const int h = intr.height;
  const int c = scene.channels();
  const double sigma = scene.falloff_sigma();
  const int radius = static_cast<int>(std::ceil(6.0 * sigma));

  // Blob sums accumulate in the map buffer itself and are normalized in place below.
  SyntheticView view;
  view.map = DescriptorMap(w, h, c);
  Eigen::VectorXd weight = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(w) * h);
  const auto& lms = scene.landmarks();
  for (std::size_t j = 0; j < lms.size(); ++j) {
    Eigen::Vector2d uv;
    if (!try_project(pose, intr, lms[j].position, uv)) continue;
    if (uv.x() < -radius || uv.y() < -radius || uv.x() > w - 1 + radius || uv.y() > h - 1 + radius) continue;
    const Eigen::VectorXf d = scene.landmark_descriptor(j, pose.center()).cast<float>();
    const int x0 = std::max(0, static_cast<int>(std::floor(uv.x())) - radius);
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(uv.x())) + radius);
    const int y0 = std::max(0, static_cast<int>(std::floor(uv.y())) - radius);
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(uv.y())) + radius);
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dx = x - uv.x();
        const double dy = y - uv.y();
        const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        view.map.at(x, y) += static_cast<float>(g) * d;
        weight[static_cast<Eigen::Index>(y) * w + x] += g;
      }
    }
    if (uv.x() >= 0.0 && uv.y() >= 0.0 && uv.x() <= w - 1 && uv.y() <= h - 1) {
      view.keypoints.push_back({uv, 1.0});
      view.landmark_ids.push_back(static_cast<int>(j));
    }
  }

  std::mt19937_64 rng(derive_seed(scene.seed(), hash_pose(pose)));
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);
  Eigen::VectorXd noise(c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int k = 0; k < c; ++k) noise[k] = uniform(rng);
      noise *= SyntheticScene::kBackgroundNorm / std::max(noise.norm(), 1e-12);
      const double signal = std::min(weight[static_cast<Eigen::Index>(y) * w + x], 1.0);
      const Eigen::VectorXd sum = view.map.at(x, y).cast<double>();
      const double norm = sum.norm();
      Eigen::VectorXd px = (1.0 - signal) * noise;
      if (norm > 1e-12) px += (signal / norm) * sum;
      view.map.at(x, y) = px.cast<float>();
    }
  }
  return view;
}

// ---------------------------------------------------------------------------

void write_descriptor_map(const std::filesystem::path& path, const DescriptorMap& map) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  out.write("FVDM", 4);
  detail::write_le<std::uint32_t>(out, kDescriptorMapVersion);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(map.height()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(map.width()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(map.channels()));
  for (float v : map.data()) detail::write_le<float>(out, v);
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

DescriptorMap read_descriptor_map(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "FVDM", 4) != 0) throw Error(ErrorCode::BadMagic, path.string());
  std::uint32_t version = 0, h = 0, w = 0, c = 0;
  if (!detail::read_le(in, version)) throw Error(ErrorCode::CorruptPayload, "truncated header");
  if (version != kDescriptorMapVersion) throw Error(ErrorCode::VersionMismatch, path.string());
  if (!detail::read_le(in, h) || !detail::read_le(in, w) || !detail::read_le(in, c))
    throw Error(ErrorCode::CorruptPayload, "truncated header");
  if (h == 0 || w == 0 || c < DescriptorMap::kMinChannels || c > DescriptorMap::kMaxChannels || h > 1u << 16 ||
      w > 1u << 16)
    throw Error(ErrorCode::CorruptPayload, "implausible dimensions");
  DescriptorMap map(static_cast<int>(w), static_cast<int>(h), static_cast<int>(c));
  for (float& v : map.data()) {
    if (!detail::read_le(in, v)) throw Error(ErrorCode::CorruptPayload, "truncated payload");
    if (!std::isfinite(v)) throw Error(ErrorCode::CorruptPayload, "non-finite descriptor value");
  }
  return map;
}

}  // namespace favor
