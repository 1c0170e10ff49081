#include "favor/tracking.hpp"

#include <iomanip>
#include <limits>
#include <optional>

namespace favor {

namespace {

std::vector<Eigen::VectorXd> keypoint_descriptors(std::span<const Keypoint> kps, const DescriptorMap& map) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(kps.size());
  for (const auto& kp : kps) {
    Eigen::VectorXd d = descriptor_at(map, kp);
    const double n = d.norm();
    out.push_back(n > 1e-12 ? Eigen::VectorXd(d / n) : Eigen::VectorXd::Zero(d.size()));
  }
  return out;
}

std::optional<Patch> try_crop(const DescriptorMap& map, const Keypoint& kp, int size) {
  try {
    return crop_patch(map, kp, size);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::BorderViolation || e.code() == ErrorCode::OutOfBounds) return std::nullopt;
    throw;
  }
}

}  // namespace

std::vector<MatchPair> match_consecutive(std::span<const Keypoint> prev_keypoints, const DescriptorMap& prev_map,
                                         std::span<const Keypoint> next_keypoints, const DescriptorMap& next_map,
                                         double radius, double min_sim) {
  if (prev_map.channels() != next_map.channels())
    throw Error(ErrorCode::ChannelMismatch, "frames carry different descriptor lengths");
  const auto da = keypoint_descriptors(prev_keypoints, prev_map);
  const auto db = keypoint_descriptors(next_keypoints, next_map);
  const int na = static_cast<int>(da.size());
  const int nb = static_cast<int>(db.size());
  const double r2 = radius * radius;
  constexpr double kNone = -std::numeric_limits<double>::infinity();

  // Argmax over all spatial candidates, then the min_sim threshold.
  std::vector<int> best_a(na, -1), best_b(nb, -1);
  std::vector<double> score_a(na, kNone), score_b(nb, kNone);
  for (int i = 0; i < na; ++i) {
    if (da[i].isZero(0.0)) continue;
    for (int j = 0; j < nb; ++j) {
      if (db[j].isZero(0.0)) continue;
      if ((prev_keypoints[i].position - next_keypoints[j].position).squaredNorm() > r2) continue;
      const double s = da[i].dot(db[j]);
      if (s > score_a[i]) {
        score_a[i] = s;
        best_a[i] = j;
      }
      if (s > score_b[j]) {
        score_b[j] = s;
        best_b[j] = i;
      }
    }
  }

  std::vector<MatchPair> pairs;
  for (int i = 0; i < na; ++i) {
    const int j = best_a[i];
    if (j >= 0 && best_b[j] == i && score_a[i] >= min_sim) pairs.emplace_back(i, j);
  }
  return pairs;
}

std::vector<Track> build_tracks(std::span<const Frame> frames, int patch_size, double radius, double min_sim) {
  if (frames.size() < 2) throw Error(ErrorCode::InvalidArgument, "tracking needs at least two frames");

  std::vector<Track> tracks;
  std::vector<int> active;  // keypoint index in the current frame -> track index, or -1

  auto start_tracks = [&](int frame_index, const std::vector<bool>& taken) {
    const Frame& frame = frames[frame_index];
    for (std::size_t k = 0; k < frame.keypoints.size(); ++k) {
      if (taken[k]) continue;
      auto patch = try_crop(frame.map, frame.keypoints[k], patch_size);
      if (!patch) continue;
      Track t;
      t.id = static_cast<std::int64_t>(tracks.size());
      t.observations.push_back({frame_index, frame.pose, frame.keypoints[k], std::move(*patch)});
      active[k] = static_cast<int>(tracks.size());
      tracks.push_back(std::move(t));
    }
  };

  active.assign(frames[0].keypoints.size(), -1);
  start_tracks(0, std::vector<bool>(frames[0].keypoints.size(), false));

  for (std::size_t f = 1; f < frames.size(); ++f) {
    const Frame& prev = frames[f - 1];
    const Frame& next = frames[f];
    const auto pairs = match_consecutive(prev.keypoints, prev.map, next.keypoints, next.map, radius, min_sim);
    std::vector<int> next_active(next.keypoints.size(), -1);
    std::vector<bool> taken(next.keypoints.size(), false);
    for (const auto& [i, j] : pairs) {
      const int track_index = active[i];
      if (track_index < 0) continue;
      auto patch = try_crop(next.map, next.keypoints[j], patch_size);
      if (!patch) continue;
      tracks[track_index].observations.push_back(
          {static_cast<int>(f), next.pose, next.keypoints[j], std::move(*patch)});
      next_active[j] = track_index;
      taken[j] = true;
    }
    active = std::move(next_active);
    start_tracks(static_cast<int>(f), taken);
  }
  return tracks;
}

std::vector<Track> filter_tracks(const std::vector<Track>& tracks, int min_length) {
  if (min_length < 2) throw Error(ErrorCode::InvalidArgument, "min_length must be at least 2");
  std::vector<Track> kept;
  for (const auto& t : tracks)
    if (static_cast<int>(t.size()) >= min_length) kept.push_back(t);
  return kept;
}

void write_tracks(std::ostream& out, std::span<const Track> tracks) {
  const auto flags = out.flags();
  const auto precision = out.precision();
  out << std::setprecision(17);
  for (const auto& t : tracks) {
    out << "track " << t.id << ' ' << t.size() << '\n';
    for (const auto& o : t.observations)
      out << o.frame_index << ' ' << o.keypoint.position.x() << ' ' << o.keypoint.position.y() << '\n';
  }
  out.flags(flags);
  out.precision(precision);
}

}  // namespace favor
