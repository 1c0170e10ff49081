#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <utility>
#include <vector>

#include "favor/descriptors.hpp"
#include "favor/geometry.hpp"

namespace favor {

/// One posed image as seen by the front end.
struct Frame {
  Pose pose;
  std::vector<Keypoint> keypoints;
  DescriptorMap map;
};

struct Observation {
  int frame_index = 0;
  Pose pose;
  Keypoint keypoint;
  Patch patch;
};

struct Track {
  std::int64_t id = 0;
  std::vector<Observation> observations;

  std::size_t size() const { return observations.size(); }
};

struct TrackingConfig {
  double radius = 20.0;    // pixels
  double min_sim = 0.8;
  int patch_size = 7;
  int min_length = 5;
};

using MatchPair = std::pair<int, int>;

/// Mutual nearest neighbours by cosine similarity among keypoints within `radius` pixels.
/// Ties go to the lower index. Output is sorted by the first index.
std::vector<MatchPair> match_consecutive(std::span<const Keypoint> prev_keypoints, const DescriptorMap& prev_map,
                                         std::span<const Keypoint> next_keypoints, const DescriptorMap& next_map,
                                         double radius, double min_sim);

std::vector<Track> build_tracks(std::span<const Frame> frames, int patch_size, double radius, double min_sim);

std::vector<Track> filter_tracks(const std::vector<Track>& tracks, int min_length);

/// Debug dump: "track <id> <length>" followed by one "<frame> <u> <v>" line per observation.
void write_tracks(std::ostream& out, std::span<const Track> tracks);

}  // namespace favor
