#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "favor/descriptors.hpp"
#include "favor/geometry.hpp"
#include "favor/relocalizer.hpp"
#include "favor/trainer.hpp"
#include "favor/tracking.hpp"
#include "favor/triangulation.hpp"
#include "favor/voxel.hpp"

namespace favor {

// ---------------------------------------------------------------------------
// Synthetic scenes.

/// Landmarks uniform in a cube of side `scene_extent` centered at the origin;
/// cameras on a circular orbit around the world z axis, looking at the origin.
struct SceneSpec {
  int landmark_count = 120;
  double scene_extent = 2.0;      // meters
  double min_separation = 0.15;   // meters between landmarks
  double orbit_radius = 5.0;      // meters
  double orbit_elevation_deg = 10.0;
  double angular_range_deg = 60.0;
  int frame_count = 20;
  int query_count = 10;
  double query_offset_deg = 6.0;  // extra elevation of query views
  int channels = 32;
  double falloff_sigma = 3.0;     // pixels
  double pixel_sigma = 0.3;       // keypoint noise, pixels
  double view_dependence = 0.05;
  double outlier_rate = 0.05;     // spurious keypoints per true keypoint
  CameraIntrinsics intrinsics{300.0, 300.0, 159.5, 119.5, 320, 240};
  std::uint64_t seed = 1;

  /// Throws InvalidArgument.
  void validate() const;
  double diameter() const;
};

/// One posed image with its keypoints. `landmark_ids` is the ground truth
/// (-1 for spurious keypoints) and is empty for views read from disk.
struct View {
  int index = 0;
  Pose pose;
  DescriptorMap map;
  std::vector<Keypoint> keypoints;
  std::vector<int> landmark_ids;

  Frame frame() const { return Frame{pose, keypoints, map}; }
};

struct SceneData {
  SyntheticScene scene;
  CameraIntrinsics intrinsics;
  std::vector<View> train;
  std::vector<View> queries;
};

Pose orbit_pose(const SceneSpec& spec, double azimuth_deg, double elevation_offset_deg = 0.0);
std::vector<double> training_azimuths(const SceneSpec& spec);
std::vector<double> query_azimuths(const SceneSpec& spec);
std::vector<Eigen::Vector3d> scene_landmarks(const SceneSpec& spec);
SyntheticScene make_scene(const SceneSpec& spec);

/// Renders a view of the scene and applies keypoint noise and spurious keypoints.
View make_view(const SceneSpec& spec, const SyntheticScene& scene, const Pose& pose, int index,
               std::uint64_t noise_seed);

SceneData gen_scene(const SceneSpec& spec);

// ---------------------------------------------------------------------------
// Map building.

struct PipelineConfig {
  TrackingConfig tracking;
  TriangulationConfig triangulation;
  double max_landmark_error = 2.0;  // pixels; worse landmarks are dropped
  int resolution = 3;
  VoxelInit voxel_init;
  TrainConfig train;
  int workers = 1;
  std::uint64_t seed = 1;
};

std::vector<Track> run_tracking(std::span<const View> views, const TrackingConfig& cfg);
std::vector<Landmark> run_triangulation(std::span<const Track> tracks, const CameraIntrinsics& intr,
                                        const PipelineConfig& cfg);

struct TrainedVoxel {
  VoxelLandmark voxel;
  std::vector<LossBreakdown> history;
};

/// Trains one voxel per landmark across `cfg.workers` threads. Seeds derive from
/// the master seed and the track id; results are identical for any worker count.
std::vector<TrainedVoxel> run_training(std::span<const Track> tracks, std::span<const Landmark> landmarks,
                                       const CameraIntrinsics& intr, const PipelineConfig& cfg);

struct BuildResult {
  std::vector<Track> tracks;
  std::vector<Landmark> landmarks;
  VoxelMap map;
  std::vector<std::vector<LossBreakdown>> histories;
};

/// Tracking, triangulation and training; lattices are rounded to float32.
BuildResult build_map(std::span<const View> views, const CameraIntrinsics& intr, const PipelineConfig& cfg);

// ---------------------------------------------------------------------------
// Evaluation.

enum class PriorKind { GroundTruth, NearestTraining, Perturbed };

struct PriorSettings {
  double rotation_deg = 30.0;
  double translation_fraction = 0.25;  // of the scene diameter
};

/// GroundTruth: the query pose. NearestTraining: training pose with the closest
/// camera center. Perturbed: query pose yawed by rotation_deg and shifted by
/// translation_fraction * diameter along a seeded direction.
std::vector<Pose> make_priors(PriorKind kind, std::span<const View> queries, std::span<const Pose> training_poses,
                              double scene_diameter, std::uint64_t seed, const PriorSettings& settings = {});

struct EvalSettings {
  int workers = 1;
  std::uint64_t seed = 1;
  double success_translation = 0.05;  // meters
  double success_rotation_deg = 5.0;
};

struct QueryResult {
  int index = 0;
  bool localized = false;
  std::string failure;
  Pose estimate;
  double translation_error = 0.0;
  double rotation_error_deg = 0.0;
  std::vector<int> inliers;  // per iteration
  std::vector<double> translation_errors;
  std::vector<double> rotation_errors_deg;
};

struct EvalReport {
  std::vector<QueryResult> queries;
  int localized = 0;
  int failed = 0;
  int within_threshold = 0;
  double median_translation = 0.0;
  double median_rotation_deg = 0.0;
  std::vector<double> mean_inliers;  // per iteration, over queries that reached it
  std::vector<double> median_translation_per_iteration;
  std::vector<double> median_rotation_per_iteration;
};

EvalReport run_eval(const VoxelMap& map, std::span<const View> queries, std::span<const Pose> priors,
                    const LocalizeConfig& localize, const EvalSettings& settings);

void write_report(std::ostream& out, const EvalReport& report);
/// Rows: iteration mean_inliers median_t median_r.
void write_iteration_table(std::ostream& out, const EvalReport& report);

struct SweepPoint {
  double angle_deg = 0.0;
  double similarity = 0.0;  // median over landmarks
  int count = 0;
};

/// Rendered descriptors at orbit poses vs the oracle map of the same pose.
std::vector<SweepPoint> rendered_sweep(const SceneSpec& spec, const SyntheticScene& scene, const VoxelMap& map,
                                       std::span<const double> angles_deg, const RenderSettings& render = {});
/// Oracle descriptors at the 0 degree view vs the oracle map of each swept pose.
std::vector<SweepPoint> raw_sweep(const SceneSpec& spec, const SyntheticScene& scene,
                                  std::span<const double> angles_deg);
/// Rows: angle rendered raw.
void write_sweep(std::ostream& out, std::span<const SweepPoint> rendered, std::span<const SweepPoint> raw);

// ---------------------------------------------------------------------------
// Dataset directories and configuration.

/// dir/intrinsics.txt, dir/poses.txt (index + camera-to-world [R|t] row-major),
/// dir/maps/NNNN.fvdm, dir/keypoints/NNNN.txt (u v score).
void write_dataset(const std::filesystem::path& dir, const CameraIntrinsics& intr, std::span<const View> views);

struct Dataset {
  CameraIntrinsics intrinsics;
  std::vector<View> views;
};

/// Throws IoFailure or CorruptPayload.
Dataset read_dataset(const std::filesystem::path& dir);

void write_poses(const std::filesystem::path& path, std::span<const int> indices, std::span<const Pose> poses);
std::vector<std::pair<int, Pose>> read_poses(const std::filesystem::path& path);

void write_landmarks(std::ostream& out, std::span<const Landmark> landmarks);

struct AppConfig {
  SceneSpec scene;
  PipelineConfig pipeline;
  LocalizeConfig localize;
  EvalSettings eval;
  PriorSettings priors;
};

/// Structured-text (JSON) configuration; missing keys keep their defaults,
/// unknown keys throw InvalidArgument.
AppConfig parse_config(const std::string& text);
AppConfig load_config(const std::filesystem::path& path);
std::string dump_config(const AppConfig& cfg);

double median(std::vector<double> values);

}  // namespace favor
