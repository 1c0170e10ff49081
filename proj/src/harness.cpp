#include "favor/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "favor/error.hpp"
#include "favor/mapstore.hpp"
#include "favor/random.hpp"
#include "json.hpp"

namespace favor {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Stream tags for seeds derived from the master seed.
enum SeedStream : std::uint64_t {
  kLandmarkStream = 10,
  kDescriptorStream = 11,
  kTrainNoiseStream = 12,
  kQueryNoiseStream = 13,
  kVoxelInitStream = 14,
  kTrainStream = 15,
  kRansacStream = 16,
  kPriorStream = 17,
};

/// Runs fn(i) for i in [0, n) on up to `workers` threads. The exception of the
/// lowest failing index is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(workers, static_cast<int>(n)));
  if (threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::string frame_name(int index) {
  std::ostringstream s;
  s << std::setw(4) << std::setfill('0') << index;
  return s.str();
}

}  // namespace

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t m = values.size() / 2;
  return values.size() % 2 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

// ---------------------------------------------------------------------------
// Synthetic scenes.

void SceneSpec::validate() const {
  if (landmark_count < 1) throw Error(ErrorCode::InvalidArgument, "landmark_count must be positive");
  if (!(scene_extent > 0.0)) throw Error(ErrorCode::InvalidArgument, "scene_extent must be positive");
  if (frame_count < 2) throw Error(ErrorCode::InvalidArgument, "frame_count must be at least 2");
  if (query_count < 0) throw Error(ErrorCode::InvalidArgument, "query_count must be non-negative");
  if (!(orbit_radius > diameter() / 2.0))
    throw Error(ErrorCode::InvalidArgument, "orbit_radius must clear the scene");
  if (!(angular_range_deg >= 0.0) || angular_range_deg > 360.0)
    throw Error(ErrorCode::InvalidArgument, "angular_range_deg out of range");
  if (channels < DescriptorMap::kMinChannels || channels > DescriptorMap::kMaxChannels)
    throw Error(ErrorCode::InvalidArgument, "channels out of range");
  if (!(falloff_sigma > 0.0)) throw Error(ErrorCode::InvalidArgument, "falloff_sigma must be positive");
  if (!(pixel_sigma >= 0.0)) throw Error(ErrorCode::InvalidArgument, "pixel_sigma must be non-negative");
  if (!(view_dependence >= 0.0 && view_dependence < 1.0))
    throw Error(ErrorCode::InvalidArgument, "view_dependence must lie in [0, 1)");
  if (!(outlier_rate >= 0.0)) throw Error(ErrorCode::InvalidArgument, "outlier_rate must be non-negative");
  if (!(min_separation >= 0.0)) throw Error(ErrorCode::InvalidArgument, "min_separation must be non-negative");
  intrinsics.validate();
}

double SceneSpec::diameter() const { return scene_extent * std::sqrt(3.0); }

Pose orbit_pose(const SceneSpec& spec, double azimuth_deg, double elevation_offset_deg) {
  const double az = azimuth_deg * kDeg;
  const double el = (spec.orbit_elevation_deg + elevation_offset_deg) * kDeg;
  const Eigen::Vector3d eye = spec.orbit_radius *
                              Eigen::Vector3d(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
  return look_at(eye, Eigen::Vector3d::Zero());
}

std::vector<double> training_azimuths(const SceneSpec& spec) {
  std::vector<double> out(spec.frame_count);
  const double step = spec.angular_range_deg / (spec.frame_count - 1);
  for (int i = 0; i < spec.frame_count; ++i) out[i] = -0.5 * spec.angular_range_deg + i * step;
  return out;
}

std::vector<double> query_azimuths(const SceneSpec& spec) {
  std::vector<double> out(spec.query_count);
  for (int q = 0; q < spec.query_count; ++q)
    out[q] = -0.5 * spec.angular_range_deg + (q + 0.5) * spec.angular_range_deg / spec.query_count;
  return out;
}

std::vector<Eigen::Vector3d> scene_landmarks(const SceneSpec& spec) {
  std::mt19937_64 rng(derive_seed(spec.seed, kLandmarkStream));
  std::uniform_real_distribution<double> u(-0.5 * spec.scene_extent, 0.5 * spec.scene_extent);
  std::vector<Eigen::Vector3d> out;
  const int max_attempts = 1000 * spec.landmark_count;
  for (int attempt = 0; attempt < max_attempts && static_cast<int>(out.size()) < spec.landmark_count; ++attempt) {
    const double x = u(rng), y = u(rng), z = u(rng);
    const Eigen::Vector3d p(x, y, z);
    const bool clear = std::all_of(out.begin(), out.end(),
                                   [&](const Eigen::Vector3d& q) { return (q - p).norm() >= spec.min_separation; });
    if (clear) out.push_back(p);
  }
  if (static_cast<int>(out.size()) < spec.landmark_count)
    throw Error(ErrorCode::InvalidArgument, "cannot place landmarks with the requested separation");
  return out;
}

SyntheticScene make_scene(const SceneSpec& spec) {
  return SyntheticScene(scene_landmarks(spec), spec.channels, derive_seed(spec.seed, kDescriptorStream),
                        spec.view_dependence, spec.falloff_sigma);
}

View make_view(const SceneSpec& spec, const SyntheticScene& scene, const Pose& pose, int index,
               std::uint64_t noise_seed) {
  SyntheticView sv = synth_render_view(scene, pose, spec.intrinsics);
  View v;
  v.index = index;
  v.pose = pose;
  v.map = std::move(sv.map);
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double w = spec.intrinsics.width - 1.0, h = spec.intrinsics.height - 1.0;
  for (std::size_t i = 0; i < sv.keypoints.size(); ++i) {
    Keypoint kp = sv.keypoints[i];
    const double dx = noise(rng), dy = noise(rng);
    kp.position += spec.pixel_sigma * Eigen::Vector2d(dx, dy);
    if (kp.position.x() < 0.0 || kp.position.y() < 0.0 || kp.position.x() > w || kp.position.y() > h) continue;
    v.keypoints.push_back(kp);
    v.landmark_ids.push_back(sv.landmark_ids[i]);
  }
  const int spurious = static_cast<int>(std::lround(spec.outlier_rate * static_cast<double>(v.keypoints.size())));
  std::uniform_real_distribution<double> ux(0.0, w), uy(0.0, h);
  for (int i = 0; i < spurious; ++i) {
    const double x = ux(rng), y = uy(rng);
    v.keypoints.push_back(Keypoint{Eigen::Vector2d(x, y), 0.5});
    v.landmark_ids.push_back(-1);
  }
  return v;
}

SceneData gen_scene(const SceneSpec& spec) {
  spec.validate();
  SceneData out;
  out.scene = make_scene(spec);
  out.intrinsics = spec.intrinsics;
  const auto train_az = training_azimuths(spec);
  for (int i = 0; i < spec.frame_count; ++i)
    out.train.push_back(make_view(spec, out.scene, orbit_pose(spec, train_az[i]), i,
                                  derive_seed(derive_seed(spec.seed, kTrainNoiseStream), i)));
  const auto query_az = query_azimuths(spec);
  for (int q = 0; q < spec.query_count; ++q)
    out.queries.push_back(make_view(spec, out.scene, orbit_pose(spec, query_az[q], spec.query_offset_deg), q,
                                    derive_seed(derive_seed(spec.seed, kQueryNoiseStream), q)));
  return out;
}

// ---------------------------------------------------------------------------
// Map building.

std::vector<Track> run_tracking(std::span<const View> views, const TrackingConfig& cfg) {
  std::vector<Frame> frames;
  frames.reserve(views.size());
  for (const auto& v : views) frames.push_back(v.frame());
  return filter_tracks(build_tracks(frames, cfg.patch_size, cfg.radius, cfg.min_sim), cfg.min_length);
}

std::vector<Landmark> run_triangulation(std::span<const Track> tracks, const CameraIntrinsics& intr,
                                        const PipelineConfig& cfg) {
  std::vector<Landmark> out;
  for (const auto& track : tracks) {
    try {
      const Eigen::Vector3d init = dlt_triangulate(track, intr);
      Landmark lm = refine_landmark(track, init, intr, cfg.triangulation);
      if (lm.mean_reprojection_error <= cfg.max_landmark_error) out.push_back(lm);
    } catch (const Error& e) {
      switch (e.code()) {
        case ErrorCode::DegenerateGeometry:
        case ErrorCode::NonConvergence:
        case ErrorCode::NegativeDepth:
          break;
        default:
          throw;
      }
    }
  }
  return out;
}

std::vector<TrainedVoxel> run_training(std::span<const Track> tracks, std::span<const Landmark> landmarks,
                                       const CameraIntrinsics& intr, const PipelineConfig& cfg) {
  cfg.train.validate();
  std::map<std::int64_t, const Track*> by_id;
  for (const auto& t : tracks) by_id[t.id] = &t;
  for (const auto& lm : landmarks)
    if (!by_id.count(lm.track_id)) throw Error(ErrorCode::InvalidArgument, "landmark without a track");

  std::vector<TrainedVoxel> out(landmarks.size());
  parallel_for(landmarks.size(), cfg.workers, [&](std::size_t i) {
    const Landmark& lm = landmarks[i];
    const Track& track = *by_id.at(lm.track_id);
    const auto id = static_cast<std::uint64_t>(lm.track_id);
    VoxelInit init = cfg.voxel_init;
    init.seed = derive_seed(derive_seed(cfg.seed, kVoxelInitStream), id);
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(derive_seed(cfg.seed, kTrainStream), id);
    VoxelLandmark voxel = create_voxel(track, lm.position, cfg.tracking.patch_size, intr, cfg.resolution, init);
    TrainResult r = train_voxel(std::move(voxel), track, intr, tc);
    out[i] = TrainedVoxel{std::move(r.voxel), std::move(r.history)};
  });
  return out;
}

BuildResult build_map(std::span<const View> views, const CameraIntrinsics& intr, const PipelineConfig& cfg) {
  if (views.empty()) throw Error(ErrorCode::InvalidArgument, "no views");
  BuildResult out;
  out.tracks = run_tracking(views, cfg.tracking);
  out.landmarks = run_triangulation(out.tracks, intr, cfg);
  auto trained = run_training(out.tracks, out.landmarks, intr, cfg);
  out.map.intrinsics = intr;
  out.map.channels = views.front().map.channels();
  out.map.resolution = cfg.resolution;
  out.map.patch_size = cfg.tracking.patch_size;
  for (auto& t : trained) {
    out.map.voxels.push_back(std::move(t.voxel));
    out.histories.push_back(std::move(t.history));
  }
  quantize_to_float(out.map);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation.

std::vector<Pose> make_priors(PriorKind kind, std::span<const View> queries, std::span<const Pose> training_poses,
                              double scene_diameter, std::uint64_t seed, const PriorSettings& settings) {
  std::vector<Pose> out;
  for (const auto& q : queries) {
    switch (kind) {
      case PriorKind::GroundTruth:
        out.push_back(q.pose);
        break;
      case PriorKind::NearestTraining: {
        if (training_poses.empty()) throw Error(ErrorCode::InvalidArgument, "no training poses");
        const Pose* best = &training_poses.front();
        for (const auto& p : training_poses)
          if ((p.center() - q.pose.center()).norm() < (best->center() - q.pose.center()).norm()) best = &p;
        out.push_back(*best);
        break;
      }
      case PriorKind::Perturbed: {
        std::mt19937_64 rng(derive_seed(derive_seed(seed, kPriorStream), static_cast<std::uint64_t>(q.index)));
        std::normal_distribution<double> n(0.0, 1.0);
        Eigen::Vector3d dir;
        do {
          const double x = n(rng), y = n(rng), z = n(rng);
          dir = Eigen::Vector3d(x, y, z);
        } while (dir.norm() < 1e-6);
        const Eigen::Matrix3d yaw = exp_so3(Eigen::Vector3d(0.0, settings.rotation_deg * kDeg, 0.0));
        out.push_back(Pose(q.pose.rotation * yaw,
                           q.pose.center() + settings.translation_fraction * scene_diameter * dir.normalized()));
        break;
      }
    }
  }
  return out;
}

EvalReport run_eval(const VoxelMap& map, std::span<const View> queries, std::span<const Pose> priors,
                    const LocalizeConfig& localize, const EvalSettings& settings) {
  if (queries.size() != priors.size()) throw Error(ErrorCode::InvalidArgument, "queries and priors differ in count");
  EvalReport report;
  report.queries.resize(queries.size());
  parallel_for(queries.size(), settings.workers, [&](std::size_t i) {
    const View& q = queries[i];
    QueryResult& r = report.queries[i];
    r.index = q.index;
    LocalizeConfig cfg = localize;
    cfg.ransac.seed = derive_seed(derive_seed(settings.seed, kRansacStream), static_cast<std::uint64_t>(q.index));
    try {
      const PoseEstimate est = iterative_localize(map, q.keypoints, q.map, priors[i], cfg);
      r.localized = true;
      r.estimate = est.pose;
      r.translation_error = translation_error(est.pose, q.pose);
      r.rotation_error_deg = rotation_error_deg(est.pose, q.pose);
      for (const auto& it : est.per_iteration) {
        r.inliers.push_back(it.inliers);
        r.translation_errors.push_back(translation_error(it.pose, q.pose));
        r.rotation_errors_deg.push_back(rotation_error_deg(it.pose, q.pose));
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::LocalizationFailed) throw;
      r.localized = false;
      r.failure = e.what();
    }
  });

  std::vector<double> t_err, r_err;
  std::size_t max_iters = 0;
  for (const auto& r : report.queries) {
    if (!r.localized) {
      ++report.failed;
      continue;
    }
    ++report.localized;
    t_err.push_back(r.translation_error);
    r_err.push_back(r.rotation_error_deg);
    if (r.translation_error <= settings.success_translation && r.rotation_error_deg <= settings.success_rotation_deg)
      ++report.within_threshold;
    max_iters = std::max(max_iters, r.inliers.size());
  }
  report.median_translation = median(t_err);
  report.median_rotation_deg = median(r_err);
  for (std::size_t k = 0; k < max_iters; ++k) {
    double sum = 0.0;
    std::vector<double> tk, rk;
    for (const auto& r : report.queries) {
      if (!r.localized) continue;
      // Queries that stopped early carry their last estimate forward.
      const std::size_t j = std::min(k, r.inliers.size() - 1);
      sum += r.inliers[j];
      tk.push_back(r.translation_errors[j]);
      rk.push_back(r.rotation_errors_deg[j]);
    }
    report.mean_inliers.push_back(sum / static_cast<double>(tk.size()));
    report.median_translation_per_iteration.push_back(median(tk));
    report.median_rotation_per_iteration.push_back(median(rk));
  }
  return report;
}

namespace {

nlohmann::json pose_json(const Pose& p) {
  nlohmann::json j = nlohmann::json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) j.push_back(c < 3 ? p.rotation(r, c) : p.translation[r]);
  return j;
}

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

void write_report(std::ostream& out, const EvalReport& report) {
  nlohmann::json j;
  j["query_count"] = report.queries.size();
  j["localized"] = report.localized;
  j["failed"] = report.failed;
  j["within_threshold"] = report.within_threshold;
  j["median_translation_m"] = number_or_null(report.median_translation);
  j["median_rotation_deg"] = number_or_null(report.median_rotation_deg);
  j["mean_inliers_per_iteration"] = report.mean_inliers;
  j["median_translation_per_iteration"] = report.median_translation_per_iteration;
  j["median_rotation_per_iteration"] = report.median_rotation_per_iteration;
  nlohmann::json qs = nlohmann::json::array();
  for (const auto& r : report.queries) {
    nlohmann::json q;
    q["index"] = r.index;
    q["localized"] = r.localized;
    if (r.localized) {
      q["translation_error_m"] = r.translation_error;
      q["rotation_error_deg"] = r.rotation_error_deg;
      q["inliers"] = r.inliers;
      q["translation_errors"] = r.translation_errors;
      q["rotation_errors_deg"] = r.rotation_errors_deg;
      q["pose"] = pose_json(r.estimate);
    } else {
      q["failure"] = r.failure;
    }
    qs.push_back(q);
  }
  j["queries"] = qs;
  out << j.dump(2) << '\n';
}

void write_iteration_table(std::ostream& out, const EvalReport& report) {
  out << "# iteration mean_inliers median_translation_m median_rotation_deg\n" << std::setprecision(17);
  for (std::size_t k = 0; k < report.mean_inliers.size(); ++k)
    out << k + 1 << ' ' << report.mean_inliers[k] << ' ' << report.median_translation_per_iteration[k] << ' '
        << report.median_rotation_per_iteration[k] << '\n';
}

std::vector<SweepPoint> rendered_sweep(const SceneSpec& spec, const SyntheticScene& scene, const VoxelMap& map,
                                       std::span<const double> angles_deg, const RenderSettings& render) {
  std::vector<SweepPoint> out;
  for (double angle : angles_deg) {
    const Pose pose = orbit_pose(spec, angle);
    const SyntheticView view = synth_render_view(scene, pose, spec.intrinsics);
    std::vector<double> sims;
    for (const auto& f : render_visible(map, pose, render)) {
      const Eigen::Vector2i px = nearest_pixel(f.pixel);
      if (!view.map.contains(px.x(), px.y())) continue;
      const Eigen::VectorXd target = view.map.at(px.x(), px.y()).cast<double>();
      if (target.norm() < 1e-12 || f.descriptor.norm() < 1e-12) continue;
      sims.push_back(similarity(f.descriptor, target));
    }
    out.push_back(SweepPoint{angle, median(sims), static_cast<int>(sims.size())});
  }
  return out;
}

std::vector<SweepPoint> raw_sweep(const SceneSpec& spec, const SyntheticScene& scene,
                                  std::span<const double> angles_deg) {
  const SyntheticView ref = synth_render_view(scene, orbit_pose(spec, 0.0), spec.intrinsics);
  std::map<int, Eigen::VectorXd> ref_desc;
  for (std::size_t i = 0; i < ref.keypoints.size(); ++i)
    ref_desc[ref.landmark_ids[i]] = descriptor_at(ref.map, ref.keypoints[i]);
  std::vector<SweepPoint> out;
  for (double angle : angles_deg) {
    const SyntheticView view = synth_render_view(scene, orbit_pose(spec, angle), spec.intrinsics);
    std::vector<double> sims;
    for (std::size_t i = 0; i < view.keypoints.size(); ++i) {
      const auto it = ref_desc.find(view.landmark_ids[i]);
      if (it == ref_desc.end()) continue;
      sims.push_back(similarity(it->second, descriptor_at(view.map, view.keypoints[i])));
    }
    out.push_back(SweepPoint{angle, median(sims), static_cast<int>(sims.size())});
  }
  return out;
}

void write_sweep(std::ostream& out, std::span<const SweepPoint> rendered, std::span<const SweepPoint> raw) {
  out << "# angle_deg rendered_similarity raw_similarity\n" << std::setprecision(17);
  const std::size_t n = std::max(rendered.size(), raw.size());
  for (std::size_t i = 0; i < n; ++i) {
    const double angle = i < rendered.size() ? rendered[i].angle_deg : raw[i].angle_deg;
    out << angle << ' ' << (i < rendered.size() ? rendered[i].similarity : std::nan("")) << ' '
        << (i < raw.size() ? raw[i].similarity : std::nan("")) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Dataset directories.

void write_poses(const std::filesystem::path& path, std::span<const int> indices, std::span<const Pose> poses) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  out << std::setprecision(17);
  for (std::size_t i = 0; i < poses.size(); ++i) {
    out << indices[i];
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) out << ' ' << (c < 3 ? poses[i].rotation(r, c) : poses[i].translation[r]);
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

std::vector<std::pair<int, Pose>> read_poses(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::vector<std::pair<int, Pose>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream s(line);
    int index = 0;
    Pose p;
    s >> index;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) s >> (c < 3 ? p.rotation(r, c) : p.translation[r]);
    if (!s || !p.is_valid()) throw Error(ErrorCode::CorruptPayload, "bad pose line in " + path.string());
    out.emplace_back(index, p);
  }
  return out;
}

void write_dataset(const std::filesystem::path& dir, const CameraIntrinsics& intr, std::span<const View> views) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "maps", ec);
  std::filesystem::create_directories(dir / "keypoints", ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + dir.string());
  {
    std::ofstream out(dir / "intrinsics.txt");
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write intrinsics");
    out << std::setprecision(17) << intr.fx << ' ' << intr.fy << ' ' << intr.cx << ' ' << intr.cy << ' '
        << intr.width << ' ' << intr.height << '\n';
  }
  std::vector<int> indices;
  std::vector<Pose> poses;
  for (const auto& v : views) {
    indices.push_back(v.index);
    poses.push_back(v.pose);
    write_descriptor_map(dir / "maps" / (frame_name(v.index) + ".fvdm"), v.map);
    std::ofstream kp(dir / "keypoints" / (frame_name(v.index) + ".txt"));
    if (!kp) throw Error(ErrorCode::IoFailure, "cannot write keypoints");
    kp << std::setprecision(17);
    for (const auto& k : v.keypoints) kp << k.position.x() << ' ' << k.position.y() << ' ' << k.score << '\n';
  }
  write_poses(dir / "poses.txt", indices, poses);
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  {
    std::ifstream in(dir / "intrinsics.txt");
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + (dir / "intrinsics.txt").string());
    auto& k = ds.intrinsics;
    in >> k.fx >> k.fy >> k.cx >> k.cy >> k.width >> k.height;
    if (!in) throw Error(ErrorCode::CorruptPayload, "bad intrinsics file");
    try {
      k.validate();
    } catch (const Error& e) {
      throw Error(ErrorCode::CorruptPayload, e.what());
    }
  }
  for (const auto& [index, pose] : read_poses(dir / "poses.txt")) {
    View v;
    v.index = index;
    v.pose = pose;
    v.map = read_descriptor_map(dir / "maps" / (frame_name(index) + ".fvdm"));
    std::ifstream kp(dir / "keypoints" / (frame_name(index) + ".txt"));
    if (!kp) throw Error(ErrorCode::IoFailure, "missing keypoints for frame " + std::to_string(index));
    std::string line;
    while (std::getline(kp, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream s(line);
      Keypoint k;
      s >> k.position.x() >> k.position.y() >> k.score;
      if (!s || !k.position.allFinite()) throw Error(ErrorCode::CorruptPayload, "bad keypoint line");
      v.keypoints.push_back(k);
    }
    ds.views.push_back(std::move(v));
  }
  return ds;
}

void write_landmarks(std::ostream& out, std::span<const Landmark> landmarks) {
  out << "# track_id x y z mean_reprojection_error_px\n" << std::setprecision(17);
  for (const auto& l : landmarks)
    out << l.track_id << ' ' << l.position.x() << ' ' << l.position.y() << ' ' << l.position.z() << ' '
        << l.mean_reprojection_error << '\n';
}

// ---------------------------------------------------------------------------
// Configuration.

namespace {

using nlohmann::json;

/// Visits one JSON object: reads known keys, rejects unknown ones.
class Section {
 public:
  Section(json* node, bool reading, std::string name) : node_(node), reading_(reading), name_(std::move(name)) {
    if (reading_ && !node_->is_object()) throw Error(ErrorCode::InvalidArgument, name_ + " must be an object");
  }

  template <typename T>
  void operator()(const char* key, T& value) {
    seen_.insert(key);
    if (!reading_) {
      (*node_)[key] = value;
      return;
    }
    if (!node_->contains(key)) return;
    try {
      value = node_->at(key).get<T>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidArgument, name_ + "." + key + ": " + e.what());
    }
  }

  Section child(const char* key) {
    seen_.insert(key);
    if (!reading_) (*node_)[key] = json::object();
    if (reading_ && !node_->contains(key)) return Section(&empty_, true, name_ + "." + key);
    return Section(&(*node_)[key], reading_, name_ + "." + key);
  }

  void finish() const {
    if (!reading_) return;
    for (const auto& item : node_->items())
      if (!seen_.count(item.key())) throw Error(ErrorCode::InvalidArgument, "unknown key " + name_ + "." + item.key());
  }

 private:
  json* node_;
  bool reading_;
  std::string name_;
  std::set<std::string> seen_;
  inline static json empty_ = json::object();
};

void visit(AppConfig& c, json& root, bool reading) {
  Section top(&root, reading, "config");
  std::uint64_t seed = c.scene.seed;
  top("seed", seed);
  top("workers", c.pipeline.workers);
  c.scene.seed = c.pipeline.seed = c.eval.seed = seed;
  c.eval.workers = c.pipeline.workers;

  {
    SceneSpec& s = c.scene;
    Section sec = top.child("scene");
    sec("landmark_count", s.landmark_count);
    sec("scene_extent", s.scene_extent);
    sec("min_separation", s.min_separation);
    sec("orbit_radius", s.orbit_radius);
    sec("orbit_elevation_deg", s.orbit_elevation_deg);
    sec("angular_range_deg", s.angular_range_deg);
    sec("frame_count", s.frame_count);
    sec("query_count", s.query_count);
    sec("query_offset_deg", s.query_offset_deg);
    sec("channels", s.channels);
    sec("falloff_sigma", s.falloff_sigma);
    sec("pixel_sigma", s.pixel_sigma);
    sec("view_dependence", s.view_dependence);
    sec("outlier_rate", s.outlier_rate);
    {
      Section cam = sec.child("camera");
      cam("fx", s.intrinsics.fx);
      cam("fy", s.intrinsics.fy);
      cam("cx", s.intrinsics.cx);
      cam("cy", s.intrinsics.cy);
      cam("width", s.intrinsics.width);
      cam("height", s.intrinsics.height);
      cam.finish();
    }
    sec.finish();
  }
  {
    Section sec = top.child("tracking");
    sec("radius", c.pipeline.tracking.radius);
    sec("min_sim", c.pipeline.tracking.min_sim);
    sec("patch_size", c.pipeline.tracking.patch_size);
    sec("min_length", c.pipeline.tracking.min_length);
    sec.finish();
  }
  {
    auto& t = c.pipeline.triangulation;
    Section sec = top.child("triangulation");
    sec("robust_scale", t.robust_scale);
    sec("max_iters", t.max_iters);
    sec("initial_lambda", t.initial_lambda);
    sec("step_tolerance", t.step_tolerance);
    sec("cost_tolerance", t.cost_tolerance);
    sec("max_landmark_error", c.pipeline.max_landmark_error);
    sec.finish();
  }
  {
    Section sec = top.child("voxel");
    sec("resolution", c.pipeline.resolution);
    sec("noise_sigma", c.pipeline.voxel_init.noise_sigma);
    sec("density_raw", c.pipeline.voxel_init.density_raw);
    sec.finish();
  }
  {
    auto& t = c.pipeline.train;
    Section sec = top.child("train");
    sec("epochs", t.epochs);
    sec("rays_per_epoch", t.rays_per_epoch);
    sec("samples", t.samples);
    sec("lr_desc", t.lr_desc);
    sec("lr_density", t.lr_density);
    sec("beta1", t.beta1);
    sec("beta2", t.beta2);
    sec("epsilon", t.epsilon);
    sec("per_node_lr", t.per_node_lr);
    sec("w_mse", t.weights.mse);
    sec("w_cos", t.weights.cosine);
    sec("w_tv", t.weights.tv);
    sec("w_ent", t.weights.entropy);
    sec.finish();
  }
  {
    auto& l = c.localize;
    Section sec = top.child("localize");
    sec("tau", l.tau);
    sec("iterations", l.iterations);
    sec("samples", l.render.samples);
    sec("opacity_min", l.render.opacity_min);
    sec("ransac_threshold", l.ransac.threshold);
    sec("ransac_max_iters", l.ransac.max_iters);
    sec("ransac_confidence", l.ransac.confidence);
    sec("ransac_local_refinements", l.ransac.local_refinements);
    sec.finish();
  }
  {
    Section sec = top.child("eval");
    sec("success_translation", c.eval.success_translation);
    sec("success_rotation_deg", c.eval.success_rotation_deg);
    sec("prior_rotation_deg", c.priors.rotation_deg);
    sec("prior_translation_fraction", c.priors.translation_fraction);
    sec.finish();
  }
  top.finish();
}

}  // namespace

AppConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("config parse error: ") + e.what());
  }
  AppConfig cfg;
  visit(cfg, root, true);
  cfg.scene.validate();
  cfg.pipeline.train.validate();
  return cfg;
}

AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidArgument, "cannot open config " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return parse_config(s.str());
}

std::string dump_config(const AppConfig& cfg) {
  AppConfig copy = cfg;
  json root = json::object();
  visit(copy, root, false);
  return root.dump(2);
}

}  // namespace favor
