#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "favor/harness.hpp"
#include "favor/mapstore.hpp"
#include "favor/renderer.hpp"
#include "favor/trainer.hpp"
#include "favor/triangulation.hpp"
#include "favor/voxel.hpp"

using namespace favor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Eigen::Vector3d rand_vec(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  const double x = u(rng), y = u(rng), z = u(rng);
  return {x, y, z};
}

VoxelLandmark random_voxel(std::mt19937_64& rng, int r, int channels, double density_scale) {
  VoxelLandmark v;
  v.center = rand_vec(rng, -1.0, 1.0);
  v.side = std::uniform_real_distribution<double>(0.05, 0.5)(rng);
  v.resolution = r;
  std::normal_distribution<double> g(0.0, 1.0);
  v.desc_nodes.resize(r * r * r, channels);
  for (int i = 0; i < v.desc_nodes.size(); ++i) v.desc_nodes.data()[i] = g(rng);
  v.density_nodes.resize(r * r * r);
  for (int i = 0; i < v.density_nodes.size(); ++i) v.density_nodes[i] = density_scale * g(rng);
  return v;
}

Ray random_ray(std::mt19937_64& rng, const VoxelLandmark& v) {
  const Eigen::Vector3d dir = rand_vec(rng, -1.0, 1.0).normalized();
  Ray ray;
  ray.origin = v.center + 0.3 * v.side * rand_vec(rng, -1.0, 1.0) - 3.0 * v.side * dir;
  ray.direction = dir;
  return ray;
}

// Trilinear weight of node (a, b, c) at lattice coordinate u, from the tent-function definition.
double tent_weight(const Eigen::Vector3d& u, int a, int b, int c) {
  return std::max(0.0, 1 - std::abs(u.x() - a)) * std::max(0.0, 1 - std::abs(u.y() - b)) *
         std::max(0.0, 1 - std::abs(u.z() - c));
}

Eigen::Vector3d lattice_coordinate(const VoxelLandmark& v, const Eigen::Vector3d& p) {
  return ((p - v.center) / v.side + Eigen::Vector3d::Constant(0.5)) * (v.resolution - 1);
}

// Compositing written as explicit nested loops and products.
std::pair<Eigen::VectorXd, double> naive_render(const VoxelLandmark& v, const Ray& ray, int n) {
  const auto hit = ray_box_intersect(ray, v.center, v.side);
  const double t0 = hit->t_near, t1 = hit->t_far;
  const double delta = (ray.at(t1) - ray.at(t0)).norm() / n;
  std::vector<double> alpha(n);
  std::vector<Eigen::VectorXd> desc(n, Eigen::VectorXd::Zero(v.channels()));
  for (int t = 0; t < n; ++t) {
    const Eigen::Vector3d u = lattice_coordinate(v, ray.at(t0 + (t + 0.5) * (t1 - t0) / n));
    double raw = 0.0;
    for (int c = 0; c < v.resolution; ++c)
      for (int b = 0; b < v.resolution; ++b)
        for (int a = 0; a < v.resolution; ++a) {
          const double w = tent_weight(u, a, b, c);
          raw += w * v.density_nodes[node_index(v.resolution, a, b, c)];
          desc[t] += w * v.desc_nodes.row(node_index(v.resolution, a, b, c)).transpose();
        }
    alpha[t] = 1.0 - std::exp(-density_activation(raw, v.side) * delta);
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(v.channels());
  double survive = 1.0;
  for (int t = 0; t < n; ++t) {
    double T = 1.0;
    for (int j = 0; j < t; ++j) T *= 1.0 - alpha[j];
    out += T * alpha[t] * desc[t];
    survive *= 1.0 - alpha[t];
  }
  return {out, 1.0 - survive};
}

Outcome criterion1() {
  const auto start = Clock::now();
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const int r = 2 + static_cast<int>(rng() % 3);
    const int n = 1 + static_cast<int>(rng() % 16);
    const VoxelLandmark v = random_voxel(rng, r, 16, 2.0);
    const Ray ray = random_ray(rng, v);
    const RayRender fast = render_ray(v, ray, n);
    const auto [desc, opacity] = naive_render(v, ray, n);
    worst = std::max({worst, (fast.descriptor - desc).cwiseAbs().maxCoeff(), std::abs(fast.opacity - opacity)});
  }

  // sigma * delta = ln 2 per sample along the z axis through a unit cube with a descriptor
  // field linear in z.
  double closed = 0.0;
  for (int n : {1, 2}) {
    VoxelLandmark v;
    v.resolution = 3;
    v.side = 1.0;
    v.desc_nodes = Eigen::MatrixXd::Zero(27, 8);
    for (int c = 0; c < 3; ++c)
      for (int b = 0; b < 3; ++b)
        for (int a = 0; a < 3; ++a) {
          v.desc_nodes(node_index(3, a, b, c), 0) = v.node_position(a, b, c).z();
          v.desc_nodes(node_index(3, a, b, c), 1) = 1.0;
        }
    v.density_nodes = Eigen::VectorXd::Constant(27, std::log(std::expm1(n * std::log(2.0))) - kDensityShift);
    Ray ray;
    ray.origin = Eigen::Vector3d(0, 0, -2);
    ray.direction = Eigen::Vector3d::UnitZ();
    const RayRender r = render_ray(v, ray, n);
    Eigen::VectorXd expect = Eigen::VectorXd::Zero(8);
    if (n == 1) {
      expect[1] = 0.5;
    } else {
      Eigen::VectorXd d1 = Eigen::VectorXd::Zero(8), d2 = Eigen::VectorXd::Zero(8);
      d1 << -0.25, 1, 0, 0, 0, 0, 0, 0;
      d2 << 0.25, 1, 0, 0, 0, 0, 0, 0;
      expect = 0.5 * d1 + 0.25 * d2;
    }
    const double opacity = n == 1 ? 0.5 : 0.75;
    closed = std::max({closed, (r.descriptor - expect).cwiseAbs().maxCoeff(), std::abs(r.opacity - opacity)});
    for (int t = 0; t < n; ++t) closed = std::max(closed, std::abs(r.alphas[t] - 0.5));
  }
  const double secs = seconds_since(start);
  return {worst <= 1e-6 && closed <= 1e-12 && secs < 10.0,
          fmt("max |render - naive| = %.3e (<= 1e-6), closed-form error = %.3e (<= 1e-12), %.2f s (< 10 s)", worst,
              closed, secs)};
}

Outcome criterion2() {
  const auto start = Clock::now();
  std::mt19937_64 rng(202);
  const LossWeights w{1.0, 1.0, 1e-2, 1e-3};
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    VoxelLandmark v = random_voxel(rng, 2 + trial % 3, 16, 1.5);
    const Ray ray = random_ray(rng, v);
    Eigen::VectorXd target(16);
    for (int i = 0; i < 16; ++i) target[i] = std::normal_distribution<double>()(rng);
    const RayLossGradient lg = backward(v, ray, target, w);
    auto loss = [&] {
      const RayRender r = render_ray(v, ray, kDefaultSamples);
      return compute_loss(r.descriptor, target, v, r.alphas, w).total;
    };
    auto probe = [&](double& param, double analytic) {
      const double keep = param, h = 1e-6;
      param = keep + h;
      const double up = loss();
      param = keep - h;
      const double down = loss();
      param = keep;
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(fd - analytic) / std::max(1.0, std::abs(fd)));
    };
    for (int n = 0; n < v.node_count(); ++n) {
      probe(v.density_nodes[n], lg.gradient.density[n]);
      for (int c = 0; c < v.channels(); ++c) probe(v.desc_nodes(n, c), lg.gradient.desc(n, c));
    }
  }
  const double secs = seconds_since(start);
  return {worst < 1e-4 && secs < 60.0, fmt("max relative error = %.3e (< 1e-4), %.2f s (< 60 s)", worst, secs)};
}

Outcome criterion3() {
  std::mt19937_64 rng(303);
  bool exact = true;
  double mid = 0.0, brute = 0.0;
  for (int r : {2, 3, 4}) {
    VoxelLandmark v = random_voxel(rng, r, 8, 1.0);
    const Eigen::MatrixXd& nodes = v.desc_nodes;
    for (int c = 0; c < r; ++c)
      for (int b = 0; b < r; ++b)
        for (int a = 0; a < r; ++a) {
          const Eigen::VectorXd s = trilinear_sample(nodes, r, v.center, v.side, v.node_position(a, b, c));
          exact = exact && s == nodes.row(node_index(r, a, b, c)).transpose();
          if (a + 1 < r) {
            const Eigen::Vector3d m = 0.5 * (v.node_position(a, b, c) + v.node_position(a + 1, b, c));
            const Eigen::VectorXd avg =
                0.5 * (nodes.row(node_index(r, a, b, c)) + nodes.row(node_index(r, a + 1, b, c))).transpose();
            mid = std::max(mid, (trilinear_sample(nodes, r, v.center, v.side, m) - avg).cwiseAbs().maxCoeff());
          }
        }
    for (int i = 0; i < 10000 / 3 + 1; ++i) {
      const Eigen::Vector3d p = v.center + 0.5 * v.side * rand_vec(rng, -1.0, 1.0);
      const Eigen::Vector3d u = lattice_coordinate(v, p);
      Eigen::VectorXd ref = Eigen::VectorXd::Zero(nodes.cols());
      for (int c = 0; c < r; ++c)
        for (int b = 0; b < r; ++b)
          for (int a = 0; a < r; ++a) ref += tent_weight(u, a, b, c) * nodes.row(node_index(r, a, b, c)).transpose();
      brute = std::max(brute, (trilinear_sample(nodes, r, v.center, v.side, p) - ref).cwiseAbs().maxCoeff());
    }
  }
  return {exact && mid <= 1e-12 && brute <= 1e-12,
          fmt("lattice points bit-exact = %s, midpoint error = %.3e, brute-force error on 10^4 points = %.3e (<= 1e-12)",
              exact ? "yes" : "no", mid, brute)};
}

Outcome criterion4() {
  const CameraIntrinsics k{500, 480, 319.5, 239.5, 640, 480};
  auto cameras = [](int n) {
    std::vector<Pose> poses;
    for (int i = 0; i < n; ++i) {
      const double a = (-20.0 + 40.0 * i / std::max(n - 1, 1)) * M_PI / 180.0;
      poses.push_back(look_at({5 * std::cos(a), 5 * std::sin(a), 0.8}, Eigen::Vector3d::Zero()));
    }
    return poses;
  };
  auto make_track = [&](const std::vector<Pose>& poses, const Eigen::Vector3d& x, std::mt19937_64* rng) {
    std::normal_distribution<double> g(0.0, 0.5);
    Track t;
    for (std::size_t i = 0; i < poses.size(); ++i) {
      Eigen::Vector2d uv = project(poses[i], k, x);
      if (rng) uv += Eigen::Vector2d(g(*rng), g(*rng));
      t.observations.push_back({static_cast<int>(i), poses[i], Keypoint{uv, 1.0}, Patch{}});
    }
    return t;
  };
  auto solve = [&](const Track& t) { return refine_landmark(t, dlt_triangulate(t, k), k).position; };

  std::mt19937_64 rng(404);
  double noiseless = 0.0;
  for (int n : {2, 10})
    for (int i = 0; i < 100; ++i) {
      const Eigen::Vector3d x = rand_vec(rng, -1.0, 1.0);
      const Track t = make_track(cameras(n), x, nullptr);
      noiseless = std::max({noiseless, (dlt_triangulate(t, k) - x).norm(), (solve(t) - x).norm()});
    }

  // Monte Carlo over 0.5 px noise: outlier-free baseline vs one 50 px outlier.
  const int trials = 500;
  std::vector<double> clean, dirty;
  std::uniform_real_distribution<double> angle(0.0, 2 * M_PI);
  for (int i = 0; i < trials; ++i) {
    const Eigen::Vector3d x = rand_vec(rng, -1.0, 1.0);
    Track t = make_track(cameras(10), x, &rng);
    clean.push_back((solve(t) - x).norm());
    const double a = angle(rng);
    t.observations[static_cast<std::size_t>(rng() % 10)].keypoint.position +=
        50.0 * Eigen::Vector2d(std::cos(a), std::sin(a));
    dirty.push_back((solve(t) - x).norm());
  }
  const double base = median(clean), with = median(dirty);
  return {noiseless <= 1e-6 && with <= 3.0 * base,
          fmt("noiseless error = %.3e m (<= 1e-6), median error with outlier = %.3e m vs baseline %.3e m "
              "(ratio %.2f <= 3)",
              noiseless, with, base, with / base)};
}

Outcome criterion5() {
  SceneSpec spec;
  spec.landmark_count = 1;
  spec.frame_count = 5;
  spec.angular_range_deg = 20.0;
  spec.query_count = 0;
  spec.outlier_rate = 0.0;
  PipelineConfig cfg;  // default 2000 epochs x 1024 rays
  double worst_in = 1.0, worst_out = 1.0, slowest = 0.0;
  int voxels = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    spec.seed = seed;
    cfg.seed = seed;
    const SceneData data = gen_scene(spec);
    const auto tracks = run_tracking(data.train, cfg.tracking);
    const auto landmarks = run_triangulation(tracks, data.intrinsics, cfg);
    if (tracks.size() != 1 || tracks[0].size() != 5 || landmarks.size() != 1)
      return {false, fmt("seed %llu: expected one 5-view track, got %zu tracks", (unsigned long long)seed,
                         tracks.size())};
    const auto start = Clock::now();
    const auto trained = run_training(tracks, landmarks, data.intrinsics, cfg);
    slowest = std::max(slowest, seconds_since(start));
    const VoxelLandmark& v = trained[0].voxel;
    double held_in = 0.0;
    for (const auto& o : tracks[0].observations)
      held_in += mean_patch_cosine(render_patch(v, o.pose, data.intrinsics, 7), o.patch.data);
    held_in /= static_cast<double>(tracks[0].size());
    const Pose out_pose = orbit_pose(spec, 0.0, 10.0);
    const SyntheticView view = synth_render_view(data.scene, out_pose, data.intrinsics);
    const Patch target = crop_patch(view.map, view.keypoints.at(0), 7);
    const double held_out = mean_patch_cosine(render_patch(v, out_pose, data.intrinsics, 7), target.data);
    worst_in = std::min(worst_in, held_in);
    worst_out = std::min(worst_out, held_out);
    ++voxels;
  }
  return {worst_in >= 0.99 && worst_out >= 0.95 && slowest <= 60.0,
          fmt("%d voxels: min held-in cosine = %.4f (>= 0.99), min held-out (10 deg) cosine = %.4f (>= 0.95), "
              "max %.1f s per voxel (<= 60 s)",
              voxels, worst_in, worst_out, slowest)};
}

struct EndToEnd {
  SceneSpec spec;
  SceneData data;
  AppConfig config;
  BuildResult build;
  double build_seconds = 0.0;
};

std::string report_text(const EvalReport& r) {
  std::ostringstream out;
  write_report(out, r);
  return out.str();
}

std::string map_bytes(const VoxelMap& map) {
  std::ostringstream out;
  write_map(out, map);
  return out.str();
}

std::vector<Pose> training_poses(const SceneData& d) {
  std::vector<Pose> out;
  for (const auto& v : d.train) out.push_back(v.pose);
  return out;
}

Outcome criterion6(EndToEnd& e2e) {
  const auto start = Clock::now();
  const SceneSpec& spec = e2e.spec;
  e2e.data = gen_scene(spec);
  e2e.build = build_map(e2e.data.train, e2e.data.intrinsics, e2e.config.pipeline);
  e2e.build_seconds = seconds_since(start);
  const auto train = training_poses(e2e.data);
  const auto good_priors =
      make_priors(PriorKind::NearestTraining, e2e.data.queries, train, spec.diameter(), spec.seed);
  const auto poor_priors = make_priors(PriorKind::Perturbed, e2e.data.queries, train, spec.diameter(), spec.seed,
                                       e2e.config.priors);
  const EvalReport good = run_eval(e2e.build.map, e2e.data.queries, good_priors, e2e.config.localize, e2e.config.eval);
  const EvalReport poor = run_eval(e2e.build.map, e2e.data.queries, poor_priors, e2e.config.localize, e2e.config.eval);
  const double secs = seconds_since(start);

  const double t_limit = 0.01 * spec.scene_extent;
  const bool iter_ok = good.mean_inliers.size() == 3 && good.mean_inliers[2] >= good.mean_inliers[0];
  const bool accurate = good.localized == spec.query_count && good.median_translation <= t_limit &&
                        good.median_rotation_deg <= 0.5;
  const bool robust = poor.localized == spec.query_count &&
                      poor.median_translation <= 2.0 * std::max(good.median_translation, 1e-12) &&
                      poor.median_rotation_deg <= 2.0 * std::max(good.median_rotation_deg, 1e-12);
  const auto it = [&](const EvalReport& r, std::size_t k) { return k < r.mean_inliers.size() ? r.mean_inliers[k] : 0.0; };
  return {accurate && iter_ok && robust && secs <= 900.0,
          fmt("%zu voxels, %d/%d localized; median t = %.4f m (<= %.3f), median R = %.3f deg (<= 0.5); "
              "mean inliers per iteration %.1f %.1f %.1f; poor prior: %d/%d localized, t = %.4f m, R = %.3f deg "
              "(within 2x); %.0f s (<= 900 s)",
              e2e.build.map.voxels.size(), good.localized, spec.query_count, good.median_translation, t_limit,
              good.median_rotation_deg, it(good, 0), it(good, 1), it(good, 2), poor.localized, spec.query_count,
              poor.median_translation, poor.median_rotation_deg, secs)};
}

Outcome criterion7(const EndToEnd& e2e) {
  std::vector<double> angles;
  for (int a = -30; a <= 30; a += 5) angles.push_back(a);
  const auto rendered = rendered_sweep(e2e.spec, e2e.data.scene, e2e.build.map, angles, e2e.config.localize.render);
  SceneSpec strong = e2e.spec;
  strong.view_dependence = 0.3;
  const auto raw = raw_sweep(strong, make_scene(strong), angles);
  const std::size_t zero = angles.size() / 2;
  double rendered_dev = 0.0, raw_drop = 0.0;
  for (std::size_t i = 0; i < angles.size(); ++i) {
    rendered_dev = std::max(rendered_dev, std::abs(rendered[i].similarity - rendered[zero].similarity));
    raw_drop = std::max(raw_drop, raw[zero].similarity - raw[i].similarity);
  }
  return {rendered_dev <= 0.05 && raw_drop >= 0.15,
          fmt("rendered similarity at 0 deg = %.4f, max deviation over +-30 deg = %.4f (<= 0.05); raw oracle "
              "(view_dependence 0.3) max drop = %.4f (>= 0.15)",
              rendered[zero].similarity, rendered_dev, raw_drop)};
}

Outcome criterion8() {
  const int n = 1500, r = 3, c = 128;
  VoxelMap map;
  map.intrinsics = CameraIntrinsics{500, 500, 319.5, 239.5, 640, 480};
  map.channels = c;
  map.resolution = r;
  std::mt19937_64 rng(808);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    VoxelLandmark v;
    v.center = rand_vec(rng, -2.0, 2.0);
    v.side = 0.05;
    v.resolution = r;
    v.track_id = i;
    v.desc_nodes.resize(r * r * r, c);
    for (int k = 0; k < v.desc_nodes.size(); ++k) v.desc_nodes.data()[k] = g(rng);
    v.density_nodes = Eigen::VectorXd::Zero(r * r * r);
    map.voxels.push_back(std::move(v));
  }
  const auto path = std::filesystem::temp_directory_path() / "favor_acceptance_memory.fvor";
  save_map(map, path);
  const double actual = static_cast<double>(std::filesystem::file_size(path));
  std::filesystem::remove(path);
  const double model = static_cast<double>(map_file_size(n, r, c));
  const double rel = std::abs(actual - model) / model;
  const double mb = actual / 1e6;
  return {rel <= 0.01 && mb >= 15.0 && mb <= 25.0,
          fmt("file = %.0f bytes (%.2f MB, in [15, 25]), model = %.0f bytes, relative difference %.2e (<= 1%%)",
              actual, mb, model, rel)};
}

Outcome criterion9(const EndToEnd& e2e) {
  // Rebuild the full pipeline with several workers and compare against the serial run.
  AppConfig cfg = e2e.config;
  cfg.pipeline.workers = 3;
  cfg.eval.workers = 3;
  const SceneData again = gen_scene(e2e.spec);
  const BuildResult parallel = build_map(again.train, again.intrinsics, cfg.pipeline);
  const bool same_map = map_bytes(parallel.map) == map_bytes(e2e.build.map);

  const auto train = training_poses(e2e.data);
  const auto priors =
      make_priors(PriorKind::NearestTraining, e2e.data.queries, train, e2e.spec.diameter(), e2e.spec.seed);
  const std::string serial_report =
      report_text(run_eval(e2e.build.map, e2e.data.queries, priors, e2e.config.localize, e2e.config.eval));
  const std::string parallel_report =
      report_text(run_eval(parallel.map, again.queries, priors, cfg.localize, cfg.eval));
  return {same_map && serial_report == parallel_report,
          fmt("map bytes identical (1 vs 3 workers) = %s, evaluation reports identical = %s",
              same_map ? "yes" : "no", serial_report == parallel_report ? "yes" : "no")};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %d: %s  %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  };

  report(1, criterion1);
  report(2, criterion2);
  report(3, criterion3);
  report(4, criterion4);
  report(5, criterion5);

  EndToEnd e2e;
  e2e.config.scene = e2e.spec;
  bool built = false;
  report(6, [&] {
    const Outcome o = criterion6(e2e);
    built = true;
    return o;
  });
  report(7, [&] { return built ? criterion7(e2e) : Outcome{false, "end-to-end map unavailable"}; });
  report(8, criterion8);
  report(9, [&] { return built ? criterion9(e2e) : Outcome{false, "end-to-end map unavailable"}; });
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
