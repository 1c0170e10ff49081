#include "favor/relocalizer.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "favor/random.hpp"

namespace favor {

std::vector<Correspondence> match(std::span<const RenderedFeature> rendered, std::span<const Keypoint> query_keypoints,
                                  const DescriptorMap& query_map, double tau) {
  std::vector<Correspondence> out;
  if (rendered.empty() || query_keypoints.empty()) return out;
  const int channels = query_map.channels();
  const Eigen::Index nr = static_cast<Eigen::Index>(rendered.size());
  const Eigen::Index nq = static_cast<Eigen::Index>(query_keypoints.size());

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(nr, channels);
  for (Eigen::Index i = 0; i < nr; ++i) {
    if (rendered[i].descriptor.size() != channels)
      throw Error(ErrorCode::ChannelMismatch, "rendered and query descriptors differ in length");
    const double n = rendered[i].descriptor.norm();
    if (n > 1e-12) a.row(i) = rendered[i].descriptor.transpose() / n;
  }
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(nq, channels);
  for (Eigen::Index j = 0; j < nq; ++j) {
    const Eigen::VectorXd d = descriptor_at(query_map, query_keypoints[j]);
    const double n = d.norm();
    if (n > 1e-12) b.row(j) = d.transpose() / n;
  }
  const Eigen::MatrixXd sim = a * b.transpose();

  std::vector<Eigen::Index> row_best(nr), col_best(nq);
  for (Eigen::Index i = 0; i < nr; ++i) sim.row(i).maxCoeff(&row_best[i]);
  for (Eigen::Index j = 0; j < nq; ++j) sim.col(j).maxCoeff(&col_best[j]);
  for (Eigen::Index i = 0; i < nr; ++i) {
    const Eigen::Index j = row_best[i];
    if (col_best[j] != i || sim(i, j) < tau) continue;
    if (a.row(i).isZero(0.0) || b.row(j).isZero(0.0)) continue;
    Correspondence c;
    c.landmark_id = rendered[i].landmark_id;
    c.world_point = rendered[i].world_point;
    c.query_pixel = query_keypoints[j].position;
    c.similarity = sim(i, j);
    c.rendered_index = static_cast<int>(i);
    c.query_index = static_cast<int>(j);
    out.push_back(c);
  }
  return out;
}

double reprojection_error(const Pose& pose, const CameraIntrinsics& intr, const Eigen::Vector3d& world,
                          const Eigen::Vector2d& pixel) {
  Eigen::Vector2d uv;
  if (!try_project(pose, intr, world, uv)) return std::numeric_limits<double>::infinity();
  return (uv - pixel).norm();
}

namespace {

using Poly = std::vector<double>;  // coefficients, lowest degree first

Poly poly_mul(const Poly& a, const Poly& b) {
  Poly r(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) r[i + j] += a[i] * b[j];
  return r;
}

Poly poly_add(Poly a, const Poly& b, double scale = 1.0) {
  if (a.size() < b.size()) a.resize(b.size(), 0.0);
  for (std::size_t i = 0; i < b.size(); ++i) a[i] += scale * b[i];
  return a;
}

double poly_eval(const Poly& p, double x) {
  double r = 0.0;
  for (std::size_t i = p.size(); i-- > 0;) r = r * x + p[i];
  return r;
}

std::vector<double> real_roots(Poly p) {
  while (!p.empty() && std::abs(p.back()) < 1e-14 * (1.0 + std::abs(p.front()))) p.pop_back();
  std::vector<double> roots;
  const int deg = static_cast<int>(p.size()) - 1;
  if (deg < 1) return roots;
  Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(deg, deg);
  for (int i = 0; i < deg; ++i) comp(0, i) = -p[deg - 1 - i] / p[deg];
  for (int i = 1; i < deg; ++i) comp(i, i - 1) = 1.0;
  const Eigen::EigenSolver<Eigen::MatrixXd> es(comp, false);
  Poly dp(deg);
  for (int i = 1; i <= deg; ++i) dp[i - 1] = i * p[i];
  for (int i = 0; i < deg; ++i) {
    const std::complex<double> z = es.eigenvalues()[i];
    if (std::abs(z.imag()) > 1e-6 * std::max(1.0, std::abs(z))) continue;
    double x = z.real();
    for (int it = 0; it < 5; ++it) {
      const double d = poly_eval(dp, x);
      if (d == 0.0) break;
      const double nx = x - poly_eval(p, x) / d;
      if (!std::isfinite(nx)) break;
      x = nx;
    }
    roots.push_back(x);
  }
  return roots;
}

Eigen::Vector3d bearing(const CameraIntrinsics& intr, const Eigen::Vector2d& px) {
  return Eigen::Vector3d((px.x() - intr.cx) / intr.fx, (px.y() - intr.cy) / intr.fy, 1.0).normalized();
}

// Camera-to-world pose aligning camera-frame points onto world points (3 or more).
Pose align_points(const std::array<Eigen::Vector3d, 3>& cam, const std::array<Eigen::Vector3d, 3>& world) {
  Eigen::Vector3d mc = Eigen::Vector3d::Zero(), mw = Eigen::Vector3d::Zero();
  for (int i = 0; i < 3; ++i) {
    mc += cam[i];
    mw += world[i];
  }
  mc /= 3.0;
  mw /= 3.0;
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (int i = 0; i < 3; ++i) h += (cam[i] - mc) * (world[i] - mw).transpose();
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0 ? -1.0 : 1.0;
  const Eigen::Matrix3d r = svd.matrixV() * d * svd.matrixU().transpose();
  return Pose(r, mw - r * mc);
}

}  // namespace

std::vector<Pose> pnp_minimal(std::span<const Eigen::Vector3d> world, std::span<const Eigen::Vector2d> pixels,
                              const CameraIntrinsics& intr) {
  if (world.size() != pixels.size() || world.size() < 3 || world.size() > 4)
    throw Error(ErrorCode::InvalidArgument, "minimal PnP takes 3 or 4 correspondences");
  const Eigen::Vector3d &p1 = world[0], &p2 = world[1], &p3 = world[2];
  const double area = (p2 - p1).cross(p3 - p1).norm();
  if (area <= 1e-9 * (p2 - p1).norm() * (p3 - p1).norm() || area == 0.0)
    throw Error(ErrorCode::DegenerateConfiguration, "collinear world points");

  const Eigen::Vector3d f1 = bearing(intr, pixels[0]), f2 = bearing(intr, pixels[1]), f3 = bearing(intr, pixels[2]);
  const double cos_a = f2.dot(f3), cos_b = f1.dot(f3), cos_g = f1.dot(f2);
  const double a2 = (p2 - p3).squaredNorm(), b2 = (p1 - p3).squaredNorm(), c2 = (p1 - p2).squaredNorm();

  // Law of cosines with s2 = u s1, s3 = v s1. Eliminating s1 and u leaves
  // N^2 - 2 cos_g N D + D^2 - (c2/b2) Q D^2 = 0 with u = N / D.
  const double k = (a2 - c2) / b2;
  const Poly n = {1.0 + k, -2.0 * k * cos_b, k - 1.0};
  const Poly d = {2.0 * cos_g, -2.0 * cos_a};
  const Poly q = {1.0, -2.0 * cos_b, 1.0};
  const Poly dd = poly_mul(d, d);
  Poly quartic = poly_mul(n, n);
  quartic = poly_add(quartic, poly_mul(n, d), -2.0 * cos_g);
  quartic = poly_add(quartic, dd);
  quartic = poly_add(quartic, poly_mul(q, dd), -c2 / b2);

  std::vector<Pose> poses;
  for (double v : real_roots(quartic)) {
    if (!(v > 0.0)) continue;
    const double den = poly_eval(d, v);
    if (std::abs(den) < 1e-14) continue;
    const double u = poly_eval(n, v) / den;
    const double qv = poly_eval(q, v);
    if (!(u > 0.0) || !(qv > 0.0)) continue;
    const double s1 = std::sqrt(b2 / qv);
    const std::array<Eigen::Vector3d, 3> cam = {s1 * f1, u * s1 * f2, v * s1 * f3};
    const Pose pose = align_points(cam, {p1, p2, p3});
    if (pose.rotation.allFinite() && pose.translation.allFinite()) poses.push_back(pose);
  }

  if (world.size() == 4 && !poses.empty()) {
    std::size_t best = 0;
    double best_err = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < poses.size(); ++i) {
      const double e = reprojection_error(poses[i], intr, world[3], pixels[3]);
      if (e < best_err) {
        best_err = e;
        best = i;
      }
    }
    return {poses[best]};
  }
  return poses;
}

std::vector<Pose> pnp_minimal(std::span<const Correspondence> correspondences, const CameraIntrinsics& intr) {
  std::vector<Eigen::Vector3d> world;
  std::vector<Eigen::Vector2d> pixels;
  for (const auto& c : correspondences) {
    world.push_back(c.world_point);
    pixels.push_back(c.query_pixel);
  }
  return pnp_minimal(world, pixels, intr);
}

Pose refine_pose(const Pose& init, std::span<const Eigen::Vector3d> world, std::span<const Eigen::Vector2d> pixels,
                 const CameraIntrinsics& intr, int max_iters) {
  // World-to-camera state with a left perturbation: x_c <- exp(w) x_c + dt.
  Pose w2c = init.inverse();
  auto cost_of = [&](const Pose& p) {
    double c = 0.0;
    for (std::size_t i = 0; i < world.size(); ++i) {
      const Eigen::Vector3d x = p.rotation * world[i] + p.translation;
      if (!(x.z() > 0.0)) return std::numeric_limits<double>::infinity();
      const Eigen::Vector2d uv(intr.fx * x.x() / x.z() + intr.cx, intr.fy * x.y() / x.z() + intr.cy);
      c += (uv - pixels[i]).squaredNorm();
    }
    return c;
  };
  double cost = cost_of(w2c);
  if (!std::isfinite(cost)) return init;
  double lambda = 1e-4;
  for (int iter = 0; iter < max_iters; ++iter) {
    Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
    for (std::size_t i = 0; i < world.size(); ++i) {
      const Eigen::Vector3d x = w2c.rotation * world[i] + w2c.translation;
      const double iz = 1.0 / x.z();
      const Eigen::Vector2d r(intr.fx * x.x() * iz + intr.cx - pixels[i].x(),
                              intr.fy * x.y() * iz + intr.cy - pixels[i].y());
      Eigen::Matrix<double, 2, 3> dproj;
      dproj << intr.fx * iz, 0.0, -intr.fx * x.x() * iz * iz, 0.0, intr.fy * iz, -intr.fy * x.y() * iz * iz;
      Eigen::Matrix<double, 3, 6> dx;
      dx << 0.0, x.z(), -x.y(), 1.0, 0.0, 0.0, -x.z(), 0.0, x.x(), 0.0, 1.0, 0.0, x.y(), -x.x(), 0.0, 0.0, 0.0, 1.0;
      const Eigen::Matrix<double, 2, 6> j = dproj * dx;
      h += j.transpose() * j;
      g += j.transpose() * r;
    }
    bool accepted = false;
    while (!accepted && lambda < 1e12) {
      Eigen::Matrix<double, 6, 6> damped = h;
      damped.diagonal() += lambda * (h.diagonal().array() + 1e-12).matrix();
      const Eigen::Matrix<double, 6, 1> step = damped.ldlt().solve(-g);
      if (!step.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      const Eigen::Matrix3d dr = exp_so3(step.head<3>());
      const Pose trial(dr * w2c.rotation, dr * w2c.translation + step.tail<3>());
      const double trial_cost = cost_of(trial);
      if (trial_cost <= cost) {
        const bool tiny = step.norm() < 1e-12 || cost - trial_cost <= 1e-15 * cost;
        w2c = trial;
        cost = trial_cost;
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
        if (tiny) return w2c.inverse();
      } else {
        lambda *= 10.0;
      }
    }
    if (!accepted) break;
  }
  // Re-orthonormalize accumulated rotation updates.
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(w2c.rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
  w2c.rotation = svd.matrixU() * svd.matrixV().transpose();
  return w2c.inverse();
}

namespace {

struct Inliers {
  std::vector<int> indices;
  std::vector<double> residuals;
};

Inliers find_inliers(const Pose& pose, std::span<const Correspondence> corr, const CameraIntrinsics& intr,
                     double threshold) {
  Inliers in;
  for (std::size_t i = 0; i < corr.size(); ++i) {
    const double e = reprojection_error(pose, intr, corr[i].world_point, corr[i].query_pixel);
    if (e <= threshold) {
      in.indices.push_back(static_cast<int>(i));
      in.residuals.push_back(e);
    }
  }
  return in;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

Pose refine_on(const Pose& pose, std::span<const Correspondence> corr, const std::vector<int>& indices,
               const CameraIntrinsics& intr) {
  std::vector<Eigen::Vector3d> world;
  std::vector<Eigen::Vector2d> pixels;
  for (int i : indices) {
    world.push_back(corr[i].world_point);
    pixels.push_back(corr[i].query_pixel);
  }
  return refine_pose(pose, world, pixels, intr);
}

}  // namespace

PoseEstimate ransac_pose(std::span<const Correspondence> correspondences, const CameraIntrinsics& intr,
                         const RansacConfig& cfg) {
  constexpr int kSample = 4;
  const int n = static_cast<int>(correspondences.size());
  if (n < kSample) throw Error(ErrorCode::InsufficientCorrespondences, "need at least 4 correspondences");

  std::mt19937_64 rng(cfg.seed);
  Pose best_pose;
  Inliers best;
  int needed = cfg.max_iters;
  int iter = 0;
  std::vector<int> order(n);
  for (; iter < std::min(needed, cfg.max_iters); ++iter) {
    // Partial Fisher-Yates for a distinct minimal sample.
    std::iota(order.begin(), order.end(), 0);
    std::array<Correspondence, kSample> sample;
    for (int s = 0; s < kSample; ++s) {
      std::uniform_int_distribution<int> pick(s, n - 1);
      std::swap(order[s], order[pick(rng)]);
      sample[s] = correspondences[order[s]];
    }
    std::vector<Pose> hyp;
    try {
      hyp = pnp_minimal(sample, intr);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateConfiguration) throw;
      continue;
    }
    if (hyp.empty()) continue;
    Inliers in = find_inliers(hyp.front(), correspondences, intr, cfg.threshold);
    if (in.indices.size() > best.indices.size()) {
      best = std::move(in);
      best_pose = hyp.front();
      const double ratio = static_cast<double>(best.indices.size()) / n;
      const double miss = 1.0 - std::pow(ratio, kSample);
      if (miss <= 0.0) {
        needed = iter + 1;
      } else {
        const double k = std::log(1.0 - cfg.confidence) / std::log(miss);
        needed = static_cast<int>(std::min<double>(cfg.max_iters, std::ceil(k)));
      }
    }
  }
  if (static_cast<int>(best.indices.size()) < kSample) throw Error(ErrorCode::NoModelFound, "too few inliers");

  // Local optimization on the consensus set.
  for (int r = 0; r < cfg.local_refinements; ++r) {
    const Pose refined = refine_on(best_pose, correspondences, best.indices, intr);
    Inliers in = find_inliers(refined, correspondences, intr, cfg.threshold);
    if (in.indices.size() < best.indices.size()) break;
    const bool same = in.indices == best.indices;
    best_pose = refined;
    best = std::move(in);
    if (same) break;
  }
  if (static_cast<int>(best.indices.size()) < kSample) throw Error(ErrorCode::NoModelFound, "too few inliers");

  PoseEstimate est;
  est.pose = best_pose;
  est.inlier_count = static_cast<int>(best.indices.size());
  est.inlier_indices = best.indices;
  for (int i : best.indices) est.inlier_ids.push_back(correspondences[i].landmark_id);
  est.iterations_run = iter;
  est.median_residual = median(best.residuals);
  return est;
}

PoseEstimate iterative_localize(const VoxelMap& map, std::span<const Keypoint> query_keypoints,
                                const DescriptorMap& query_map, const Pose& prior, const LocalizeConfig& cfg) {
  if (cfg.iterations < 1) throw Error(ErrorCode::InvalidArgument, "need at least one iteration");
  PoseEstimate current;
  current.pose = prior;
  for (int k = 0; k < cfg.iterations; ++k) {
    const auto rendered = render_visible(map, current.pose, cfg.render);
    const auto corr = match(rendered, query_keypoints, query_map, cfg.tau);
    RansacConfig rc = cfg.ransac;
    rc.seed = derive_seed(cfg.ransac.seed, static_cast<std::uint64_t>(k));
    PoseEstimate est;
    try {
      est = ransac_pose(corr, map.intrinsics, rc);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoModelFound && e.code() != ErrorCode::InsufficientCorrespondences) throw;
      if (k == 0) throw Error(ErrorCode::LocalizationFailed, std::string("first iteration: ") + e.what());
      break;
    }
    IterationRecord rec;
    rec.pose = est.pose;
    rec.correspondences = static_cast<int>(corr.size());
    rec.inliers = est.inlier_count;
    rec.median_residual = est.median_residual;
    est.per_iteration = std::move(current.per_iteration);
    est.per_iteration.push_back(rec);
    current = std::move(est);
  }
  return current;
}

}  // namespace favor
