#include "favor/renderer.hpp"

#include "favor/descriptors.hpp"

namespace favor {

RayStencil ray_stencil(const VoxelLandmark& voxel, const Ray& ray, int samples) {
  if (samples < 1) throw Error(ErrorCode::InvalidArgument, "need at least one sample per ray");
  const auto hit = ray_box_intersect(ray, voxel.center, voxel.side);
  if (!hit) throw Error(ErrorCode::NoIntersection, "ray misses the voxel");
  RayStencil s;
  s.t_near = hit->t_near;
  s.t_far = hit->t_far;
  const Eigen::Vector3d pn = ray.at(hit->t_near);
  const Eigen::Vector3d pf = ray.at(hit->t_far);
  s.delta = (pf - pn).norm() / samples;
  s.positions.reserve(samples);
  s.stencils.reserve(samples);
  const double dt = (hit->t_far - hit->t_near) / samples;
  for (int t = 0; t < samples; ++t) {
    const Eigen::Vector3d p = ray.at(hit->t_near + (t + 0.5) * dt);
    s.positions.push_back(p);
    s.stencils.push_back(trilinear_stencil(voxel.resolution, voxel.center, voxel.side, p));
  }
  return s;
}

RaySamples sample_ray(const VoxelLandmark& voxel, const Ray& ray, int samples) {
  const RayStencil st = ray_stencil(voxel, ray, samples);
  RaySamples out;
  out.positions = st.positions;
  out.delta = st.delta;
  out.raw_density.resize(samples);
  out.descriptors.resize(samples, voxel.channels());
  for (int t = 0; t < samples; ++t) {
    out.raw_density[t] = apply_stencil(voxel.density_nodes, st.stencils[t])[0];
    out.descriptors.row(t) = apply_stencil(voxel.desc_nodes, st.stencils[t]).transpose();
  }
  return out;
}

Composite composite_density(const VoxelLandmark& voxel, const RayStencil& stencil) {
  const int n = stencil.samples();
  Composite c;
  c.optical_depth.resize(n);
  c.alpha.resize(n);
  c.transmittance.resize(n);
  c.weight.resize(n);
  const double ratio = stencil.delta / voxel.side;
  double accumulated = 0.0;
  for (int t = 0; t < n; ++t) {
    double raw = 0.0;
    const auto& st = stencil.stencils[t];
    for (int k = 0; k < 8; ++k) raw += st.weight[k] * voxel.density_nodes[st.index[k]];
    const double s = softplus(raw + kDensityShift) * ratio;
    c.optical_depth[t] = s;
    c.alpha[t] = -std::expm1(-s);
    c.transmittance[t] = std::exp(-accumulated);
    c.weight[t] = c.transmittance[t] * c.alpha[t];
    accumulated += s;
  }
  c.opacity = -std::expm1(-accumulated);
  return c;
}

RayRender render_stencil(const VoxelLandmark& voxel, const RayStencil& stencil) {
  const Composite comp = composite_density(voxel, stencil);
  RayRender out;
  out.descriptor = Eigen::VectorXd::Zero(voxel.channels());
  for (int t = 0; t < stencil.samples(); ++t)
    out.descriptor += comp.weight[t] * apply_stencil(voxel.desc_nodes, stencil.stencils[t]);
  out.opacity = comp.opacity;
  out.alphas = comp.alpha;
  return out;
}

RayRender render_ray(const VoxelLandmark& voxel, const Ray& ray, int samples) {
  return render_stencil(voxel, ray_stencil(voxel, ray, samples));
}

Eigen::MatrixXd render_patch(const VoxelLandmark& voxel, const Pose& pose, const CameraIntrinsics& intr,
                             int patch_size, int samples) {
  if (patch_size < 1 || patch_size % 2 == 0) throw Error(ErrorCode::InvalidArgument, "patch size must be odd");
  Eigen::Vector2d uv;
  if (!try_project(pose, intr, voxel.center, uv)) throw Error(ErrorCode::OutOfFrustum, "voxel behind the camera");
  const Eigen::Vector2i c = nearest_pixel(uv);
  const int half = patch_size / 2;
  if (c.x() - half < 0 || c.y() - half < 0 || c.x() + half >= intr.width || c.y() + half >= intr.height)
    throw Error(ErrorCode::OutOfFrustum, "patch window outside the image");

  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(patch_size * patch_size, voxel.channels());
  for (int y = 0; y < patch_size; ++y) {
    for (int x = 0; x < patch_size; ++x) {
      const Eigen::Vector2d px(c.x() - half + x, c.y() - half + y);
      const Ray ray = ray_through_pixel(pose, intr, px);
      if (!ray_box_intersect(ray, voxel.center, voxel.side)) continue;
      out.row(y * patch_size + x) = render_ray(voxel, ray, samples).descriptor.transpose();
    }
  }
  return out;
}

double mean_patch_cosine(const Eigen::MatrixXd& rendered, const Eigen::MatrixXd& target) {
  if (rendered.rows() != target.rows() || rendered.cols() != target.cols())
    throw Error(ErrorCode::ChannelMismatch, "patch shapes differ");
  double sum = 0.0;
  int count = 0;
  for (Eigen::Index i = 0; i < rendered.rows(); ++i) {
    const double nr = rendered.row(i).norm();
    const double nt = target.row(i).norm();
    if (nr < 1e-12 || nt < 1e-12) continue;
    sum += rendered.row(i).dot(target.row(i)) / (nr * nt);
    ++count;
  }
  return count > 0 ? sum / count : 0.0;
}

std::vector<RenderedFeature> render_visible(const VoxelMap& map, const Pose& pose, const RenderSettings& settings) {
  std::vector<RenderedFeature> out;
  const CameraIntrinsics& intr = map.intrinsics;
  for (const auto& voxel : map.voxels) {
    Eigen::Vector2d uv;
    if (!try_project(pose, intr, voxel.center, uv)) continue;
    if (uv.x() < 0.0 || uv.y() < 0.0 || uv.x() > intr.width - 1 || uv.y() > intr.height - 1) continue;
    Ray ray;
    ray.origin = pose.center();
    ray.direction = (voxel.center - pose.center()).normalized();
    if (!ray_box_intersect(ray, voxel.center, voxel.side)) continue;
    RayRender r = render_ray(voxel, ray, settings.samples);
    if (r.opacity < settings.opacity_min) continue;
    RenderedFeature f;
    f.landmark_id = voxel.track_id;
    f.world_point = voxel.center;
    f.pixel = uv;
    f.descriptor = std::move(r.descriptor);
    f.opacity = r.opacity;
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace favor
