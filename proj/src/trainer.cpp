#include "favor/trainer.hpp"

#include <cmath>
#include <iomanip>
#include <random>

#include "favor/descriptors.hpp"

namespace favor {

namespace {

constexpr double kAlphaClamp = 1e-6;

void check_target(const Eigen::Ref<const Eigen::VectorXd>& target) {
  if (target.norm() < 1e-12) throw Error(ErrorCode::ZeroVector, "training target is zero");
}

// dL/d(rendered) for the MSE and cosine terms; also fills those loss terms.
Eigen::VectorXd descriptor_loss_gradient(const Eigen::Ref<const Eigen::VectorXd>& rendered,
                                         const Eigen::Ref<const Eigen::VectorXd>& target, const LossWeights& w,
                                         LossBreakdown& loss) {
  const double channels = static_cast<double>(rendered.size());
  const Eigen::VectorXd diff = rendered - target;
  loss.mse = diff.squaredNorm() / channels;
  Eigen::VectorXd grad = (2.0 * w.mse / channels) * diff;
  const double nr = rendered.norm();
  if (nr < 1e-12) {
    loss.cosine = 1.0;
    loss.zero_rendered = true;
    return grad;
  }
  const double nt = target.norm();
  const double cos = rendered.dot(target) / (nr * nt);
  loss.cosine = 1.0 - cos;
  grad -= w.cosine * (target / (nr * nt) - (cos / (nr * nr)) * rendered);
  return grad;
}

double binary_entropy(double a) { return -(a * std::log(a) + (1.0 - a) * std::log(1.0 - a)); }

// Adds the per-sample density gradient of one ray, given e_t = g . d_t, scaled by `scale`.
void accumulate_density_gradient(const VoxelLandmark& voxel, const RayStencil& stencil, const Composite& comp,
                                 const Eigen::VectorXd& sample_dot, const LossWeights& w, double scale,
                                 Eigen::VectorXd& density_grad) {
  const int n = stencil.samples();
  const double ratio = stencil.delta / voxel.side;
  double suffix = 0.0;  // sum_{t > j} W_t e_t
  for (int j = n - 1; j >= 0; --j) {
    double ds = comp.transmittance[j] * std::exp(-comp.optical_depth[j]) * sample_dot[j] - suffix;
    suffix += comp.weight[j] * sample_dot[j];
    const double a = comp.alpha[j];
    if (a > kAlphaClamp && a < 1.0 - kAlphaClamp)
      ds += (w.entropy / n) * std::log((1.0 - a) / a) * (1.0 - a);
    const auto& st = stencil.stencils[j];
    double raw = 0.0;
    for (int k = 0; k < 8; ++k) raw += st.weight[k] * voxel.density_nodes[st.index[k]];
    const double draw = scale * ds * ratio * sigmoid(raw + kDensityShift);
    for (int k = 0; k < 8; ++k) density_grad[st.index[k]] += st.weight[k] * draw;
  }
}

void accumulate_tv_gradient(const VoxelLandmark& voxel, double scale, VoxelGradient& grad) {
  const int r = voxel.resolution;
  const double pairs = 3.0 * r * r * (r - 1);
  const double norm = 2.0 * scale / (pairs * (voxel.channels() + 1));
  for (int c = 0; c < r; ++c)
    for (int b = 0; b < r; ++b)
      for (int a = 0; a < r; ++a) {
        const int i = node_index(r, a, b, c);
        const int nbr[3] = {a + 1 < r ? node_index(r, a + 1, b, c) : -1,
                            b + 1 < r ? node_index(r, a, b + 1, c) : -1,
                            c + 1 < r ? node_index(r, a, b, c + 1) : -1};
        for (int j : nbr) {
          if (j < 0) continue;
          const Eigen::RowVectorXd dd = norm * (voxel.desc_nodes.row(i) - voxel.desc_nodes.row(j));
          grad.desc.row(i) += dd;
          grad.desc.row(j) -= dd;
          const double dr = norm * (voxel.density_nodes[i] - voxel.density_nodes[j]);
          grad.density[i] += dr;
          grad.density[j] -= dr;
        }
      }
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1 || rays_per_epoch < 1 || samples < 1)
    throw Error(ErrorCode::InvalidArgument, "training budget must be positive");
  if (weights.mse < 0 || weights.cosine < 0 || weights.tv < 0 || weights.entropy < 0)
    throw Error(ErrorCode::InvalidArgument, "loss weights must be non-negative");
  if (!(lr_desc >= 0) || !(lr_density >= 0)) throw Error(ErrorCode::InvalidArgument, "learning rates must be >= 0");
}

double total_variation(const VoxelLandmark& voxel) {
  const int r = voxel.resolution;
  double sum = 0.0;
  for (int c = 0; c < r; ++c)
    for (int b = 0; b < r; ++b)
      for (int a = 0; a < r; ++a) {
        const int i = node_index(r, a, b, c);
        const int nbr[3] = {a + 1 < r ? node_index(r, a + 1, b, c) : -1,
                            b + 1 < r ? node_index(r, a, b + 1, c) : -1,
                            c + 1 < r ? node_index(r, a, b, c + 1) : -1};
        for (int j : nbr) {
          if (j < 0) continue;
          sum += (voxel.desc_nodes.row(i) - voxel.desc_nodes.row(j)).squaredNorm();
          const double dr = voxel.density_nodes[i] - voxel.density_nodes[j];
          sum += dr * dr;
        }
      }
  const double pairs = 3.0 * r * r * (r - 1);
  return sum / (pairs * (voxel.channels() + 1));
}

double alpha_entropy(const Eigen::Ref<const Eigen::VectorXd>& alphas) {
  if (alphas.size() == 0) return 0.0;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < alphas.size(); ++i)
    sum += binary_entropy(std::clamp(alphas[i], kAlphaClamp, 1.0 - kAlphaClamp));
  return sum / static_cast<double>(alphas.size());
}

LossBreakdown compute_loss(const Eigen::Ref<const Eigen::VectorXd>& rendered,
                           const Eigen::Ref<const Eigen::VectorXd>& target, const VoxelLandmark& voxel,
                           const Eigen::Ref<const Eigen::VectorXd>& ray_alphas, const LossWeights& weights) {
  check_target(target);
  if (rendered.size() != target.size()) throw Error(ErrorCode::ChannelMismatch, "rendered/target length differ");
  LossBreakdown loss;
  descriptor_loss_gradient(rendered, target, weights, loss);
  loss.tv = total_variation(voxel);
  loss.entropy = alpha_entropy(ray_alphas);
  loss.total = weights.mse * loss.mse + weights.cosine * loss.cosine + weights.tv * loss.tv +
               weights.entropy * loss.entropy;
  return loss;
}

VoxelGradient VoxelGradient::zeros_like(const VoxelLandmark& voxel) {
  return {Eigen::MatrixXd::Zero(voxel.node_count(), voxel.channels()), Eigen::VectorXd::Zero(voxel.node_count())};
}

RayLossGradient backward(const VoxelLandmark& voxel, const Ray& ray, const Eigen::Ref<const Eigen::VectorXd>& target,
                         const LossWeights& weights, int samples) {
  check_target(target);
  const RayStencil stencil = ray_stencil(voxel, ray, samples);
  const Composite comp = composite_density(voxel, stencil);
  const int n = stencil.samples();

  std::vector<Eigen::VectorXd> d(n);
  Eigen::VectorXd rendered = Eigen::VectorXd::Zero(voxel.channels());
  for (int t = 0; t < n; ++t) {
    d[t] = apply_stencil(voxel.desc_nodes, stencil.stencils[t]);
    rendered += comp.weight[t] * d[t];
  }

  RayLossGradient out;
  out.loss = compute_loss(rendered, target, voxel, comp.alpha, weights);
  LossBreakdown scratch;
  const Eigen::VectorXd g = descriptor_loss_gradient(rendered, target, weights, scratch);

  out.gradient = VoxelGradient::zeros_like(voxel);
  Eigen::VectorXd sample_dot(n);
  for (int t = 0; t < n; ++t) {
    sample_dot[t] = g.dot(d[t]);
    const auto& st = stencil.stencils[t];
    for (int k = 0; k < 8; ++k) out.gradient.desc.row(st.index[k]) += (comp.weight[t] * st.weight[k]) * g.transpose();
  }
  accumulate_density_gradient(voxel, stencil, comp, sample_dot, weights, 1.0, out.gradient.density);
  accumulate_tv_gradient(voxel, weights.tv, out.gradient);
  return out;
}

std::vector<TrainingRay> training_rays(const VoxelLandmark& voxel, const Track& track,
                                       const CameraIntrinsics& intr, int samples) {
  std::vector<TrainingRay> rays;
  for (const auto& obs : track.observations) {
    const Patch& patch = obs.patch;
    const Eigen::Vector2i c = nearest_pixel(patch.center_keypoint.position);
    const int half = patch.size / 2;
    for (int y = 0; y < patch.size; ++y) {
      for (int x = 0; x < patch.size; ++x) {
        const Eigen::VectorXd target = patch.data.row(y * patch.size + x).transpose();
        if (target.norm() < 1e-12) continue;
        const Ray ray = ray_through_pixel(obs.pose, intr, Eigen::Vector2d(c.x() - half + x, c.y() - half + y));
        if (!ray_box_intersect(ray, voxel.center, voxel.side)) continue;
        rays.push_back({ray_stencil(voxel, ray, samples), target});
      }
    }
  }
  return rays;
}

namespace {

// Ray geometry and targets flattened for batched evaluation.
struct PackedRays {
  int samples = 0;
  std::vector<int> index;       // rays x samples x 8
  std::vector<double> weight;   // rays x samples x 8
  std::vector<double> ratio;    // delta / side per ray
  Eigen::MatrixXd targets;      // rays x C
  Eigen::VectorXd target_norms;

  std::size_t size() const { return ratio.size(); }
};

PackedRays pack_rays(const VoxelLandmark& voxel, std::span<const TrainingRay* const> rays) {
  PackedRays p;
  if (rays.empty()) return p;
  p.samples = rays.front()->stencil.samples();
  const std::size_t n = rays.size();
  p.index.resize(n * p.samples * 8);
  p.weight.resize(n * p.samples * 8);
  p.ratio.resize(n);
  p.targets.resize(static_cast<Eigen::Index>(n), voxel.channels());
  p.target_norms.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const TrainingRay& r = *rays[i];
    if (r.stencil.samples() != p.samples) throw Error(ErrorCode::InvalidArgument, "rays differ in sample count");
    if (r.target.size() != voxel.channels()) throw Error(ErrorCode::ChannelMismatch, "target length differs");
    check_target(r.target);
    p.ratio[i] = r.stencil.delta / voxel.side;
    for (int t = 0; t < p.samples; ++t)
      for (int k = 0; k < 8; ++k) {
        const std::size_t o = (i * p.samples + t) * 8 + k;
        p.index[o] = r.stencil.stencils[t].index[k];
        p.weight[o] = r.stencil.stencils[t].weight[k];
      }
    p.targets.row(static_cast<Eigen::Index>(i)) = r.target.transpose();
    p.target_norms[static_cast<Eigen::Index>(i)] = r.target.norm();
  }
  return p;
}

// `batch` lists distinct pool rays; `share[i]` is the fraction of the sampled batch
// that drew ray batch[i] (the shares sum to one).
RayLossGradient packed_backward(const VoxelLandmark& voxel, const PackedRays& pool, std::span<const std::size_t> batch,
                                std::span<const double> share, const LossWeights& w) {
  const Eigen::Index b = static_cast<Eigen::Index>(batch.size());
  const int nodes = voxel.node_count();
  const int channels = voxel.channels();
  const int n = pool.samples;
  if (b == 0) throw Error(ErrorCode::InvalidArgument, "empty training batch");

  // Forward compositing; per-sample quantities kept for the reverse pass.
  std::vector<double> weight(b * n), survive(b * n), alpha(b * n), slope(b * n), log_odds(b * n);
  Eigen::MatrixXd agg = Eigen::MatrixXd::Zero(b, nodes);
  Eigen::MatrixXd targets(b, channels);
  Eigen::VectorXd target_norms(b);
  double entropy = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const std::size_t r = batch[i];
    targets.row(i) = pool.targets.row(static_cast<Eigen::Index>(r));
    target_norms[i] = pool.target_norms[static_cast<Eigen::Index>(r)];
    const int* idx = &pool.index[r * n * 8];
    const double* wt = &pool.weight[r * n * 8];
    double trans = 1.0;
    double ray_entropy = 0.0;
    for (int t = 0; t < n; ++t) {
      double raw = kDensityShift;
      for (int k = 0; k < 8; ++k) raw += wt[t * 8 + k] * voxel.density_nodes[idx[t * 8 + k]];
      // softplus and sigmoid share one exponential; log(1 - alpha) = -s.
      double sp, sg;
      if (raw > 30.0) {
        sp = raw;
        sg = 1.0;
      } else {
        const double ex = std::exp(raw);
        sp = std::log1p(ex);
        sg = ex / (1.0 + ex);
      }
      const double s = sp * pool.ratio[r];
      const double a = -std::expm1(-s);
      const std::size_t o = i * n + t;
      weight[o] = trans * a;
      survive[o] = trans * (1.0 - a);
      alpha[o] = a;
      slope[o] = sg * pool.ratio[r];
      if (a > kAlphaClamp && a < 1.0 - kAlphaClamp) {
        const double log_a = std::log(a);
        ray_entropy -= a * log_a - (1.0 - a) * s;
        log_odds[o] = -s - log_a;
      } else {
        ray_entropy += binary_entropy(std::clamp(a, kAlphaClamp, 1.0 - kAlphaClamp));
      }
      trans *= 1.0 - a;
      for (int k = 0; k < 8; ++k) agg(i, idx[t * 8 + k]) += weight[o] * wt[t * 8 + k];
    }
    entropy += share[i] * ray_entropy / n;
  }
  const Eigen::MatrixXd rendered = agg * voxel.desc_nodes;

  // Descriptor losses and dL/d(rendered), row by row in matrix form.
  const Eigen::MatrixXd diff = rendered - targets;
  const Eigen::VectorXd nr = rendered.rowwise().norm();
  const Eigen::VectorXd dots = rendered.cwiseProduct(targets).rowwise().sum();
  Eigen::VectorXd coef_t = Eigen::VectorXd::Zero(b), coef_r = Eigen::VectorXd::Zero(b);
  RayLossGradient out;
  const Eigen::Map<const Eigen::VectorXd> shares(share.data(), b);
  out.loss.mse = shares.dot(diff.rowwise().squaredNorm()) / channels;
  double cosine = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    if (nr[i] < 1e-12) {
      cosine += share[i];
      out.loss.zero_rendered = true;
      continue;
    }
    const double cos = dots[i] / (nr[i] * target_norms[i]);
    cosine += share[i] * (1.0 - cos);
    coef_t[i] = -w.cosine / (nr[i] * target_norms[i]);
    coef_r[i] = w.cosine * cos / (nr[i] * nr[i]);
  }
  out.loss.cosine = cosine;
  out.loss.entropy = entropy;
  out.loss.tv = total_variation(voxel);
  out.loss.total = w.mse * out.loss.mse + w.cosine * out.loss.cosine + w.tv * out.loss.tv + w.entropy * out.loss.entropy;

  Eigen::MatrixXd g = (2.0 * w.mse / channels) * diff;
  g += coef_t.asDiagonal() * targets;
  g += coef_r.asDiagonal() * rendered;
  g = shares.asDiagonal() * g;

  out.gradient.desc = agg.transpose() * g;
  out.gradient.density = Eigen::VectorXd::Zero(nodes);
  const Eigen::MatrixXd node_dot = g * voxel.desc_nodes.transpose();  // b x nodes
  for (Eigen::Index i = 0; i < b; ++i) {
    const double ent_scale = w.entropy * share[i] / n;
    const std::size_t r = batch[i];
    const int* idx = &pool.index[r * n * 8];
    const double* wt = &pool.weight[r * n * 8];
    double suffix = 0.0;  // sum_{t > j} W_t e_t
    for (int j = n - 1; j >= 0; --j) {
      const std::size_t o = i * n + j;
      double e = 0.0;
      for (int k = 0; k < 8; ++k) e += wt[j * 8 + k] * node_dot(i, idx[j * 8 + k]);
      double ds = survive[o] * e - suffix;
      suffix += weight[o] * e;
      const double a = alpha[o];
      if (a > kAlphaClamp && a < 1.0 - kAlphaClamp) ds += ent_scale * log_odds[o] * (1.0 - a);
      const double draw = ds * slope[o];
      for (int k = 0; k < 8; ++k) out.gradient.density[idx[j * 8 + k]] += wt[j * 8 + k] * draw;
    }
  }
  accumulate_tv_gradient(voxel, w.tv, out.gradient);
  return out;
}

}  // namespace

RayLossGradient batch_backward(const VoxelLandmark& voxel, std::span<const TrainingRay* const> batch,
                               const LossWeights& weights) {
  if (batch.empty()) throw Error(ErrorCode::InvalidArgument, "empty training batch");
  const PackedRays packed = pack_rays(voxel, batch);
  std::vector<std::size_t> all(batch.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const std::vector<double> share(batch.size(), 1.0 / static_cast<double>(batch.size()));
  return packed_backward(voxel, packed, all, share, weights);
}

TrainResult train_voxel(VoxelLandmark voxel, const Track& track, const CameraIntrinsics& intr,
                        const TrainConfig& cfg) {
  cfg.validate();
  const std::vector<TrainingRay> rays = training_rays(voxel, track, intr, cfg.samples);
  if (rays.empty()) throw Error(ErrorCode::NoIntersection, "no training ray hits the voxel");
  std::vector<const TrainingRay*> ptrs;
  ptrs.reserve(rays.size());
  for (const auto& r : rays) ptrs.push_back(&r);
  const PackedRays pool = pack_rays(voxel, ptrs);

  const int nodes = voxel.node_count();
  const int channels = voxel.channels();

  // Per-node step scale from how much each node is touched by the ray pool.
  Eigen::VectorXd scale = Eigen::VectorXd::Ones(nodes);
  if (cfg.per_node_lr) {
    Eigen::VectorXd visits = Eigen::VectorXd::Zero(nodes);
    for (std::size_t o = 0; o < pool.index.size(); ++o) visits[pool.index[o]] += pool.weight[o];
    scale = visits / visits.maxCoeff();
  }

  Eigen::MatrixXd m_desc = Eigen::MatrixXd::Zero(nodes, channels), v_desc = m_desc;
  Eigen::VectorXd m_dens = Eigen::VectorXd::Zero(nodes), v_dens = m_dens;

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<int> counts(pool.size());
  std::vector<std::size_t> batch;
  std::vector<double> share;
  const double inv_rays = 1.0 / static_cast<double>(cfg.rays_per_epoch);

  TrainResult result;
  result.history.reserve(cfg.epochs);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::fill(counts.begin(), counts.end(), 0);
    for (int k = 0; k < cfg.rays_per_epoch; ++k) ++counts[pick(rng)];
    batch.clear();
    share.clear();
    for (std::size_t r = 0; r < counts.size(); ++r) {
      if (counts[r] == 0) continue;
      batch.push_back(r);
      share.push_back(counts[r] * inv_rays);
    }
    const RayLossGradient lg = packed_backward(voxel, pool, batch, share, cfg.weights);
    if (!std::isfinite(lg.loss.total) || !lg.gradient.desc.allFinite() || !lg.gradient.density.allFinite())
      throw Error(ErrorCode::Divergence, "non-finite loss at epoch " + std::to_string(epoch));
    result.history.push_back(lg.loss);

    const double step = epoch + 1;
    const double c1 = 1.0 - std::pow(cfg.beta1, step);
    const double c2 = 1.0 - std::pow(cfg.beta2, step);
    m_desc = cfg.beta1 * m_desc + (1.0 - cfg.beta1) * lg.gradient.desc;
    v_desc = cfg.beta2 * v_desc + (1.0 - cfg.beta2) * lg.gradient.desc.cwiseAbs2();
    m_dens = cfg.beta1 * m_dens + (1.0 - cfg.beta1) * lg.gradient.density;
    v_dens = cfg.beta2 * v_dens + (1.0 - cfg.beta2) * lg.gradient.density.cwiseAbs2();

    const Eigen::MatrixXd desc_step =
        (m_desc / c1).array() / ((v_desc / c2).array().sqrt() + cfg.epsilon);
    const Eigen::VectorXd dens_step = (m_dens / c1).array() / ((v_dens / c2).array().sqrt() + cfg.epsilon);
    voxel.desc_nodes -= cfg.lr_desc * (scale.asDiagonal() * desc_step);
    voxel.density_nodes -= cfg.lr_density * scale.cwiseProduct(dens_step);
    if (!voxel.desc_nodes.allFinite() || !voxel.density_nodes.allFinite())
      throw Error(ErrorCode::Divergence, "non-finite lattice at epoch " + std::to_string(epoch));
  }
  result.voxel = std::move(voxel);
  return result;
}

void write_loss_history(std::ostream& out, std::span<const LossBreakdown> history) {
  const auto flags = out.flags();
  const auto precision = out.precision();
  out << std::setprecision(17) << "# epoch mse cosine tv entropy total\n";
  for (std::size_t e = 0; e < history.size(); ++e) {
    const auto& l = history[e];
    out << e << ' ' << l.mse << ' ' << l.cosine << ' ' << l.tv << ' ' << l.entropy << ' ' << l.total << '\n';
  }
  out.flags(flags);
  out.precision(precision);
}

}  // namespace favor
