#include "factormap/objective.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "factormap/error.hpp"

namespace factormap {

void LossWeights::validate() const {
  if (!(color >= 0.0) || !(warp >= 0.0) || !(color + warp > 0.0))
    throw InvalidInput("loss weights must be non-negative with a positive sum");
}

double color_loss(std::span<const Vec3> rendered, std::span<const Vec3> observed) {
  if (rendered.size() != observed.size()) throw InvalidInput("color_loss: batch size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < rendered.size(); ++i) acc += (rendered[i] - observed[i]).squaredNorm();
  return acc;
}

double total_loss(double color, double warp, const LossWeights& weights) {
  return weights.color * color + weights.warp * warp;
}

void CovarianceModel::validate() const {
  if (!(isotropic > 0.0)) throw InvalidInput("covariance: variance must be positive");
  for (double v : variance) {
    if (!(v > 0.0)) throw InvalidInput("covariance: variance must be positive");
  }
}

double mahalanobis(std::span<const Vec3> rendered, std::span<const Vec3> observed,
                   const CovarianceModel& q) {
  if (rendered.size() != observed.size()) throw InvalidInput("mahalanobis: shape mismatch");
  q.validate();
  const bool diag = !q.variance.empty();
  if (diag && q.variance.size() != 3 * rendered.size())
    throw InvalidInput("mahalanobis: covariance size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    const Vec3 r = rendered[i] - observed[i];
    for (int c = 0; c < 3; ++c) {
      const double var = diag ? q.variance[3 * i + c] : q.isotropic;
      acc += r[c] * r[c] / var;
    }
  }
  return acc;
}

GlobalUncertainty global_uncertainty(std::span<const double> window_distances, int w) {
  if (w < 1) throw InvalidInput("global_uncertainty: w must be >= 1");
  GlobalUncertainty g;
  for (std::size_t i = 0; i < window_distances.size(); ++i) {
    if (i == 0) {
      g.init = window_distances[i] / w;
    } else {
      g.fly += window_distances[i] / w;
    }
  }
  g.total = g.init + g.fly;
  return g;
}

Pose PoseParam::pose() const {
  if (!trainable) return base;
  const Vec3 omega(delta[0], delta[1], delta[2]);
  const Vec3 v(delta[3], delta[4], delta[5]);
  return Pose::from_rt(so3_exp(omega) * base.R(), base.translation + v);
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

namespace {

struct ViewCache {
  const Image* image = nullptr;
  Mat3 R;
  Vec3 t;
};

// Accumulated gradients of one partial sum w.r.t. a view's R and t.
struct PoseGrad {
  Mat3 R = Mat3::Zero();
  Vec3 t = Vec3::Zero();
};

struct WarpAccum {
  double sum = 0.0;
  int count = 0;
};

// Adds the warp residuals of one lifted pixel X against every partner view.
// With `g_X` non-null, also accumulates d(sum)/dX and partner pose gradients.
void warp_pixel(std::span<const ViewCache> views, const CameraIntrinsics& intr, int self,
                bool include_self, const Vec3& observed, const Vec3& X, WarpAccum& acc,
                Vec3* g_X, std::span<PoseGrad> pose_grads) {
  for (int j = 0; j < static_cast<int>(views.size()); ++j) {
    if (j == self && !include_self) continue;
    const ViewCache& vj = views[j];
    const Vec3 rel = X - vj.t;
    const Vec3 xc = vj.R.transpose() * rel;
    if (!(xc.z() > 1e-6)) continue;
    const double inv_z = 1.0 / xc.z();
    const double u = intr.fx * xc.x() * inv_z + intr.cx;
    const double v = intr.fy * xc.y() * inv_z + intr.cy;
    Vec3 val;
    Eigen::Matrix<double, 3, 2> J;
    if (!vj.image->bilinear(u, v, &val, g_X ? &J : nullptr)) continue;
    const Vec3 r = observed - val;
    acc.sum += r.squaredNorm();
    ++acc.count;
    if (!g_X) continue;
    const Eigen::Vector2d g_uv = J.transpose() * (-2.0 * r);
    Vec3 g_xc;
    g_xc.x() = g_uv.x() * intr.fx * inv_z;
    g_xc.y() = g_uv.y() * intr.fy * inv_z;
    g_xc.z() = -(g_uv.x() * intr.fx * xc.x() + g_uv.y() * intr.fy * xc.y()) * inv_z * inv_z;
    const Vec3 g_world = vj.R * g_xc;
    *g_X += g_world;
    if (!pose_grads.empty()) {
      pose_grads[j].t -= g_world;
      pose_grads[j].R += rel * g_xc.transpose();
    }
  }
}

struct BlockResult {
  double color = 0.0;
  WarpAccum warp;
  std::vector<double> g_color;  // already scaled by beta_c
  std::vector<double> g_warp;   // unscaled, d(sum of warp residuals)
  std::vector<PoseGrad> p_color, p_warp;
  bool finite = true;
};

void run_block(const FactorizedField& field, std::span<const ViewCache> views,
               std::span<const TrainingView> train_views, const CameraIntrinsics& intr,
               std::span<const TrainRay> rays, std::size_t begin, std::size_t end,
               const ObjectiveOptions& opt, bool want_grad, BlockResult& out, BatchLoss& loss) {
  const std::size_t np = field.params().size();
  const bool use_warp = opt.weights.warp > 0.0 && views.size() > 0;
  const bool pose_grad = want_grad && opt.pose_grad;
  if (want_grad) {
    out.g_color.assign(np, 0.0);
    if (use_warp) out.g_warp.assign(np, 0.0);
    if (pose_grad) {
      out.p_color.assign(views.size(), {});
      out.p_warp.assign(views.size(), {});
    }
  }
  RayTape tape;
  for (std::size_t r = begin; r < end; ++r) {
    const TrainRay& tr = rays[r];
    const ViewCache& vc = views[tr.view];
    const PixelCoord px = pixel_center(tr.u, tr.v);
    const Vec3 k = intr.pixel_to_camera(px.u, px.v);
    const Vec3 k_hat = k.normalized();
    Ray ray;
    ray.origin = vc.t;
    ray.direction = vc.R * k_hat;
    const RenderResult& res = tape.forward(field, ray, tr.samples, opt.render);
    const Vec3 obs = vc.image->at(tr.u, tr.v);
    const Vec3 e = res.color - obs;
    out.color += e.squaredNorm();
    loss.rendered[r] = res.color;
    loss.observed[r] = obs;
    loss.depth[r] = res.depth;

    Vec3 g_X = Vec3::Zero();
    const Vec3 X = ray.origin + res.depth * ray.direction;
    if (use_warp) {
      warp_pixel(views, intr, tr.view, false, obs, X, out.warp, want_grad ? &g_X : nullptr,
                 pose_grad ? std::span<PoseGrad>(out.p_warp) : std::span<PoseGrad>());
    }
    if (!want_grad) continue;

    const bool ray_grad = pose_grad && train_views[tr.view].pose.trainable;
    Vec3 go = Vec3::Zero(), gd = Vec3::Zero();
    tape.backward(field, 2.0 * opt.weights.color * e, 0.0, out.g_color, opt.decoder_grad,
                  ray_grad ? &go : nullptr, ray_grad ? &gd : nullptr);
    if (ray_grad) {
      out.p_color[tr.view].t += go;
      out.p_color[tr.view].R += gd * k_hat.transpose();
    }
    if (use_warp && !g_X.isZero(0.0)) {
      const double g_depth = g_X.dot(ray.direction);
      Vec3 wo = Vec3::Zero(), wd = Vec3::Zero();
      tape.backward(field, Vec3::Zero(), g_depth, out.g_warp, false, ray_grad ? &wo : nullptr,
                    ray_grad ? &wd : nullptr);
      if (pose_grad) {
        // X = o + D d also depends on the pose directly.
        wo += g_X;
        wd += res.depth * g_X;
        out.p_warp[tr.view].t += wo;
        out.p_warp[tr.view].R += wd * k_hat.transpose();
      }
    }
  }
}

}  // namespace

WarpResult warping_loss(std::span<const WarpView> views, const CameraIntrinsics& intr,
                        std::span<const WarpPixel> pixels, bool include_self) {
  std::vector<ViewCache> cache(views.size());
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (!views[i].image) throw InvalidInput("warping_loss: view without image");
    cache[i] = {views[i].image, views[i].pose.R(), views[i].pose.translation};
  }
  WarpAccum acc;
  for (const WarpPixel& p : pixels) {
    if (p.view < 0 || p.view >= static_cast<int>(views.size()))
      throw InvalidInput("warping_loss: view index out of range");
    const Ray ray = ray_for_pixel(intr, views[p.view].pose, p.px);
    Vec3 obs;
    if (!views[p.view].image->bilinear(p.px.u, p.px.v, &obs))
      obs = views[p.view].image->at(static_cast<int>(p.px.u), static_cast<int>(p.px.v));
    warp_pixel(cache, intr, p.view, include_self, obs, ray.at(p.depth), acc, nullptr, {});
  }
  WarpResult r;
  r.valid_pairs = acc.count;
  r.empty = acc.count == 0;
  r.loss = acc.count > 0 ? acc.sum / acc.count : 0.0;
  return r;
}

BatchLoss evaluate_batch(const FactorizedField& field, std::span<const TrainingView> views,
                         const CameraIntrinsics& intr, std::span<const TrainRay> rays,
                         const ObjectiveOptions& options, Gradients* grads) {
  options.weights.validate();
  std::vector<ViewCache> cache(views.size());
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (!views[i].image) throw InvalidInput("evaluate_batch: view without image");
    const Pose p = views[i].pose.pose();
    cache[i] = {views[i].image, p.R(), p.translation};
  }
  for (const TrainRay& r : rays) {
    if (r.view < 0 || r.view >= static_cast<int>(views.size()))
      throw InvalidInput("evaluate_batch: ray view index out of range");
    if (r.u < 0 || r.v < 0 || r.u >= intr.width || r.v >= intr.height)
      throw InvalidInput("evaluate_batch: ray pixel outside the image");
  }

  BatchLoss loss;
  loss.rendered.resize(rays.size());
  loss.observed.resize(rays.size());
  loss.depth.resize(rays.size());

  const int blocks = std::max(1, std::min<int>(options.threads, static_cast<int>(rays.size())));
  std::vector<BlockResult> parts(blocks);
  const bool want_grad = grads != nullptr;
  auto range = [&](int b) {
    return std::pair<std::size_t, std::size_t>(rays.size() * b / blocks,
                                               rays.size() * (b + 1) / blocks);
  };
  if (blocks == 1) {
    run_block(field, cache, views, intr, rays, 0, rays.size(), options, want_grad, parts[0], loss);
  } else {
    std::vector<std::thread> workers;
    for (int b = 0; b < blocks; ++b) {
      workers.emplace_back([&, b] {
        const auto [lo, hi] = range(b);
        run_block(field, cache, views, intr, rays, lo, hi, options, want_grad, parts[b], loss);
      });
    }
    for (std::thread& w : workers) w.join();
  }

  WarpAccum warp;
  for (const BlockResult& p : parts) {
    loss.color += p.color;
    warp.sum += p.warp.sum;
    warp.count += p.warp.count;
  }
  loss.warp_pairs = warp.count;
  loss.warp_empty = warp.count == 0;
  loss.warp = warp.count > 0 ? warp.sum / warp.count : 0.0;
  loss.total = total_loss(loss.color, loss.warp, options.weights);
  loss.finite = std::isfinite(loss.total);

  if (!want_grad) return loss;
  const double warp_scale = warp.count > 0 ? options.weights.warp / warp.count : 0.0;
  const std::size_t np = field.params().size();
  grads->field.assign(np, 0.0);
  for (const BlockResult& p : parts) {
    for (std::size_t i = 0; i < np; ++i) grads->field[i] += p.g_color[i];
    if (!p.g_warp.empty() && warp_scale != 0.0) {
      for (std::size_t i = 0; i < np; ++i) grads->field[i] += warp_scale * p.g_warp[i];
    }
  }
  grads->pose.assign(6 * views.size(), 0.0);
  if (options.pose_grad) {
    for (std::size_t v = 0; v < views.size(); ++v) {
      if (!views[v].pose.trainable) continue;
      PoseGrad g;
      for (const BlockResult& p : parts) {
        g.R += p.p_color[v].R + warp_scale * p.p_warp[v].R;
        g.t += p.p_color[v].t + warp_scale * p.p_warp[v].t;
      }
      const PoseParam& pp = views[v].pose;
      const Vec3 omega(pp.delta[0], pp.delta[1], pp.delta[2]);
      const auto dexp = so3_exp_derivatives(omega);
      const Mat3 r_base = pp.base.R();
      for (int k = 0; k < 3; ++k) {
        grads->pose[6 * v + k] = (g.R.array() * (dexp[k] * r_base).array()).sum();
        grads->pose[6 * v + 3 + k] = g.t[k];
      }
    }
  }
  loss.finite = loss.finite && all_finite(grads->field) && all_finite(grads->pose);
  return loss;
}

Adam::Adam(std::size_t n, std::vector<ParamGroup> groups, AdamConfig cfg)
    : cfg_(cfg), groups_(std::move(groups)) {
  for (const ParamGroup& g : groups_) {
    if (g.offset + g.size > n) throw InvalidInput("adam: group outside parameter vector");
  }
  state_.m.assign(n, 0.0);
  state_.v.assign(n, 0.0);
  state_.steps.assign(groups_.size(), 0);
}

void Adam::step(std::span<double> params, std::span<const double> grads) {
  if (params.size() != state_.m.size() || grads.size() != state_.m.size())
    throw InvalidInput("adam: parameter/gradient size mismatch");
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    const ParamGroup& g = groups_[gi];
    if (g.frozen) continue;
    const std::int64_t t = ++state_.steps[gi];
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
    double* m = state_.m.data();
    double* v = state_.v.data();
    for (std::size_t i = g.offset; i < g.offset + g.size; ++i) {
      const double gr = grads[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gr;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gr * gr;
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      params[i] -= g.lr * mh / (std::sqrt(vh) + cfg_.eps);
    }
  }
}

}  // namespace factormap
