#include "factormap/render.hpp"

#include <algorithm>
#include <cmath>

#include "factormap/error.hpp"

namespace factormap {

namespace {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

void check_sorted(std::span<const double> t) {
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (!(t[i] > t[i - 1])) throw InvalidInput("render: sample distances not strictly ascending");
  }
}

}  // namespace

std::vector<double> composite_weights(std::span<const double> alphas, std::span<const double> t) {
  if (!t.empty()) {
    if (t.size() != alphas.size()) throw InvalidInput("composite_weights: length mismatch");
    check_sorted(t);
  }
  std::vector<double> w(alphas.size());
  double trans = 1.0;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (!(alphas[i] >= 0.0 && alphas[i] <= 1.0)) throw InvalidInput("composite_weights: alpha outside [0, 1]");
    w[i] = alphas[i] * trans;
    trans *= 1.0 - alphas[i];
  }
  return w;
}

std::vector<double> transmittance(std::span<const double> alphas) {
  std::vector<double> T(alphas.size() + 1);
  T[0] = 1.0;
  for (std::size_t i = 0; i < alphas.size(); ++i) T[i + 1] = T[i] * (1.0 - alphas[i]);
  return T;
}

Vec3 render_color(std::span<const double> weights, std::span<const Vec3> colors) {
  if (weights.size() != colors.size()) throw InvalidInput("render_color: length mismatch");
  Vec3 c = Vec3::Zero();
  for (std::size_t i = 0; i < weights.size(); ++i) c += weights[i] * colors[i];
  return c;
}

DepthEstimate render_depth(std::span<const double> weights, std::span<const double> t,
                           double opacity_floor) {
  if (weights.size() != t.size()) throw InvalidInput("render_depth: length mismatch");
  check_sorted(t);
  DepthEstimate d;
  double opacity = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    d.depth += weights[i] * t[i];
    opacity += weights[i];
  }
  d.low_confidence = opacity < opacity_floor;
  return d;
}

const RenderResult& RayTape::forward(const FactorizedField& field, const Ray& ray,
                                     const RaySamples& samples, const RenderOptions& options) {
  if (samples.t.empty()) throw InvalidInput("render_ray: empty sample set");
  check_sorted(samples.t);
  ray_ = ray;
  options_ = options;
  const std::size_t n = samples.t.size();
  t_ = samples.t;
  delta_ = samples.deltas();
  sigma_.resize(n);
  alpha_.resize(n);
  trans_.resize(n + 1);
  lookups_.resize(n);
  const int fd = field.shape().feature_dim();
  if (options.with_color) {
    colors_.resize(n);
    features_.resize(n * fd);
    decoder_.resize(n);
  }

  for (std::size_t i = 0; i < n; ++i) {
    lookups_[i] = field.lookup(ray.at(t_[i]));
    sigma_[i] = field.density_at(lookups_[i]);
    alpha_[i] = options.mode == CompositeMode::kOccupancy
                    ? occupancy(sigma_[i])
                    : 1.0 - std::exp(-softplus(sigma_[i]) * delta_[i]);
  }

  RenderResult& r = result_;
  r.weights.resize(n);
  r.color.setZero();
  r.depth = 0.0;
  r.opacity = 0.0;
  trans_[0] = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = alpha_[i] * trans_[i];
    trans_[i + 1] = trans_[i] * (1.0 - alpha_[i]);
    r.weights[i] = w;
    r.depth += w * t_[i];
    r.opacity += w;
  }
  if (options.with_color) {
    for (std::size_t i = 0; i < n; ++i) {
      std::span<double> feat(features_.data() + i * fd, fd);
      field.appearance_at(lookups_[i], feat);
      colors_[i] = field.decode_forward(feat, ray.direction, decoder_[i]);
      r.color += r.weights[i] * colors_[i];
    }
  }
  r.normalized_depth = r.opacity > 0.0 ? r.depth / r.opacity : 0.0;
  r.low_confidence = r.opacity < options.opacity_floor;
  return r;
}

void RayTape::backward(const FactorizedField& field, const Vec3& d_color, double d_depth,
                       std::span<double> grad, bool decoder_grad, Vec3* d_origin,
                       Vec3* d_direction) {
  const std::size_t n = t_.size();
  const bool color_path = options_.with_color && !d_color.isZero(0.0);
  g_weight_.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    g_weight_[i] = d_depth * t_[i];
    if (color_path) g_weight_[i] += d_color.dot(colors_[i]);
  }

  const bool want_ray = d_origin || d_direction;
  Vec3 g_origin = Vec3::Zero();
  Vec3 g_dir = Vec3::Zero();

  // dL/da_k = T_k (g_k - S_k), S_k = sum_{i>k} g_i a_i prod_{k<j<i} (1 - a_j).
  double suffix = 0.0;
  for (std::size_t kk = n; kk-- > 0;) {
    const double g_alpha = trans_[kk] * (g_weight_[kk] - suffix);
    suffix = g_weight_[kk] * alpha_[kk] + (1.0 - alpha_[kk]) * suffix;
    double g_sigma;
    if (options_.mode == CompositeMode::kOccupancy) {
      g_sigma = g_alpha * alpha_[kk] * (1.0 - alpha_[kk]);
    } else {
      const double sp = softplus(sigma_[kk]);
      g_sigma = g_alpha * std::exp(-sp * delta_[kk]) * delta_[kk] * occupancy(sigma_[kk]);
    }
    Vec3 dx = Vec3::Zero();
    field.density_backward(lookups_[kk], g_sigma, grad, want_ray ? &dx : nullptr);
    if (want_ray) {
      g_origin += dx;
      g_dir += t_[kk] * dx;
    }
  }

  if (color_path) {
    const int fd = field.shape().feature_dim();
    g_feature_.resize(fd);
    std::span<double> no_grad;
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3 g_rgb = result_.weights[i] * d_color;
      Vec3 g_view = Vec3::Zero();
      field.decode_backward(decoder_[i], g_rgb, decoder_grad ? grad : no_grad, g_feature_,
                            &g_view);
      Vec3 dx = Vec3::Zero();
      field.appearance_backward(lookups_[i], g_feature_, grad, want_ray ? &dx : nullptr);
      if (want_ray) {
        g_origin += dx;
        g_dir += t_[i] * dx + g_view;
      }
    }
  }
  if (d_origin) *d_origin = g_origin;
  if (d_direction) *d_direction = g_dir;
}

RenderResult render_ray(const FactorizedField& field, const Ray& ray, const RaySamples& samples,
                        const RenderOptions& options) {
  RayTape tape;
  return tape.forward(field, ray, samples, options);
}

bool ray_span(const SceneBounds& bounds, const Ray& ray, double near_min, double* near,
              double* far) {
  double t0 = 0.0, t1 = 0.0;
  if (!intersect_aabb(ray, bounds.min, bounds.max, &t0, &t1)) return false;
  *near = std::max(t0, near_min);
  *far = t1;
  return *far > *near;
}

RaySamples importance_samples(const FactorizedField& field, const Ray& ray, double near,
                              double far, int coarse, int fine, Rng& rng,
                              const RenderOptions& options) {
  RaySamples s = stratified(near, far, coarse, rng);
  if (fine <= 0) return s;
  RenderOptions density_only = options;
  density_only.with_color = false;
  RayTape tape;
  const RenderResult& r = tape.forward(field, ray, s, density_only);
  return inverse_transform(s, r.weights, fine, rng);
}

ViewRender render_view(const FactorizedField& field, const CameraIntrinsics& intr,
                       const Pose& pose, const ViewRenderOptions& options) {
  intr.validate();
  ViewRender out;
  out.rgb = Image(intr.width, intr.height);
  out.depth = DepthMap(intr.width, intr.height);
  out.opacity = DepthMap(intr.width, intr.height);
  RayTape tape;
  for (int v = 0; v < intr.height; ++v) {
    for (int u = 0; u < intr.width; ++u) {
      const PixelCoord px = pixel_center(u, v);
      const Ray ray = ray_for_pixel(intr, pose, px);
      double near = 0.0, far = 0.0;
      if (!ray_span(field.bounds(), ray, options.near_min, &near, &far)) continue;
      Rng rng(Rng::derive_seed({options.seed, static_cast<std::uint64_t>(v) * intr.width + u}));
      const RaySamples s =
          importance_samples(field, ray, near, far, options.coarse, options.fine, rng, options.render);
      const RenderResult& r = tape.forward(field, ray, s, options.render);
      out.rgb.set(u, v, r.color);
      out.depth.at(u, v) = r.normalized_depth / intr.pixel_to_camera(px.u, px.v).norm();
      out.opacity.at(u, v) = r.opacity;
    }
  }
  return out;
}

}  // namespace factormap
