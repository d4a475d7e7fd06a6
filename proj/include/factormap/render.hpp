#pragma once

// Volume compositing of per-sample occupancies into color and depth, plus the
// recording ray renderer used by training (forward pass with a reverse-mode
// backward pass through compositing, decoder and grid).

#include <span>
#include <vector>

#include "factormap/field.hpp"
#include "factormap/geometry.hpp"
#include "factormap/image.hpp"
#include "factormap/sampler.hpp"

namespace factormap {

enum class CompositeMode {
  kOccupancy,  // alpha_i = sigmoid(sigma_i)
  kExpAlpha,   // alpha_i = 1 - exp(-softplus(sigma_i) * delta_i), kept for ablations
};

struct RenderResult {
  Vec3 color = Vec3::Zero();
  double depth = 0.0;             // sum_i w_i t_i (unnormalized)
  double normalized_depth = 0.0;  // depth / opacity, evaluation only
  double opacity = 0.0;           // sum_i w_i
  bool low_confidence = true;     // opacity < opacity_floor
  std::vector<double> weights;
};

struct RenderOptions {
  CompositeMode mode = CompositeMode::kOccupancy;
  double opacity_floor = 0.1;
  bool with_color = true;  // false renders depth and weights only
};

// w_i = a_i * prod_{j<i} (1 - a_j). When `t` is given it must be strictly ascending.
std::vector<double> composite_weights(std::span<const double> alphas,
                                      std::span<const double> t = {});
// T_0..T_N with T_i = prod_{j<i} (1 - a_j); T_N is the final transmittance.
std::vector<double> transmittance(std::span<const double> alphas);

Vec3 render_color(std::span<const double> weights, std::span<const Vec3> colors);

struct DepthEstimate {
  double depth = 0.0;
  bool low_confidence = true;
};
DepthEstimate render_depth(std::span<const double> weights, std::span<const double> t,
                           double opacity_floor = 0.1);

// Per-ray tape: keeps what backward() needs; reuse one instance across rays
// to avoid reallocations.
class RayTape {
 public:
  const RenderResult& forward(const FactorizedField& field, const Ray& ray,
                              const RaySamples& samples, const RenderOptions& options = {});

  // Accumulates d(loss)/d(params) into `grad` for upstream gradients on the
  // rendered color and depth. Decoder weight gradients are skipped unless
  // `decoder_grad`. d_origin / d_direction (if non-null) receive the ray
  // gradients, which requires forward() to have seen a differentiable ray.
  void backward(const FactorizedField& field, const Vec3& d_color, double d_depth,
                std::span<double> grad, bool decoder_grad, Vec3* d_origin = nullptr,
                Vec3* d_direction = nullptr);

  const RenderResult& result() const { return result_; }
  std::span<const double> alphas() const { return alpha_; }

 private:
  Ray ray_;
  RenderOptions options_;
  std::vector<double> t_, delta_, sigma_, alpha_, trans_;
  std::vector<GridLookup> lookups_;
  std::vector<Vec3> colors_;
  std::vector<double> features_;
  std::vector<DecoderCache> decoder_;
  std::vector<double> g_weight_, g_feature_;
  RenderResult result_;
};

RenderResult render_ray(const FactorizedField& field, const Ray& ray, const RaySamples& samples,
                        const RenderOptions& options = {});

// Span of the ray inside the scene box, starting no closer than `near_min`.
bool ray_span(const SceneBounds& bounds, const Ray& ray, double near_min, double* near,
              double* far);

// Stratified coarse samples refined by inverse transform over the coarse
// weights (density-only pre-pass).
RaySamples importance_samples(const FactorizedField& field, const Ray& ray, double near,
                              double far, int coarse, int fine, Rng& rng,
                              const RenderOptions& options = {});

struct ViewRenderOptions {
  int coarse = 32;
  int fine = 64;
  double near_min = 0.1;
  std::uint64_t seed = 0;
  RenderOptions render;
};

struct ViewRender {
  Image rgb;
  DepthMap depth;     // camera z of the normalized rendered depth; 0 when the ray misses the box
  DepthMap opacity;
};

// Renders every pixel center of a view. Per-pixel sample streams are seeded
// from (seed, pixel index), so the output does not depend on render order.
ViewRender render_view(const FactorizedField& field, const CameraIntrinsics& intr,
                       const Pose& pose, const ViewRenderOptions& options = {});

}  // namespace factormap
