#pragma once

// Training objective: color loss, cross-view warping loss, their weighted sum,
// the Mahalanobis-distance uncertainty diagnostics, the batch gradient engine
// and Adam.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "factormap/field.hpp"
#include "factormap/geometry.hpp"
#include "factormap/image.hpp"
#include "factormap/render.hpp"
#include "factormap/sampler.hpp"

namespace factormap {

struct LossWeights {
  double color = 1.0;
  double warp = 0.5;

  void validate() const;
};

// Sum of squared per-channel differences.
double color_loss(std::span<const Vec3> rendered, std::span<const Vec3> observed);

double total_loss(double color, double warp, const LossWeights& weights);

// A posed view taking part in the warping loss.
struct WarpView {
  const Image* image = nullptr;
  Pose pose;
};

// A pixel of view `view` with its rendered depth, measured along the unit ray.
struct WarpPixel {
  int view = 0;
  PixelCoord px;
  double depth = 0.0;
};

struct WarpResult {
  double loss = 0.0;
  int valid_pairs = 0;
  bool empty = true;  // no valid (pixel, partner) pair; loss is 0
};

// Mean over valid (pixel, partner) pairs of |I_i(p) - I_j(project_j(X))|^2 with
// X the lifted pixel. Partners are all other views, plus the pixel's own view
// when `include_self`.
WarpResult warping_loss(std::span<const WarpView> views, const CameraIntrinsics& intr,
                        std::span<const WarpPixel> pixels, bool include_self = false);

// Diagonal noise covariance; an empty `variance` means isotropic q * I.
struct CovarianceModel {
  double isotropic = 1.0;
  std::vector<double> variance;  // one per scalar residual (3 per pixel) when non-empty

  void validate() const;
};

// (m' - I)^T Q^-1 (m' - I) over all pixels and channels.
double mahalanobis(std::span<const Vec3> rendered, std::span<const Vec3> observed,
                   const CovarianceModel& q = {});

struct GlobalUncertainty {
  double total = 0.0;  // D_M
  double init = 0.0;   // D_init, first window
  double fly = 0.0;    // D_fly, all later windows
};

// Monte-Carlo estimate over per-window distances, each scaled by 1/w.
GlobalUncertainty global_uncertainty(std::span<const double> window_distances, int w);

// ---------------------------------------------------------------------------
// Batch gradient engine.

// Pose = (Exp(omega) * R_base, t_base + v) with parameters (omega, v).
struct PoseParam {
  Pose base;
  std::array<double, 6> delta{};  // omega (3), v (3)
  bool trainable = false;

  Pose pose() const;
};

struct TrainingView {
  const Image* image = nullptr;
  PoseParam pose;
};

struct TrainRay {
  int view = 0;
  int u = 0;
  int v = 0;
  RaySamples samples;
};

struct ObjectiveOptions {
  LossWeights weights;
  RenderOptions render;
  bool decoder_grad = true;
  bool pose_grad = false;
  int threads = 1;
};

struct Gradients {
  std::vector<double> field;  // FieldLayout order
  std::vector<double> pose;   // 6 per view (omega, v)
};

struct BatchLoss {
  double color = 0.0;
  double warp = 0.0;
  double total = 0.0;
  int warp_pairs = 0;
  bool warp_empty = true;
  bool finite = true;
  std::vector<Vec3> rendered;
  std::vector<Vec3> observed;
  std::vector<double> depth;
};

// Renders every ray, evaluates beta_c * L_c + beta_w * L_w and, when `grads`
// is non-null, fills exact gradients for the field parameters and (with
// pose_grad) the trainable view poses. Work is split into `threads`
// contiguous blocks whose partial sums are reduced in block order.
BatchLoss evaluate_batch(const FactorizedField& field, std::span<const TrainingView> views,
                         const CameraIntrinsics& intr, std::span<const TrainRay> rays,
                         const ObjectiveOptions& options, Gradients* grads);

// Returns false when any entry is NaN or infinite.
bool all_finite(std::span<const double> v);

// ---------------------------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct ParamGroup {
  std::size_t offset = 0;
  std::size_t size = 0;
  double lr = 0.0;
  bool frozen = false;
};

struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::vector<std::int64_t> steps;  // per group
};

class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n, std::vector<ParamGroup> groups, AdamConfig cfg = {});

  // Frozen groups are left untouched, including their moments.
  void step(std::span<double> params, std::span<const double> grads);
  std::vector<ParamGroup>& groups() { return groups_; }
  const std::vector<ParamGroup>& groups() const { return groups_; }
  const OptimizerState& state() const { return state_; }

 private:
  AdamConfig cfg_;
  std::vector<ParamGroup> groups_;
  OptimizerState state_;
};

}  // namespace factormap
