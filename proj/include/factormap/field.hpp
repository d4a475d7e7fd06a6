#pragma once

// Vector-matrix factorized radiance field and its color decoder.
//
// Each of the density and appearance tensors is stored as three
// (plane, line) pairs, one per axis: the X line pairs with the YZ plane, Y with
// XZ and Z with XY. A query bilinearly samples each plane, linearly samples
// each line and multiplies them per channel. Density sums the products over
// axes and channels; appearance keeps all 3 * C_a products as the feature fed
// to the decoder together with the unit view direction.
//
// All trainable scalars (grid factors and decoder weights) live in one flat
// parameter vector described by FieldLayout, so gradients and optimizer state
// are plain vectors of the same layout.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "factormap/geometry.hpp"
#include "factormap/random.hpp"

namespace factormap {

struct SceneBounds {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Ones();

  void validate() const;
  Vec3 extent() const { return max - min; }
  double diameter() const { return extent().norm(); }
  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
};

// Component-wise (p - min) / (max - min) clamped to [0, 1]. `clamped` reports
// whether p was outside the box.
Vec3 normalize_coord(const SceneBounds& bounds, const Vec3& p, bool* clamped = nullptr);

struct FieldShape {
  int res = 128;
  int density_channels = 16;
  int appearance_channels = 24;
  int hidden = 48;

  void validate() const;
  int feature_dim() const { return 3 * appearance_channels; }
  int decoder_input_dim() const { return feature_dim() + 3; }
};

class FieldLayout {
 public:
  explicit FieldLayout(const FieldShape& shape);

  const FieldShape& shape() const { return shape_; }
  std::size_t density_plane(int axis) const { return density_plane_[axis]; }
  std::size_t density_line(int axis) const { return density_line_[axis]; }
  std::size_t appearance_plane(int axis) const { return appearance_plane_[axis]; }
  std::size_t appearance_line(int axis) const { return appearance_line_[axis]; }
  std::size_t w1() const { return w1_; }
  std::size_t b1() const { return b1_; }
  std::size_t w2() const { return w2_; }
  std::size_t b2() const { return b2_; }
  // Grid factors occupy [0, grid_size()); the decoder follows.
  std::size_t grid_size() const { return w1_; }
  std::size_t decoder_size() const { return total_ - w1_; }
  std::size_t total() const { return total_; }

 private:
  FieldShape shape_;
  std::array<std::size_t, 3> density_plane_{}, density_line_{};
  std::array<std::size_t, 3> appearance_plane_{}, appearance_line_{};
  std::size_t w1_ = 0, b1_ = 0, w2_ = 0, b2_ = 0, total_ = 0;
};

// Axis pair spanned by the plane that goes with `axis` (X -> YZ, Y -> XZ, Z -> XY).
constexpr std::array<int, 2> plane_axes(int axis) {
  return axis == 0 ? std::array<int, 2>{1, 2}
                   : (axis == 1 ? std::array<int, 2>{0, 2} : std::array<int, 2>{0, 1});
}

// Interpolation footprint of one query point, shared by forward and backward passes.
struct GridLookup {
  std::array<int, 3> cell{};     // lower grid node per axis
  std::array<double, 3> frac{};  // offset inside the cell per axis
  std::array<double, 3> scale{};  // d(grid coordinate)/d(world coordinate) per axis
  bool clamped = false;
};

GridLookup make_lookup(const SceneBounds& bounds, int res, const Vec3& p);

// Scalar -> (0, 1) logistic.
double occupancy(double sigma_raw);

struct DecoderCache {
  std::vector<double> input;   // feature ++ direction
  std::vector<double> pre;     // hidden pre-activations
  std::vector<double> hidden;  // ReLU outputs
  Vec3 rgb = Vec3::Zero();
};

class FactorizedField {
 public:
  FactorizedField() : FactorizedField(FieldShape{}, SceneBounds{}) {}
  FactorizedField(const FieldShape& shape, const SceneBounds& bounds);

  // Grid factors ~ N(0, grid_std^2); decoder weights and biases ~ U(+-1/sqrt(fan_in)).
  void initialize(Rng& rng, double grid_std = 0.1);

  const FieldShape& shape() const { return layout_.shape(); }
  const FieldLayout& layout() const { return layout_; }
  const SceneBounds& bounds() const { return bounds_; }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::vector<double>& param_vector() { return params_; }

  std::span<double> density_plane(int axis);
  std::span<double> density_line(int axis);
  std::span<double> appearance_plane(int axis);
  std::span<double> appearance_line(int axis);

  // Constant added to every raw density before the occupancy sigmoid; not trained.
  double density_bias() const { return density_bias_; }
  void set_density_bias(double b) { density_bias_ = b; }

  GridLookup lookup(const Vec3& p) const { return make_lookup(bounds_, shape().res, p); }

  // Raw density sigma(p) (bias included). Throws InvalidInput on non-finite p.
  double query_density(const Vec3& p) const;
  double density_at(const GridLookup& lk) const;
  // Appends nothing; writes 3 * C_a values into `out`.
  std::vector<double> query_appearance(const Vec3& p) const;
  void appearance_at(const GridLookup& lk, std::span<double> out) const;

  // Accumulate d(loss)/d(params) for an upstream gradient on the raw density.
  // When `d_position` is non-null it receives d(loss)/d(p). Clamped lookups
  // contribute nothing.
  void density_backward(const GridLookup& lk, double upstream, std::span<double> grad,
                        Vec3* d_position) const;
  void appearance_backward(const GridLookup& lk, std::span<const double> upstream,
                           std::span<double> grad, Vec3* d_position) const;

  // RGB in (0,1)^3. Throws InvalidInput unless |dir| = 1 within 1e-6.
  Vec3 decode_color(std::span<const double> feature, const Vec3& dir) const;
  Vec3 decode_forward(std::span<const double> feature, const Vec3& dir, DecoderCache& cache) const;
  // `grad` may be empty to skip decoder weight gradients.
  void decode_backward(const DecoderCache& cache, const Vec3& upstream, std::span<double> grad,
                       std::span<double> d_feature, Vec3* d_dir) const;

 private:
  FieldLayout layout_;
  SceneBounds bounds_;
  std::vector<double> params_;
  double density_bias_ = 0.0;
};

// Trainable scalars. `with_decoder = false` counts only the grid factors.
std::int64_t param_count(const FieldShape& shape, bool with_decoder = true);
// Multiply-adds for one density query, one appearance query and one decoder
// pass, two FLOPs each. Per axis and channel: 4 bilinear + 2 linear + 1 product.
std::int64_t flops_per_point(const FieldShape& shape);

}  // namespace factormap
