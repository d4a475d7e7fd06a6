#include "factormap/field.hpp"

#include <algorithm>
#include <cmath>

#include "factormap/error.hpp"

namespace factormap {

void SceneBounds::validate() const {
  if (!(min.array() < max.array()).all()) throw InvalidInput("bounds: min must be < max");
  if (!min.allFinite() || !max.allFinite()) throw InvalidInput("bounds: non-finite corner");
}

Vec3 normalize_coord(const SceneBounds& bounds, const Vec3& p, bool* clamped) {
  Vec3 n = (p - bounds.min).cwiseQuotient(bounds.extent());
  bool out = false;
  for (int a = 0; a < 3; ++a) {
    if (n[a] < 0.0) {
      n[a] = 0.0;
      out = true;
    } else if (n[a] > 1.0) {
      n[a] = 1.0;
      out = true;
    }
  }
  if (clamped) *clamped = out;
  return n;
}

void FieldShape::validate() const {
  if (res < 2) throw InvalidInput("field: res must be >= 2");
  if (density_channels < 1 || appearance_channels < 1 || hidden < 1)
    throw InvalidInput("field: channel counts must be positive");
}

FieldLayout::FieldLayout(const FieldShape& shape) : shape_(shape) {
  shape.validate();
  const std::size_t r = shape.res;
  std::size_t off = 0;
  for (int a = 0; a < 3; ++a) {
    density_plane_[a] = off;
    off += r * r * shape.density_channels;
  }
  for (int a = 0; a < 3; ++a) {
    density_line_[a] = off;
    off += r * shape.density_channels;
  }
  for (int a = 0; a < 3; ++a) {
    appearance_plane_[a] = off;
    off += r * r * shape.appearance_channels;
  }
  for (int a = 0; a < 3; ++a) {
    appearance_line_[a] = off;
    off += r * shape.appearance_channels;
  }
  const std::size_t in = shape.decoder_input_dim();
  const std::size_t h = shape.hidden;
  w1_ = off;
  off += h * in;
  b1_ = off;
  off += h;
  w2_ = off;
  off += 3 * h;
  b2_ = off;
  off += 3;
  total_ = off;
}

GridLookup make_lookup(const SceneBounds& bounds, int res, const Vec3& p) {
  GridLookup lk;
  const Vec3 n = normalize_coord(bounds, p, &lk.clamped);
  const Vec3 ext = bounds.extent();
  for (int a = 0; a < 3; ++a) {
    const double g = n[a] * (res - 1);
    int c = static_cast<int>(std::floor(g));
    c = std::clamp(c, 0, res - 2);
    lk.cell[a] = c;
    lk.frac[a] = g - c;
    lk.scale[a] = (res - 1) / ext[a];
  }
  return lk;
}

double occupancy(double sigma_raw) {
  if (sigma_raw >= 0.0) return 1.0 / (1.0 + std::exp(-sigma_raw));
  const double e = std::exp(sigma_raw);
  return e / (1.0 + e);
}

namespace {

// Offsets and weights of the 2x2 plane footprint and the 2-node line footprint
// for one axis, channel stride C.
struct AxisFootprint {
  std::size_t p00, p01, p10, p11;
  double w00, w01, w10, w11;
  std::size_t l0, l1;
  double wl0, wl1;
  double fb, fc;
};

AxisFootprint footprint(const GridLookup& lk, int axis, int res, int channels,
                        std::size_t plane_off, std::size_t line_off) {
  const auto [b, c] = plane_axes(axis);
  AxisFootprint f;
  const std::size_t C = channels;
  const std::size_t R = res;
  const std::size_t base = plane_off + (static_cast<std::size_t>(lk.cell[b]) * R + lk.cell[c]) * C;
  f.p00 = base;
  f.p01 = base + C;
  f.p10 = base + R * C;
  f.p11 = base + R * C + C;
  f.fb = lk.frac[b];
  f.fc = lk.frac[c];
  f.w00 = (1.0 - f.fb) * (1.0 - f.fc);
  f.w01 = (1.0 - f.fb) * f.fc;
  f.w10 = f.fb * (1.0 - f.fc);
  f.w11 = f.fb * f.fc;
  f.l0 = line_off + static_cast<std::size_t>(lk.cell[axis]) * C;
  f.l1 = f.l0 + C;
  f.wl1 = lk.frac[axis];
  f.wl0 = 1.0 - f.wl1;
  return f;
}

}  // namespace

FactorizedField::FactorizedField(const FieldShape& shape, const SceneBounds& bounds)
    : layout_(shape), bounds_(bounds), params_(layout_.total(), 0.0) {
  bounds.validate();
}

void FactorizedField::initialize(Rng& rng, double grid_std) {
  for (std::size_t i = 0; i < layout_.grid_size(); ++i) params_[i] = grid_std * rng.normal();
  const FieldShape& s = shape();
  const double k1 = 1.0 / std::sqrt(static_cast<double>(s.decoder_input_dim()));
  const double k2 = 1.0 / std::sqrt(static_cast<double>(s.hidden));
  for (std::size_t i = layout_.w1(); i < layout_.w2(); ++i) params_[i] = rng.uniform(-k1, k1);
  for (std::size_t i = layout_.w2(); i < layout_.total(); ++i) params_[i] = rng.uniform(-k2, k2);
}

std::span<double> FactorizedField::density_plane(int axis) {
  const std::size_t r = shape().res;
  return std::span<double>(params_).subspan(layout_.density_plane(axis),
                                            r * r * shape().density_channels);
}
std::span<double> FactorizedField::density_line(int axis) {
  return std::span<double>(params_).subspan(layout_.density_line(axis),
                                            shape().res * shape().density_channels);
}
std::span<double> FactorizedField::appearance_plane(int axis) {
  const std::size_t r = shape().res;
  return std::span<double>(params_).subspan(layout_.appearance_plane(axis),
                                            r * r * shape().appearance_channels);
}
std::span<double> FactorizedField::appearance_line(int axis) {
  return std::span<double>(params_).subspan(layout_.appearance_line(axis),
                                            shape().res * shape().appearance_channels);
}

double FactorizedField::query_density(const Vec3& p) const {
  if (!p.allFinite()) throw InvalidInput("query_density: non-finite position");
  return density_at(lookup(p));
}

double FactorizedField::density_at(const GridLookup& lk) const {
  const int C = shape().density_channels;
  const double* P = params_.data();
  double sigma = 0.0;
  for (int a = 0; a < 3; ++a) {
    const AxisFootprint f =
        footprint(lk, a, shape().res, C, layout_.density_plane(a), layout_.density_line(a));
    for (int ch = 0; ch < C; ++ch) {
      const double plane = f.w00 * P[f.p00 + ch] + f.w01 * P[f.p01 + ch] +
                           f.w10 * P[f.p10 + ch] + f.w11 * P[f.p11 + ch];
      const double line = f.wl0 * P[f.l0 + ch] + f.wl1 * P[f.l1 + ch];
      sigma += plane * line;
    }
  }
  return sigma + density_bias_;
}

std::vector<double> FactorizedField::query_appearance(const Vec3& p) const {
  if (!p.allFinite()) throw InvalidInput("query_appearance: non-finite position");
  std::vector<double> out(shape().feature_dim());
  appearance_at(lookup(p), out);
  return out;
}

void FactorizedField::appearance_at(const GridLookup& lk, std::span<double> out) const {
  const int C = shape().appearance_channels;
  const double* P = params_.data();
  for (int a = 0; a < 3; ++a) {
    const AxisFootprint f = footprint(lk, a, shape().res, C, layout_.appearance_plane(a),
                                      layout_.appearance_line(a));
    double* dst = out.data() + a * C;
    for (int ch = 0; ch < C; ++ch) {
      const double plane = f.w00 * P[f.p00 + ch] + f.w01 * P[f.p01 + ch] +
                           f.w10 * P[f.p10 + ch] + f.w11 * P[f.p11 + ch];
      const double line = f.wl0 * P[f.l0 + ch] + f.wl1 * P[f.l1 + ch];
      dst[ch] = plane * line;
    }
  }
}

namespace {

// Shared backward for one (plane, line) factor family. `upstream(a, ch)` is
// d(loss)/d(product) for axis a, channel ch.
template <class Upstream>
void factor_backward(const GridLookup& lk, int res, int C, const FieldLayout& layout,
                     bool density, const double* P, double* G, Vec3* d_position,
                     Upstream upstream) {
  Vec3 dg = Vec3::Zero();  // d(loss)/d(grid coordinate)
  for (int a = 0; a < 3; ++a) {
    const std::size_t plane_off = density ? layout.density_plane(a) : layout.appearance_plane(a);
    const std::size_t line_off = density ? layout.density_line(a) : layout.appearance_line(a);
    const AxisFootprint f = footprint(lk, a, res, C, plane_off, line_off);
    const auto [b, c] = plane_axes(a);
    double dfb = 0.0, dfc = 0.0, dfa = 0.0;
    for (int ch = 0; ch < C; ++ch) {
      const double u = upstream(a, ch);
      if (u == 0.0) continue;
      const double p00 = P[f.p00 + ch], p01 = P[f.p01 + ch];
      const double p10 = P[f.p10 + ch], p11 = P[f.p11 + ch];
      const double l0 = P[f.l0 + ch], l1 = P[f.l1 + ch];
      const double plane = f.w00 * p00 + f.w01 * p01 + f.w10 * p10 + f.w11 * p11;
      const double line = f.wl0 * l0 + f.wl1 * l1;
      const double gp = u * line;
      G[f.p00 + ch] += gp * f.w00;
      G[f.p01 + ch] += gp * f.w01;
      G[f.p10 + ch] += gp * f.w10;
      G[f.p11 + ch] += gp * f.w11;
      const double gl = u * plane;
      G[f.l0 + ch] += gl * f.wl0;
      G[f.l1 + ch] += gl * f.wl1;
      if (d_position) {
        dfb += gp * ((1.0 - f.fc) * (p10 - p00) + f.fc * (p11 - p01));
        dfc += gp * ((1.0 - f.fb) * (p01 - p00) + f.fb * (p11 - p10));
        dfa += gl * (l1 - l0);
      }
    }
    dg[b] += dfb;
    dg[c] += dfc;
    dg[a] += dfa;
  }
  if (d_position) {
    for (int a = 0; a < 3; ++a) (*d_position)[a] += dg[a] * lk.scale[a];
  }
}

}  // namespace

void FactorizedField::density_backward(const GridLookup& lk, double upstream,
                                       std::span<double> grad, Vec3* d_position) const {
  if (lk.clamped || upstream == 0.0) return;
  factor_backward(lk, shape().res, shape().density_channels, layout_, true, params_.data(),
                  grad.data(), d_position, [upstream](int, int) { return upstream; });
}

void FactorizedField::appearance_backward(const GridLookup& lk, std::span<const double> upstream,
                                          std::span<double> grad, Vec3* d_position) const {
  if (lk.clamped) return;
  const int C = shape().appearance_channels;
  const double* up = upstream.data();
  factor_backward(lk, shape().res, C, layout_, false, params_.data(), grad.data(), d_position,
                  [up, C](int a, int ch) { return up[a * C + ch]; });
}

Vec3 FactorizedField::decode_color(std::span<const double> feature, const Vec3& dir) const {
  DecoderCache cache;
  return decode_forward(feature, dir, cache);
}

Vec3 FactorizedField::decode_forward(std::span<const double> feature, const Vec3& dir,
                                     DecoderCache& cache) const {
  const FieldShape& s = shape();
  if (static_cast<int>(feature.size()) != s.feature_dim())
    throw InvalidInput("decode_color: feature has wrong length");
  if (std::abs(dir.norm() - 1.0) > 1e-6) throw InvalidInput("decode_color: direction not unit");
  const int in = s.decoder_input_dim();
  const int h = s.hidden;
  cache.input.resize(in);
  std::copy(feature.begin(), feature.end(), cache.input.begin());
  cache.input[in - 3] = dir.x();
  cache.input[in - 2] = dir.y();
  cache.input[in - 1] = dir.z();
  cache.pre.resize(h);
  cache.hidden.resize(h);

  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const RowMat> W1(params_.data() + layout_.w1(), h, in);
  const Eigen::Map<const Eigen::VectorXd> B1(params_.data() + layout_.b1(), h);
  const Eigen::Map<const RowMat> W2(params_.data() + layout_.w2(), 3, h);
  const Eigen::Map<const Eigen::Vector3d> B2(params_.data() + layout_.b2());
  Eigen::Map<const Eigen::VectorXd> x(cache.input.data(), in);
  Eigen::Map<Eigen::VectorXd> pre(cache.pre.data(), h);
  Eigen::Map<Eigen::VectorXd> hid(cache.hidden.data(), h);
  pre.noalias() = W1 * x + B1;
  hid = pre.cwiseMax(0.0);
  const Vec3 logits = W2 * hid + B2;
  for (int k = 0; k < 3; ++k) cache.rgb[k] = occupancy(logits[k]);
  return cache.rgb;
}

void FactorizedField::decode_backward(const DecoderCache& cache, const Vec3& upstream,
                                      std::span<double> grad, std::span<double> d_feature,
                                      Vec3* d_dir) const {
  const FieldShape& s = shape();
  const int in = s.decoder_input_dim();
  const int h = s.hidden;
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const RowMat> W1(params_.data() + layout_.w1(), h, in);
  const Eigen::Map<const RowMat> W2(params_.data() + layout_.w2(), 3, h);
  const Eigen::Map<const Eigen::VectorXd> x(cache.input.data(), in);
  const Eigen::Map<const Eigen::VectorXd> pre(cache.pre.data(), h);
  const Eigen::Map<const Eigen::VectorXd> hid(cache.hidden.data(), h);

  const Vec3 g_logits = upstream.cwiseProduct(cache.rgb.cwiseProduct(Vec3::Ones() - cache.rgb));
  Eigen::VectorXd g_pre = W2.transpose() * g_logits;
  for (int j = 0; j < h; ++j) {
    if (pre[j] <= 0.0) g_pre[j] = 0.0;
  }
  if (!grad.empty()) {
    Eigen::Map<RowMat> GW1(grad.data() + layout_.w1(), h, in);
    Eigen::Map<Eigen::VectorXd> GB1(grad.data() + layout_.b1(), h);
    Eigen::Map<RowMat> GW2(grad.data() + layout_.w2(), 3, h);
    Eigen::Map<Eigen::Vector3d> GB2(grad.data() + layout_.b2());
    GW2.noalias() += g_logits * hid.transpose();
    GB2 += g_logits;
    GW1.noalias() += g_pre * x.transpose();
    GB1 += g_pre;
  }
  const Eigen::VectorXd g_in = W1.transpose() * g_pre;
  const int fd = s.feature_dim();
  for (int i = 0; i < fd && i < static_cast<int>(d_feature.size()); ++i) d_feature[i] = g_in[i];
  if (d_dir) *d_dir = Vec3(g_in[fd], g_in[fd + 1], g_in[fd + 2]);
}

std::int64_t param_count(const FieldShape& shape, bool with_decoder) {
  const std::int64_t r = shape.res;
  const std::int64_t channels = shape.density_channels + shape.appearance_channels;
  std::int64_t n = 3 * (r * r + r) * channels;
  if (with_decoder) {
    const std::int64_t in = shape.decoder_input_dim();
    n += shape.hidden * in + shape.hidden + 3 * shape.hidden + 3;
  }
  return n;
}

std::int64_t flops_per_point(const FieldShape& shape) {
  const std::int64_t per_channel = 4 + 2 + 1;
  const std::int64_t grid_macs =
      3 * per_channel * (shape.density_channels + shape.appearance_channels);
  const std::int64_t decoder_macs =
      static_cast<std::int64_t>(shape.hidden) * shape.decoder_input_dim() + 3 * shape.hidden;
  return 2 * (grid_macs + decoder_macs);
}

}  // namespace factormap
