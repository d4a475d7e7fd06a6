#pragma once

// Shared fixtures for the test binaries.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "factormap/data.hpp"
#include "factormap/field.hpp"
#include "factormap/objective.hpp"
#include "factormap/pipeline.hpp"
#include "factormap/random.hpp"
#include "factormap/render.hpp"

namespace fmtest {

using namespace factormap;

inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    Rng r(std::hash<std::string>{}(tag) ^ static_cast<std::uint64_t>(
                                              std::filesystem::file_time_type::clock::now().time_since_epoch().count()));
    path = std::filesystem::temp_directory_path() / ("factormap_" + tag + "_" + std::to_string(r.next_u64() % 1000000007));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

inline SyntheticSceneSpec small_scene(int size, int frames) {
  SyntheticSceneSpec s;
  s.intrinsics = {0.875 * size, 0.875 * size, 0.5 * size, 0.5 * size, size, size};
  s.frame_count = frames;
  return s;
}

// Frames as training input (images shared, gt depth stripped).
inline std::vector<TrainFrame> as_train(const std::vector<Frame>& frames) {
  std::vector<TrainFrame> out;
  for (const Frame& f : frames) out.push_back({f.id, std::make_shared<const Image>(f.image), f.pose});
  return out;
}

// A mapping setup small enough for unit tests: a few seconds end to end.
inline MappingConfig tiny_mapping(const SceneBounds& bounds) {
  MappingConfig c;
  c.shape.res = 8;
  c.shape.density_channels = 2;
  c.shape.appearance_channels = 3;
  c.shape.hidden = 8;
  c.bounds = bounds;
  c.density_bias = -2.0;
  ScheduleConfig& s = c.schedule;
  s.init_frames = 3;
  s.sample_counts = {8, 8, 8, 8};
  s.init_iters = 8;
  s.init_rays_per_iter = 32;
  s.active_window = 4;
  s.local_frames = 2;
  s.iters_per_update = 2;
  s.frames_per_update = 2;
  s.rays_per_iter = 32;
  s.update_coarse = 8;
  s.update_fine = 8;
  s.keyframe_stride = 2;
  return c;
}

// Dense res^3 x C tensor of one factored family, built straight from the
// plane and line arrays. Density sums plane_a(i_b, i_c, ch) * line_a(i_a, ch)
// over axes and channels; appearance keeps the per-axis products side by
// side (channel index a * C + ch).
struct DenseTensor {
  int res = 0;
  int channels = 0;  // per node
  std::vector<double> v;
  double at(int i0, int i1, int i2, int ch) const {
    return v[((static_cast<std::size_t>(i0) * res + i1) * res + i2) * channels + ch];
  }
};

inline DenseTensor densify(FactorizedField& field, bool density) {
  const int r = field.shape().res;
  const int C = density ? field.shape().density_channels : field.shape().appearance_channels;
  DenseTensor d;
  d.res = r;
  d.channels = density ? 1 : 3 * C;
  d.v.assign(static_cast<std::size_t>(r) * r * r * d.channels, 0.0);
  for (int a = 0; a < 3; ++a) {
    const auto plane = density ? field.density_plane(a) : field.appearance_plane(a);
    const auto line = density ? field.density_line(a) : field.appearance_line(a);
    const auto [b, c] = plane_axes(a);
    for (int i0 = 0; i0 < r; ++i0)
      for (int i1 = 0; i1 < r; ++i1)
        for (int i2 = 0; i2 < r; ++i2) {
          const int idx[3] = {i0, i1, i2};
          for (int ch = 0; ch < C; ++ch) {
            const double prod = plane[(static_cast<std::size_t>(idx[b]) * r + idx[c]) * C + ch] *
                                line[static_cast<std::size_t>(idx[a]) * C + ch];
            const int out = density ? 0 : a * C + ch;
            d.v[((static_cast<std::size_t>(i0) * r + i1) * r + i2) * d.channels + out] += prod;
          }
        }
  }
  return d;
}

// Textbook trilinear interpolation of the dense tensor at a world point inside the bounds.
inline std::vector<double> trilinear(const DenseTensor& d, const SceneBounds& bounds, const Vec3& p) {
  double g[3];
  int i[3];
  for (int a = 0; a < 3; ++a) {
    g[a] = (p[a] - bounds.min[a]) / (bounds.max[a] - bounds.min[a]) * (d.res - 1);
    i[a] = std::min(static_cast<int>(std::floor(g[a])), d.res - 2);
    g[a] -= i[a];
  }
  std::vector<double> out(d.channels, 0.0);
  for (int corner = 0; corner < 8; ++corner) {
    double w = 1.0;
    int n[3];
    for (int a = 0; a < 3; ++a) {
      const int bit = (corner >> a) & 1;
      n[a] = i[a] + bit;
      w *= bit ? g[a] : 1.0 - g[a];
    }
    for (int ch = 0; ch < d.channels; ++ch) out[ch] += w * d.at(n[0], n[1], n[2], ch);
  }
  return out;
}

// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
template <typename Cdf>
double ks_statistic(std::vector<double> xs, Cdf cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, std::abs((i + 1) / n - f), std::abs(f - i / n)});
  }
  return d;
}

// CDF of the piecewise-constant density with mass w_i on [edges_i, edges_{i+1}].
inline double piecewise_cdf(const std::vector<double>& edges, const std::vector<double>& w, double x) {
  double total = 0.0;
  for (double v : w) total += v;
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (x >= edges[i + 1]) {
      acc += w[i];
    } else if (x > edges[i]) {
      acc += w[i] * (x - edges[i]) / (edges[i + 1] - edges[i]);
      break;
    } else {
      break;
    }
  }
  return acc / total;
}

// Piecewise-smooth structure of a batch: the grid cell and the ReLU sign
// pattern of every sample. The loss is smooth in a parameter as long as this
// stays unchanged along the finite-difference stencil.
inline std::vector<int> kink_signature(const FactorizedField& field,
                                       std::span<const TrainingView> views,
                                       const CameraIntrinsics& intr,
                                       std::span<const TrainRay> rays) {
  std::vector<int> sig;
  DecoderCache cache;
  for (const TrainRay& r : rays) {
    const Ray ray = ray_for_pixel(intr, views[r.view].pose.pose(), pixel_center(r.u, r.v));
    for (double t : r.samples.t) {
      const Vec3 x = ray.at(t);
      const GridLookup lk = field.lookup(x);
      sig.insert(sig.end(), lk.cell.begin(), lk.cell.end());
      sig.push_back(lk.clamped);
      field.decode_forward(field.query_appearance(x), ray.direction, cache);
      for (double a : cache.pre) sig.push_back(a > 0.0);
    }
  }
  return sig;
}

enum class Stencil { kCentral, kForward, kBackward, kNone };

struct FdEstimate {
  double value = 0.0;
  Stencil stencil = Stencil::kNone;
};

// Second-order difference of loss(offset) at 0 that never straddles a change
// of signature(offset): central when both neighbours share the base
// signature, otherwise the three-point one-sided formula on a clean side.
template <typename Loss, typename Signature>
FdEstimate fd_derivative(Loss&& loss, Signature&& signature, double h) {
  const auto base = signature(0.0);
  const bool plus = signature(h) == base;
  const bool minus = signature(-h) == base;
  if (plus && minus) return {(loss(h) - loss(-h)) / (2 * h), Stencil::kCentral};
  if (plus && signature(2 * h) == base)
    return {(-3 * loss(0.0) + 4 * loss(h) - loss(2 * h)) / (2 * h), Stencil::kForward};
  if (minus && signature(-2 * h) == base)
    return {(3 * loss(0.0) - 4 * loss(-h) + loss(-2 * h)) / (2 * h), Stencil::kBackward};
  return {};
}

}  // namespace fmtest
