#pragma once

// Sample placement along rays: stratified bootstrap, inverse-transform
// refinement over the current weights, and the sliding-window sampler that
// adds stratified samples inside high-score intervals.
//
// Sample sets only grow: every refinement returns the sorted union of the
// previous samples and the new draws.

#include <span>
#include <utility>
#include <vector>

#include "factormap/random.hpp"

namespace factormap {

struct RaySamples {
  std::vector<double> t;  // strictly ascending, inside [near, far]
  double near = 0.0;
  double far = 1.0;
  int iteration = 0;
  // Set when a refinement had no positive weight and fell back to stratified draws.
  bool fallback = false;

  std::size_t size() const { return t.size(); }
  // delta_i = t_{i+1} - t_i; the last sample's spacing runs to `far`.
  std::vector<double> deltas() const;
  void validate() const;
};

struct ScoreVector {
  std::vector<double> raw;       // W
  std::vector<double> smoothed;  // SW
};

struct Interval {
  double t_near = 0.0;
  double t_far = 0.0;
  double length() const { return t_far - t_near; }
};
using IntervalSet = std::vector<Interval>;

struct IntervalSearch {
  double quantile = 0.8;
  double gap_tol = 2.0;  // in units of the mean sample spacing
  double padding = 1.0;  // in units of the mean sample spacing
};

// One draw per equal bin of [near, far]; `u` holds one value in [0,1) per bin.
std::vector<double> stratified_from(double near, double far, std::span<const double> u);
RaySamples stratified(double near, double far, int n, Rng& rng);

// Draws `m` new distances by inverting the piecewise-constant CDF over the
// sample bins [t_i, t_i + delta_i] with mass proportional to weights[i].
// Falls back to stratified draws over [near, far] (flagging the result) when
// no weight is positive.
RaySamples inverse_transform(const RaySamples& samples, std::span<const double> weights, int m,
                             Rng& rng);
// The inversion itself, for a given set of uniforms.
std::vector<double> invert_cdf(const RaySamples& samples, std::span<const double> weights,
                               std::span<const double> u);

// W = beta * exp(-delta) + (1 - beta) * w, element-wise.
std::vector<double> update_scores(std::span<const double> deltas, std::span<const double> weights,
                                  double beta);
// Box filter of length tau with replicate padding. Output i averages
// W[i - tau/2 .. i - tau/2 + tau - 1] (integer division), which centers odd
// kernels and puts the center of even kernels right of the midpoint.
std::vector<double> smooth_scores(std::span<const double> scores, int tau);
ScoreVector score_samples(const RaySamples& samples, std::span<const double> weights, double beta,
                          int tau);

// Selects samples with SW >= the q-quantile of SW, groups selected samples
// whose t gap is <= gap_tol mean spacings, pads each group by `padding` mean
// spacings and clips to [near, far]. Flat scores select the whole span.
IntervalSet find_intervals(std::span<const double> smoothed, std::span<const double> t,
                           double near, double far, const IntervalSearch& search = {});

// ceil(mix_ratio * n) draws by inverse transform over `weights`; the rest
// stratified inside the intervals, allotted in proportion to interval length.
RaySamples sliding_window_sample(const RaySamples& samples, std::span<const double> weights,
                                 const IntervalSet& intervals, int n, double mix_ratio, Rng& rng);

// Sorted union of existing samples and new draws (duplicates removed, clipped to [near, far]).
RaySamples merge_samples(const RaySamples& samples, std::vector<double> extra);

}  // namespace factormap
