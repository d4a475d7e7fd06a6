#include "factormap/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "factormap/error.hpp"

namespace factormap {

std::vector<double> RaySamples::deltas() const {
  std::vector<double> d(t.size());
  for (std::size_t i = 0; i + 1 < t.size(); ++i) d[i] = t[i + 1] - t[i];
  if (!t.empty()) d.back() = std::max(0.0, far - t.back());
  return d;
}

void RaySamples::validate() const {
  if (!(near < far)) throw InvalidInput("samples: near must be < far");
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!(t[i] >= near && t[i] <= far)) throw InvalidInput("samples: t outside [near, far]");
    if (i > 0 && !(t[i] > t[i - 1])) throw InvalidInput("samples: t not strictly ascending");
  }
}

std::vector<double> stratified_from(double near, double far, std::span<const double> u) {
  if (!(near < far)) throw InvalidInput("stratified: near must be < far");
  if (u.empty()) throw InvalidInput("stratified: need at least one sample");
  const std::size_t n = u.size();
  const double bin = (far - near) / static_cast<double>(n);
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = near + (static_cast<double>(i) + u[i]) * bin;
  return t;
}

RaySamples stratified(double near, double far, int n, Rng& rng) {
  if (n < 1) throw InvalidInput("stratified: need at least one sample");
  std::vector<double> u(n);
  for (double& x : u) x = rng.uniform();
  RaySamples s;
  s.near = near;
  s.far = far;
  s.t = stratified_from(near, far, u);
  // Bins are disjoint, so draws are already ascending; equal neighbours can
  // only arise from rounding at a shared edge.
  s.t.erase(std::unique(s.t.begin(), s.t.end()), s.t.end());
  return s;
}

RaySamples merge_samples(const RaySamples& samples, std::vector<double> extra) {
  RaySamples out;
  out.near = samples.near;
  out.far = samples.far;
  out.iteration = samples.iteration + 1;
  out.fallback = samples.fallback;
  for (double& x : extra) x = std::clamp(x, samples.near, samples.far);
  std::sort(extra.begin(), extra.end());
  out.t.resize(samples.t.size() + extra.size());
  std::merge(samples.t.begin(), samples.t.end(), extra.begin(), extra.end(), out.t.begin());
  out.t.erase(std::unique(out.t.begin(), out.t.end()), out.t.end());
  return out;
}

std::vector<double> invert_cdf(const RaySamples& samples, std::span<const double> weights,
                               std::span<const double> u) {
  const std::size_t n = samples.t.size();
  if (weights.size() != n) throw InvalidInput("inverse_transform: weights/samples length mismatch");
  const std::vector<double> width = samples.deltas();
  std::vector<double> mass(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(weights[i] >= 0.0) || !std::isfinite(weights[i]))
      throw InvalidInput("inverse_transform: weights must be finite and non-negative");
    // Zero-width bins carry no probability.
    mass[i] = width[i] > 0.0 ? weights[i] : 0.0;
  }
  std::vector<double> cdf(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) cdf[i + 1] = cdf[i] + mass[i];
  const double total = cdf[n];
  std::vector<double> out;
  out.reserve(u.size());
  if (!(total > 0.0)) return out;
  for (double ui : u) {
    const double target = ui * total;
    // First bin whose upper CDF edge exceeds the target.
    std::size_t k = std::upper_bound(cdf.begin() + 1, cdf.end(), target) - (cdf.begin() + 1);
    k = std::min(k, n - 1);
    while (mass[k] <= 0.0 && k > 0) --k;
    const double frac = mass[k] > 0.0 ? std::clamp((target - cdf[k]) / mass[k], 0.0, 1.0) : 0.0;
    out.push_back(samples.t[k] + frac * width[k]);
  }
  return out;
}

RaySamples inverse_transform(const RaySamples& samples, std::span<const double> weights, int m,
                             Rng& rng) {
  if (m < 0) throw InvalidInput("inverse_transform: negative sample count");
  std::vector<double> u(m);
  for (double& x : u) x = rng.uniform();
  std::vector<double> draws = invert_cdf(samples, weights, u);
  if (draws.empty() && m > 0) {
    RaySamples out = merge_samples(samples, stratified_from(samples.near, samples.far, u));
    out.fallback = true;
    return out;
  }
  return merge_samples(samples, std::move(draws));
}

std::vector<double> update_scores(std::span<const double> deltas, std::span<const double> weights,
                                  double beta) {
  if (deltas.size() != weights.size()) throw InvalidInput("update_scores: length mismatch");
  if (!(beta >= 0.0 && beta <= 1.0)) throw InvalidInput("update_scores: beta outside [0, 1]");
  std::vector<double> w(deltas.size());
  for (std::size_t i = 0; i < w.size(); ++i)
    w[i] = beta * std::exp(-deltas[i]) + (1.0 - beta) * weights[i];
  return w;
}

std::vector<double> smooth_scores(std::span<const double> scores, int tau) {
  if (tau < 1) throw InvalidInput("smooth_scores: tau must be >= 1");
  if (scores.empty()) throw InvalidInput("smooth_scores: empty scores");
  const long n = static_cast<long>(scores.size());
  const long offset = tau / 2;
  std::vector<double> out(n);
  for (long i = 0; i < n; ++i) {
    double acc = 0.0;
    for (long j = 0; j < tau; ++j) {
      const long k = std::clamp(i - offset + j, 0L, n - 1);
      acc += scores[k];
    }
    out[i] = acc / tau;
  }
  return out;
}

ScoreVector score_samples(const RaySamples& samples, std::span<const double> weights, double beta,
                          int tau) {
  ScoreVector s;
  s.raw = update_scores(samples.deltas(), weights, beta);
  s.smoothed = smooth_scores(s.raw, tau);
  return s;
}

IntervalSet find_intervals(std::span<const double> smoothed, std::span<const double> t,
                           double near, double far, const IntervalSearch& search) {
  if (smoothed.size() != t.size()) throw InvalidInput("find_intervals: length mismatch");
  if (!(near < far)) throw InvalidInput("find_intervals: near must be < far");
  const IntervalSet full{{near, far}};
  if (t.empty()) return full;
  const auto [lo, hi] = std::minmax_element(smoothed.begin(), smoothed.end());
  if (*hi - *lo <= 1e-12 * std::max(1.0, std::abs(*hi))) return full;

  std::vector<double> sorted(smoothed.begin(), smoothed.end());
  std::sort(sorted.begin(), sorted.end());
  const double q = std::clamp(search.quantile, 0.0, 1.0);
  const double threshold = sorted[static_cast<std::size_t>(std::floor(q * (sorted.size() - 1)))];

  const double spacing =
      t.size() > 1 ? (t.back() - t.front()) / static_cast<double>(t.size() - 1) : (far - near);
  const double gap = search.gap_tol * spacing;
  const double pad = search.padding * spacing;

  IntervalSet raw;
  bool open = false;
  double last = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (smoothed[i] < threshold) continue;
    if (open && t[i] - last <= gap) {
      raw.back().t_far = t[i];
    } else {
      raw.push_back({t[i], t[i]});
      open = true;
    }
    last = t[i];
  }
  if (raw.empty()) return full;

  IntervalSet out;
  for (Interval iv : raw) {
    iv.t_near = std::max(near, iv.t_near - pad);
    iv.t_far = std::min(far, iv.t_far + pad);
    if (!(iv.t_far > iv.t_near)) continue;
    if (!out.empty() && iv.t_near <= out.back().t_far) {
      out.back().t_far = std::max(out.back().t_far, iv.t_far);
    } else {
      out.push_back(iv);
    }
  }
  return out.empty() ? full : out;
}

RaySamples sliding_window_sample(const RaySamples& samples, std::span<const double> weights,
                                 const IntervalSet& intervals, int n, double mix_ratio, Rng& rng) {
  if (intervals.empty()) throw InvalidInput("sliding_window_sample: no intervals");
  if (!(mix_ratio >= 0.0 && mix_ratio <= 1.0))
    throw InvalidInput("sliding_window_sample: mix_ratio outside [0, 1]");
  if (n < 0) throw InvalidInput("sliding_window_sample: negative sample count");
  const int n_pdf = static_cast<int>(std::ceil(mix_ratio * n - 1e-12));
  const int n_sw = n - n_pdf;

  RaySamples base = inverse_transform(samples, weights, n_pdf, rng);
  base.iteration = samples.iteration;

  // Largest-remainder allocation of the window draws by interval length.
  double total = 0.0;
  for (const Interval& iv : intervals) {
    if (!(iv.t_far > iv.t_near)) throw InvalidInput("sliding_window_sample: empty interval");
    total += iv.length();
  }
  std::vector<int> count(intervals.size(), 0);
  std::vector<std::pair<double, std::size_t>> remainder;
  int assigned = 0;
  for (std::size_t i = 0; i < intervals.size(); ++i) {
    const double exact = n_sw * intervals[i].length() / total;
    count[i] = static_cast<int>(std::floor(exact));
    assigned += count[i];
    remainder.emplace_back(exact - count[i], i);
  }
  std::stable_sort(remainder.begin(), remainder.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < n_sw; ++k, ++assigned) ++count[remainder[k % remainder.size()].second];

  std::vector<double> extra;
  extra.reserve(n_sw);
  for (std::size_t i = 0; i < intervals.size(); ++i) {
    if (count[i] == 0) continue;
    std::vector<double> u(count[i]);
    for (double& x : u) x = rng.uniform();
    const std::vector<double> draws = stratified_from(intervals[i].t_near, intervals[i].t_far, u);
    extra.insert(extra.end(), draws.begin(), draws.end());
  }
  return merge_samples(base, std::move(extra));
}

}  // namespace factormap
