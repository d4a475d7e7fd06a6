#include "factormap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <thread>

#include "factormap/error.hpp"

namespace factormap {

KdTree::KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
  for (const Vec3& p : points_) {
    if (!p.allFinite()) throw InvalidInput("KdTree: non-finite point");
  }
  std::vector<std::size_t> idx(points_.size());
  std::iota(idx.begin(), idx.end(), 0);
  nodes_.reserve(points_.size());
  root_ = build(idx, 0, idx.size(), 0);
}

int KdTree::build(std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi, int depth) {
  if (lo >= hi) return -1;
  // Split on the widest axis of the subset.
  Vec3 mn = points_[idx[lo]], mx = mn;
  for (std::size_t i = lo + 1; i < hi; ++i) {
    mn = mn.cwiseMin(points_[idx[i]]);
    mx = mx.cwiseMax(points_[idx[i]]);
  }
  int axis = 0;
  (mx - mn).maxCoeff(&axis);
  const std::size_t mid = lo + (hi - lo) / 2;
  std::nth_element(idx.begin() + lo, idx.begin() + mid, idx.begin() + hi,
                   [&](std::size_t a, std::size_t b) {
                     if (points_[a][axis] != points_[b][axis]) return points_[a][axis] < points_[b][axis];
                     return a < b;
                   });
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({axis, idx[mid], -1, -1});
  const int left = build(idx, lo, mid, depth + 1);
  const int right = build(idx, mid + 1, hi, depth + 1);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(int node, const Vec3& q, double& best_sq, std::size_t& best) const {
  while (node >= 0) {
    const Node& n = nodes_[node];
    const Vec3& p = points_[n.point];
    const double d_sq = (p - q).squaredNorm();
    if (d_sq < best_sq || (d_sq == best_sq && n.point < best)) {
      best_sq = d_sq;
      best = n.point;
    }
    const double diff = q[n.axis] - p[n.axis];
    const int near = diff < 0.0 ? n.left : n.right;
    const int far = diff < 0.0 ? n.right : n.left;
    if (far >= 0 && diff * diff <= best_sq) search(far, q, best_sq, best);
    node = near;
  }
}

double KdTree::nearest(const Vec3& q, std::size_t* index) const {
  if (points_.empty()) throw InvalidInput("KdTree: query on an empty tree");
  double best_sq = std::numeric_limits<double>::infinity();
  std::size_t best = std::numeric_limits<std::size_t>::max();
  search(root_, q, best_sq, best);
  if (index) *index = best;
  return std::sqrt(best_sq);
}

std::vector<Vec3> positions(const ColoredPointCloud& cloud) {
  std::vector<Vec3> out;
  out.reserve(cloud.size());
  for (const ColoredPoint& p : cloud) out.push_back(p.position);
  return out;
}

std::vector<double> nn_distances(std::span<const Vec3> queries, std::span<const Vec3> reference,
                                 int threads) {
  if (queries.empty() || reference.empty()) throw InvalidInput("metrics: empty point set");
  const KdTree tree(std::vector<Vec3>(reference.begin(), reference.end()));
  std::vector<double> out(queries.size());
  const std::size_t workers = std::clamp<std::size_t>(threads, 1, queries.size());
  auto work = [&](std::size_t b) {
    const std::size_t lo = queries.size() * b / workers;
    const std::size_t hi = queries.size() * (b + 1) / workers;
    for (std::size_t i = lo; i < hi; ++i) out[i] = tree.nearest(queries[i]);
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t b = 0; b < workers; ++b) pool.emplace_back(work, b);
    for (std::thread& t : pool) t.join();
  }
  return out;
}

namespace {

double mean(const std::vector<double>& v) {
  // Sorted summation keeps the result independent of point order.
  std::vector<double> s = v;
  std::sort(s.begin(), s.end());
  double acc = 0.0;
  for (double x : s) acc += x;
  return acc / static_cast<double>(s.size());
}

}  // namespace

double accuracy_cm(std::span<const Vec3> pred, std::span<const Vec3> gt) {
  return 100.0 * mean(nn_distances(pred, gt));
}

double completion_cm(std::span<const Vec3> pred, std::span<const Vec3> gt) {
  return 100.0 * mean(nn_distances(gt, pred));
}

double completion_ratio(std::span<const Vec3> pred, std::span<const Vec3> gt, double threshold) {
  if (!(threshold > 0.0)) throw InvalidInput("completion_ratio: threshold must be positive");
  const std::vector<double> d = nn_distances(gt, pred);
  const auto hits = std::count_if(d.begin(), d.end(), [&](double x) { return x < threshold; });
  return 100.0 * static_cast<double>(hits) / static_cast<double>(d.size());
}

double psnr_from_mse(double mse) {
  if (!(mse >= 0.0)) throw InvalidInput("psnr: invalid MSE");
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

double psnr(const Image& rendered, const Image& reference) {
  if (rendered.width() != reference.width() || rendered.height() != reference.height() ||
      rendered.empty())
    throw InvalidInput("psnr: image size mismatch");
  double se = 0.0;
  for (std::size_t i = 0; i < rendered.data().size(); ++i) {
    const double d = static_cast<double>(rendered.data()[i]) - reference.data()[i];
    se += d * d;
  }
  return psnr_from_mse(se / static_cast<double>(rendered.data().size()));
}

double depth_mae(const DepthMap& rendered, const DepthMap& gt, std::span<const unsigned char> valid) {
  if (rendered.width != gt.width || rendered.height != gt.height)
    throw InvalidInput("depth_mae: size mismatch");
  if (!valid.empty() && valid.size() != gt.values.size())
    throw InvalidInput("depth_mae: mask size mismatch");
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.values.size(); ++i) {
    if (!valid.empty() && !valid[i]) continue;
    acc += std::abs(rendered.values[i] - gt.values[i]);
    ++n;
  }
  if (n == 0) throw InvalidInput("depth_mae: no valid pixels");
  return acc / static_cast<double>(n);
}

std::string ReconReport::csv_header() {
  return "accuracy_cm,completion_cm,completion_ratio_pct,psnr_db,depth_mae_m";
}

std::string ReconReport::csv_row() const {
  auto fmt = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
  };
  std::string row = fmt(accuracy_cm) + "," + fmt(completion_cm) + "," + fmt(completion_ratio_pct) + ",";
  if (psnr_db) row += fmt(*psnr_db);
  row += ",";
  if (depth_mae_m) row += fmt(*depth_mae_m);
  return row;
}

ReconReport evaluate_clouds(std::span<const Vec3> pred, std::span<const Vec3> gt, double threshold) {
  ReconReport r;
  r.accuracy_cm = accuracy_cm(pred, gt);
  r.completion_cm = completion_cm(pred, gt);
  r.completion_ratio_pct = completion_ratio(pred, gt, threshold);
  return r;
}

}  // namespace factormap
